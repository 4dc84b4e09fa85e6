// SPDX-License-Identifier: Apache-2.0

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;

use super::report::{MetricsReport, Outcome, RequestSample};
use super::{NetlabError, DEFAULT_COLLECTION, DEFAULT_DATABASE};
use crate::storage::{CacheStats, CacheStore};
use crate::wire::{read_message, write_message, Document, RawMessage, Value, DEFAULT_MAX_MESSAGE_BYTES};

#[derive(Debug, Clone)]
pub struct WorkloadConfig {
    pub target: String,
    pub keyspace: u32,
    pub batches: u32,
    pub per_batch: u32,
    pub seed: u64,
    pub timeout: Duration,
    pub database: String,
    pub collection: String,
}

impl WorkloadConfig {
    pub fn new(target: impl Into<String>) -> Self {
        WorkloadConfig {
            target: target.into(),
            keyspace: 100,
            batches: 30,
            per_batch: 1000,
            seed: 1,
            timeout: Duration::from_secs(10),
            database: DEFAULT_DATABASE.into(),
            collection: DEFAULT_COLLECTION.into(),
        }
    }

    pub fn total_requests(&self) -> usize {
        self.batches as usize * self.per_batch as usize
    }
}

/// Uniform keys in `1..=keyspace` drawn from a seeded generator.
pub fn key_sequence(seed: u64, keyspace: u32, n: usize) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(1..=keyspace.max(1))).collect()
}

/// A sequential protocol client: one outstanding request at a time.
pub struct WorkloadClient {
    rd: OwnedReadHalf,
    wr: OwnedWriteHalf,
    next_id: i32,
    database: String,
    collection: String,
}

impl WorkloadClient {
    pub async fn connect(addr: &str) -> Result<Self, NetlabError> {
        let stream = TcpStream::connect(addr)
            .await
            .map_err(|source| NetlabError::Connect {
                addr: addr.to_owned(),
                source,
            })?;
        stream.set_nodelay(true)?;
        let (rd, wr) = stream.into_split();
        Ok(WorkloadClient {
            rd,
            wr,
            next_id: 1,
            database: DEFAULT_DATABASE.into(),
            collection: DEFAULT_COLLECTION.into(),
        })
    }

    pub fn with_namespace(mut self, database: &str, collection: &str) -> Self {
        self.database = database.into();
        self.collection = collection.into();
        self
    }

    fn next_request_id(&mut self) -> i32 {
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1).max(1);
        id
    }

    pub fn find_command(&self, key: i64) -> Document {
        Document::new()
            .with("find", self.collection.as_str())
            .with("filter", Document::new().with("_id", Document::new().with("$eq", key_value(key))))
            .with("limit", 1)
            .with("singleBatch", true)
            .with("$db", self.database.as_str())
    }

    pub fn update_command(&self, key: i64, set: Document) -> Document {
        let stmt = Document::new()
            .with("q", Document::new().with("_id", key_value(key)))
            .with("u", Document::new().with("$set", set));
        Document::new()
            .with("update", self.collection.as_str())
            .with("updates", vec![Value::Document(stmt)])
            .with("$db", self.database.as_str())
    }

    /// Sends a raw message unchanged.
    pub async fn send(&mut self, m: &RawMessage) -> Result<(), NetlabError> {
        write_message(&mut self.wr, m).await?;
        Ok(())
    }

    pub async fn recv(&mut self) -> Result<RawMessage, NetlabError> {
        Ok(read_message(&mut self.rd, DEFAULT_MAX_MESSAGE_BYTES).await?)
    }

    /// Sends `doc` and waits for the reply correlated to it, discarding
    /// stale replies to earlier timed-out requests.
    pub async fn command(&mut self, doc: &Document) -> Result<RawMessage, NetlabError> {
        let id = self.next_request_id();
        self.send(&RawMessage::command(id, 0, doc)?).await?;
        loop {
            let reply = self.recv().await?;
            if reply.header().response_to == id {
                return Ok(reply);
            }
        }
    }

    pub async fn command_timeout(
        &mut self,
        doc: &Document,
        timeout: Duration,
    ) -> Result<Option<RawMessage>, NetlabError> {
        match tokio::time::timeout(timeout, self.command(doc)).await {
            Ok(r) => r.map(Some),
            Err(_) => Ok(None),
        }
    }

    pub async fn handshake(&mut self) -> Result<Document, NetlabError> {
        let reply = self
            .command(&Document::new().with("hello", 1).with("$db", "admin"))
            .await?;
        Ok(reply.document()?)
    }

    /// First document returned by a unique-key find, if any.
    pub async fn find(&mut self, key: i64) -> Result<Option<Document>, NetlabError> {
        let cmd = self.find_command(key);
        let reply = self.command(&cmd).await?;
        Ok(first_document(&reply.document()?))
    }

    pub async fn update_set(&mut self, key: i64, set: Document) -> Result<i64, NetlabError> {
        let cmd = self.update_command(key, set);
        let reply = self.command(&cmd).await?.document()?;
        reply
            .get("n")
            .and_then(Value::as_i64)
            .ok_or_else(|| NetlabError::Protocol(format!("update reply without n: {reply:?}")))
    }
}

fn key_value(key: i64) -> Value {
    match i32::try_from(key) {
        Ok(k) => Value::Int32(k),
        Err(_) => Value::Int64(key),
    }
}

/// First entry of `cursor.firstBatch`.
pub(crate) fn first_document(reply: &Document) -> Option<Document> {
    reply
        .get("cursor")
        .and_then(Value::as_document)?
        .get("firstBatch")
        .and_then(Value::as_array)?
        .first()
        .and_then(Value::as_document)
        .cloned()
}

fn outcome(before: &CacheStats, after: &CacheStats) -> Outcome {
    if after.hits > before.hits {
        Outcome::Hit
    } else if after.misses > before.misses {
        Outcome::Miss
    } else {
        Outcome::Bypass
    }
}

/// Issues `batches * per_batch` sequential finds and times each one.
///
/// With an `observer`, each request is classified as hit, miss or bypass
/// from the store's counters; requests are strictly sequential so the
/// counter deltas are exact. Without one, samples are `Direct`.
pub async fn run_workload(
    config: &WorkloadConfig,
    observer: Option<Arc<CacheStore>>,
) -> Result<MetricsReport, NetlabError> {
    let mut client = WorkloadClient::connect(&config.target)
        .await?
        .with_namespace(&config.database, &config.collection);
    client.handshake().await?;
    let keys = key_sequence(config.seed, config.keyspace, config.total_requests());
    let mut samples = Vec::with_capacity(keys.len());
    let start = Instant::now();
    for (seq, key) in keys.into_iter().enumerate() {
        let cmd = client.find_command(key as i64);
        let before = observer.as_ref().map(|s| s.snapshot_stats());
        let sent = Instant::now();
        let reply = client.command_timeout(&cmd, config.timeout).await?;
        let done = Instant::now();
        let outcome = match (&observer, before) {
            (Some(store), Some(before)) => outcome(&before, &store.snapshot_stats()),
            _ => Outcome::Direct,
        };
        let (ok, found) = match &reply {
            Some(r) => match r.document() {
                Ok(doc) => (
                    doc.get("ok").and_then(Value::as_f64) == Some(1.0),
                    first_document(&doc).is_some(),
                ),
                Err(_) => (false, false),
            },
            None => (false, false),
        };
        samples.push(RequestSample {
            seq,
            key,
            outcome,
            latency: done - sent,
            completed_at: done - start,
            ok,
            found,
            timed_out: reply.is_none(),
        });
    }
    Ok(MetricsReport::new(samples, start.elapsed()))
}
