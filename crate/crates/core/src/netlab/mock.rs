// SPDX-License-Identifier: Apache-2.0

use std::cmp::Ordering as CmpOrdering;
use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::net::{TcpListener, TcpStream};
use tracing::debug;

use super::{NetlabError, DEFAULT_COLLECTION, DEFAULT_DATABASE};
use crate::storage::CacheKey;
use crate::wire::{
    read_message, write_message, Document, RawMessage, Value, WireError,
    DEFAULT_MAX_MESSAGE_BYTES, OP_MSG,
};

#[derive(Debug, Clone)]
pub struct MockServerConfig {
    /// Records `1..=keyspace` exist initially.
    pub keyspace: u32,
    /// Approximate length of each record's text field.
    pub doc_size: usize,
    pub processing_delay: Duration,
    pub seed: u64,
    pub database: String,
    pub collection: String,
}

impl Default for MockServerConfig {
    fn default() -> Self {
        MockServerConfig {
            keyspace: 100,
            doc_size: 200,
            processing_delay: Duration::ZERO,
            seed: 0x5eed,
            database: DEFAULT_DATABASE.into(),
            collection: DEFAULT_COLLECTION.into(),
        }
    }
}

const WORDS: &[&str] = &[
    "amber", "bright", "cloud", "delta", "ember", "fable", "grove", "harbor", "ivory", "jolly",
    "kettle", "lumen", "meadow", "nectar", "orbit", "pebble", "quartz", "river", "sable", "tundra",
    "umber", "velvet", "willow", "xenon", "yonder", "zephyr",
];

/// Deterministic text of roughly `len` characters for record `key`.
fn phrase(seed: u64, key: u32, len: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (key as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut out = String::with_capacity(len + 8);
    while out.len() < len {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(WORDS[rng.gen_range(0..WORDS.len())]);
    }
    out.truncate(len);
    out
}

type Table = BTreeMap<CacheKey, Document>;

/// In-memory server speaking the wire protocol over TCP.
pub struct MockServer {
    listener: TcpListener,
    config: MockServerConfig,
    table: Arc<Mutex<Table>>,
}

impl MockServer {
    pub async fn bind(addr: &str, config: MockServerConfig) -> Result<Self, NetlabError> {
        let listener = TcpListener::bind(addr)
            .await
            .map_err(|source| NetlabError::Bind {
                addr: addr.to_owned(),
                source,
            })?;
        let mut table = Table::new();
        for k in 1..=config.keyspace {
            let id = Value::Int32(k as i32);
            let doc = Document::new()
                .with("_id", id.clone())
                .with("phrase", phrase(config.seed, k, config.doc_size));
            table.insert(CacheKey::from_value(&id).unwrap(), doc);
        }
        Ok(MockServer {
            listener,
            config,
            table: Arc::new(Mutex::new(table)),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener")
    }

    /// Accepts connections forever.
    pub async fn run(self) -> Result<(), NetlabError> {
        let config = Arc::new(self.config);
        loop {
            let (stream, peer) = self.listener.accept().await?;
            let table = self.table.clone();
            let config = config.clone();
            tokio::spawn(async move {
                if let Err(e) = serve(stream, table, config).await {
                    debug!(%peer, error = %e, "mock connection ended");
                }
            });
        }
    }
}

/// Binds `address` and serves forever.
pub async fn run_mock_server(
    address: &str,
    keyspace: u32,
    doc_size: usize,
    processing_delay: Duration,
) -> Result<(), NetlabError> {
    let config = MockServerConfig {
        keyspace,
        doc_size,
        processing_delay,
        ..Default::default()
    };
    MockServer::bind(address, config).await?.run().await
}

async fn serve(
    stream: TcpStream,
    table: Arc<Mutex<Table>>,
    config: Arc<MockServerConfig>,
) -> Result<(), NetlabError> {
    stream.set_nodelay(true)?;
    let (mut rd, mut wr) = stream.into_split();
    let mut next_id = 1i32;
    loop {
        let req = match read_message(&mut rd, DEFAULT_MAX_MESSAGE_BYTES).await {
            Ok(m) => m,
            Err(WireError::ConnectionClosed) => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        if !config.processing_delay.is_zero() {
            tokio::time::sleep(config.processing_delay).await;
        }
        let reply = if req.header().op_code != OP_MSG {
            // Foreign op codes are echoed back.
            RawMessage::new(
                next_id,
                req.header().request_id,
                req.header().op_code,
                0,
                req.header().payload_type,
                req.body().clone(),
            )?
        } else {
            let body = match req.document() {
                Ok(doc) => execute(&doc, &table, &config),
                Err(e) => error_doc(2, &e.to_string()),
            };
            RawMessage::command(next_id, req.header().request_id, &body)?
        };
        next_id = next_id.wrapping_add(1);
        write_message(&mut wr, &reply).await?;
    }
}

fn error_doc(code: i32, msg: &str) -> Document {
    Document::new()
        .with("ok", 0.0)
        .with("errmsg", msg)
        .with("code", code)
}

fn ok_n(n: usize) -> Document {
    Document::new().with("n", n as i32).with("ok", 1.0)
}

fn execute(doc: &Document, table: &Mutex<Table>, config: &MockServerConfig) -> Document {
    let Some((command, target)) = doc.first() else {
        return error_doc(59, "empty command");
    };
    let mut table = table.lock().unwrap_or_else(|p| p.into_inner());
    match command {
        "hello" | "isMaster" | "ismaster" => Document::new()
            .with("helloOk", true)
            .with("isWritablePrimary", true)
            .with("maxBsonObjectSize", 16 * 1024 * 1024)
            .with("maxMessageSizeBytes", 48_000_000)
            .with("maxWireVersion", 17)
            .with("minWireVersion", 0)
            .with("ok", 1.0),
        "ping" | "buildInfo" | "endSessions" => Document::new().with("ok", 1.0),
        "find" => {
            let filter = doc
                .get("filter")
                .and_then(Value::as_document)
                .cloned()
                .unwrap_or_default();
            let limit = doc.get("limit").and_then(Value::as_i64).unwrap_or(0).max(0) as usize;
            let mut hits: Vec<&Document> = match id_equality(&filter) {
                Some(key) => table.get(&key).into_iter().collect(),
                None => table.values().filter(|d| matches(d, &filter)).collect(),
            };
            hits.sort_by(|a, b| compare_ids(a, b));
            if limit > 0 {
                hits.truncate(limit);
            }
            let collection = target.as_str().unwrap_or(&config.collection);
            let db = doc.get("$db").and_then(Value::as_str).unwrap_or(&config.database);
            Document::new()
                .with(
                    "cursor",
                    Document::new()
                        .with(
                            "firstBatch",
                            hits.into_iter().cloned().map(Value::Document).collect::<Vec<_>>(),
                        )
                        .with("id", 0i64)
                        .with("ns", format!("{db}.{collection}")),
                )
                .with("ok", 1.0)
        }
        "insert" => {
            let docs = doc.get("documents").and_then(Value::as_array).unwrap_or(&[]);
            let mut n = 0;
            for d in docs.iter().filter_map(Value::as_document) {
                let Some(key) = d.get("_id").and_then(CacheKey::from_value) else {
                    continue;
                };
                if let std::collections::btree_map::Entry::Vacant(slot) = table.entry(key) {
                    slot.insert(d.clone());
                    n += 1;
                }
            }
            ok_n(n)
        }
        "update" => {
            let stmts = doc.get("updates").and_then(Value::as_array).unwrap_or(&[]);
            let mut n = 0;
            for stmt in stmts.iter().filter_map(Value::as_document) {
                let q = stmt.get("q").and_then(Value::as_document).cloned().unwrap_or_default();
                let Some(u) = stmt.get("u").and_then(Value::as_document) else {
                    continue;
                };
                let multi = matches!(stmt.get("multi"), Some(Value::Boolean(true)));
                let keys: Vec<CacheKey> = table
                    .iter()
                    .filter(|(_, d)| matches(d, &q))
                    .map(|(k, _)| k.clone())
                    .take(if multi { usize::MAX } else { 1 })
                    .collect();
                for k in keys {
                    let d = table.get_mut(&k).expect("key just listed");
                    apply_update(d, u);
                    n += 1;
                }
            }
            Document::new()
                .with("n", n)
                .with("nModified", n)
                .with("ok", 1.0)
        }
        "delete" => {
            let stmts = doc.get("deletes").and_then(Value::as_array).unwrap_or(&[]);
            let mut n = 0;
            for stmt in stmts.iter().filter_map(Value::as_document) {
                let q = stmt.get("q").and_then(Value::as_document).cloned().unwrap_or_default();
                let limit = stmt.get("limit").and_then(Value::as_i64).unwrap_or(0);
                let keys: Vec<CacheKey> = table
                    .iter()
                    .filter(|(_, d)| matches(d, &q))
                    .map(|(k, _)| k.clone())
                    .take(if limit == 1 { 1 } else { usize::MAX })
                    .collect();
                for k in keys {
                    table.remove(&k);
                    n += 1;
                }
            }
            ok_n(n)
        }
        other => error_doc(59, &format!("no such command: '{other}'")),
    }
}

/// Primary-index lookup for `{_id: v}` and `{_id: {$eq: v}}`.
fn id_equality(filter: &Document) -> Option<CacheKey> {
    if filter.len() != 1 {
        return None;
    }
    match filter.get("_id")? {
        Value::Document(ops) if ops.len() == 1 => CacheKey::from_value(ops.get("$eq")?),
        Value::Document(_) | Value::Array(_) => None,
        v => CacheKey::from_value(v),
    }
}

fn apply_update(target: &mut Document, update: &Document) {
    match update.get("$set").and_then(Value::as_document) {
        Some(set) => {
            for (name, value) in set.iter() {
                if name != "_id" {
                    target.set(name, value.clone());
                }
            }
        }
        None if update.iter().all(|(n, _)| !n.starts_with('$')) => {
            let id = target.get("_id").cloned().unwrap_or(Value::Null);
            let mut replacement = Document::new().with("_id", id);
            for (name, value) in update.iter().filter(|(n, _)| *n != "_id") {
                replacement.push(name, value.clone());
            }
            *target = replacement;
        }
        None => {}
    }
}

fn compare_values(a: &Value, b: &Value) -> Option<CmpOrdering> {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x.partial_cmp(&y),
        _ => match (a, b) {
            (Value::String(x), Value::String(y)) => Some(x.cmp(y)),
            _ if a == b => Some(CmpOrdering::Equal),
            _ => None,
        },
    }
}

fn compare_ids(a: &Document, b: &Document) -> CmpOrdering {
    match (a.get("_id"), b.get("_id")) {
        (Some(x), Some(y)) => compare_values(x, y).unwrap_or(CmpOrdering::Equal),
        _ => CmpOrdering::Equal,
    }
}

/// Top-level field predicates with `$eq`, `$ne`, `$gt`, `$gte`, `$lt` and `$lte`.
fn matches(doc: &Document, filter: &Document) -> bool {
    filter.iter().all(|(field, cond)| {
        let actual = doc.get(field);
        match cond {
            Value::Document(ops) if ops.first().is_some_and(|(n, _)| n.starts_with('$')) => {
                ops.iter().all(|(op, operand)| {
                    let ord = actual.and_then(|a| compare_values(a, operand));
                    match op {
                        "$eq" => ord == Some(CmpOrdering::Equal),
                        "$ne" => ord != Some(CmpOrdering::Equal),
                        "$gt" => ord == Some(CmpOrdering::Greater),
                        "$gte" => matches!(ord, Some(CmpOrdering::Greater | CmpOrdering::Equal)),
                        "$lt" => ord == Some(CmpOrdering::Less),
                        "$lte" => matches!(ord, Some(CmpOrdering::Less | CmpOrdering::Equal)),
                        _ => false,
                    }
                })
            }
            expected => actual.and_then(|a| compare_values(a, expected)) == Some(CmpOrdering::Equal),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(k: u32) -> Mutex<Table> {
        let mut t = Table::new();
        for i in 1..=k {
            let id = Value::Int32(i as i32);
            t.insert(
                CacheKey::from_value(&id).unwrap(),
                Document::new().with("_id", id).with("phrase", phrase(1, i, 40)),
            );
        }
        Mutex::new(t)
    }

    fn find(k: i32) -> Document {
        Document::new()
            .with("find", DEFAULT_COLLECTION)
            .with("filter", Document::new().with("_id", k))
    }

    fn first_batch(reply: &Document) -> Vec<Value> {
        reply
            .get("cursor")
            .and_then(Value::as_document)
            .and_then(|c| c.get("firstBatch"))
            .and_then(Value::as_array)
            .unwrap()
            .to_vec()
    }

    #[test]
    fn phrases_are_deterministic_and_sized() {
        assert_eq!(phrase(7, 3, 200), phrase(7, 3, 200));
        assert_ne!(phrase(7, 3, 200), phrase(7, 4, 200));
        assert_eq!(phrase(7, 3, 200).len(), 200);
    }

    #[test]
    fn find_twice_is_identical() {
        let t = table(5);
        let cfg = MockServerConfig::default();
        let a = execute(&find(1), &t, &cfg);
        assert_eq!(a, execute(&find(1), &t, &cfg));
        assert_eq!(first_batch(&a).len(), 1);
    }

    #[test]
    fn missing_key_gives_empty_batch() {
        let t = table(5);
        let r = execute(&find(6), &t, &MockServerConfig::default());
        assert_eq!(r.get("ok"), Some(&Value::Double(1.0)));
        assert!(first_batch(&r).is_empty());
    }

    #[test]
    fn update_then_find_sees_new_value() {
        let t = table(5);
        let cfg = MockServerConfig::default();
        let stmt = Document::new()
            .with("q", Document::new().with("_id", Document::new().with("$eq", 2)))
            .with("u", Document::new().with("$set", Document::new().with("phrase", "new")));
        let upd = Document::new()
            .with("update", DEFAULT_COLLECTION)
            .with("updates", vec![Value::Document(stmt)]);
        let r = execute(&upd, &t, &cfg);
        assert_eq!(r.get("n"), Some(&Value::Int32(1)));
        let got = first_batch(&execute(&find(2), &t, &cfg));
        assert_eq!(
            got[0].as_document().unwrap().get("phrase"),
            Some(&Value::from("new"))
        );
    }

    #[test]
    fn range_insert_delete() {
        let t = table(10);
        let cfg = MockServerConfig::default();
        let range = Document::new()
            .with("find", "c")
            .with("filter", Document::new().with("_id", Document::new().with("$gt", 7)));
        assert_eq!(first_batch(&execute(&range, &t, &cfg)).len(), 3);
        let ins = Document::new().with("insert", "c").with(
            "documents",
            vec![Value::Document(Document::new().with("_id", 11))],
        );
        assert_eq!(execute(&ins, &t, &cfg).get("n"), Some(&Value::Int32(1)));
        assert_eq!(execute(&ins, &t, &cfg).get("n"), Some(&Value::Int32(0)));
        let del = Document::new().with("delete", "c").with(
            "deletes",
            vec![Value::Document(
                Document::new().with("q", Document::new().with("_id", 11)).with("limit", 1),
            )],
        );
        assert_eq!(execute(&del, &t, &cfg).get("n"), Some(&Value::Int32(1)));
        assert!(first_batch(&execute(&find(11), &t, &cfg)).is_empty());
    }

    #[test]
    fn unknown_command_is_an_error_document() {
        let r = execute(&Document::new().with("frobnicate", 1), &table(1), &MockServerConfig::default());
        assert_eq!(r.get("ok"), Some(&Value::Double(0.0)));
    }
}
