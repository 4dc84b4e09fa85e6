// SPDX-License-Identifier: Apache-2.0

//! Client and server managers for one proxied session.
//!
//! The engine is sans-IO: [`SessionEngine::handle_client`] decides whether a
//! client message is answered locally or forwarded, and
//! [`SessionEngine::handle_server`] consumes server replies, filling or
//! invalidating the shared store before the reply is forwarded. The proxy
//! owns the sockets.

use std::collections::HashMap;
use std::sync::atomic::{AtomicI32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use bytes::Bytes;
use tracing::{debug, trace};

use crate::filter::{classify_client, classify_server, FlowClass};
use crate::storage::{CacheKey, CacheStore, EpochToken, FillOutcome, Lookup};
use crate::wire::{Document, RawMessage, Value, OP_MSG};

/// Default field holding the unique key of a record.
pub const DEFAULT_KEY_FIELD: &str = "_id";

/// Top-level find options that do not change which single document is
/// returned or how it is shaped. A find carrying anything else is forwarded
/// untracked.
const CACHEABLE_FIND_FIELDS: &[&str] = &[
    "find",
    "filter",
    "limit",
    "batchSize",
    "singleBatch",
    "$db",
    "lsid",
    "$clusterTime",
    "$readPreference",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Find,
    Insert,
    Update,
    Delete,
    Bypass,
}

#[derive(Debug, Clone)]
pub struct Command {
    pub kind: CommandKind,
    /// Scoped cache key, present only for unique-key equality filters.
    pub key: Option<CacheKey>,
    pub collection: String,
    pub raw: RawMessage,
}

/// Returns the key when `filter` is exactly `{field: v}` or
/// `{field: {"$eq": v}}` for a scalar `v`.
pub fn extract_key(filter: &Document, key_field: &str) -> Option<CacheKey> {
    if filter.len() != 1 {
        return None;
    }
    let (name, value) = filter.first()?;
    if name != key_field {
        return None;
    }
    match value {
        Value::Document(op) => {
            if op.len() != 1 {
                return None;
            }
            match op.first()? {
                ("$eq", v) => CacheKey::from_value(v),
                _ => None,
            }
        }
        v => CacheKey::from_value(v),
    }
}

fn namespace(doc: &Document, collection: &str) -> String {
    match doc.get("$db").and_then(Value::as_str) {
        Some(db) => format!("{db}.{collection}"),
        None => collection.to_owned(),
    }
}

/// Key of the single write statement in `doc[list_field]`, looked up under `q`.
///
/// `Err(())` when the statement list is missing or holds more than one entry.
fn single_statement_key(
    doc: &Document,
    list_field: &str,
    key_field: &str,
) -> Result<Option<CacheKey>, ()> {
    let statements = doc.get(list_field).and_then(Value::as_array).ok_or(())?;
    let [only] = statements else {
        return Err(());
    };
    let filter = only.as_document().and_then(|s| s.get("q")).and_then(Value::as_document);
    Ok(filter.and_then(|f| extract_key(f, key_field)))
}

/// Parses a manipulation-flow message. Degenerate input becomes `Bypass`.
///
/// Writes whose statements cannot be attributed to one key keep their kind
/// with `key: None`, so the caller invalidates conservatively.
pub fn parse_command(m: &RawMessage, key_field: &str) -> Command {
    let bypass = |collection: String| Command {
        kind: CommandKind::Bypass,
        key: None,
        collection,
        raw: m.clone(),
    };
    let Ok(doc) = m.document() else {
        return bypass(String::new());
    };
    let Some((name, target)) = doc.first() else {
        return bypass(String::new());
    };
    let Some(collection) = target.as_str().map(str::to_owned) else {
        return bypass(String::new());
    };
    let ns = namespace(&doc, &collection);
    let scoped = |k: Option<CacheKey>| k.map(|k| k.scoped(&ns));
    let (kind, key) = match name {
        "find" => {
            let eligible = doc.iter().all(|(f, _)| CACHEABLE_FIND_FIELDS.contains(&f));
            let key = doc
                .get("filter")
                .and_then(Value::as_document)
                .filter(|_| eligible)
                .and_then(|f| extract_key(f, key_field));
            (CommandKind::Find, scoped(key))
        }
        "insert" => (CommandKind::Insert, None),
        "update" => match single_statement_key(&doc, "updates", key_field) {
            Ok(key) => (CommandKind::Update, scoped(key)),
            Err(()) => (CommandKind::Update, None),
        },
        "delete" => match single_statement_key(&doc, "deletes", key_field) {
            Ok(key) => (CommandKind::Delete, scoped(key)),
            Err(()) => (CommandKind::Delete, None),
        },
        _ => return bypass(collection),
    };
    Command {
        kind,
        key,
        collection,
        raw: m.clone(),
    }
}

/// Source of request ids for locally synthesized replies.
#[derive(Debug)]
pub struct IdGen(AtomicI32);

impl IdGen {
    pub fn new(start: i32) -> Self {
        IdGen(AtomicI32::new(start))
    }

    pub fn next_id(&self) -> i32 {
        loop {
            let id = self.0.fetch_add(1, Ordering::Relaxed);
            if id != 0 {
                return id;
            }
        }
    }
}

impl Default for IdGen {
    fn default() -> Self {
        IdGen::new(1)
    }
}

/// Builds the reply for a cache hit: the stored body replayed verbatim under
/// a fresh header correlated to `request`.
pub fn synthesize_response(request: &RawMessage, stored_body: &Bytes, ids: &IdGen) -> RawMessage {
    RawMessage::new(
        ids.next_id(),
        request.header().request_id,
        OP_MSG,
        0,
        0,
        stored_body.clone(),
    )
    .expect("stored bodies are complete documents")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WriteScope {
    Key(CacheKey),
    All,
}

/// A forwarded request awaiting its reply.
#[derive(Debug, Clone)]
pub enum Pending {
    /// A find miss; the reply may fill the store.
    Fill {
        key: CacheKey,
        token: EpochToken,
        issued_at: Instant,
    },
    /// A write; its acknowledgment invalidates again.
    Write { scope: WriteScope },
}

impl Pending {
    pub fn fill(key: CacheKey, token: EpochToken) -> Self {
        Pending::Fill {
            key,
            token,
            issued_at: Instant::now(),
        }
    }
}

/// Session-local map from forwarded request id to pending work.
#[derive(Debug, Default)]
pub struct PendingTable {
    entries: HashMap<i32, Pending>,
}

impl PendingTable {
    pub fn insert(&mut self, request_id: i32, pending: Pending) {
        self.entries.insert(request_id, pending);
    }

    pub fn contains(&self, request_id: i32) -> bool {
        self.entries.contains_key(&request_id)
    }

    pub fn remove(&mut self, request_id: i32) -> Option<Pending> {
        self.entries.remove(&request_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientAction {
    /// Send the message to the server.
    Forward(RawMessage),
    /// Answer the client directly; nothing goes upstream.
    Reply(RawMessage),
}

/// Per-session manager state. Shares only the store with other sessions.
#[derive(Debug)]
pub struct SessionEngine {
    store: Arc<CacheStore>,
    pending: Mutex<PendingTable>,
    key_field: String,
    ids: Arc<IdGen>,
}

impl SessionEngine {
    pub fn new(store: Arc<CacheStore>, key_field: impl Into<String>, ids: Arc<IdGen>) -> Self {
        SessionEngine {
            store,
            pending: Mutex::new(PendingTable::default()),
            key_field: key_field.into(),
            ids,
        }
    }

    pub fn store(&self) -> &Arc<CacheStore> {
        &self.store
    }

    fn pending(&self) -> std::sync::MutexGuard<'_, PendingTable> {
        self.pending.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn pending_len(&self) -> usize {
        self.pending().len()
    }

    /// Classifies and handles a message from the client leg.
    pub fn handle_client(&self, msg: RawMessage) -> ClientAction {
        match classify_client(&msg) {
            FlowClass::Manipulation => self.handle_command(parse_command(&msg, &self.key_field)),
            _ => ClientAction::Forward(msg),
        }
    }

    pub fn handle_command(&self, cmd: Command) -> ClientAction {
        let request_id = cmd.raw.header().request_id;
        match (cmd.kind, cmd.key) {
            (CommandKind::Find, Some(key)) => match self.store.get(&key) {
                Lookup::Hit(body) => {
                    trace!(request_id, ?key, "hit");
                    ClientAction::Reply(synthesize_response(&cmd.raw, &body, &self.ids))
                }
                Lookup::Miss(token) => {
                    trace!(request_id, ?key, "miss");
                    self.pending().insert(request_id, Pending::fill(key, token));
                    ClientAction::Forward(cmd.raw)
                }
            },
            (CommandKind::Update | CommandKind::Delete, key) => {
                let scope = match key {
                    Some(key) => {
                        self.store.invalidate(&key);
                        WriteScope::Key(key)
                    }
                    None => {
                        debug!(request_id, "write without a unique key, invalidating all");
                        self.store.invalidate_all();
                        WriteScope::All
                    }
                };
                self.pending().insert(request_id, Pending::Write { scope });
                ClientAction::Forward(cmd.raw)
            }
            (CommandKind::Find | CommandKind::Insert | CommandKind::Bypass, _) => {
                self.store.record_bypass();
                ClientAction::Forward(cmd.raw)
            }
        }
    }

    /// Processes a server message and returns it for forwarding, unchanged.
    pub fn handle_server(&self, msg: RawMessage) -> RawMessage {
        let mut pending = self.pending();
        if classify_server(&msg, &pending) != FlowClass::Response {
            return msg;
        }
        match pending.remove(msg.header().response_to) {
            Some(Pending::Fill { key, token, .. }) => {
                if is_fillable(&msg) {
                    let outcome = self.store.put(&key, msg.body().clone(), token);
                    trace!(?key, ?outcome, "fill");
                    if outcome == FillOutcome::RejectedStale {
                        debug!(?key, "dropped fill overtaken by a write");
                    }
                }
            }
            Some(Pending::Write { scope }) => match scope {
                WriteScope::Key(key) => self.store.invalidate(&key),
                WriteScope::All => self.store.invalidate_all(),
            },
            None => {}
        }
        msg
    }

    /// Drops all pending work; later replies are relayed without filling.
    pub fn close(&self) {
        self.pending().clear();
    }
}

/// A reply worth caching: one complete document, `ok: 1`, a non-empty first
/// batch and no open server cursor.
pub fn is_fillable(msg: &RawMessage) -> bool {
    if !msg.is_single_document() || msg.header().flags != 0 {
        return false;
    }
    let Ok(doc) = msg.document() else {
        return false;
    };
    if doc.get("ok").and_then(Value::as_f64) != Some(1.0) {
        return false;
    }
    let Some(cursor) = doc.get("cursor").and_then(Value::as_document) else {
        return false;
    };
    let open_cursor = cursor.get("id").and_then(Value::as_i64).unwrap_or(0) != 0;
    let non_empty = cursor
        .get("firstBatch")
        .and_then(Value::as_array)
        .is_some_and(|b| !b.is_empty());
    non_empty && !open_cursor
}
