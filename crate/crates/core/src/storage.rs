// SPDX-License-Identifier: Apache-2.0

//! Capacity-bounded key to response-body store with write-invalidate
//! semantics.
//!
//! Every key carries an epoch that is bumped on invalidation, and the store
//! carries a global epoch bumped by [`CacheStore::invalidate_all`]. A miss
//! hands out an [`EpochToken`]; a later fill only lands if neither epoch has
//! moved since, so a response that raced with a write is never stored.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use bytes::Bytes;

use crate::wire::Value;

/// Canonical encoding of a key value.
///
/// Integral numbers (int32, int64, integer-valued doubles) share one
/// encoding so that `{_id: 7}` and `{_id: 7.0}` address the same entry.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(Vec<u8>);

impl CacheKey {
    /// Canonicalizes a scalar key; `None` for documents and arrays.
    pub fn from_value(value: &Value) -> Option<CacheKey> {
        let mut out = Vec::with_capacity(9);
        if let Some(i) = value.as_i64() {
            out.push(0x12);
            out.extend_from_slice(&i.to_le_bytes());
            return Some(CacheKey(out));
        }
        match value {
            Value::Double(v) => {
                out.push(0x01);
                out.extend_from_slice(&v.to_le_bytes());
            }
            Value::String(s) => {
                out.push(0x02);
                out.extend_from_slice(s.as_bytes());
            }
            Value::Boolean(b) => out.extend_from_slice(&[0x08, *b as u8]),
            Value::Null => out.push(0x0A),
            _ => return None,
        }
        Some(CacheKey(out))
    }

    /// Prefixes the key with a namespace so equal ids in different
    /// collections stay distinct.
    pub fn scoped(&self, namespace: &str) -> CacheKey {
        let mut out = Vec::with_capacity(namespace.len() + 1 + self.0.len());
        out.extend_from_slice(namespace.as_bytes());
        out.push(0);
        out.extend_from_slice(&self.0);
        CacheKey(out)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CacheKey(")?;
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

/// What happens when a fill arrives at a full store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Policy {
    /// Store until full, then reject further fills.
    #[default]
    NoEvict,
    /// Evict the oldest fill.
    Fifo,
    /// Evict the least recently hit or filled entry.
    Lru,
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "noevict" => Ok(Policy::NoEvict),
            "fifo" => Ok(Policy::Fifo),
            "lru" => Ok(Policy::Lru),
            other => Err(format!("unknown policy {other:?} (expected noevict, fifo or lru)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub bypasses: u64,
    pub invalidations: u64,
    pub fills: u64,
    pub rejected_fills: u64,
}

/// Epoch snapshot taken at miss time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochToken {
    key_epoch: u64,
    global_epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lookup {
    Hit(Bytes),
    Miss(EpochToken),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillOutcome {
    Stored,
    RejectedStale,
    RejectedFull,
}

#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub response_body: Bytes,
    pub stored_at: Instant,
    pub epoch_at_fill: u64,
    seq: u64,
}

#[derive(Debug, Default)]
struct Inner {
    entries: HashMap<CacheKey, CacheEntry>,
    /// Eviction order: sequence number to key. The smallest is evicted first.
    order: BTreeMap<u64, CacheKey>,
    next_seq: u64,
    epochs: HashMap<CacheKey, u64>,
    global_epoch: u64,
    stats: CacheStats,
}

impl Inner {
    fn epoch(&self, key: &CacheKey) -> u64 {
        self.epochs.get(key).copied().unwrap_or(0)
    }

    fn bump_seq(&mut self) -> u64 {
        self.next_seq += 1;
        self.next_seq
    }

    fn remove(&mut self, key: &CacheKey) -> bool {
        match self.entries.remove(key) {
            Some(entry) => {
                self.order.remove(&entry.seq);
                true
            }
            None => false,
        }
    }
}

/// Shared cache store. All operations are linearizable.
#[derive(Debug)]
pub struct CacheStore {
    capacity: usize,
    policy: Policy,
    inner: Mutex<Inner>,
}

impl CacheStore {
    pub fn new(capacity: usize, policy: Policy) -> Self {
        CacheStore {
            capacity,
            policy,
            inner: Mutex::new(Inner::default()),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        // A panic while holding the lock cannot leave the maps half-updated
        // in a way that breaks the capacity bound, so recover the guard.
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn get(&self, key: &CacheKey) -> Lookup {
        let mut inner = self.lock();
        let lru = self.policy == Policy::Lru;
        let new_seq = if lru && inner.entries.contains_key(key) {
            Some(inner.bump_seq())
        } else {
            None
        };
        let inner = &mut *inner;
        match inner.entries.get_mut(key) {
            Some(entry) => {
                if let Some(seq) = new_seq {
                    inner.order.remove(&entry.seq);
                    entry.seq = seq;
                    inner.order.insert(seq, key.clone());
                }
                let body = entry.response_body.clone();
                inner.stats.hits += 1;
                Lookup::Hit(body)
            }
            None => {
                inner.stats.misses += 1;
                Lookup::Miss(EpochToken {
                    key_epoch: inner.epochs.get(key).copied().unwrap_or(0),
                    global_epoch: inner.global_epoch,
                })
            }
        }
    }

    pub fn put(&self, key: &CacheKey, response_body: Bytes, token: EpochToken) -> FillOutcome {
        let mut inner = self.lock();
        let key_epoch = inner.epoch(key);
        if key_epoch != token.key_epoch || inner.global_epoch != token.global_epoch {
            inner.stats.rejected_fills += 1;
            return FillOutcome::RejectedStale;
        }
        let replacing = inner.entries.contains_key(key);
        if !replacing && inner.entries.len() >= self.capacity {
            let victim = match self.policy {
                Policy::NoEvict => None,
                Policy::Fifo | Policy::Lru => inner.order.values().next().cloned(),
            };
            match victim {
                Some(victim) => {
                    inner.remove(&victim);
                }
                None => {
                    inner.stats.rejected_fills += 1;
                    return FillOutcome::RejectedFull;
                }
            }
        }
        // FIFO keeps a replaced entry's original position.
        let seq = match (self.policy, inner.entries.get(key)) {
            (Policy::Fifo, Some(existing)) => existing.seq,
            _ => inner.bump_seq(),
        };
        if let Some(old) = inner.entries.get(key).map(|e| e.seq) {
            inner.order.remove(&old);
        }
        inner.order.insert(seq, key.clone());
        inner.entries.insert(
            key.clone(),
            CacheEntry {
                response_body,
                stored_at: Instant::now(),
                epoch_at_fill: key_epoch,
                seq,
            },
        );
        inner.stats.fills += 1;
        FillOutcome::Stored
    }

    pub fn invalidate(&self, key: &CacheKey) {
        let mut inner = self.lock();
        inner.remove(key);
        *inner.epochs.entry(key.clone()).or_insert(0) += 1;
        inner.stats.invalidations += 1;
    }

    pub fn invalidate_all(&self) {
        let mut inner = self.lock();
        let removed = inner.entries.len() as u64;
        inner.entries.clear();
        inner.order.clear();
        inner.global_epoch += 1;
        inner.stats.invalidations += removed;
    }

    /// Counts a manipulation request that the cache did not serve or track.
    pub fn record_bypass(&self) {
        self.lock().stats.bypasses += 1;
    }

    pub fn snapshot_stats(&self) -> CacheStats {
        self.lock().stats
    }

    pub fn len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keys currently resident, in eviction order.
    pub fn resident_keys(&self) -> Vec<CacheKey> {
        self.lock().order.values().cloned().collect()
    }

    pub fn entry(&self, key: &CacheKey) -> Option<CacheEntry> {
        self.lock().entries.get(key).cloned()
    }
}
