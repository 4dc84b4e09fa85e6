// SPDX-License-Identifier: Apache-2.0

//! A transparent caching proxy for a document key-value wire protocol,
//! together with a small network lab for measuring it.
//!
//! * [`wire`]: header and document codecs, message framing.
//! * [`filter`]: splits traffic into manipulation, response and
//!   coordination flows.
//! * [`storage`]: the shared write-invalidate cache store.
//! * [`engine`]: per-session client/server managers.
//! * [`proxy`]: the TCP front end.
//! * [`netlab`]: mock server, delay links, workload client and scenario
//!   runner.

pub mod engine;
pub mod filter;
pub mod netlab;
pub mod proxy;
pub mod storage;
pub mod wire;

pub use engine::{ClientAction, Command, CommandKind, PendingTable, SessionEngine};
pub use filter::{Direction, FlowClass};
pub use proxy::{Proxy, ProxyConfig, ProxyError};
pub use storage::{CacheKey, CacheStats, CacheStore, FillOutcome, Lookup, Policy};
pub use wire::{Document, MessageHeader, RawMessage, Value, WireError};
