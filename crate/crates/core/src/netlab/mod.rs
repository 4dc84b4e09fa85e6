// SPDX-License-Identifier: Apache-2.0

//! Desk-scale network lab.
//!
//! A scenario wires `client -> link(d1) -> proxy -> link(d2) -> mock server`
//! (or `client -> link(d1 + d2) -> mock server` without the cache) on the
//! loopback interface, replays a closed-loop uniform-key workload and
//! collects per-request latencies.

mod link;
mod mock;
mod report;
mod scenario;
mod workload;

pub use link::{delay_pipe, sleep_precise, Link, LinkConfig, Transcript};
pub use mock::{run_mock_server, MockServer, MockServerConfig};
pub use report::{
    improvement, summarize, CapacityColumn, MetricsReport, Outcome, RequestSample, SweepTable,
};
pub use scenario::{
    run_scenario, write_outputs, DelayProfile, ScenarioConfig, ScenarioName, ScenarioResult,
};
pub use workload::{key_sequence, run_workload, WorkloadClient, WorkloadConfig};

use thiserror::Error;

use crate::proxy::ProxyError;
use crate::wire::WireError;

pub const DEFAULT_DATABASE: &str = "randomPhrases";
pub const DEFAULT_COLLECTION: &str = "randomPhrases";

#[derive(Debug, Error)]
pub enum NetlabError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("cannot reach {addr}: {source}")]
    Connect {
        addr: String,
        source: std::io::Error,
    },
    #[error("unexpected reply: {0}")]
    Protocol(String),
    #[error("scenario {scenario}: {source}")]
    Scenario {
        scenario: String,
        #[source]
        source: Box<NetlabError>,
    },
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Aborts the wrapped tasks when dropped.
#[derive(Default)]
pub(crate) struct TaskGuard(Vec<tokio::task::JoinHandle<()>>);

impl TaskGuard {
    pub(crate) fn push(&mut self, h: tokio::task::JoinHandle<()>) {
        self.0.push(h);
    }
}

impl Drop for TaskGuard {
    fn drop(&mut self) {
        for h in &self.0 {
            h.abort();
        }
    }
}
