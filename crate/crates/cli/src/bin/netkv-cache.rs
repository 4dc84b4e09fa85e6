// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use netkv_cli::{init_logging, shutdown_signal};
use netkv_core::proxy::{run_proxy, LogLevel, ProxyConfig, ProxyError};
use netkv_core::storage::Policy;
use netkv_core::wire::DEFAULT_MAX_MESSAGE_BYTES;

/// Transparent caching proxy for unique-key finds.
#[derive(Debug, Parser)]
#[command(name = "netkv-cache", version)]
struct Args {
    /// Address clients connect to.
    #[arg(long, value_name = "HOST:PORT")]
    listen: String,
    /// Database server address.
    #[arg(long, value_name = "HOST:PORT")]
    upstream: String,
    /// Maximum number of cached entries (0 disables caching).
    #[arg(long)]
    capacity: usize,
    /// Behavior when the cache is full: noevict, fifo or lru.
    #[arg(long, default_value = "noevict")]
    policy: Policy,
    /// Document field holding the unique key.
    #[arg(long, default_value = "_id")]
    key_field: String,
    /// error, info or debug.
    #[arg(long, default_value = "info")]
    log_level: LogLevel,
    /// Seconds between statistics records; 0 disables them.
    #[arg(long, default_value_t = 0.0)]
    stats_interval: f64,
    /// Write statistics records to this CSV file instead of the log.
    #[arg(long, value_name = "FILE.csv")]
    stats_out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_MESSAGE_BYTES)]
    max_message_bytes: usize,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    init_logging(args.log_level);
    if !(args.stats_interval >= 0.0 && args.stats_interval.is_finite()) {
        eprintln!("netkv-cache: --stats-interval must be a non-negative number");
        return ExitCode::from(2);
    }
    let config = ProxyConfig {
        policy: args.policy,
        key_field: args.key_field,
        log_level: args.log_level,
        stats_interval: Duration::from_secs_f64(args.stats_interval),
        stats_out: args.stats_out,
        max_message_bytes: args.max_message_bytes,
        ..ProxyConfig::new(args.listen, args.upstream, args.capacity)
    };
    match run_proxy(config, shutdown_signal()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ ProxyError::BindFailure { .. }) => {
            eprintln!("netkv-cache: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("netkv-cache: {e}");
            ExitCode::FAILURE
        }
    }
}
