// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use netkv_cli::{init_logging, shutdown_signal};
use netkv_core::netlab::{
    run_scenario, summarize, write_outputs, DelayProfile, MockServer, MockServerConfig,
    ScenarioConfig, ScenarioName, ScenarioResult,
};
use netkv_core::proxy::LogLevel;
use netkv_core::storage::Policy;

/// Emulated-WAN experiments for the caching proxy.
#[derive(Debug, Parser)]
#[command(name = "netlab", version)]
struct Cli {
    #[arg(long, default_value = "info", global = true)]
    log_level: LogLevel,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario cell.
    Run {
        #[arg(long)]
        scenario: ScenarioName,
        #[arg(long, default_value_t = 100)]
        capacity: usize,
        /// Connect the client straight to the server link.
        #[arg(long)]
        no_cache: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run no-cache baselines and a capacity sweep for each scenario.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "10,30,70,100")]
        capacities: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "B-ohio,B-tokyo")]
        scenarios: Vec<ScenarioName>,
        #[command(flatten)]
        common: Common,
    },
    /// Serve the in-memory database.
    MockServer {
        #[arg(long, value_name = "HOST:PORT")]
        listen: String,
        #[arg(long, default_value_t = 100)]
        keys: u32,
        #[arg(long, default_value_t = 200)]
        doc_size: usize,
        #[arg(long, default_value_t = 0.0)]
        processing_delay_ms: f64,
        #[arg(long, default_value_t = 0x5eed)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Divide every delay by this factor; 1 runs at real scale.
    #[arg(long, default_value_t = 10.0)]
    time_scale: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    batches: u32,
    #[arg(long, default_value_t = 1000)]
    per_batch: u32,
    #[arg(long, default_value_t = 100)]
    keys: u32,
    #[arg(long, default_value = "noevict")]
    policy: Policy,
    /// One-way client-cache delay in ms (custom scenario).
    #[arg(long)]
    client_cache_ms: Option<f64>,
    /// One-way cache-server delay in ms (custom scenario).
    #[arg(long)]
    cache_server_ms: Option<f64>,
    #[arg(long, default_value = "netlab-out")]
    out: PathBuf,
}

impl Common {
    fn config(&self, name: ScenarioName, capacity: usize, with_cache: bool) -> Result<ScenarioConfig> {
        if !(self.time_scale > 0.0 && self.time_scale.is_finite()) {
            bail!("--time-scale must be positive");
        }
        let mut cfg = ScenarioConfig::preset(name);
        if self.client_cache_ms.is_some() || self.cache_server_ms.is_some() {
            let base = cfg.delays;
            cfg.delays = DelayProfile::from_ms(
                self.client_cache_ms.unwrap_or(base.client_cache.as_secs_f64() * 1e3),
                self.cache_server_ms.unwrap_or(base.cache_server.as_secs_f64() * 1e3),
            );
        }
        cfg.capacity = capacity;
        cfg.with_cache = with_cache;
        cfg.time_scale = self.time_scale;
        cfg.seed = self.seed;
        cfg.batches = self.batches;
        cfg.per_batch = self.per_batch;
        cfg.keyspace = self.keys;
        cfg.policy = self.policy;
        Ok(cfg)
    }
}

fn cell_dir(out: &std::path::Path, cfg: &ScenarioConfig) -> PathBuf {
    let cell = if cfg.with_cache {
        format!("cap{}", cfg.capacity)
    } else {
        "nocache".into()
    };
    out.join(cfg.name.to_string()).join(cell)
}

async fn run_cell(cfg: &ScenarioConfig, out: &std::path::Path) -> Result<ScenarioResult> {
    tracing::info!(scenario = %cfg.name, capacity = cfg.capacity, with_cache = cfg.with_cache, "running");
    let result = run_scenario(cfg).await?;
    let dir = cell_dir(out, cfg);
    write_outputs(&result, &dir).with_context(|| format!("writing {}", dir.display()))?;
    println!(
        "{:<8} {:<9} mean {:>9.3} ms  median {:>9.3} ms  p99 {:>9.3} ms  {:>8.1} rps  hit rate {:>5.1}%",
        cfg.name.to_string(),
        if cfg.with_cache { format!("cap {}", cfg.capacity) } else { "no cache".into() },
        result.report.mean_ms(),
        result.report.median_ms(),
        result.report.percentile_ms(99.0),
        result.report.rps(),
        result.report.hit_rate() * 100.0,
    );
    Ok(result)
}

#[tokio::main]
async fn main() -> Result<()> {
    let cli = Cli::parse();
    init_logging(cli.log_level);
    match cli.command {
        Command::Run {
            scenario,
            capacity,
            no_cache,
            common,
        } => {
            let cfg = common.config(scenario, capacity, !no_cache)?;
            run_cell(&cfg, &common.out).await?;
            println!("outputs in {}", cell_dir(&common.out, &cfg).display());
        }
        Command::Sweep {
            capacities,
            scenarios,
            common,
        } => {
            let mut results = Vec::new();
            for &name in &scenarios {
                results.push(run_cell(&common.config(name, 0, false)?, &common.out).await?);
                for &cap in &capacities {
                    results.push(run_cell(&common.config(name, cap, true)?, &common.out).await?);
                }
            }
            let table = summarize(&results);
            std::fs::create_dir_all(&common.out)?;
            std::fs::write(common.out.join("summary.txt"), table.to_string())?;
            println!("\n{table}");
        }
        Command::MockServer {
            listen,
            keys,
            doc_size,
            processing_delay_ms,
            seed,
        } => {
            let server = MockServer::bind(
                &listen,
                MockServerConfig {
                    keyspace: keys,
                    doc_size,
                    processing_delay: Duration::from_secs_f64(processing_delay_ms.max(0.0) / 1e3),
                    seed,
                    ..Default::default()
                },
            )
            .await?;
            tracing::info!(addr = %server.local_addr(), keys, "mock server listening");
            tokio::select! {
                r = server.run() => r?,
                _ = shutdown_signal() => {}
            }
        }
    }
    Ok(())
}
