// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::link::{Link, LinkConfig};
use super::mock::{MockServer, MockServerConfig};
use super::report::{MetricsReport, Outcome};
use super::workload::{run_workload, WorkloadConfig};
use super::{NetlabError, TaskGuard};
use crate::proxy::{emit_stats, Proxy, ProxyConfig, StatsRecord};
use crate::storage::{CacheStats, CacheStore, Policy};

/// One-way delays of the two legs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DelayProfile {
    pub client_cache: Duration,
    pub cache_server: Duration,
}

impl DelayProfile {
    pub fn from_ms(client_cache: f64, cache_server: f64) -> Self {
        DelayProfile {
            client_cache: Duration::from_secs_f64(client_cache / 1e3),
            cache_server: Duration::from_secs_f64(cache_server / 1e3),
        }
    }

    /// Direct client-server one-way delay.
    pub fn direct(&self) -> Duration {
        self.client_cache + self.cache_server
    }

    pub fn scaled(&self, divisor: f64) -> DelayProfile {
        DelayProfile {
            client_cache: self.client_cache.div_f64(divisor),
            cache_server: self.cache_server.div_f64(divisor),
        }
    }
}

/// Named delay topologies, as one-way milliseconds at full scale.
///
/// Remote legs are half the measured round trips (Ohio 164 ms, Tokyo
/// 292 ms). Scenario C moves the cache 10 ms away from the client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioName {
    A,
    BOhio,
    BTokyo,
    COhio,
    CTokyo,
    Custom,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 5] = [
        ScenarioName::A,
        ScenarioName::BOhio,
        ScenarioName::BTokyo,
        ScenarioName::COhio,
        ScenarioName::CTokyo,
    ];

    pub fn delays(&self) -> DelayProfile {
        match self {
            ScenarioName::A => DelayProfile::from_ms(0.25, 0.25),
            ScenarioName::BOhio => DelayProfile::from_ms(0.25, 82.0),
            ScenarioName::BTokyo => DelayProfile::from_ms(0.25, 146.0),
            ScenarioName::COhio => DelayProfile::from_ms(10.0, 72.0),
            ScenarioName::CTokyo => DelayProfile::from_ms(10.0, 136.0),
            ScenarioName::Custom => DelayProfile::default(),
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioName::A => "A",
            ScenarioName::BOhio => "B-ohio",
            ScenarioName::BTokyo => "B-tokyo",
            ScenarioName::COhio => "C-ohio",
            ScenarioName::CTokyo => "C-tokyo",
            ScenarioName::Custom => "custom",
        })
    }
}

impl FromStr for ScenarioName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(ScenarioName::A),
            "b-ohio" => Ok(ScenarioName::BOhio),
            "b-tokyo" => Ok(ScenarioName::BTokyo),
            "c-ohio" => Ok(ScenarioName::COhio),
            "c-tokyo" => Ok(ScenarioName::CTokyo),
            "custom" => Ok(ScenarioName::Custom),
            other => Err(format!("unknown scenario {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: ScenarioName,
    /// Full-scale delays; divided by `time_scale` when wired.
    pub delays: DelayProfile,
    pub capacity: usize,
    pub policy: Policy,
    pub keyspace: u32,
    pub batches: u32,
    pub per_batch: u32,
    pub with_cache: bool,
    pub time_scale: f64,
    pub seed: u64,
    pub doc_size: usize,
    pub server_processing: Duration,
}

impl ScenarioConfig {
    /// Full-size workload (30 x 1000 requests over 100 keys) for `name`,
    /// with delays divided by 10. Set `time_scale` to 1 for real-scale delays.
    pub fn preset(name: ScenarioName) -> Self {
        ScenarioConfig {
            name,
            delays: name.delays(),
            capacity: 100,
            policy: Policy::NoEvict,
            keyspace: 100,
            batches: 30,
            per_batch: 1000,
            with_cache: true,
            time_scale: 10.0,
            seed: 1,
            doc_size: 200,
            server_processing: Duration::ZERO,
        }
    }

    pub fn scaled_delays(&self) -> DelayProfile {
        self.delays.scaled(self.time_scale)
    }

    pub fn total_requests(&self) -> usize {
        self.batches as usize * self.per_batch as usize
    }

    /// Wall-clock width that corresponds to one full-scale second.
    pub fn scaled_second(&self) -> Duration {
        Duration::from_secs(1).div_f64(self.time_scale)
    }

    fn request_timeout(&self) -> Duration {
        let rtt = self.scaled_delays().direct() * 2;
        (rtt * 10).max(Duration::from_secs(1))
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub report: MetricsReport,
    /// Final proxy counters, when the cache was on the path.
    pub stats: Option<CacheStats>,
    /// Periodic proxy records, one per scaled second.
    pub stats_series: Vec<StatsRecord>,
}

async fn spawn_link(
    guard: &mut TaskGuard,
    target: String,
    oneway: Duration,
) -> Result<String, NetlabError> {
    let link = Link::bind("127.0.0.1:0", target, LinkConfig::delay(oneway)).await?;
    let addr = link.local_addr().to_string();
    guard.push(tokio::spawn(async move {
        let _ = link.run().await;
    }));
    Ok(addr)
}

/// Wires the topology for `cfg`, runs the workload and tears everything down.
pub async fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult, NetlabError> {
    run_inner(cfg).await.map_err(|e| NetlabError::Scenario {
        scenario: format!(
            "{} ({})",
            cfg.name,
            if cfg.with_cache {
                format!("capacity {}", cfg.capacity)
            } else {
                "no cache".into()
            }
        ),
        source: Box::new(e),
    })
}

async fn run_inner(cfg: &ScenarioConfig) -> Result<ScenarioResult, NetlabError> {
    let mut guard = TaskGuard::default();
    let delays = cfg.scaled_delays();
    let server = MockServer::bind(
        "127.0.0.1:0",
        MockServerConfig {
            keyspace: cfg.keyspace,
            doc_size: cfg.doc_size,
            processing_delay: cfg.server_processing,
            seed: cfg.seed,
            ..Default::default()
        },
    )
    .await?;
    let server_addr = server.local_addr().to_string();
    guard.push(tokio::spawn(async move {
        let _ = server.run().await;
    }));

    let series = Arc::new(Mutex::new(Vec::new()));
    let (entry, store) = if cfg.with_cache {
        let near_server = spawn_link(&mut guard, server_addr, delays.cache_server).await?;
        let store = Arc::new(CacheStore::new(cfg.capacity, cfg.policy));
        let proxy = Proxy::bind_with_store(
            ProxyConfig::new("127.0.0.1:0", near_server, cfg.capacity),
            store.clone(),
        )
        .await?;
        let proxy_addr = proxy.local_addr().to_string();
        guard.push(tokio::spawn(async move {
            let _ = proxy.run(std::future::pending()).await;
        }));
        let sink = series.clone();
        guard.push(tokio::spawn(emit_stats(store.clone(), cfg.scaled_second(), move |r| {
            sink.lock().unwrap().push(r)
        })));
        let entry = spawn_link(&mut guard, proxy_addr, delays.client_cache).await?;
        (entry, Some(store))
    } else {
        (spawn_link(&mut guard, server_addr, delays.direct()).await?, None)
    };

    let workload = WorkloadConfig {
        target: entry,
        keyspace: cfg.keyspace,
        batches: cfg.batches,
        per_batch: cfg.per_batch,
        seed: cfg.seed,
        timeout: cfg.request_timeout(),
        ..WorkloadConfig::new("")
    };
    let report = run_workload(&workload, store.clone()).await?;
    drop(guard);
    let stats_series = std::mem::take(&mut *series.lock().unwrap());
    Ok(ScenarioResult {
        config: cfg.clone(),
        report,
        stats: store.map(|s| s.snapshot_stats()),
        stats_series,
    })
}

/// Writes `summary.txt`, `requests.csv`, `throughput.csv`, `strata.csv` and
/// `stats.csv` into `dir`.
pub fn write_outputs(result: &ScenarioResult, dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let cfg = &result.config;
    let r = &result.report;
    let d = cfg.scaled_delays();

    let mut summary = fs::File::create(dir.join("summary.txt"))?;
    writeln!(summary, "scenario      {}", cfg.name)?;
    writeln!(
        summary,
        "cache         {}",
        if cfg.with_cache {
            format!("capacity {} ({:?})", cfg.capacity, cfg.policy)
        } else {
            "none".into()
        }
    )?;
    writeln!(
        summary,
        "delays        client-cache {:.3} ms, cache-server {:.3} ms (time scale {})",
        d.client_cache.as_secs_f64() * 1e3,
        d.cache_server.as_secs_f64() * 1e3,
        cfg.time_scale
    )?;
    writeln!(summary, "requests      {} ({} x {}, keys 1..={}, seed {})", r.len(), cfg.batches, cfg.per_batch, cfg.keyspace, cfg.seed)?;
    writeln!(summary, "mean          {:.3} ms", r.mean_ms())?;
    writeln!(summary, "median        {:.3} ms", r.median_ms())?;
    writeln!(summary, "p95           {:.3} ms", r.percentile_ms(95.0))?;
    writeln!(summary, "p99           {:.3} ms", r.percentile_ms(99.0))?;
    writeln!(summary, "throughput    {:.1} rps", r.rps())?;
    writeln!(
        summary,
        "outcomes      hit {} / miss {} / bypass {} / direct {} / timeout {}",
        r.count(Outcome::Hit),
        r.count(Outcome::Miss),
        r.count(Outcome::Bypass),
        r.count(Outcome::Direct),
        r.timeouts()
    )?;
    if let Some(s) = &result.stats {
        writeln!(
            summary,
            "proxy stats   hits {} misses {} bypasses {} fills {} rejected {} invalidations {}",
            s.hits, s.misses, s.bypasses, s.fills, s.rejected_fills, s.invalidations
        )?;
    }

    let mut requests = fs::File::create(dir.join("requests.csv"))?;
    writeln!(requests, "seq,key,outcome,latency_ms")?;
    for s in &r.samples {
        writeln!(requests, "{},{},{},{:.4}", s.seq, s.key, s.outcome, s.latency_ms())?;
    }

    let bin = cfg.scaled_second();
    let mut throughput = fs::File::create(dir.join("throughput.csv"))?;
    writeln!(throughput, "second,rps")?;
    for (i, count) in r.throughput_counts(bin).into_iter().enumerate() {
        // Reported in full-scale seconds and full-scale rates.
        writeln!(throughput, "{},{:.3}", i, count as f64)?;
    }

    let mut strata = fs::File::create(dir.join("strata.csv"))?;
    writeln!(strata, "outcome,count,mean_ms,median_ms,p95_ms,p99_ms")?;
    for outcome in [Outcome::Hit, Outcome::Miss, Outcome::Bypass, Outcome::Direct] {
        let mut v = r.stratum_ms(outcome);
        if v.is_empty() {
            continue;
        }
        v.sort_by(f64::total_cmp);
        let pct = |p: f64| v[((p / 100.0 * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        writeln!(
            strata,
            "{},{},{:.4},{:.4},{:.4},{:.4}",
            outcome,
            v.len(),
            v.iter().sum::<f64>() / v.len() as f64,
            pct(50.0),
            pct(95.0),
            pct(99.0)
        )?;
    }

    let mut stats = fs::File::create(dir.join("stats.csv"))?;
    writeln!(stats, "{}", StatsRecord::CSV_HEADER)?;
    for rec in &result.stats_series {
        writeln!(stats, "{}", rec.csv_row())?;
    }
    Ok(())
}
