// SPDX-License-Identifier: Apache-2.0

//! TCP front end: one session per client connection, each with its own
//! upstream connection, all sharing one [`CacheStore`].

use std::fmt;
use std::future::Future;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinSet;
use tracing::{debug, info, warn};

use crate::engine::{ClientAction, IdGen, SessionEngine, DEFAULT_KEY_FIELD};
use crate::storage::{CacheStats, CacheStore, Policy};
use crate::wire::{read_message, write_message, RawMessage, WireError, DEFAULT_MAX_MESSAGE_BYTES};

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: String,
        source: std::io::Error,
    },
    #[error("upstream {addr} unavailable: {source}")]
    UpstreamUnavailable {
        addr: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogLevel {
    Error,
    #[default]
    Info,
    Debug,
}

impl FromStr for LogLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "error" => Ok(LogLevel::Error),
            "info" => Ok(LogLevel::Info),
            "debug" => Ok(LogLevel::Debug),
            other => Err(format!("unknown log level {other:?} (expected error, info or debug)")),
        }
    }
}

impl fmt::Display for LogLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogLevel::Error => "error",
            LogLevel::Info => "info",
            LogLevel::Debug => "debug",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    pub listen: String,
    pub upstream: String,
    /// Maximum number of cached entries; 0 disables caching.
    pub capacity: usize,
    pub policy: Policy,
    pub key_field: String,
    pub log_level: LogLevel,
    /// Zero turns periodic statistics off.
    pub stats_interval: Duration,
    pub stats_out: Option<PathBuf>,
    pub max_message_bytes: usize,
    /// How long sessions may keep draining after shutdown is requested.
    pub shutdown_grace: Duration,
}

impl ProxyConfig {
    pub fn new(listen: impl Into<String>, upstream: impl Into<String>, capacity: usize) -> Self {
        ProxyConfig {
            listen: listen.into(),
            upstream: upstream.into(),
            capacity,
            policy: Policy::NoEvict,
            key_field: DEFAULT_KEY_FIELD.to_owned(),
            log_level: LogLevel::Info,
            stats_interval: Duration::ZERO,
            stats_out: None,
            max_message_bytes: DEFAULT_MAX_MESSAGE_BYTES,
            shutdown_grace: Duration::from_secs(5),
        }
    }
}

/// One periodic statistics record.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRecord {
    /// Seconds since the Unix epoch.
    pub ts: f64,
    pub stats: CacheStats,
    pub entries: usize,
    /// Manipulation requests per second over the interval.
    pub rps: f64,
}

impl StatsRecord {
    pub const CSV_HEADER: &'static str =
        "ts,hits,misses,bypasses,fills,rejected_fills,invalidations,entries,rps";

    pub fn from_snapshots(
        previous: &CacheStats,
        current: CacheStats,
        entries: usize,
        interval: Duration,
    ) -> Self {
        let served = |s: &CacheStats| s.hits + s.misses + s.bypasses;
        let delta = served(&current).saturating_sub(served(previous));
        let secs = interval.as_secs_f64();
        StatsRecord {
            ts: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or_default(),
            stats: current,
            entries,
            rps: if secs > 0.0 { delta as f64 / secs } else { 0.0 },
        }
    }

    pub fn csv_row(&self) -> String {
        let s = &self.stats;
        format!(
            "{:.3},{},{},{},{},{},{},{},{:.3}",
            self.ts,
            s.hits,
            s.misses,
            s.bypasses,
            s.fills,
            s.rejected_fills,
            s.invalidations,
            self.entries,
            self.rps
        )
    }
}

/// Emits one record per `interval` to `sink` until cancelled.
pub async fn emit_stats<F>(store: Arc<CacheStore>, interval: Duration, mut sink: F)
where
    F: FnMut(StatsRecord),
{
    let mut ticker = tokio::time::interval_at(tokio::time::Instant::now() + interval, interval);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut previous = store.snapshot_stats();
    loop {
        ticker.tick().await;
        let current = store.snapshot_stats();
        sink(StatsRecord::from_snapshots(&previous, current, store.len(), interval));
        previous = current;
    }
}

/// A bound proxy, ready to run.
pub struct Proxy {
    listener: TcpListener,
    config: ProxyConfig,
    store: Arc<CacheStore>,
    ids: Arc<IdGen>,
    sessions: Arc<AtomicU64>,
}

impl Proxy {
    pub async fn bind(config: ProxyConfig) -> Result<Self, ProxyError> {
        let store = Arc::new(CacheStore::new(config.capacity, config.policy));
        Self::bind_with_store(config, store).await
    }

    /// Binds around an existing store, so callers can observe it.
    pub async fn bind_with_store(
        config: ProxyConfig,
        store: Arc<CacheStore>,
    ) -> Result<Self, ProxyError> {
        let listener =
            TcpListener::bind(&config.listen)
                .await
                .map_err(|source| ProxyError::BindFailure {
                    addr: config.listen.clone(),
                    source,
                })?;
        Ok(Proxy {
            listener,
            config,
            store,
            ids: Arc::new(IdGen::new(1 << 24)),
            sessions: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener")
    }

    pub fn store(&self) -> Arc<CacheStore> {
        self.store.clone()
    }

    /// Serves until `shutdown` resolves, then drains sessions for the
    /// configured grace period.
    pub async fn run<S>(self, shutdown: S) -> Result<(), ProxyError>
    where
        S: Future<Output = ()>,
    {
        let Proxy {
            listener,
            config,
            store,
            ids,
            sessions,
        } = self;
        info!(
            listen = %listener.local_addr()?,
            upstream = %config.upstream,
            capacity = config.capacity,
            policy = ?config.policy,
            "proxy started"
        );
        let stats_task = start_stats(&config, &store)?;
        let (stop_tx, stop_rx) = watch::channel(false);
        let mut tasks = JoinSet::new();
        tokio::pin!(shutdown);
        loop {
            tokio::select! {
                _ = &mut shutdown => break,
                accepted = listener.accept() => {
                    let (client, peer) = match accepted {
                        Ok(x) => x,
                        Err(e) => {
                            warn!(error = %e, "accept failed");
                            continue;
                        }
                    };
                    let id = sessions.fetch_add(1, Ordering::Relaxed) + 1;
                    let engine = Arc::new(SessionEngine::new(store.clone(), config.key_field.clone(), ids.clone()));
                    let cfg = config.clone();
                    let stop = stop_rx.clone();
                    tasks.spawn(async move {
                        debug!(session = id, %peer, "session opened");
                        match run_session(client, &cfg, engine, stop).await {
                            Ok(()) => debug!(session = id, "session closed"),
                            Err(e) => info!(session = id, error = %e, "session ended"),
                        }
                    });
                }
                Some(_) = tasks.join_next(), if !tasks.is_empty() => {}
            }
        }
        drop(listener);
        info!(sessions = tasks.len(), "shutting down");
        let _ = stop_tx.send(true);
        let grace = config.shutdown_grace;
        if tokio::time::timeout(grace, async { while tasks.join_next().await.is_some() {} })
            .await
            .is_err()
        {
            tasks.abort_all();
        }
        if let Some(task) = stats_task {
            task.abort();
        }
        let s = store.snapshot_stats();
        info!(hits = s.hits, misses = s.misses, bypasses = s.bypasses, fills = s.fills, "proxy stopped");
        Ok(())
    }
}

fn start_stats(
    config: &ProxyConfig,
    store: &Arc<CacheStore>,
) -> Result<Option<tokio::task::JoinHandle<()>>, ProxyError> {
    if config.stats_interval.is_zero() {
        return Ok(None);
    }
    let mut out: Option<std::fs::File> = match &config.stats_out {
        Some(path) => {
            let mut f = std::fs::File::create(path)?;
            writeln!(f, "{}", StatsRecord::CSV_HEADER)?;
            Some(f)
        }
        None => None,
    };
    let task = tokio::spawn(emit_stats(store.clone(), config.stats_interval, move |r| {
        match out.as_mut() {
            Some(f) => {
                if let Err(e) = writeln!(f, "{}", r.csv_row()) {
                    warn!(error = %e, "cannot write stats");
                }
            }
            None => info!(
                hits = r.stats.hits,
                misses = r.stats.misses,
                bypasses = r.stats.bypasses,
                fills = r.stats.fills,
                rejected_fills = r.stats.rejected_fills,
                invalidations = r.stats.invalidations,
                entries = r.entries,
                rps = r.rps,
                "stats"
            ),
        }
    }));
    Ok(Some(task))
}

/// Binds and serves `config` until `shutdown` resolves.
pub async fn run_proxy<S>(config: ProxyConfig, shutdown: S) -> Result<(), ProxyError>
where
    S: Future<Output = ()>,
{
    Proxy::bind(config).await?.run(shutdown).await
}

/// Forwards a coordination-flow message unchanged.
pub async fn relay_cf<W>(m: &RawMessage, peer: &mut W) -> Result<(), WireError>
where
    W: tokio::io::AsyncWrite + Unpin,
{
    write_message(peer, m).await
}

enum SessionEnd {
    ClientClosed,
    Shutdown,
    ServerClosed,
}

async fn run_session(
    client: TcpStream,
    config: &ProxyConfig,
    engine: Arc<SessionEngine>,
    mut stop: watch::Receiver<bool>,
) -> Result<(), ProxyError> {
    // Dropping `client` on failure closes the client connection.
    let upstream = TcpStream::connect(&config.upstream)
        .await
        .map_err(|source| ProxyError::UpstreamUnavailable {
            addr: config.upstream.clone(),
            source,
        })?;
    client.set_nodelay(true)?;
    upstream.set_nodelay(true)?;
    let max = config.max_message_bytes;
    let (mut client_rd, mut client_wr) = client.into_split();
    let (mut upstream_rd, mut upstream_wr) = upstream.into_split();

    // Single writer for the client leg: server replies and local hit replies
    // are queued in the order they are produced.
    let (down_tx, mut down_rx) = mpsc::unbounded_channel::<RawMessage>();
    let writer = tokio::spawn(async move {
        while let Some(m) = down_rx.recv().await {
            write_message(&mut client_wr, &m).await?;
        }
        Ok::<_, WireError>(())
    });

    let client_loop = {
        let engine = engine.clone();
        let down_tx = down_tx.clone();
        async move {
            loop {
                let msg = tokio::select! {
                    biased;
                    _ = stop.wait_for(|s| *s) => return Ok(SessionEnd::Shutdown),
                    r = read_message(&mut client_rd, max) => r,
                };
                let msg = match msg {
                    Ok(m) => m,
                    Err(WireError::ConnectionClosed) => return Ok(SessionEnd::ClientClosed),
                    Err(e) => return Err(ProxyError::from(e)),
                };
                match engine.handle_client(msg) {
                    ClientAction::Forward(m) => write_message(&mut upstream_wr, &m).await?,
                    ClientAction::Reply(m) => {
                        if down_tx.send(m).is_err() {
                            return Ok(SessionEnd::ClientClosed);
                        }
                    }
                }
            }
        }
    };

    let server_loop = {
        let engine = engine.clone();
        async move {
            loop {
                let msg = match read_message(&mut upstream_rd, max).await {
                    Ok(m) => m,
                    Err(WireError::ConnectionClosed) => return Ok(SessionEnd::ServerClosed),
                    Err(e) => return Err(ProxyError::from(e)),
                };
                let out = engine.handle_server(msg);
                if down_tx.send(out).is_err() {
                    return Ok(SessionEnd::ClientClosed);
                }
            }
        }
    };

    // Boxed so that dropping them below releases their channel senders.
    let mut client_loop = Box::pin(client_loop);
    let mut server_loop = Box::pin(server_loop);
    let result: Result<SessionEnd, ProxyError> = tokio::select! {
        r = &mut client_loop => match r {
            Ok(SessionEnd::Shutdown) => {
                // Let replies to already-forwarded requests through.
                let drained = async {
                    while engine.pending_len() > 0 {
                        tokio::time::sleep(Duration::from_millis(5)).await;
                    }
                };
                tokio::select! {
                    r = &mut server_loop => r,
                    _ = drained => Ok(SessionEnd::Shutdown),
                }
            }
            other => other,
        },
        r = &mut server_loop => r,
    };
    engine.close();
    drop((client_loop, server_loop));
    let started = Instant::now();
    let _ = tokio::time::timeout(Duration::from_secs(1), writer).await;
    debug!(drain_ms = started.elapsed().as_millis() as u64, "client writer drained");
    match result {
        Ok(SessionEnd::ServerClosed) => {
            debug!("upstream closed");
            Ok(())
        }
        Ok(_) => Ok(()),
        Err(e) => Err(e),
    }
}
