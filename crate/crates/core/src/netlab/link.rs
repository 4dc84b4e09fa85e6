// SPDX-License-Identifier: Apache-2.0

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::io::{AsyncRead, AsyncWrite, AsyncWriteExt};
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tokio::time::Instant;
use tracing::debug;

use super::NetlabError;
use crate::filter::Direction;
use crate::wire::{read_message, write_message, RawMessage, WireError};

/// Link messages may be larger than the proxy's default limit.
const LINK_MAX_MESSAGE_BYTES: usize = 64 * 1024 * 1024;

/// Below this remaining time the timer wheel is too coarse; spin instead.
const SPIN_WINDOW: Duration = Duration::from_micros(1500);

/// Waits until `deadline` with sub-millisecond accuracy.
pub async fn sleep_precise(deadline: Instant) {
    let now = Instant::now();
    if deadline <= now {
        return;
    }
    if deadline - now > SPIN_WINDOW {
        tokio::time::sleep_until(deadline - SPIN_WINDOW).await;
    }
    while Instant::now() < deadline {
        tokio::task::yield_now().await;
    }
}

/// Messages observed by a link, per direction, in arrival order.
#[derive(Debug, Clone, Default)]
pub struct Transcript(Arc<Mutex<TranscriptInner>>);

#[derive(Debug, Default)]
struct TranscriptInner {
    client_to_server: Vec<RawMessage>,
    server_to_client: Vec<RawMessage>,
}

impl Transcript {
    pub fn record(&self, direction: Direction, m: &RawMessage) {
        let mut t = self.0.lock().unwrap_or_else(|p| p.into_inner());
        match direction {
            Direction::FromClient => t.client_to_server.push(m.clone()),
            Direction::FromServer => t.server_to_client.push(m.clone()),
        }
    }

    pub fn client_to_server(&self) -> Vec<RawMessage> {
        self.0.lock().unwrap().client_to_server.clone()
    }

    pub fn server_to_client(&self) -> Vec<RawMessage> {
        self.0.lock().unwrap().server_to_client.clone()
    }
}

#[derive(Debug, Clone, Default)]
pub struct LinkConfig {
    pub oneway: Duration,
    /// Uniform extra delay in `[0, jitter]` per message. Order is still kept.
    pub jitter: Duration,
    pub seed: u64,
    pub transcript: Option<Transcript>,
}

impl LinkConfig {
    pub fn delay(oneway: Duration) -> Self {
        LinkConfig {
            oneway,
            ..Default::default()
        }
    }
}

/// Delays every message from `inbound` by the link's one-way latency before
/// writing it to `outbound`. Returns when `inbound` reaches EOF, after
/// shutting down `outbound`.
pub async fn delay_pipe<R, W>(
    mut inbound: R,
    mut outbound: W,
    config: LinkConfig,
    direction: Direction,
) -> Result<(), NetlabError>
where
    R: AsyncRead + Unpin + Send + 'static,
    W: AsyncWrite + Unpin,
{
    let (tx, mut rx) = mpsc::unbounded_channel::<(Instant, RawMessage)>();
    let transcript = config.transcript.clone();
    let oneway = config.oneway;
    let jitter = config.jitter;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let reader = tokio::spawn(async move {
        let mut last = Instant::now();
        loop {
            let m = match read_message(&mut inbound, LINK_MAX_MESSAGE_BYTES).await {
                Ok(m) => m,
                Err(WireError::ConnectionClosed) => return Ok(()),
                Err(e) => return Err(e),
            };
            let extra = if jitter.is_zero() {
                Duration::ZERO
            } else {
                jitter.mul_f64(rng.gen::<f64>())
            };
            let deadline = (Instant::now() + oneway + extra).max(last);
            last = deadline;
            if let Some(t) = &transcript {
                t.record(direction, &m);
            }
            if tx.send((deadline, m)).is_err() {
                return Ok(());
            }
        }
    });
    while let Some((deadline, m)) = rx.recv().await {
        sleep_precise(deadline).await;
        if let Err(e) = write_message(&mut outbound, &m).await {
            reader.abort();
            return Err(e.into());
        }
    }
    let _ = outbound.shutdown().await;
    match reader.await {
        Ok(r) => r.map_err(Into::into),
        Err(_) => Ok(()),
    }
}

/// A TCP listener that relays each accepted connection to `target` through
/// a pair of delay pipes.
pub struct Link {
    listener: TcpListener,
    target: String,
    config: LinkConfig,
}

impl Link {
    pub async fn bind(
        listen: &str,
        target: impl Into<String>,
        config: LinkConfig,
    ) -> Result<Self, NetlabError> {
        let listener = TcpListener::bind(listen)
            .await
            .map_err(|source| NetlabError::Bind {
                addr: listen.to_owned(),
                source,
            })?;
        Ok(Link {
            listener,
            target: target.into(),
            config,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener")
    }

    pub async fn run(self) -> Result<(), NetlabError> {
        let mut conn = 0u64;
        loop {
            let (client, _) = self.listener.accept().await?;
            let upstream = match tokio::net::TcpStream::connect(&self.target).await {
                Ok(s) => s,
                Err(e) => {
                    debug!(target = %self.target, error = %e, "link target unavailable");
                    continue;
                }
            };
            client.set_nodelay(true)?;
            upstream.set_nodelay(true)?;
            let (crd, cwr) = client.into_split();
            let (urd, uwr) = upstream.into_split();
            let mut forward = self.config.clone();
            forward.seed = self.config.seed.wrapping_add(2 * conn);
            let mut backward = self.config.clone();
            backward.seed = self.config.seed.wrapping_add(2 * conn + 1);
            conn += 1;
            tokio::spawn(async move {
                let _ = delay_pipe(crd, uwr, forward, Direction::FromClient).await;
            });
            tokio::spawn(async move {
                let _ = delay_pipe(urd, cwr, backward, Direction::FromServer).await;
            });
        }
    }
}
