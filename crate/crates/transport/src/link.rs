//! Message links between a device and the server.
//!
//! A link is one endpoint of an ordered duplex channel carrying whole packages. In-memory
//! pairs can inject faults; TCP links frame packages with a 4-byte length prefix.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use scm_forge_core::session::Direction;
use thiserror::Error;
use tokio::sync::mpsc;

use crate::tcp::TcpEnd;

pub const DEFAULT_IDLE_DEADLINE: Duration = Duration::from_secs(30);
pub const IDLE_DEADLINE_ENV: &str = "SCM_IDLE_DEADLINE_MS";

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("transport closed: {0}")]
    TransportClosed(String),
    #[error("frame of {len} bytes exceeds the {max} byte limit")]
    FrameTooLarge { len: usize, max: usize },
    #[error("connection refused by {0}")]
    ConnectionRefused(SocketAddr),
    #[error("address {0} already in use")]
    AddressInUse(SocketAddr),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl TransportError {
    pub(crate) fn closed(reason: impl Into<String>) -> Self {
        TransportError::TransportClosed(reason.into())
    }
}

/// How long a receiver waits for the next package. `None` waits forever.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkConfig {
    pub idle_deadline: Option<Duration>,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            idle_deadline: Some(DEFAULT_IDLE_DEADLINE),
        }
    }
}

impl LinkConfig {
    pub fn with_deadline(idle_deadline: Option<Duration>) -> Self {
        LinkConfig { idle_deadline }
    }

    /// The server end's view of this config: it waits twice as long as the device, so an
    /// idle session is always ended by the device.
    pub fn server_side(self) -> Self {
        LinkConfig {
            idle_deadline: self.idle_deadline.map(|d| d * 2),
        }
    }

    /// Default config, with the deadline taken from `SCM_IDLE_DEADLINE_MS` when set.
    /// A value of 0 disables the deadline.
    pub fn from_env() -> Self {
        match std::env::var(IDLE_DEADLINE_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<u64>().ok())
        {
            Some(0) => LinkConfig::with_deadline(None),
            Some(ms) => LinkConfig::with_deadline(Some(Duration::from_millis(ms))),
            None => LinkConfig::default(),
        }
    }
}

/// Where a corruption lands in a package.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spot {
    Middle,
    At(usize),
}

/// Faults to apply to an in-memory pair, keyed by package ordinal. Ordinals start at 1 and
/// count packages in both directions in the order they are sent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultPlan {
    pub drop: BTreeSet<u32>,
    pub delay: BTreeMap<u32, Duration>,
    pub corrupt: BTreeMap<u32, Spot>,
}

impl FaultPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn drop(ordinal: u32) -> Self {
        FaultPlan {
            drop: BTreeSet::from([ordinal]),
            ..Self::default()
        }
    }

    /// Flips every bit of the middle byte of package `ordinal`.
    pub fn corrupt(ordinal: u32) -> Self {
        Self::corrupt_at(ordinal, Spot::Middle)
    }

    pub fn corrupt_at(ordinal: u32, spot: Spot) -> Self {
        FaultPlan {
            corrupt: BTreeMap::from([(ordinal, spot)]),
            ..Self::default()
        }
    }

    pub fn delay(ordinal: u32, by: Duration) -> Self {
        FaultPlan {
            delay: BTreeMap::from([(ordinal, by)]),
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.drop.is_empty() && self.delay.is_empty() && self.corrupt.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    Delivered,
    Dropped,
    Corrupted { at: usize },
    Delayed(Duration),
}

/// One package as the sender handed it to the link, before any fault.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireRecord {
    pub ordinal: u32,
    pub direction: Direction,
    pub bytes: Vec<u8>,
    pub fate: Fate,
}

#[derive(Debug, Default)]
struct Shared {
    plan: FaultPlan,
    next: u32,
    log: Vec<WireRecord>,
}

/// Log of everything sent over an in-memory pair.
#[derive(Debug, Clone, Default)]
pub struct WireLog(Arc<Mutex<Shared>>);

impl WireLog {
    pub fn records(&self) -> Vec<WireRecord> {
        self.0.lock().expect("wire log lock").log.clone()
    }

    /// Assigns the next ordinal, applies the plan and records the package.
    fn admit(&self, direction: Direction, bytes: &[u8]) -> (Fate, Vec<u8>) {
        let mut s = self.0.lock().expect("wire log lock");
        s.next += 1;
        let ordinal = s.next;
        let mut out = bytes.to_vec();
        let fate = if s.plan.drop.contains(&ordinal) {
            Fate::Dropped
        } else if let Some(spot) = s.plan.corrupt.get(&ordinal).copied().filter(|_| !out.is_empty()) {
            let at = match spot {
                Spot::Middle => out.len() / 2,
                Spot::At(i) => i % out.len(),
            };
            out[at] ^= 0xFF;
            Fate::Corrupted { at }
        } else if let Some(d) = s.plan.delay.get(&ordinal) {
            Fate::Delayed(*d)
        } else {
            Fate::Delivered
        };
        s.log.push(WireRecord {
            ordinal,
            direction,
            bytes: bytes.to_vec(),
            fate,
        });
        (fate, out)
    }
}

#[derive(Debug)]
struct MemoryEnd {
    tx: Option<mpsc::UnboundedSender<Vec<u8>>>,
    rx: mpsc::UnboundedReceiver<Vec<u8>>,
    sends: Direction,
    log: WireLog,
}

#[derive(Debug)]
enum Inner {
    Memory(MemoryEnd),
    Tcp(TcpEnd),
}

/// One endpoint of a link.
#[derive(Debug)]
pub struct TransportLink {
    inner: Inner,
    config: LinkConfig,
    closed: bool,
}

/// Connected in-memory pair: (device end, server end). The server end uses
/// [`LinkConfig::server_side`].
pub fn link_pair(plan: FaultPlan, config: LinkConfig) -> (TransportLink, TransportLink, WireLog) {
    let log = WireLog(Arc::new(Mutex::new(Shared {
        plan,
        ..Shared::default()
    })));
    let (to_server, from_client) = mpsc::unbounded_channel();
    let (to_client, from_server) = mpsc::unbounded_channel();
    let end = |tx, rx, sends, config| TransportLink {
        inner: Inner::Memory(MemoryEnd {
            tx: Some(tx),
            rx,
            sends,
            log: log.clone(),
        }),
        config,
        closed: false,
    };
    (
        end(to_server, from_server, Direction::ClientToServer, config),
        end(to_client, from_client, Direction::ServerToClient, config.server_side()),
        log.clone(),
    )
}

impl TransportLink {
    pub(crate) fn from_tcp(end: TcpEnd, config: LinkConfig) -> Self {
        TransportLink {
            inner: Inner::Tcp(end),
            config,
            closed: false,
        }
    }

    pub fn config(&self) -> LinkConfig {
        self.config
    }

    pub fn set_config(&mut self, config: LinkConfig) {
        self.config = config;
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub async fn send(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        if self.closed {
            return Err(TransportError::closed("link closed"));
        }
        match &mut self.inner {
            Inner::Memory(end) => {
                let (fate, out) = end.log.admit(end.sends, bytes);
                match fate {
                    Fate::Dropped => return Ok(()),
                    Fate::Delayed(d) => tokio::time::sleep(d).await,
                    Fate::Delivered | Fate::Corrupted { .. } => {}
                }
                let tx = end.tx.as_ref().ok_or_else(|| TransportError::closed("link closed"))?;
                tx.send(out).map_err(|_| TransportError::closed("peer closed"))
            }
            Inner::Tcp(end) => end.send(bytes).await,
        }
    }

    pub async fn recv(&mut self) -> Result<Vec<u8>, TransportError> {
        if self.closed {
            return Err(TransportError::closed("link closed"));
        }
        let deadline = self.config.idle_deadline;
        let fut = async {
            match &mut self.inner {
                Inner::Memory(end) => end.rx.recv().await.ok_or_else(|| TransportError::closed("peer closed")),
                Inner::Tcp(end) => end.recv().await,
            }
        };
        let r = match deadline {
            Some(d) => match tokio::time::timeout(d, fut).await {
                Ok(r) => r,
                Err(_) => Err(TransportError::closed(format!(
                    "idle deadline of {} ms expired",
                    d.as_millis()
                ))),
            },
            None => fut.await,
        };
        if r.is_err() {
            self.close().await;
        }
        r
    }

    /// Closes this endpoint; the peer's pending receive fails with `TransportClosed`.
    pub async fn close(&mut self) {
        if self.closed {
            return;
        }
        self.closed = true;
        match &mut self.inner {
            Inner::Memory(end) => {
                end.tx = None;
                end.rx.close();
            }
            Inner::Tcp(end) => end.shutdown().await,
        }
    }
}
