//! Point-to-point transports and the [`Communicator`] that collectives run on.

pub mod loopback;
pub mod sim;
pub mod tcp;

use std::time::{Duration, Instant};

pub use loopback::LoopbackTransport;
pub use sim::{ConcurrencyMode, LinkOverride, SimProfile, SimProfileError, SimTransport, SimWorld};
pub use tcp::TcpTransport;

/// Default receive timeout.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Environment variable naming rank 0's rendezvous address (`host:port`).
pub const RENDEZVOUS_ENV: &str = "ZIPCOLL_RENDEZVOUS";

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("peer {peer} is not a rank of a world of {world}")]
    InvalidPeer { peer: usize, world: usize },
    #[error("peer {peer} disconnected")]
    Disconnected { peer: usize },
    #[error("timed out after {after:?} waiting for peer {peer}")]
    Timeout { peer: usize, after: Duration },
    #[error("peer {peer} unreachable: {detail}")]
    Unreachable { peer: usize, detail: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("simulation stalled: {0}")]
    Stalled(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered, reliable byte messaging between the ranks of one world.
///
/// Messages between a given (source, destination) pair arrive in the order
/// they were sent. `send` never waits for the receiver to post a `recv`.
pub trait Transport: Send {
    fn rank(&self) -> usize;
    fn world_size(&self) -> usize;
    fn send(&mut self, peer: usize, message: &[u8]) -> Result<(), TransportError>;
    fn recv(&mut self, peer: usize) -> Result<Vec<u8>, TransportError>;
    fn set_timeout(&mut self, timeout: Duration);

    /// Virtual time in seconds, for simulated transports.
    fn virtual_time(&self) -> Option<f64> {
        None
    }

    /// Block until every rank has entered the barrier.
    fn barrier(&mut self) -> Result<(), TransportError> {
        let me = self.rank();
        for p in (0..self.world_size()).filter(|&p| p != me) {
            self.send(p, &[])?;
        }
        for p in (0..self.world_size()).filter(|&p| p != me) {
            self.recv(p)?;
        }
        Ok(())
    }
}

pub(crate) fn check_peer(peer: usize, world: usize) -> Result<(), TransportError> {
    if peer < world {
        Ok(())
    } else {
        Err(TransportError::InvalidPeer { peer, world })
    }
}

/// Byte and message counters, split by purpose.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrafficStats {
    pub messages: u64,
    /// Uncompressed BF16 bytes represented by the payload messages sent.
    pub payload_bytes: u64,
    /// Bytes actually sent for payload messages.
    pub wire_bytes: u64,
    /// Size exchanges and other protocol metadata.
    pub metadata_bytes: u64,
}

impl TrafficStats {
    /// `payload_bytes / wire_bytes`, or 1 when nothing was sent.
    pub fn compression_ratio(&self) -> f64 {
        if self.wire_bytes == 0 {
            1.0
        } else {
            self.payload_bytes as f64 / self.wire_bytes as f64
        }
    }
}

/// A rank's handle on a world: a transport plus codec settings and
/// traffic counters. One collective runs at a time (`&mut self`).
pub struct Communicator {
    transport: Box<dyn Transport>,
    group_size_log2: u8,
    stats: TrafficStats,
    epoch: Instant,
}

impl std::fmt::Debug for Communicator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Communicator")
            .field("rank", &self.rank())
            .field("world_size", &self.world_size())
            .field("group_size_log2", &self.group_size_log2)
            .finish()
    }
}

impl Communicator {
    pub fn new(transport: impl Transport + 'static) -> Self {
        Self::from_boxed(Box::new(transport))
    }

    pub fn from_boxed(transport: Box<dyn Transport>) -> Self {
        Self {
            transport,
            group_size_log2: crate::codec::DEFAULT_GROUP_SIZE_LOG2,
            stats: TrafficStats::default(),
            epoch: Instant::now(),
        }
    }

    /// Group size used by the compressed collectives. Must agree across ranks.
    pub fn with_group_size_log2(mut self, group_size_log2: u8) -> Self {
        self.group_size_log2 = group_size_log2;
        self
    }

    pub fn group_size_log2(&self) -> u8 {
        self.group_size_log2
    }

    pub fn rank(&self) -> usize {
        self.transport.rank()
    }

    pub fn world_size(&self) -> usize {
        self.transport.world_size()
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.transport.set_timeout(timeout);
    }

    pub fn stats(&self) -> TrafficStats {
        self.stats
    }

    pub fn take_stats(&mut self) -> TrafficStats {
        std::mem::take(&mut self.stats)
    }

    /// Seconds on this rank's clock: virtual for the simulator, wall time
    /// since creation otherwise.
    pub fn now(&self) -> f64 {
        self.transport
            .virtual_time()
            .unwrap_or_else(|| self.epoch.elapsed().as_secs_f64())
    }

    pub fn is_simulated(&self) -> bool {
        self.transport.virtual_time().is_some()
    }

    /// Send a payload message that stands for `original_bytes` of BF16 data.
    pub fn send_payload(&mut self, peer: usize, message: &[u8], original_bytes: usize) -> Result<(), TransportError> {
        self.transport.send(peer, message)?;
        self.stats.messages += 1;
        self.stats.wire_bytes += message.len() as u64;
        self.stats.payload_bytes += original_bytes as u64;
        Ok(())
    }

    pub fn send_metadata(&mut self, peer: usize, message: &[u8]) -> Result<(), TransportError> {
        self.transport.send(peer, message)?;
        self.stats.messages += 1;
        self.stats.metadata_bytes += message.len() as u64;
        Ok(())
    }

    pub fn recv(&mut self, peer: usize) -> Result<Vec<u8>, TransportError> {
        self.transport.recv(peer)
    }

    pub fn barrier(&mut self) -> Result<(), TransportError> {
        self.transport.barrier()
    }

    /// Fixed-size all-to-all of one u64 per peer. `local[q]` is what this
    /// rank will send to `q`; the result's entry `p` is what `p` declared
    /// for this rank. The own entry is copied through.
    pub fn exchange_sizes(&mut self, local: &[u64]) -> Result<Vec<u64>, TransportError> {
        let rows: Vec<[u64; 1]> = local.iter().map(|&v| [v]).collect();
        Ok(self.exchange_words(&rows)?.into_iter().map(|[v]| v).collect())
    }

    /// [`Self::exchange_sizes`] with `K` words per peer in one message.
    pub fn exchange_words<const K: usize>(&mut self, local: &[[u64; K]]) -> Result<Vec<[u64; K]>, TransportError> {
        let world = self.world_size();
        let me = self.rank();
        if local.len() != world {
            return Err(TransportError::Protocol(format!(
                "size exchange needs {world} entries, got {}",
                local.len()
            )));
        }
        for p in (0..world).filter(|&p| p != me) {
            let msg: Vec<u8> = local[p].iter().flat_map(|w| w.to_le_bytes()).collect();
            self.send_metadata(p, &msg)?;
        }
        let mut out = vec![[0u64; K]; world];
        out[me] = local[me];
        for p in (0..world).filter(|&p| p != me) {
            let msg = self.recv(p)?;
            if msg.len() != 8 * K {
                return Err(TransportError::Protocol(format!(
                    "size message from rank {p} has {} bytes, expected {}",
                    msg.len(),
                    8 * K
                )));
            }
            for (w, c) in out[p].iter_mut().zip(msg.chunks_exact(8)) {
                *w = u64::from_le_bytes(c.try_into().unwrap());
            }
        }
        Ok(out)
    }

    /// Every rank's `value`, indexed by rank.
    pub fn all_gather_u64(&mut self, value: u64) -> Result<Vec<u64>, TransportError> {
        let local = vec![value; self.world_size()];
        self.exchange_sizes(&local)
    }

    pub fn all_gather_f64(&mut self, value: f64) -> Result<Vec<f64>, TransportError> {
        Ok(self
            .all_gather_u64(value.to_bits())?
            .into_iter()
            .map(f64::from_bits)
            .collect())
    }

    /// Run `f` between a barrier and a max-reduction of per-rank durations.
    /// Every rank gets the same elapsed time: the slowest rank's.
    pub fn timed<T, E>(
        &mut self,
        f: impl FnOnce(&mut Self) -> Result<T, E>,
    ) -> Result<(T, f64), E>
    where
        E: From<TransportError>,
    {
        self.barrier()?;
        let start = self.now();
        let out = f(self)?;
        let local = self.now() - start;
        let all = self.all_gather_f64(local)?;
        Ok((out, all.into_iter().fold(0.0, f64::max)))
    }
}
