//! Collective operations over a [`Communicator`].
//!
//! Compressed collectives live in [`zipped`]; plain ones in [`reference`].
//! For identical inputs every compressed collective returns bit-for-bit what
//! its reference counterpart returns.
//!
//! Reductions widen each BF16 contribution to FP32, sum in ascending rank
//! order starting from rank 0's value, and round back to BF16 to nearest
//! even. The order is fixed by rank, never by message arrival.

pub mod reference;
pub mod zipped;

use crate::bf16;
use crate::codec::{self, CodecError, ExponentCodebook};
use crate::container::FrameError;
use crate::transport::{Communicator, TransportError};

pub use reference::{
    native_reduce_scatter, native_reduce_scatter_f32, reference_all_gather, reference_all_to_all,
    reference_reduce_scatter, NativePrecision,
};
pub use zipped::{
    zip_all_gather, zip_all_reduce, zip_all_to_all_d1, zip_all_to_all_d2, zip_reduce_scatter,
    zip_reduce_scatter_f32,
};

#[derive(Debug, thiserror::Error)]
pub enum CollectiveError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("local frame: {0}")]
    Frame(#[from] FrameError),
    #[error("corrupt frame from rank {peer}: {source}")]
    PeerFrame {
        peer: usize,
        #[source]
        source: FrameError,
    },
    #[error("rank {peer}: {detail}")]
    Mismatch { peer: usize, detail: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl CollectiveError {
    /// The peer whose data caused the failure, when one is known.
    pub fn peer(&self) -> Option<usize> {
        match self {
            CollectiveError::PeerFrame { peer, .. } | CollectiveError::Mismatch { peer, .. } => Some(*peer),
            CollectiveError::Transport(
                TransportError::Disconnected { peer }
                | TransportError::Timeout { peer, .. }
                | TransportError::Unreachable { peer, .. },
            ) => Some(*peer),
            _ => None,
        }
    }
}

pub(crate) fn mismatch(peer: usize, detail: impl Into<String>) -> CollectiveError {
    CollectiveError::Mismatch {
        peer,
        detail: detail.into(),
    }
}

/// How a rank picks the codebook for one call.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SigmaPolicy {
    /// Derive the codebook from this σ.
    Fixed(f64),
    /// Measure σ over the whole local send buffer. Buffers without a usable
    /// σ fall back to a window around their modal exponent.
    Measure,
}

impl SigmaPolicy {
    pub fn codebook<'a>(&self, data: impl IntoIterator<Item = &'a [u16]>) -> Result<ExponentCodebook, CodecError> {
        match *self {
            SigmaPolicy::Fixed(sigma) => codec::derive_codebook(sigma),
            SigmaPolicy::Measure => {
                let all: Vec<u16> = data.into_iter().flatten().copied().collect();
                ExponentCodebook::for_data(&all)
            }
        }
    }
}

/// Per-peer send buffers and expected receive counts for an all-to-all.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlltoAllSpec {
    /// `send[q]` goes to rank `q`.
    pub send: Vec<Vec<u16>>,
    /// `recv_counts[p]` elements are expected from rank `p`.
    pub recv_counts: Vec<usize>,
}

impl AlltoAllSpec {
    pub fn new(send: Vec<Vec<u16>>, recv_counts: Vec<usize>) -> Self {
        Self { send, recv_counts }
    }

    /// Every peer sends and receives chunks of `send`'s own lengths, which
    /// is consistent whenever all ranks use the same per-peer lengths.
    pub fn symmetric(send: Vec<Vec<u16>>) -> Self {
        let recv_counts = send.iter().map(Vec::len).collect();
        Self { send, recv_counts }
    }

    pub(crate) fn check(&self, comm: &Communicator) -> Result<(), CollectiveError> {
        let w = comm.world_size();
        if self.send.len() != w || self.recv_counts.len() != w {
            return Err(CollectiveError::InvalidArgument(format!(
                "all-to-all spec has {} send buffers and {} receive counts for a world of {w}",
                self.send.len(),
                self.recv_counts.len()
            )));
        }
        let me = comm.rank();
        if self.send[me].len() != self.recv_counts[me] {
            return Err(mismatch(
                me,
                format!(
                    "sends {} elements to itself but expects {}",
                    self.send[me].len(),
                    self.recv_counts[me]
                ),
            ));
        }
        Ok(())
    }
}

/// Local input of `world_size × shard_len` elements; rank `q` receives the
/// reduction of every rank's `q`-th shard.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReduceScatterSpec {
    pub input: Vec<u16>,
    pub shard_len: usize,
}

impl ReduceScatterSpec {
    pub fn new(input: Vec<u16>, shard_len: usize) -> Self {
        Self { input, shard_len }
    }

    pub(crate) fn check(&self, comm: &Communicator) -> Result<(), CollectiveError> {
        let w = comm.world_size();
        if self.input.len() != w * self.shard_len {
            return Err(CollectiveError::InvalidArgument(format!(
                "reduce-scatter input has {} elements, expected {w} x {}",
                self.input.len(),
                self.shard_len
            )));
        }
        Ok(())
    }

    pub fn shard(&self, q: usize) -> &[u16] {
        &self.input[q * self.shard_len..(q + 1) * self.shard_len]
    }

    pub(crate) fn into_all_to_all(self, world: usize) -> AlltoAllSpec {
        let s = self.shard_len;
        let send = (0..world).map(|q| self.input[q * s..(q + 1) * s].to_vec()).collect();
        AlltoAllSpec::new(send, vec![s; world])
    }
}

/// Sum `contributions` (indexed by source rank) element-wise in FP32.
pub fn accumulate_f32(contributions: &[Vec<u16>], shard_len: usize) -> Vec<f32> {
    let mut acc: Vec<f32> = match contributions.first() {
        Some(first) => first.iter().map(|&w| bf16::to_f32(w)).collect(),
        None => vec![0.0; shard_len],
    };
    for c in &contributions[1.min(contributions.len())..] {
        for (a, &w) in acc.iter_mut().zip(c) {
            *a += bf16::to_f32(w);
        }
    }
    acc
}

/// [`accumulate_f32`] rounded to BF16.
pub fn accumulate_bf16(contributions: &[Vec<u16>], shard_len: usize) -> Vec<u16> {
    accumulate_f32(contributions, shard_len)
        .into_iter()
        .map(bf16::from_f32)
        .collect()
}
