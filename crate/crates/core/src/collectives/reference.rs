//! Uncompressed collectives: the correctness oracle for the compressed
//! ones and the native path for the switcher.
//!
//! All-gather and reduce-scatter move raw words with no metadata round;
//! received lengths are checked on arrival. All-to-all first exchanges its
//! counts and agrees on them globally, so a mismatch fails on every rank
//! before any payload moves.

use super::{accumulate_f32, mismatch, AlltoAllSpec, CollectiveError, ReduceScatterSpec};
use crate::bf16;
use crate::transport::Communicator;

fn decode_words(peer: usize, bytes: &[u8], expect: usize) -> Result<Vec<u16>, CollectiveError> {
    if bytes.len() != 2 * expect {
        return Err(mismatch(
            peer,
            format!("sent {} bytes, expected {expect} BF16 elements", bytes.len()),
        ));
    }
    Ok(bf16::from_le_bytes(bytes).expect("even length"))
}

/// Concatenation of every rank's `local`, in rank order.
pub fn reference_all_gather(comm: &mut Communicator, local: &[u16]) -> Result<Vec<u16>, CollectiveError> {
    let world = comm.world_size();
    let me = comm.rank();
    let bytes = bf16::to_le_bytes(local);
    for p in (0..world).filter(|&p| p != me) {
        comm.send_payload(p, &bytes, bytes.len())?;
    }
    let mut out = Vec::with_capacity(world * local.len());
    for p in 0..world {
        if p == me {
            out.extend_from_slice(local);
        } else {
            let msg = comm.recv(p)?;
            out.extend(decode_words(p, &msg, local.len())?);
        }
    }
    Ok(out)
}

/// `out[p]` is what rank `p` sent to this rank.
pub fn reference_all_to_all(comm: &mut Communicator, spec: &AlltoAllSpec) -> Result<Vec<Vec<u16>>, CollectiveError> {
    spec.check(comm)?;
    let world = comm.world_size();
    let me = comm.rank();

    let sizes: Vec<u64> = spec.send.iter().map(|s| s.len() as u64).collect();
    let declared = comm.exchange_sizes(&sizes)?;
    let first_bad = (0..world).find(|&p| declared[p] != spec.recv_counts[p] as u64);
    let verdicts = comm.all_gather_u64(first_bad.map_or(u64::MAX, |p| p as u64))?;
    if let Some(p) = first_bad {
        return Err(mismatch(
            p,
            format!("declared {} elements, expected {}", declared[p], spec.recv_counts[p]),
        ));
    }
    if let Some((r, &p)) = verdicts.iter().enumerate().find(|(_, &v)| v != u64::MAX) {
        return Err(mismatch(r, format!("rejected the count declared by rank {p}")));
    }

    for q in (0..world).filter(|&q| q != me) {
        let bytes = bf16::to_le_bytes(&spec.send[q]);
        comm.send_payload(q, &bytes, bytes.len())?;
    }
    let mut out = Vec::with_capacity(world);
    for p in 0..world {
        if p == me {
            out.push(spec.send[me].clone());
        } else {
            let msg = comm.recv(p)?;
            out.push(decode_words(p, &msg, spec.recv_counts[p])?);
        }
    }
    Ok(out)
}

/// Element type carried on the wire by [`native_reduce_scatter`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NativePrecision {
    #[default]
    Bf16,
    /// Contributions are widened to FP32 before sending.
    Fp32,
}

impl NativePrecision {
    pub fn element_bytes(self) -> usize {
        match self {
            NativePrecision::Bf16 => 2,
            NativePrecision::Fp32 => 4,
        }
    }
}

/// Direct-exchange reduce-scatter with FP32 accumulation.
pub fn native_reduce_scatter(
    comm: &mut Communicator,
    spec: &ReduceScatterSpec,
    precision: NativePrecision,
) -> Result<Vec<u16>, CollectiveError> {
    Ok(native_reduce_scatter_f32(comm, spec, precision)?
        .into_iter()
        .map(bf16::from_f32)
        .collect())
}

pub fn native_reduce_scatter_f32(
    comm: &mut Communicator,
    spec: &ReduceScatterSpec,
    precision: NativePrecision,
) -> Result<Vec<f32>, CollectiveError> {
    spec.check(comm)?;
    let world = comm.world_size();
    let me = comm.rank();
    let n = spec.shard_len;

    for q in (0..world).filter(|&q| q != me) {
        let shard = spec.shard(q);
        let bytes = match precision {
            NativePrecision::Bf16 => bf16::to_le_bytes(shard),
            NativePrecision::Fp32 => shard.iter().flat_map(|&w| bf16::to_f32(w).to_le_bytes()).collect(),
        };
        comm.send_payload(q, &bytes, 2 * n)?;
    }
    let mut contributions: Vec<Vec<u16>> = Vec::with_capacity(world);
    for p in 0..world {
        if p == me {
            contributions.push(spec.shard(me).to_vec());
            continue;
        }
        let msg = comm.recv(p)?;
        let words = match precision {
            NativePrecision::Bf16 => decode_words(p, &msg, n)?,
            NativePrecision::Fp32 => {
                if msg.len() != 4 * n {
                    return Err(mismatch(p, format!("sent {} bytes, expected {n} FP32 elements", msg.len())));
                }
                // FP32 values on this path are widened BF16, so narrowing is exact.
                msg.chunks_exact(4)
                    .map(|c| bf16::from_f32(f32::from_le_bytes(c.try_into().unwrap())))
                    .collect()
            }
        };
        contributions.push(words);
    }
    Ok(accumulate_f32(&contributions, n))
}

/// [`native_reduce_scatter`] with BF16 on the wire.
pub fn reference_reduce_scatter(comm: &mut Communicator, spec: &ReduceScatterSpec) -> Result<Vec<u16>, CollectiveError> {
    native_reduce_scatter(comm, spec, NativePrecision::Bf16)
}
