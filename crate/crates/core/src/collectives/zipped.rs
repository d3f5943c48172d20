//! Compressed collectives.
//!
//! Each rank picks one codebook per call from its whole send buffer and
//! compresses every outgoing chunk into a `.zbf16` frame. An empty chunk
//! travels as a zero-length message.

use super::{accumulate_f32, mismatch, AlltoAllSpec, CollectiveError, ReduceScatterSpec, SigmaPolicy};
use crate::bf16;
use crate::codec::{self, ExponentCodebook};
use crate::container;
use crate::transport::Communicator;

fn frame_for(data: &[u16], codebook: &ExponentCodebook, group_size_log2: u8) -> Result<Vec<u8>, CollectiveError> {
    if data.is_empty() {
        return Ok(Vec::new());
    }
    let chunk = codec::compress_with_group(data, codebook, group_size_log2)?;
    Ok(container::serialize(&chunk)?)
}

fn decode_frame(peer: usize, frame: &[u8], expect: usize) -> Result<Vec<u16>, CollectiveError> {
    if frame.is_empty() {
        if expect != 0 {
            return Err(mismatch(peer, format!("sent nothing, expected {expect} elements")));
        }
        return Ok(Vec::new());
    }
    let chunk = container::parse(frame).map_err(|source| CollectiveError::PeerFrame { peer, source })?;
    if chunk.element_count != expect {
        return Err(mismatch(
            peer,
            format!("sent {} elements, expected {expect}", chunk.element_count),
        ));
    }
    Ok(codec::decompress(&chunk)?)
}

fn check_len(peer: usize, what: &str, got: usize, want: u64) -> Result<(), CollectiveError> {
    if got as u64 != want {
        return Err(mismatch(peer, format!("{what} of {got} bytes, declared {want}")));
    }
    Ok(())
}

/// Compressed all-gather: concatenation of every rank's `local`.
///
/// Protocol: compress, all-gather the frame size, send the frame to every
/// peer, decompress what arrives.
pub fn zip_all_gather(comm: &mut Communicator, local: &[u16], sigma: SigmaPolicy) -> Result<Vec<u16>, CollectiveError> {
    let world = comm.world_size();
    let me = comm.rank();
    let codebook = sigma.codebook([local])?;
    let frame = frame_for(local, &codebook, comm.group_size_log2())?;

    let sizes = comm.all_gather_u64(frame.len() as u64)?;
    for p in (0..world).filter(|&p| p != me) {
        comm.send_payload(p, &frame, 2 * local.len())?;
    }
    let mut out = Vec::with_capacity(world * local.len());
    for p in 0..world {
        if p == me {
            out.extend_from_slice(local);
            continue;
        }
        let msg = comm.recv(p)?;
        check_len(p, "frame", msg.len(), sizes[p])?;
        out.extend(decode_frame(p, &msg, local.len())?);
    }
    Ok(out)
}

fn frames(comm: &Communicator, spec: &AlltoAllSpec, sigma: SigmaPolicy) -> Result<Vec<Vec<u8>>, CollectiveError> {
    let codebook = sigma.codebook(spec.send.iter().map(Vec::as_slice))?;
    let g = comm.group_size_log2();
    let me = comm.rank();
    spec.send
        .iter()
        .enumerate()
        .map(|(q, s)| if q == me { Ok(Vec::new()) } else { frame_for(s, &codebook, g) })
        .collect()
}

/// Compressed all-to-all, first design: compress, exchange frame sizes and
/// element counts, send whole frames, decompress.
pub fn zip_all_to_all_d1(
    comm: &mut Communicator,
    spec: &AlltoAllSpec,
    sigma: SigmaPolicy,
) -> Result<Vec<Vec<u16>>, CollectiveError> {
    spec.check(comm)?;
    let world = comm.world_size();
    let me = comm.rank();
    let frames = frames(comm, spec, sigma)?;

    let local: Vec<[u64; 2]> = (0..world)
        .map(|q| [frames[q].len() as u64, spec.send[q].len() as u64])
        .collect();
    let declared = comm.exchange_words(&local)?;
    for p in (0..world).filter(|&p| p != me) {
        let [_, count] = declared[p];
        if count != spec.recv_counts[p] as u64 {
            return Err(mismatch(
                p,
                format!("declared {count} elements, expected {}", spec.recv_counts[p]),
            ));
        }
    }

    for q in (0..world).filter(|&q| q != me) {
        comm.send_payload(q, &frames[q], 2 * spec.send[q].len())?;
    }
    let mut out = Vec::with_capacity(world);
    for p in 0..world {
        if p == me {
            out.push(spec.send[me].clone());
            continue;
        }
        let msg = comm.recv(p)?;
        check_len(p, "frame", msg.len(), declared[p][0])?;
        out.push(decode_frame(p, &msg, spec.recv_counts[p])?);
    }
    Ok(out)
}

/// Compressed all-to-all, second design.
///
/// The static part of a frame has a size fixed by its element count, so it
/// is sent immediately with no size exchange. Only then are the dynamic
/// sizes exchanged and the dynamic parts sent, zero-length ones included.
pub fn zip_all_to_all_d2(
    comm: &mut Communicator,
    spec: &AlltoAllSpec,
    sigma: SigmaPolicy,
) -> Result<Vec<Vec<u16>>, CollectiveError> {
    spec.check(comm)?;
    let world = comm.world_size();
    let me = comm.rank();
    let g = comm.group_size_log2();
    let frames = frames(comm, spec, sigma)?;

    let mut dynamic: Vec<&[u8]> = Vec::with_capacity(world);
    for (q, f) in frames.iter().enumerate() {
        let (s, d) = if f.is_empty() {
            (&f[..], &f[..])
        } else {
            let split = container::split_static_dynamic(f)?;
            (split.static_bytes, split.dynamic_bytes)
        };
        if q != me {
            comm.send_payload(q, s, 2 * spec.send[q].len())?;
        }
        dynamic.push(d);
    }
    let mut statics: Vec<Vec<u8>> = Vec::with_capacity(world);
    for p in 0..world {
        if p == me {
            statics.push(Vec::new());
            continue;
        }
        let msg = comm.recv(p)?;
        let n = spec.recv_counts[p];
        let want = if n == 0 { 0 } else { container::static_size(n, g) };
        if msg.len() != want {
            return Err(mismatch(
                p,
                format!("static part of {} bytes, expected {want} for {n} elements", msg.len()),
            ));
        }
        statics.push(msg);
    }

    let sizes: Vec<u64> = dynamic.iter().map(|d| d.len() as u64).collect();
    let declared = comm.exchange_sizes(&sizes)?;
    for q in (0..world).filter(|&q| q != me) {
        comm.send_payload(q, dynamic[q], 0)?;
    }
    let mut out = Vec::with_capacity(world);
    for p in 0..world {
        if p == me {
            out.push(spec.send[me].clone());
            continue;
        }
        let msg = comm.recv(p)?;
        check_len(p, "dynamic part", msg.len(), declared[p])?;
        if statics[p].is_empty() && !msg.is_empty() {
            return Err(mismatch(p, "dynamic part without a static part"));
        }
        let frame = container::recombine(&statics[p], &msg);
        out.push(decode_frame(p, &frame, spec.recv_counts[p])?);
    }
    Ok(out)
}

/// Compressed reduce-scatter with FP32 output: second-design all-to-all of
/// the shards, then local FP32 accumulation in ascending rank order.
pub fn zip_reduce_scatter_f32(
    comm: &mut Communicator,
    spec: &ReduceScatterSpec,
    sigma: SigmaPolicy,
) -> Result<Vec<f32>, CollectiveError> {
    spec.check(comm)?;
    let n = spec.shard_len;
    let a2a = spec.clone().into_all_to_all(comm.world_size());
    let received = zip_all_to_all_d2(comm, &a2a, sigma)?;
    Ok(accumulate_f32(&received, n))
}

/// [`zip_reduce_scatter_f32`] rounded to BF16, nearest-even.
pub fn zip_reduce_scatter(
    comm: &mut Communicator,
    spec: &ReduceScatterSpec,
    sigma: SigmaPolicy,
) -> Result<Vec<u16>, CollectiveError> {
    Ok(zip_reduce_scatter_f32(comm, spec, sigma)?
        .into_iter()
        .map(bf16::from_f32)
        .collect())
}

/// Compressed reduce-scatter followed by compressed all-gather. `input`
/// must split into equal shards, one per rank.
pub fn zip_all_reduce(comm: &mut Communicator, input: &[u16], sigma: SigmaPolicy) -> Result<Vec<u16>, CollectiveError> {
    let world = comm.world_size();
    if !input.len().is_multiple_of(world) {
        return Err(CollectiveError::InvalidArgument(format!(
            "all-reduce input of {} elements does not split across {world} ranks",
            input.len()
        )));
    }
    let spec = ReduceScatterSpec::new(input.to_vec(), input.len() / world);
    let shard = zip_reduce_scatter(comm, &spec, sigma)?;
    zip_all_gather(comm, &shard, sigma)
}

#[cfg(test)]
mod tests {
    use super::super::reference::{reference_all_gather, reference_all_to_all, reference_reduce_scatter};
    use super::super::test_support::{loopback_comms, run};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian(n: usize, seed: u64) -> Vec<u16> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        (0..n).map(|_| bf16::from_f64(d.sample(&mut rng))).collect()
    }

    fn fuzz_words(n: usize, seed: u64) -> Vec<u16> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| match rng.random_range(0..4) {
                0 => rng.random(),
                _ => bf16::from_f64(rng.random_range(-3.0..3.0)),
            })
            .collect()
    }

    #[test]
    fn all_gather_matches_reference() {
        for world in [1, 2, 3, 4, 8] {
            for n in [0, 1, 7, 4096] {
                let out = run(loopback_comms(world), move |c| {
                    let local = gaussian(n, 100 + c.rank() as u64);
                    let z = zip_all_gather(c, &local, SigmaPolicy::Fixed(1.0)).unwrap();
                    let m = zip_all_gather(c, &local, SigmaPolicy::Measure).unwrap();
                    let r = reference_all_gather(c, &local).unwrap();
                    (z, m, r)
                });
                for (z, m, r) in out {
                    assert_eq!(z, r, "world {world} n {n}");
                    assert_eq!(m, r);
                }
            }
        }
    }

    #[test]
    fn all_nan_all_gather() {
        let out = run(loopback_comms(3), |c| {
            let local: Vec<u16> = (0..1000u16).map(|i| (0x7F81 + (i % 100)) | ((i & 1) << 15)).collect();
            let z = zip_all_gather(c, &local, SigmaPolicy::Measure).unwrap();
            (z, reference_all_gather(c, &local).unwrap())
        });
        assert!(out.iter().all(|(z, r)| z == r));
    }

    fn uneven_spec(rank: usize, world: usize, seed: u64) -> AlltoAllSpec {
        let send = (0..world).map(|q| fuzz_words(rank * 1024 + 64 + q, seed + (rank * world + q) as u64)).collect();
        let recv = (0..world).map(|p| p * 1024 + 64 + rank).collect();
        AlltoAllSpec::new(send, recv)
    }

    #[test]
    fn all_to_all_designs_match_reference() {
        for world in [1, 2, 3, 4, 8] {
            let out = run(loopback_comms(world), move |c| {
                let spec = uneven_spec(c.rank(), world, 9);
                let d1 = zip_all_to_all_d1(c, &spec, SigmaPolicy::Measure).unwrap();
                let d2 = zip_all_to_all_d2(c, &spec, SigmaPolicy::Measure).unwrap();
                let r = reference_all_to_all(c, &spec).unwrap();
                (d1, d2, r)
            });
            for (d1, d2, r) in out {
                assert_eq!(d1, r, "world {world}");
                assert_eq!(d2, r, "world {world}");
            }
        }
    }

    #[test]
    fn empty_and_single_element_chunks() {
        let world = 4;
        let out = run(loopback_comms(world), move |c| {
            let me = c.rank();
            // Rank r sends (r + q) % 3 elements to q: 0, 1 or 2.
            let send = (0..world).map(|q| gaussian((me + q) % 3, (me * 10 + q) as u64)).collect();
            let recv = (0..world).map(|p| (p + me) % 3).collect();
            let spec = AlltoAllSpec::new(send, recv);
            let d1 = zip_all_to_all_d1(c, &spec, SigmaPolicy::Fixed(1.0)).unwrap();
            let d2 = zip_all_to_all_d2(c, &spec, SigmaPolicy::Fixed(1.0)).unwrap();
            (d1, d2, reference_all_to_all(c, &spec).unwrap())
        });
        for (d1, d2, r) in out {
            assert_eq!(d1, r);
            assert_eq!(d2, r);
        }
    }

    #[test]
    fn no_escapes_means_empty_dynamic_parts() {
        let world = 3;
        let out = run(loopback_comms(world), move |c| {
            // 1.0, 1.5, 1.75 ... all share exponent 127.
            let chunk: Vec<u16> = (0..600u16).map(|i| 0x3F80 | (i & 0x7F)).collect();
            let spec = AlltoAllSpec::symmetric(vec![chunk; world]);
            let d2 = zip_all_to_all_d2(c, &spec, SigmaPolicy::Fixed(1.0)).unwrap();
            let stats = c.take_stats();
            (d2 == reference_all_to_all(c, &spec).unwrap(), stats)
        });
        let static_only = 2 * container::static_size(600, codec::DEFAULT_GROUP_SIZE_LOG2) as u64;
        for (ok, stats) in &out {
            assert!(ok);
            assert_eq!(stats.wire_bytes, static_only);
        }
    }

    #[test]
    fn reduce_scatter_matches_reference() {
        for world in [1, 2, 3, 4, 8] {
            let out = run(loopback_comms(world), move |c| {
                let spec = ReduceScatterSpec::new(gaussian(world * 777, 50 + c.rank() as u64), 777);
                let z = zip_reduce_scatter(c, &spec, SigmaPolicy::Measure).unwrap();
                let r = reference_reduce_scatter(c, &spec).unwrap();
                (z, r)
            });
            for (z, r) in out {
                assert_eq!(z, r);
            }
        }
    }

    #[test]
    fn reduce_scatter_of_ones() {
        let out = run(loopback_comms(4), |c| {
            let spec = ReduceScatterSpec::new(vec![bf16::from_f32(1.0); 4 * 33], 33);
            zip_reduce_scatter(c, &spec, SigmaPolicy::Fixed(1.0)).unwrap()
        });
        assert!(out.iter().all(|o| o.iter().all(|&w| w == bf16::from_f32(4.0))));
    }

    #[test]
    fn all_reduce_is_rs_then_ag() {
        let out = run(loopback_comms(4), |c| {
            let input = gaussian(4 * 100, c.rank() as u64);
            let z = zip_all_reduce(c, &input, SigmaPolicy::Measure).unwrap();
            let shard = reference_reduce_scatter(c, &ReduceScatterSpec::new(input, 100)).unwrap();
            (z, reference_all_gather(c, &shard).unwrap())
        });
        for (z, r) in &out {
            assert_eq!(z, r);
        }
        assert!(out.windows(2).all(|w| w[0].0 == w[1].0));
    }

    #[test]
    fn gaussian_traffic_is_compressed() {
        let out = run(loopback_comms(4), |c| {
            let spec = AlltoAllSpec::symmetric((0..4).map(|q| gaussian(1 << 16, q * 7 + c.rank() as u64)).collect());
            c.take_stats();
            zip_all_to_all_d2(c, &spec, SigmaPolicy::Fixed(1.0)).unwrap();
            c.take_stats()
        });
        for s in out {
            assert!(s.compression_ratio() >= 1.30, "{}", s.compression_ratio());
            assert_eq!(s.payload_bytes, 3 * 2 * (1 << 16));
        }
    }

    #[test]
    fn count_mismatch_names_peer() {
        let out = run(loopback_comms(2), |c| {
            let me = c.rank();
            // Rank 1 sends 11 elements to rank 0, which expects 10.
            let send = vec![gaussian(10 + me, 1), gaussian(10, 2)];
            let spec = AlltoAllSpec::new(send, vec![10, 10]);
            c.set_timeout(std::time::Duration::from_secs(5));
            zip_all_to_all_d1(c, &spec, SigmaPolicy::Measure).map_err(|e| e.peer())
        });
        assert_eq!(out[0], Err(Some(1)));
        assert_eq!(out[1], Err(Some(0)));
    }

    #[test]
    fn corrupt_peer_frame_names_peer() {
        use crate::transport::loopback;
        let mut ts = loopback::world(2);
        let mut liar = ts.pop().unwrap();
        let mut comm = Communicator::new(ts.pop().unwrap());
        let h = std::thread::spawn(move || {
            use crate::transport::Transport;
            let mut frame = container::serialize(&codec::compress(&gaussian(64, 3), &codec::derive_codebook(1.0).unwrap()).unwrap()).unwrap();
            frame[0] ^= 0xFF;
            liar.send(0, &(frame.len() as u64).to_le_bytes()).unwrap();
            liar.recv(0).unwrap();
            liar.send(0, &frame).unwrap();
            liar
        });
        let err = zip_all_gather(&mut comm, &gaussian(64, 4), SigmaPolicy::Fixed(1.0)).unwrap_err();
        assert!(matches!(err, CollectiveError::PeerFrame { peer: 1, .. }), "{err}");
        drop(h.join().unwrap());
    }
}
