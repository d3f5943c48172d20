//! `zipcoll collective`: run collectives on deterministic inputs, time
//! them, and optionally check every result against a locally computed
//! oracle.
//!
//! Every rank derives every other rank's input from `(seed, stream)`, so the
//! oracle needs no communication and works the same across processes.

use anyhow::Context;
use zipcoll::bf16;
use zipcoll::collectives::{
    accumulate_f32, native_reduce_scatter, reference_all_gather, reference_all_to_all,
    zip_all_gather, zip_all_to_all_d1, zip_all_to_all_d2, zip_reduce_scatter, AlltoAllSpec, NativePrecision,
    ReduceScatterSpec, SigmaPolicy,
};
use zipcoll::datagen::{generate_stream, Distribution};
use zipcoll::switcher::{self, CostModel};
use zipcoll::transport::Communicator;

use crate::args::Op;
use crate::report::Record;

/// Everything a rank needs to run one benchmark invocation.
#[derive(Clone, Debug)]
pub struct Plan {
    pub ops: Vec<Op>,
    pub sizes: Vec<usize>,
    pub seed: u64,
    pub sigma: SigmaPolicy,
    pub verify: bool,
    pub uneven: bool,
    pub repeat: usize,
    pub native: NativePrecision,
    pub model: Option<CostModel>,
    pub transport: &'static str,
}

/// One rank's view of a finished run.
#[derive(Debug, Default)]
pub struct Outcome {
    /// Identical on every rank.
    pub records: Vec<Record>,
    /// This rank's verification failures.
    pub failures: Vec<String>,
    /// Whether any rank failed verification.
    pub any_failed: bool,
}

fn input(seed: u64, stream: u64, len: usize) -> Vec<u16> {
    generate_stream(Distribution::Normal { sigma: 1.0 }, len, seed, stream).expect("unit normal is a valid distribution")
}

/// Elements rank `src` sends rank `dst` in an all-to-all of `n` elements
/// per rank. Uneven chunks are half, one and one-and-a-half times the even
/// chunk, rotating with `src + dst`.
pub fn a2a_chunk_len(n: usize, world: usize, uneven: bool, src: usize, dst: usize) -> usize {
    let base = n / world;
    if uneven {
        base * (1 + (src + dst) % 3) / 2
    } else {
        base
    }
}

enum Output {
    Flat(Vec<u16>),
    PerPeer(Vec<Vec<u16>>),
}

struct Workload {
    world: usize,
    me: usize,
    seed: u64,
    n: usize,
    uneven: bool,
}

impl Workload {
    fn stream(&self, rank: usize, q: usize) -> u64 {
        (rank * self.world + q) as u64
    }

    fn gather_local(&self, rank: usize) -> Vec<u16> {
        input(self.seed, self.stream(rank, 0), self.n)
    }

    fn a2a_chunk(&self, src: usize, dst: usize) -> Vec<u16> {
        let len = a2a_chunk_len(self.n, self.world, self.uneven, src, dst);
        input(self.seed, self.stream(src, dst), len)
    }

    fn a2a_spec(&self) -> AlltoAllSpec {
        let send = (0..self.world).map(|q| self.a2a_chunk(self.me, q)).collect();
        let recv = (0..self.world)
            .map(|p| a2a_chunk_len(self.n, self.world, self.uneven, p, self.me))
            .collect();
        AlltoAllSpec::new(send, recv)
    }

    fn rs_spec(&self, rank: usize) -> ReduceScatterSpec {
        let shard = self.n / self.world;
        ReduceScatterSpec::new(input(self.seed, self.stream(rank, 0), shard * self.world), shard)
    }

    fn oracle(&self, op: Op) -> Output {
        match op {
            Op::Allgather | Op::RefAllgather => {
                Output::Flat((0..self.world).flat_map(|p| self.gather_local(p)).collect())
            }
            Op::A2aD1 | Op::A2aD2 | Op::RefA2a => {
                Output::PerPeer((0..self.world).map(|p| self.a2a_chunk(p, self.me)).collect())
            }
            Op::Reducescatter | Op::AutoRs | Op::RefRs => {
                let contributions: Vec<Vec<u16>> = (0..self.world)
                    .map(|p| self.rs_spec(p).shard(self.me).to_vec())
                    .collect();
                let shard = self.n / self.world;
                Output::Flat(accumulate_f32(&contributions, shard).into_iter().map(bf16::from_f32).collect())
            }
        }
    }
}

fn first_diff(got: &[u16], want: &[u16]) -> Option<String> {
    if let Some(i) = got.iter().zip(want).position(|(g, w)| g != w) {
        return Some(format!("element {i}: got {:#06x}, want {:#06x}", got[i], want[i]));
    }
    (got.len() != want.len()).then(|| format!("got {} elements, want {}", got.len(), want.len()))
}

/// Where `got` first departs from `want`, phrased for a human.
fn describe_mismatch(op: Op, me: usize, n: usize, got: &Output, want: &Output) -> Option<String> {
    let detail = match (got, want) {
        (Output::Flat(g), Output::Flat(w)) => match g.iter().zip(w).position(|(a, b)| a != b) {
            // Gathered output is rank-major; name the source rank.
            Some(i) if n > 0 && matches!(op, Op::Allgather | Op::RefAllgather) => format!(
                "peer {}, element {}: got {:#06x}, want {:#06x}",
                i / n,
                i % n,
                g[i],
                w[i]
            ),
            _ => first_diff(g, w)?,
        },
        (Output::PerPeer(g), Output::PerPeer(w)) => {
            let (p, d) = g.iter().zip(w).enumerate().find_map(|(p, (a, b))| Some((p, first_diff(a, b)?)))?;
            format!("peer {p}, {d}")
        }
        _ => "result has the wrong shape".to_string(),
    };
    Some(format!("{} on rank {me}: {detail}", op.name()))
}

fn run_op(comm: &mut Communicator, plan: &Plan, op: Op, w: &Workload) -> anyhow::Result<(Output, Option<switcher::Path>)> {
    let sigma = plan.sigma;
    Ok(match op {
        Op::Allgather => (Output::Flat(zip_all_gather(comm, &w.gather_local(w.me), sigma)?), None),
        Op::RefAllgather => (Output::Flat(reference_all_gather(comm, &w.gather_local(w.me))?), None),
        Op::A2aD1 => (Output::PerPeer(zip_all_to_all_d1(comm, &w.a2a_spec(), sigma)?), None),
        Op::A2aD2 => (Output::PerPeer(zip_all_to_all_d2(comm, &w.a2a_spec(), sigma)?), None),
        Op::RefA2a => (Output::PerPeer(reference_all_to_all(comm, &w.a2a_spec())?), None),
        Op::Reducescatter => (Output::Flat(zip_reduce_scatter(comm, &w.rs_spec(w.me), sigma)?), None),
        Op::RefRs => (Output::Flat(native_reduce_scatter(comm, &w.rs_spec(w.me), plan.native)?), None),
        Op::AutoRs => {
            let model = plan.model.as_ref().context("auto-rs needs --cost-profile")?;
            let (out, path) = switcher::switched_reduce_scatter(comm, model, &w.rs_spec(w.me), plan.native, sigma)?;
            (Output::Flat(out), Some(path))
        }
    })
}

/// Run `plan` on this rank. Every rank of the world must call this with
/// the same plan.
pub fn run(comm: &mut Communicator, plan: &Plan) -> anyhow::Result<Outcome> {
    let world = comm.world_size();
    let me = comm.rank();
    let mut outcome = Outcome::default();
    for &bytes in &plan.sizes {
        let n = bytes / 2;
        let w = Workload {
            world,
            me,
            seed: plan.seed,
            n,
            uneven: plan.uneven,
        };
        for &op in &plan.ops {
            let want = plan.verify.then(|| w.oracle(op));
            for _ in 0..plan.repeat {
                comm.take_stats();
                let ((got, path), seconds) = comm
                    .timed(|c| run_op(c, plan, op, &w))
                    .with_context(|| format!("{} with {n} elements per rank", op.name()))?;
                let stats = comm.take_stats();
                let payload: u64 = comm.all_gather_u64(stats.payload_bytes)?.into_iter().sum();
                let wire: u64 = comm.all_gather_u64(stats.wire_bytes)?.into_iter().sum();

                let verified = match &want {
                    None => String::new(),
                    Some(want) => {
                        let failure = describe_mismatch(op, me, n, &got, want);
                        let local_fail = failure.is_some();
                        outcome.failures.extend(failure);
                        let any = comm.all_gather_u64(local_fail as u64)?.into_iter().any(|f| f != 0);
                        outcome.any_failed |= any;
                        if any { "fail" } else { "pass" }.to_string()
                    }
                };
                comm.take_stats();
                outcome.records.push(Record {
                    operation: op.name().to_string(),
                    transport: plan.transport.to_string(),
                    world_size: world,
                    element_count: n,
                    payload_bytes: payload,
                    compressed_bytes: wire,
                    seconds,
                    ratio: if wire == 0 { 1.0 } else { payload as f64 / wire as f64 },
                    path: path.map(|p| p.to_string()).unwrap_or_default(),
                    verified,
                });
            }
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uneven_chunks_rotate_through_three_sizes() {
        let lens: Vec<usize> = (0..3).map(|q| a2a_chunk_len(4000, 4, true, 0, q)).collect();
        assert_eq!(lens, vec![500, 1000, 1500]);
        assert_eq!(a2a_chunk_len(4000, 4, true, 1, 2), 500);
        assert_eq!(a2a_chunk_len(4000, 4, false, 1, 2), 1000);
    }

    #[test]
    fn mismatch_names_rank_peer_and_element() {
        let got = Output::PerPeer(vec![vec![1, 2], vec![3, 4]]);
        let want = Output::PerPeer(vec![vec![1, 2], vec![3, 5]]);
        let msg = describe_mismatch(Op::A2aD2, 2, 2, &got, &want).unwrap();
        assert_eq!(msg, "a2a-d2 on rank 2: peer 1, element 1: got 0x0004, want 0x0005");

        let got = Output::Flat(vec![0, 0, 0, 7]);
        let want = Output::Flat(vec![0, 0, 0, 8]);
        let msg = describe_mismatch(Op::Allgather, 0, 2, &got, &want).unwrap();
        assert_eq!(msg, "allgather on rank 0: peer 1, element 1: got 0x0007, want 0x0008");

        assert!(describe_mismatch(Op::RefRs, 0, 2, &want, &want).is_none());
        let short = Output::Flat(vec![0, 0]);
        assert!(describe_mismatch(Op::RefRs, 0, 2, &short, &want).unwrap().contains("got 2 elements, want 4"));
    }
}
