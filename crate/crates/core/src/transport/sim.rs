//! Virtual-clock transport simulator.
//!
//! Each rank owns a clock in seconds that starts at its ready time. Sends
//! are non-blocking: a message is issued at the sender's current clock and
//! parked as pending. Pending messages are committed to the network model
//! only when every rank is blocked (in `recv` with nothing to read, in a
//! barrier, or finished), always taking the smallest
//! `(issue time, source, sequence)` first. No rank can issue an earlier send
//! at that point, so the schedule, and every clock, is independent of how
//! the OS interleaves the rank threads.
//!
//! Network model for a message of `b` bytes on link `s -> d` with
//! bandwidth `B` and latency `L`:
//!
//! * `full-p2p-parallel`: every directed link transmits independently.
//!   `start = max(issue, link_free)`, `finish = start + b/B`.
//! * `serialized-links`: all links share one medium, so transfers anywhere
//!   in the world happen one at a time.
//!   `start = max(issue, medium_free)`, `finish = start + b/B`.
//!
//! In both modes the message arrives at `finish + L`, and a `recv` moves the
//! receiver's clock to `max(clock, arrival)`. Local computation takes zero
//! virtual time. Barriers are free and align all clocks to the latest one.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::{check_peer, Transport, TransportError, DEFAULT_TIMEOUT};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConcurrencyMode {
    #[default]
    FullP2pParallel,
    SerializedLinks,
}

impl fmt::Display for ConcurrencyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConcurrencyMode::FullP2pParallel => "full-p2p-parallel",
            ConcurrencyMode::SerializedLinks => "serialized-links",
        })
    }
}

impl FromStr for ConcurrencyMode {
    type Err = SimProfileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full-p2p-parallel" => Ok(ConcurrencyMode::FullP2pParallel),
            "serialized-links" => Ok(ConcurrencyMode::SerializedLinks),
            other => Err(SimProfileError::Invalid(format!("unknown concurrency mode {other:?}"))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimProfileError {
    #[error("line {line}: {detail}")]
    Syntax { line: usize, detail: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LinkOverride {
    pub bandwidth: Option<f64>,
    pub latency: Option<f64>,
}

/// Network parameters for the simulator.
///
/// Text form, one `key = value` per line, `#` starts a comment:
///
/// ```text
/// bandwidth = 1073741824      # bytes per second, every link
/// latency = 1e-5              # seconds, every link
/// mode = serialized-links     # or full-p2p-parallel
/// ready.1 = 0.002             # rank 1 starts 2 ms late
/// link.0.3.bandwidth = 5e8    # override for the directed link 0 -> 3
/// link.0.3.latency = 2e-5
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct SimProfile {
    pub bandwidth: f64,
    pub latency: f64,
    pub mode: ConcurrencyMode,
    pub ready: BTreeMap<usize, f64>,
    pub links: BTreeMap<(usize, usize), LinkOverride>,
}

impl Default for SimProfile {
    fn default() -> Self {
        Self {
            bandwidth: (1u64 << 30) as f64,
            latency: 10e-6,
            mode: ConcurrencyMode::FullP2pParallel,
            ready: BTreeMap::new(),
            links: BTreeMap::new(),
        }
    }
}

fn check_bandwidth(v: f64) -> Result<f64, SimProfileError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(SimProfileError::Invalid(format!("bandwidth must be positive and finite, got {v}")))
    }
}

fn check_nonneg(what: &str, v: f64) -> Result<f64, SimProfileError> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(SimProfileError::Invalid(format!("{what} must be finite and >= 0, got {v}")))
    }
}

impl SimProfile {
    pub fn new(bandwidth: f64, latency: f64, mode: ConcurrencyMode) -> Result<Self, SimProfileError> {
        Ok(Self {
            bandwidth: check_bandwidth(bandwidth)?,
            latency: check_nonneg("latency", latency)?,
            mode,
            ..Self::default()
        })
    }

    pub fn with_ready(mut self, rank: usize, ready_time: f64) -> Result<Self, SimProfileError> {
        self.ready.insert(rank, check_nonneg("ready time", ready_time)?);
        Ok(self)
    }

    pub fn with_link(mut self, src: usize, dst: usize, link: LinkOverride) -> Result<Self, SimProfileError> {
        if let Some(b) = link.bandwidth {
            check_bandwidth(b)?;
        }
        if let Some(l) = link.latency {
            check_nonneg("latency", l)?;
        }
        self.links.insert((src, dst), link);
        Ok(self)
    }

    pub fn ready_time(&self, rank: usize) -> f64 {
        self.ready.get(&rank).copied().unwrap_or(0.0)
    }

    /// Effective `(bandwidth, latency)` of the directed link `src -> dst`.
    pub fn link(&self, src: usize, dst: usize) -> (f64, f64) {
        let o = self.links.get(&(src, dst)).copied().unwrap_or_default();
        (o.bandwidth.unwrap_or(self.bandwidth), o.latency.unwrap_or(self.latency))
    }

    pub fn validate(&self) -> Result<(), SimProfileError> {
        check_bandwidth(self.bandwidth)?;
        check_nonneg("latency", self.latency)?;
        for &t in self.ready.values() {
            check_nonneg("ready time", t)?;
        }
        for o in self.links.values() {
            if let Some(b) = o.bandwidth {
                check_bandwidth(b)?;
            }
            if let Some(l) = o.latency {
                check_nonneg("latency", l)?;
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, SimProfileError> {
        let mut p = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let syntax = |detail: String| SimProfileError::Syntax { line: line_no, detail };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = || value.parse::<f64>().map_err(|_| syntax(format!("{key}: not a number: {value:?}")));
            let parts: Vec<&str> = key.split('.').collect();
            match parts.as_slice() {
                ["bandwidth"] => p.bandwidth = num()?,
                ["latency"] => p.latency = num()?,
                ["mode"] => p.mode = value.parse().map_err(|e: SimProfileError| syntax(e.to_string()))?,
                ["ready", r] => {
                    let r = r.parse().map_err(|_| syntax(format!("bad rank in {key:?}")))?;
                    p.ready.insert(r, num()?);
                }
                ["link", s, d, field] => {
                    let s = s.parse().map_err(|_| syntax(format!("bad rank in {key:?}")))?;
                    let d = d.parse().map_err(|_| syntax(format!("bad rank in {key:?}")))?;
                    let entry = p.links.entry((s, d)).or_default();
                    match *field {
                        "bandwidth" => entry.bandwidth = Some(num()?),
                        "latency" => entry.latency = Some(num()?),
                        _ => return Err(syntax(format!("unknown link field in {key:?}"))),
                    }
                }
                _ => return Err(syntax(format!("unknown key {key:?}"))),
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "bandwidth = {}\nlatency = {}\nmode = {}\n",
            self.bandwidth, self.latency, self.mode
        );
        for (r, t) in &self.ready {
            out.push_str(&format!("ready.{r} = {t}\n"));
        }
        for ((s, d), o) in &self.links {
            if let Some(b) = o.bandwidth {
                out.push_str(&format!("link.{s}.{d}.bandwidth = {b}\n"));
            }
            if let Some(l) = o.latency {
                out.push_str(&format!("link.{s}.{d}.latency = {l}\n"));
            }
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimProfileError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SimProfileError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Status {
    Running,
    Recv(usize),
    Barrier,
    Done,
}

struct Pending {
    dst: usize,
    bytes: Vec<u8>,
}

struct State {
    profile: SimProfile,
    world: usize,
    clocks: Vec<f64>,
    status: Vec<Status>,
    // queues[dst][src]: (arrival time, message)
    queues: Vec<Vec<VecDeque<(f64, Vec<u8>)>>>,
    // Keyed by (issue time bits, source, sequence). Clocks are finite and
    // non-negative, so the bit pattern orders like the value.
    pending: BTreeMap<(u64, usize, u64), Pending>,
    seq: u64,
    medium_free: f64,
    link_free: Vec<f64>,
    barrier_generation: u64,
    stalled: Option<String>,
}

impl State {
    fn commit(&mut self, issue: f64, src: usize, p: Pending) {
        let (bw, lat) = self.profile.link(src, p.dst);
        let transfer = p.bytes.len() as f64 / bw;
        let free = match self.profile.mode {
            ConcurrencyMode::SerializedLinks => &mut self.medium_free,
            ConcurrencyMode::FullP2pParallel => &mut self.link_free[src * self.world + p.dst],
        };
        let start = issue.max(*free);
        let finish = start + transfer;
        *free = finish;
        self.queues[p.dst][src].push_back((finish + lat, p.bytes));
    }

    fn pending_from(&self, src: usize) -> bool {
        self.pending.keys().any(|&(_, s, _)| s == src)
    }

    /// Advance the simulation as far as possible. Returns whether anything
    /// changed that another rank might be waiting for.
    fn progress(&mut self) -> bool {
        let mut changed = false;
        loop {
            if self.stalled.is_some() {
                return changed;
            }
            let mut all_barrier = true;
            for (r, s) in self.status.iter().enumerate() {
                match *s {
                    Status::Running => return changed,
                    Status::Recv(src) if !self.queues[r][src].is_empty() => return changed,
                    Status::Barrier => {}
                    _ => all_barrier = false,
                }
            }
            if let Some(((bits, src, _), p)) = self.pending.pop_first() {
                self.commit(f64::from_bits(bits), src, p);
                changed = true;
                continue;
            }
            if all_barrier {
                let t = self.clocks.iter().copied().fold(0.0, f64::max);
                self.clocks.iter_mut().for_each(|c| *c = t);
                self.status.iter_mut().for_each(|s| *s = Status::Running);
                self.barrier_generation += 1;
                return true;
            }
            if self.status.iter().any(|s| *s != Status::Done) {
                let waits: Vec<String> = self
                    .status
                    .iter()
                    .enumerate()
                    .map(|(r, s)| match s {
                        Status::Recv(src) => format!("rank {r} waits on rank {src}"),
                        Status::Barrier => format!("rank {r} is in a barrier"),
                        _ => format!("rank {r} has finished"),
                    })
                    .collect();
                self.stalled = Some(waits.join(", "));
                return true;
            }
            return changed;
        }
    }
}

struct Shared {
    state: Mutex<State>,
    wake: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Observer handle on a simulated world; outlives the rank endpoints.
#[derive(Clone)]
pub struct SimWorld {
    shared: Arc<Shared>,
}

impl SimWorld {
    /// A world of `world_size` ranks, returning the observer and one
    /// transport per rank.
    pub fn new(world_size: usize, profile: SimProfile) -> Result<(SimWorld, Vec<SimTransport>), SimProfileError> {
        profile.validate()?;
        if world_size == 0 {
            return Err(SimProfileError::Invalid("world size must be at least 1".into()));
        }
        if let Some((&r, _)) = profile.ready.iter().find(|(&r, _)| r >= world_size) {
            return Err(SimProfileError::Invalid(format!("ready time given for rank {r} of {world_size}")));
        }
        if let Some(&(s, d)) = profile.links.keys().find(|&&(s, d)| s >= world_size || d >= world_size) {
            return Err(SimProfileError::Invalid(format!("link {s}->{d} outside a world of {world_size}")));
        }
        let clocks = (0..world_size).map(|r| profile.ready_time(r)).collect();
        let state = State {
            profile,
            world: world_size,
            clocks,
            status: vec![Status::Running; world_size],
            queues: (0..world_size)
                .map(|_| (0..world_size).map(|_| VecDeque::new()).collect())
                .collect(),
            pending: BTreeMap::new(),
            seq: 0,
            medium_free: 0.0,
            link_free: vec![0.0; world_size * world_size],
            barrier_generation: 0,
            stalled: None,
        };
        let shared = Arc::new(Shared {
            state: Mutex::new(state),
            wake: Condvar::new(),
        });
        let transports = (0..world_size)
            .map(|rank| SimTransport {
                rank,
                world: world_size,
                shared: shared.clone(),
                timeout: DEFAULT_TIMEOUT,
            })
            .collect();
        Ok((SimWorld { shared }, transports))
    }

    /// Current clock of every rank.
    pub fn clocks(&self) -> Vec<f64> {
        self.shared.lock().clocks.clone()
    }

    /// Latest clock over all ranks.
    pub fn completion_time(&self) -> f64 {
        self.clocks().into_iter().fold(0.0, f64::max)
    }

    pub fn profile(&self) -> SimProfile {
        self.shared.lock().profile.clone()
    }
}

pub struct SimTransport {
    rank: usize,
    world: usize,
    shared: Arc<Shared>,
    timeout: Duration,
}

impl SimTransport {
    fn wait<'a>(
        &'a self,
        guard: MutexGuard<'a, State>,
        deadline: Instant,
    ) -> Result<MutexGuard<'a, State>, Duration> {
        let now = Instant::now();
        if now >= deadline {
            return Err(self.timeout);
        }
        Ok(self
            .shared
            .wake
            .wait_timeout(guard, deadline - now)
            .unwrap_or_else(|e| e.into_inner())
            .0)
    }
}

impl Transport for SimTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn world_size(&self) -> usize {
        self.world
    }

    fn send(&mut self, peer: usize, message: &[u8]) -> Result<(), TransportError> {
        check_peer(peer, self.world)?;
        let mut st = self.shared.lock();
        if let Some(s) = &st.stalled {
            return Err(TransportError::Stalled(s.clone()));
        }
        let issue = st.clocks[self.rank];
        if peer == self.rank {
            st.queues[peer][peer].push_back((issue, message.to_vec()));
            return Ok(());
        }
        let seq = st.seq;
        st.seq += 1;
        st.pending.insert(
            (issue.to_bits(), self.rank, seq),
            Pending {
                dst: peer,
                bytes: message.to_vec(),
            },
        );
        Ok(())
    }

    fn recv(&mut self, peer: usize) -> Result<Vec<u8>, TransportError> {
        check_peer(peer, self.world)?;
        let me = self.rank;
        let deadline = Instant::now() + self.timeout;
        let mut st = self.shared.lock();
        loop {
            if let Some((arrival, msg)) = st.queues[me][peer].pop_front() {
                st.status[me] = Status::Running;
                st.clocks[me] = st.clocks[me].max(arrival);
                return Ok(msg);
            }
            if st.status[peer] == Status::Done && !st.pending_from(peer) {
                st.status[me] = Status::Running;
                return Err(TransportError::Disconnected { peer });
            }
            if let Some(s) = &st.stalled {
                let s = s.clone();
                st.status[me] = Status::Running;
                return Err(TransportError::Stalled(s));
            }
            st.status[me] = Status::Recv(peer);
            if st.progress() {
                self.shared.wake.notify_all();
                continue;
            }
            st = match self.wait(st, deadline) {
                Ok(g) => g,
                Err(after) => {
                    self.shared.lock().status[me] = Status::Running;
                    return Err(TransportError::Timeout { peer, after });
                }
            };
        }
    }

    fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    fn virtual_time(&self) -> Option<f64> {
        Some(self.shared.lock().clocks[self.rank])
    }

    fn barrier(&mut self) -> Result<(), TransportError> {
        let me = self.rank;
        let deadline = Instant::now() + self.timeout;
        let mut st = self.shared.lock();
        let generation = st.barrier_generation;
        st.status[me] = Status::Barrier;
        if st.progress() {
            self.shared.wake.notify_all();
        }
        loop {
            if st.barrier_generation != generation {
                return Ok(());
            }
            if let Some(s) = &st.stalled {
                let s = s.clone();
                st.status[me] = Status::Running;
                return Err(TransportError::Stalled(s));
            }
            st = match self.wait(st, deadline) {
                Ok(g) => g,
                Err(after) => {
                    self.shared.lock().status[me] = Status::Running;
                    return Err(TransportError::Timeout { peer: me, after });
                }
            };
        }
    }
}

impl Drop for SimTransport {
    fn drop(&mut self) {
        let mut st = self.shared.lock();
        st.status[self.rank] = Status::Done;
        st.progress();
        self.shared.wake.notify_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    const MIB: usize = 1 << 20;
    const GIB: f64 = (1u64 << 30) as f64;

    fn run<T: Send + 'static>(
        transports: Vec<SimTransport>,
        f: impl Fn(&mut SimTransport) -> T + Send + Sync + 'static,
    ) -> Vec<T> {
        let f = Arc::new(f);
        let hs: Vec<_> = transports
            .into_iter()
            .map(|mut t| {
                let f = f.clone();
                thread::spawn(move || f(&mut t))
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    }

    #[test]
    fn one_mebibyte_closed_form() {
        let ready = 0.25;
        let profile = SimProfile::new(GIB, 10e-6, ConcurrencyMode::FullP2pParallel)
            .unwrap()
            .with_ready(0, ready)
            .unwrap();
        let (world, ts) = SimWorld::new(2, profile).unwrap();
        let out = run(ts, |t| {
            if t.rank() == 0 {
                t.send(1, &vec![0u8; MIB]).unwrap();
                None
            } else {
                t.recv(0).unwrap();
                t.virtual_time()
            }
        });
        let expect = ready + 10e-6 + MIB as f64 / GIB;
        assert!((out[1].unwrap() - expect).abs() < 1e-12, "{:?} vs {expect}", out[1]);
        assert!((world.clocks()[1] - expect).abs() < 1e-12);
    }

    fn gather_to_root(mode: ConcurrencyMode) -> f64 {
        let bw = 1e9;
        let lat = 3e-6;
        let (_, ts) = SimWorld::new(4, SimProfile::new(bw, lat, mode).unwrap()).unwrap();
        let out = run(ts, |t| {
            let r = t.rank();
            if r == 0 {
                for p in 1..4 {
                    t.recv(p).unwrap();
                }
            } else {
                t.send(0, &vec![7u8; r * 100_000]).unwrap();
            }
            t.virtual_time().unwrap()
        });
        out[0]
    }

    #[test]
    fn parallel_is_max_serialized_is_sum() {
        let bw = 1e9;
        let lat = 3e-6;
        let max = 300_000.0 / bw + lat;
        let sum = 600_000.0 / bw + lat;
        assert!((gather_to_root(ConcurrencyMode::FullP2pParallel) - max).abs() < 1e-9);
        assert!((gather_to_root(ConcurrencyMode::SerializedLinks) - sum).abs() < 1e-9);
    }

    #[test]
    fn fifo_and_empty_messages() {
        let (_, ts) = SimWorld::new(2, SimProfile::default()).unwrap();
        let out = run(ts, |t| {
            if t.rank() == 0 {
                t.send(1, &[]).unwrap();
                for i in 0..10u8 {
                    t.send(1, &[i]).unwrap();
                }
                true
            } else {
                assert!(t.recv(0).unwrap().is_empty());
                (0..10u8).all(|i| t.recv(0).unwrap() == [i])
            }
        });
        assert!(out[1]);
    }

    fn all_to_all_clocks(mode: ConcurrencyMode) -> Vec<f64> {
        let profile = SimProfile::new(2e9, 1e-6, mode)
            .unwrap()
            .with_ready(2, 1e-4)
            .unwrap();
        let (world, ts) = SimWorld::new(5, profile).unwrap();
        run(ts, |t| {
            let me = t.rank();
            for p in 0..5 {
                t.send(p, &vec![0u8; 1000 * (me + 1) * (p + 2)]).unwrap();
            }
            for p in 0..5 {
                t.recv(p).unwrap();
            }
        });
        world.clocks()
    }

    #[test]
    fn schedule_is_deterministic() {
        for mode in [ConcurrencyMode::FullP2pParallel, ConcurrencyMode::SerializedLinks] {
            let first = all_to_all_clocks(mode);
            for _ in 0..5 {
                assert_eq!(all_to_all_clocks(mode), first);
            }
        }
    }

    #[test]
    fn barrier_aligns_clocks() {
        let profile = SimProfile::default().with_ready(1, 0.5).unwrap();
        let (_, ts) = SimWorld::new(3, profile).unwrap();
        let out = run(ts, |t| {
            t.barrier().unwrap();
            t.virtual_time().unwrap()
        });
        assert_eq!(out, vec![0.5; 3]);
    }

    #[test]
    fn mismatched_program_is_reported_not_hung() {
        let (_, ts) = SimWorld::new(2, SimProfile::default()).unwrap();
        let out = run(ts, |t| {
            let peer = 1 - t.rank();
            t.recv(peer).is_err()
        });
        assert_eq!(out, vec![true, true]);
    }

    #[test]
    fn finished_peer_is_disconnected() {
        let (_, mut ts) = SimWorld::new(2, SimProfile::default()).unwrap();
        let b = ts.pop().unwrap();
        let mut a = ts.pop().unwrap();
        drop(b);
        assert!(matches!(a.recv(1), Err(TransportError::Disconnected { peer: 1 })));
    }

    #[test]
    fn link_override_applies() {
        let profile = SimProfile::new(1e9, 0.0, ConcurrencyMode::FullP2pParallel)
            .unwrap()
            .with_link(0, 1, LinkOverride { bandwidth: Some(1e6), latency: Some(0.5) })
            .unwrap();
        let (world, ts) = SimWorld::new(2, profile).unwrap();
        run(ts, |t| {
            if t.rank() == 0 {
                t.send(1, &[0u8; 1000]).unwrap();
            } else {
                t.recv(0).unwrap();
            }
        });
        assert!((world.clocks()[1] - 0.501).abs() < 1e-12);
    }

    #[test]
    fn profile_text_round_trips() {
        let p = SimProfile::new(1.5e9, 2.5e-6, ConcurrencyMode::SerializedLinks)
            .unwrap()
            .with_ready(3, 0.001)
            .unwrap()
            .with_link(1, 2, LinkOverride { bandwidth: Some(3e8), latency: None })
            .unwrap();
        assert_eq!(SimProfile::parse(&p.to_text()).unwrap(), p);
        let parsed = SimProfile::parse("# comment\nbandwidth = 100 # bytes/s\nmode=full-p2p-parallel\n").unwrap();
        assert_eq!(parsed.bandwidth, 100.0);
    }

    #[test]
    fn profile_rejects_bad_values() {
        for text in [
            "bandwidth = 0",
            "bandwidth = -1",
            "latency = -1e-6",
            "ready.0 = -2",
            "mode = ring",
            "colour = blue",
            "link.0.1.jitter = 3",
            "bandwidth 5",
            "latency = fast",
        ] {
            assert!(SimProfile::parse(text).is_err(), "{text}");
        }
        assert!(SimWorld::new(2, SimProfile::default().with_ready(2, 0.0).unwrap()).is_err());
    }
}
