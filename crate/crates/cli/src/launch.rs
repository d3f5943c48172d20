//! Binding ranks to transports.
//!
//! Loopback and simulator worlds run every rank as a thread of this
//! process. TCP worlds run one rank per process: with `--rank` the process
//! joins an existing world; without it, the process re-executes itself once
//! per rank on a fresh localhost rendezvous and waits for all of them.

use std::ffi::OsString;
use std::net::TcpListener;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use zipcoll::transport::{loopback, Communicator, SimProfile, SimWorld, TcpTransport};

use crate::args::{TransportKind, WorldArgs};

/// What a launch produced for the ranks that ran in this process.
pub enum Launched<T> {
    /// Per-rank results, indexed by rank.
    Local(Vec<T>),
    /// A TCP rank's own result.
    Rank(usize, T),
    /// Child processes did the work and already reported.
    Spawned,
}

impl<T> Launched<T> {
    /// Rank 0's result, when it ran in this process.
    pub fn rank_zero(self) -> Option<T> {
        match self {
            Launched::Local(v) => v.into_iter().next(),
            Launched::Rank(0, t) => Some(t),
            Launched::Rank(..) | Launched::Spawned => None,
        }
    }
}

pub fn timeout(w: &WorldArgs) -> anyhow::Result<Duration> {
    Duration::try_from_secs_f64(w.timeout)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| anyhow!("--timeout must be a positive number of seconds, got {}", w.timeout))
}

pub fn transport_name(kind: TransportKind) -> &'static str {
    match kind {
        TransportKind::Loopback => "loopback",
        TransportKind::Tcp => "tcp",
        TransportKind::Sim => "sim",
    }
}

/// Run `f` on every rank of the world described by `w`.
pub fn launch<T, F>(w: &WorldArgs, f: F) -> anyhow::Result<Launched<T>>
where
    T: Send + 'static,
    F: Fn(&mut Communicator) -> anyhow::Result<T> + Send + Sync + 'static,
{
    if w.world == 0 {
        bail!("--world must be at least 1");
    }
    let timeout = timeout(w)?;
    if w.transport != TransportKind::Tcp && w.rank.is_some() {
        bail!("--rank only applies to --transport tcp");
    }
    match w.transport {
        TransportKind::Loopback => {
            let comms = loopback::world(w.world).into_iter().map(Communicator::new).collect();
            run_threads(comms, timeout, f).map(Launched::Local)
        }
        TransportKind::Sim => {
            let profile = match &w.sim_profile {
                Some(p) => SimProfile::load(p).with_context(|| format!("loading {}", p.display()))?,
                None => SimProfile::default(),
            };
            let (_observer, transports) = SimWorld::new(w.world, profile)?;
            let comms = transports.into_iter().map(Communicator::new).collect();
            run_threads(comms, timeout, f).map(Launched::Local)
        }
        TransportKind::Tcp => match w.rank {
            Some(rank) => {
                let rendezvous = w
                    .rendezvous
                    .as_deref()
                    .ok_or_else(|| anyhow!("--transport tcp --rank needs --rendezvous HOST:PORT"))?;
                let t = TcpTransport::connect(rendezvous, rank, w.world, timeout)?;
                let mut comm = Communicator::new(t);
                comm.set_timeout(timeout);
                Ok(Launched::Rank(rank, f(&mut comm)?))
            }
            None => {
                spawn_ranks(w)?;
                Ok(Launched::Spawned)
            }
        },
    }
}

fn run_threads<T, F>(comms: Vec<Communicator>, timeout: Duration, f: F) -> anyhow::Result<Vec<T>>
where
    T: Send + 'static,
    F: Fn(&mut Communicator) -> anyhow::Result<T> + Send + Sync + 'static,
{
    let f = Arc::new(f);
    let handles: Vec<_> = comms
        .into_iter()
        .map(|mut c| {
            let f = f.clone();
            c.set_timeout(timeout);
            thread::spawn(move || f(&mut c))
        })
        .collect();
    let mut out = Vec::with_capacity(handles.len());
    let mut first_err = None;
    for (rank, h) in handles.into_iter().enumerate() {
        match h.join() {
            Ok(Ok(t)) => out.push(t),
            Ok(Err(e)) => {
                first_err.get_or_insert(e.context(format!("rank {rank}")));
            }
            Err(_) => {
                first_err.get_or_insert(anyhow!("rank {rank} panicked"));
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Re-run the current command once per rank with `--rank` and a shared
/// rendezvous. Rank 0's stdout is inherited; the others' is discarded.
fn spawn_ranks(w: &WorldArgs) -> anyhow::Result<()> {
    let exe = std::env::current_exe().context("locating the zipcoll executable")?;
    let mut base: Vec<OsString> = std::env::args_os().skip(1).collect();
    let rendezvous = match &w.rendezvous {
        Some(r) => r.clone(),
        None => {
            let port = TcpListener::bind("127.0.0.1:0")?.local_addr()?.port();
            let r = format!("127.0.0.1:{port}");
            base.push("--rendezvous".into());
            base.push(r.clone().into());
            r
        }
    };
    let mut children = Vec::with_capacity(w.world);
    for rank in 0..w.world {
        let mut cmd = Command::new(&exe);
        cmd.args(&base).arg("--rank").arg(rank.to_string());
        if rank != 0 {
            cmd.stdout(Stdio::null());
        }
        let child = cmd
            .spawn()
            .with_context(|| format!("starting rank {rank} (rendezvous {rendezvous})"))?;
        children.push(child);
    }
    let mut failed = Vec::new();
    for (rank, mut c) in children.into_iter().enumerate() {
        let status = c.wait()?;
        if !status.success() {
            failed.push(format!("rank {rank}: {status}"));
        }
    }
    if !failed.is_empty() {
        bail!("TCP world failed ({})", failed.join(", "));
    }
    Ok(())
}
