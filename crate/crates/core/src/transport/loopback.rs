//! In-process transport: one unbounded channel per ordered rank pair.

use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::{check_peer, Transport, TransportError, DEFAULT_TIMEOUT};

pub struct LoopbackTransport {
    rank: usize,
    // Indexed by destination.
    outbox: Vec<Sender<Vec<u8>>>,
    // Indexed by source.
    inbox: Vec<Receiver<Vec<u8>>>,
    timeout: Duration,
}

/// Endpoints for every rank of a `world_size` world. Self-sends are allowed.
pub fn world(world_size: usize) -> Vec<LoopbackTransport> {
    // senders[src][dst], receivers[dst][src]
    let mut senders: Vec<Vec<Sender<Vec<u8>>>> = (0..world_size).map(|_| Vec::new()).collect();
    let mut receivers: Vec<Vec<Receiver<Vec<u8>>>> = (0..world_size).map(|_| Vec::new()).collect();
    for row in senders.iter_mut() {
        for inbox in receivers.iter_mut() {
            let (tx, rx) = channel();
            row.push(tx);
            inbox.push(rx);
        }
    }
    senders
        .into_iter()
        .zip(receivers)
        .enumerate()
        .map(|(rank, (outbox, inbox))| LoopbackTransport {
            rank,
            outbox,
            inbox,
            timeout: DEFAULT_TIMEOUT,
        })
        .collect()
}

impl Transport for LoopbackTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn world_size(&self) -> usize {
        self.outbox.len()
    }

    fn send(&mut self, peer: usize, message: &[u8]) -> Result<(), TransportError> {
        check_peer(peer, self.world_size())?;
        self.outbox[peer]
            .send(message.to_vec())
            .map_err(|_| TransportError::Disconnected { peer })
    }

    fn recv(&mut self, peer: usize) -> Result<Vec<u8>, TransportError> {
        check_peer(peer, self.world_size())?;
        self.inbox[peer].recv_timeout(self.timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => TransportError::Timeout {
                peer,
                after: self.timeout,
            },
            RecvTimeoutError::Disconnected => TransportError::Disconnected { peer },
        })
    }

    fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }
}
