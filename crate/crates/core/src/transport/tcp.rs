//! TCP transport: one connection per rank pair, full mesh.
//!
//! Every message is framed with a 16-byte little-endian header
//! `u64 length | u32 tag | u32 source rank` followed by the payload. For
//! data messages the tag is the per-pair sequence number starting at 0,
//! which the receiver checks to enforce FIFO delivery.
//!
//! Rendezvous: rank 0 listens on the rendezvous address. Every other rank
//! binds an ephemeral listener, connects to rank 0 and sends a HELLO whose
//! payload is its listener port (u16). Rank 0 replies to each with a TABLE
//! message listing `rank host:port` lines. Rank `r` then connects to every
//! rank in `1..r` (sending HELLO with an empty payload) and accepts one
//! connection from each rank above it.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{IpAddr, Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use super::{check_peer, Transport, TransportError, DEFAULT_TIMEOUT};

pub const HEADER_LEN: usize = 16;
pub const TAG_HELLO: u32 = u32::MAX;
pub const TAG_TABLE: u32 = u32::MAX - 1;
// Refuse absurd lengths from a corrupted header instead of allocating them.
const MAX_MESSAGE: u64 = 1 << 40;

type Inbound = Result<(u32, Vec<u8>), String>;

pub struct TcpTransport {
    rank: usize,
    world: usize,
    streams: Vec<Option<TcpStream>>,
    inbox: Vec<Option<Receiver<Inbound>>>,
    send_seq: Vec<u32>,
    recv_seq: Vec<u32>,
    self_queue: VecDeque<Vec<u8>>,
    timeout: Duration,
}

pub fn write_frame(stream: &mut TcpStream, tag: u32, src: u32, payload: &[u8]) -> io::Result<()> {
    let mut header = [0u8; HEADER_LEN];
    header[0..8].copy_from_slice(&(payload.len() as u64).to_le_bytes());
    header[8..12].copy_from_slice(&tag.to_le_bytes());
    header[12..16].copy_from_slice(&src.to_le_bytes());
    stream.write_all(&header)?;
    stream.write_all(payload)?;
    stream.flush()
}

pub fn read_frame(stream: &mut TcpStream) -> io::Result<(u32, u32, Vec<u8>)> {
    let mut header = [0u8; HEADER_LEN];
    stream.read_exact(&mut header)?;
    let len = u64::from_le_bytes(header[0..8].try_into().unwrap());
    let tag = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let src = u32::from_le_bytes(header[12..16].try_into().unwrap());
    if len > MAX_MESSAGE {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("message length {len}")));
    }
    let mut payload = vec![0u8; len as usize];
    stream.read_exact(&mut payload)?;
    Ok((tag, src, payload))
}

fn accept_before(listener: &TcpListener, deadline: Instant) -> io::Result<TcpStream> {
    listener.set_nonblocking(true)?;
    loop {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                return Ok(stream);
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() > deadline {
                    return Err(io::Error::new(io::ErrorKind::TimedOut, "rendezvous accept timed out"));
                }
                thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e),
        }
    }
}

fn connect_before(addr: SocketAddr, deadline: Instant) -> io::Result<TcpStream> {
    loop {
        match TcpStream::connect_timeout(&addr, Duration::from_secs(1)) {
            Ok(s) => return Ok(s),
            Err(e) => {
                if Instant::now() > deadline {
                    return Err(e);
                }
                thread::sleep(Duration::from_millis(20));
            }
        }
    }
}

fn resolve(addr: &str) -> Result<SocketAddr, TransportError> {
    addr.to_socket_addrs()?.next().ok_or_else(|| {
        TransportError::Protocol(format!("rendezvous address {addr:?} did not resolve"))
    })
}

fn protocol(detail: impl Into<String>) -> TransportError {
    TransportError::Protocol(detail.into())
}

impl TcpTransport {
    /// Join a `world`-rank mesh through rank 0 at `rendezvous`.
    pub fn connect(rendezvous: &str, rank: usize, world: usize, timeout: Duration) -> Result<Self, TransportError> {
        if world == 0 || rank >= world {
            return Err(TransportError::InvalidPeer { peer: rank, world });
        }
        let deadline = Instant::now() + timeout;
        let mut streams: Vec<Option<TcpStream>> = (0..world).map(|_| None).collect();
        let rendezvous = resolve(rendezvous)?;

        if rank == 0 {
            let listener = TcpListener::bind(rendezvous)?;
            let mut table: Vec<Option<SocketAddr>> = vec![None; world];
            for _ in 1..world {
                let mut s = accept_before(&listener, deadline)?;
                let (tag, src, payload) = read_frame(&mut s)?;
                let src = src as usize;
                if tag != TAG_HELLO || src == 0 || src >= world || streams[src].is_some() {
                    return Err(protocol(format!("bad hello (tag {tag}, rank {src})")));
                }
                let port: [u8; 2] = payload
                    .as_slice()
                    .try_into()
                    .map_err(|_| protocol("hello without listener port"))?;
                table[src] = Some(SocketAddr::new(s.peer_addr()?.ip(), u16::from_le_bytes(port)));
                streams[src] = Some(s);
            }
            let text: String = table
                .iter()
                .enumerate()
                .filter_map(|(r, a)| a.map(|a| format!("{r} {a}\n")))
                .collect();
            for s in streams.iter_mut().flatten() {
                write_frame(s, TAG_TABLE, 0, text.as_bytes())?;
            }
        } else {
            let bind_ip: IpAddr = if rendezvous.is_ipv4() {
                IpAddr::from([0, 0, 0, 0])
            } else {
                IpAddr::from([0u16; 8])
            };
            let listener = TcpListener::bind(SocketAddr::new(bind_ip, 0))?;
            let port = listener.local_addr()?.port();
            let mut root = connect_before(rendezvous, deadline)?;
            write_frame(&mut root, TAG_HELLO, rank as u32, &port.to_le_bytes())?;
            let (tag, _, payload) = read_frame(&mut root)?;
            if tag != TAG_TABLE {
                return Err(protocol(format!("expected address table, got tag {tag}")));
            }
            streams[0] = Some(root);
            let text = String::from_utf8(payload).map_err(|_| protocol("address table is not UTF-8"))?;
            let mut table: Vec<Option<SocketAddr>> = vec![None; world];
            for line in text.lines() {
                let (r, a) = line
                    .split_once(' ')
                    .ok_or_else(|| protocol(format!("bad table line {line:?}")))?;
                let r: usize = r.parse().map_err(|_| protocol(format!("bad rank in {line:?}")))?;
                let a: SocketAddr = a.parse().map_err(|_| protocol(format!("bad address in {line:?}")))?;
                if r < world {
                    table[r] = Some(a);
                }
            }
            for peer in 1..rank {
                let addr = table[peer].ok_or_else(|| protocol(format!("no address for rank {peer}")))?;
                let mut s = connect_before(addr, deadline)?;
                write_frame(&mut s, TAG_HELLO, rank as u32, &[])?;
                streams[peer] = Some(s);
            }
            for _ in (rank + 1)..world {
                let mut s = accept_before(&listener, deadline)?;
                let (tag, src, _) = read_frame(&mut s)?;
                let src = src as usize;
                if tag != TAG_HELLO || src <= rank || src >= world || streams[src].is_some() {
                    return Err(protocol(format!("bad hello (tag {tag}, rank {src})")));
                }
                streams[src] = Some(s);
            }
        }

        let mut inbox = Vec::with_capacity(world);
        for (peer, s) in streams.iter().enumerate() {
            match s {
                Some(s) => {
                    s.set_nodelay(true)?;
                    let reader = s.try_clone()?;
                    let (tx, rx) = channel();
                    spawn_reader(reader, peer, tx);
                    inbox.push(Some(rx));
                }
                None => inbox.push(None),
            }
        }

        Ok(Self {
            rank,
            world,
            streams,
            inbox,
            send_seq: vec![0; world],
            recv_seq: vec![0; world],
            self_queue: VecDeque::new(),
            timeout: DEFAULT_TIMEOUT,
        })
    }
}

fn spawn_reader(mut stream: TcpStream, peer: usize, tx: Sender<Inbound>) {
    thread::spawn(move || loop {
        match read_frame(&mut stream) {
            Ok((tag, src, payload)) => {
                if src as usize != peer {
                    let _ = tx.send(Err(format!("frame from rank {src} on rank {peer}'s connection")));
                    return;
                }
                if tx.send(Ok((tag, payload))).is_err() {
                    return;
                }
            }
            Err(e) => {
                let _ = tx.send(Err(e.to_string()));
                return;
            }
        }
    });
}

impl Transport for TcpTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn world_size(&self) -> usize {
        self.world
    }

    fn send(&mut self, peer: usize, message: &[u8]) -> Result<(), TransportError> {
        check_peer(peer, self.world)?;
        if peer == self.rank {
            self.self_queue.push_back(message.to_vec());
            return Ok(());
        }
        let seq = self.send_seq[peer];
        let stream = self.streams[peer].as_mut().ok_or(TransportError::Disconnected { peer })?;
        write_frame(stream, seq, self.rank as u32, message).map_err(|e| match e.kind() {
            io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset | io::ErrorKind::ConnectionAborted => {
                TransportError::Disconnected { peer }
            }
            _ => TransportError::Io(e),
        })?;
        self.send_seq[peer] = seq.wrapping_add(1);
        Ok(())
    }

    fn recv(&mut self, peer: usize) -> Result<Vec<u8>, TransportError> {
        check_peer(peer, self.world)?;
        if peer == self.rank {
            return self
                .self_queue
                .pop_front()
                .ok_or_else(|| protocol("self-receive with no pending self-send"));
        }
        let rx = self.inbox[peer].as_ref().ok_or(TransportError::Disconnected { peer })?;
        match rx.recv_timeout(self.timeout) {
            Ok(Ok((tag, payload))) => {
                let want = self.recv_seq[peer];
                if tag != want {
                    return Err(protocol(format!(
                        "message {tag} from rank {peer} arrived out of order (expected {want})"
                    )));
                }
                self.recv_seq[peer] = want.wrapping_add(1);
                Ok(payload)
            }
            Ok(Err(_)) | Err(RecvTimeoutError::Disconnected) => {
                self.inbox[peer] = None;
                Err(TransportError::Disconnected { peer })
            }
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout {
                peer,
                after: self.timeout,
            }),
        }
    }

    fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        for s in self.streams.iter().flatten() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}
