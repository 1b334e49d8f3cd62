//! TCP transport and daemon wrappers around the server state machines.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crate::config::DeploymentConfig;
use crate::epoch::EpochClock;
use crate::server::{push_frame, LookupServer, PublishedDb, RegistrationServer};
use crate::transport::{Dest, Transport, TransportError};
use crate::wire::{ErrorCode, Frame, MsgType, Tier, WireError, DEFAULT_MAX_FRAME};

const IO_TIMEOUT: Duration = Duration::from_secs(30);
const PUSH_ATTEMPTS: u32 = 5;
const PUSH_BACKOFF: Duration = Duration::from_millis(200);

pub fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Conn {
    fn open(addr: &str) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(IO_TIMEOUT))?;
        stream.set_write_timeout(Some(IO_TIMEOUT))?;
        stream.set_nodelay(true)?;
        Ok(Conn {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    fn exchange(&mut self, frame: &Frame) -> Result<Frame, WireError> {
        frame.write_to(&mut self.writer)?;
        Frame::read_from(&mut self.reader, DEFAULT_MAX_FRAME)?.ok_or(WireError::Truncated)
    }
}

/// One persistent connection per destination, reopened once on failure.
pub struct TcpTransport {
    addrs: BTreeMap<Dest, String>,
    conns: BTreeMap<Dest, Conn>,
}

impl TcpTransport {
    pub fn new(addrs: BTreeMap<Dest, String>) -> Self {
        TcpTransport {
            addrs,
            conns: BTreeMap::new(),
        }
    }

    pub fn from_config(cfg: &DeploymentConfig) -> Self {
        let mut addrs = BTreeMap::new();
        for tier in [Tier::Long, Tier::Short] {
            let t = cfg.tier(tier);
            addrs.insert(Dest::Registration(tier), t.registration.clone());
            for (k, a) in t.lookup.iter().enumerate() {
                addrs.insert(Dest::Lookup(tier, k), a.clone());
            }
        }
        Self::new(addrs)
    }
}

impl Transport for TcpTransport {
    fn request(&mut self, dest: Dest, frame: &Frame) -> Result<Frame, TransportError> {
        let addr = self
            .addrs
            .get(&dest)
            .ok_or(TransportError::Unreachable(dest))?
            .clone();
        let io_err = |e: &dyn std::fmt::Display| TransportError::Io {
            dest,
            detail: e.to_string(),
        };
        for attempt in 0..2 {
            if let std::collections::btree_map::Entry::Vacant(e) = self.conns.entry(dest) {
                let conn = Conn::open(&addr).map_err(|e| io_err(&e))?;
                e.insert(conn);
            }
            let conn = self.conns.get_mut(&dest).expect("inserted above");
            match conn.exchange(frame) {
                Ok(reply) => return Ok(reply),
                Err(e) => {
                    self.conns.remove(&dest);
                    if attempt == 1 {
                        return Err(io_err(&e));
                    }
                }
            }
        }
        unreachable!("loop returns on second attempt")
    }
}

/// Per-connection state visible to frame handlers.
#[derive(Debug, Default)]
pub struct ConnState {
    pub records: usize,
}

/// Accepts connections on `listener`, one thread each, answering every
/// frame with `handler`.
pub fn serve<F>(listener: TcpListener, handler: F) -> std::io::Result<(SocketAddr, JoinHandle<()>)>
where
    F: Fn(&Frame, &mut ConnState) -> Frame + Send + Sync + 'static,
{
    let addr = listener.local_addr()?;
    let handler = Arc::new(handler);
    let handle = thread::spawn(move || {
        for stream in listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let handler = Arc::clone(&handler);
            thread::spawn(move || {
                if let Err(e) = handle_connection(stream, handler.as_ref()) {
                    log::debug!("connection closed: {e}");
                }
            });
        }
    });
    Ok((addr, handle))
}

fn handle_connection<F>(stream: TcpStream, handler: &F) -> Result<(), WireError>
where
    F: Fn(&Frame, &mut ConnState) -> Frame,
{
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut state = ConnState::default();
    loop {
        let frame = match Frame::read_from(&mut reader, DEFAULT_MAX_FRAME) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(WireError::UnknownType(t)) => {
                Frame::error(ErrorCode::BadFrame, 0, &format!("unknown type {t:#04x}"))
                    .write_to(&mut writer)?;
                continue;
            }
            Err(e) => return Err(e),
        };
        handler(&frame, &mut state).write_to(&mut writer)?;
    }
}

/// Registration server behind a socket, publishing to lookup servers at
/// every epoch boundary.
#[derive(Clone)]
pub struct RegistrationDaemon {
    pub server: Arc<Mutex<RegistrationServer>>,
    lookup_addrs: Vec<String>,
    record_cap: usize,
}

impl RegistrationDaemon {
    pub fn new(server: RegistrationServer, lookup_addrs: Vec<String>, record_cap: usize) -> Self {
        RegistrationDaemon {
            server: Arc::new(Mutex::new(server)),
            lookup_addrs,
            record_cap,
        }
    }

    pub fn spawn(&self, listener: TcpListener) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
        let server = Arc::clone(&self.server);
        let cap = self.record_cap;
        serve(listener, move |frame, conn| {
            if matches!(frame.msg_type, MsgType::RegisterLt | MsgType::RegisterSt) {
                if conn.records >= cap {
                    return Frame::error(
                        ErrorCode::RateLimited,
                        frame.epoch_id,
                        "per-connection record cap reached",
                    );
                }
                conn.records += 1;
            }
            server.lock().expect("lock poisoned").handle_frame(frame)
        })
    }

    /// Closes the open window and pushes the database to every lookup
    /// server. Unreachable servers are retried with backoff, then skipped.
    pub fn close_and_push(&self) -> PublishedDb {
        let published = self.server.lock().expect("lock poisoned").close_epoch();
        let frame = push_frame(&published.db);
        for addr in &self.lookup_addrs {
            if let Err(e) = push_with_retry(addr, &frame) {
                log::error!("giving up pushing epoch {} to {addr}: {e}", frame.epoch_id);
            }
        }
        published
    }

    /// Closes the window at every boundary of the tier's epochs. Never
    /// returns.
    pub fn run_clock(&self, clock: EpochClock, tier: Tier) -> ! {
        loop {
            let window = self.server.lock().expect("lock poisoned").window();
            // The window for epoch X closes when X begins.
            let (boundary, _) = match tier {
                Tier::Long => clock.lt_bounds(window),
                Tier::Short => clock.st_bounds(window),
            };
            let now = now_secs();
            if now < boundary {
                thread::sleep(Duration::from_secs(boundary - now).min(Duration::from_secs(5)));
                continue;
            }
            self.close_and_push();
        }
    }
}

fn push_with_retry(addr: &str, frame: &Frame) -> Result<(), String> {
    let mut delay = PUSH_BACKOFF;
    let mut last = String::new();
    for attempt in 1..=PUSH_ATTEMPTS {
        match Conn::open(addr)
            .map_err(WireError::from)
            .and_then(|mut c| c.exchange(frame))
        {
            Ok(reply) if reply.msg_type == MsgType::Ack => return Ok(()),
            Ok(reply) => last = format!("{:?}", reply.error_parts()),
            Err(e) => last = e.to_string(),
        }
        log::warn!("push to {addr} attempt {attempt} failed: {last}");
        thread::sleep(delay);
        delay *= 2;
    }
    Err(last)
}

pub fn spawn_lookup(
    server: Arc<LookupServer>,
    listener: TcpListener,
) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    serve(listener, move |frame, _| server.handle_frame(frame))
}
