//! TCP transport for a live session.
//!
//! One thread owns the [`Session`]. Connection threads only parse lines and
//! pass them to it over a channel; frames go back through a small per-client
//! queue, and a slow reader loses frames rather than stalling the loop.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, SyncSender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;

use super::protocol::{decode_client, encode, ClientMessage, ServerMessage};
use super::session::{Ingest, Session, SessionOptions};

/// Lines queued per client before frames start being dropped.
const CLIENT_QUEUE: usize = 256;
const ACCEPT_POLL: Duration = Duration::from_millis(10);
/// Longest accepted client line, bytes.
const MAX_LINE: u64 = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerOptions {
    pub session: SessionOptions,
    /// Frames per wall second.
    pub frame_rate: f64,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions { session: SessionOptions::default(), frame_rate: 30.0 }
    }
}

enum Event {
    Connect { id: u64, out: SyncSender<String>, stream: TcpStream },
    Line { id: u64, line: String },
    Disconnect { id: u64 },
}

struct Client {
    id: u64,
    out: SyncSender<String>,
    stream: TcpStream,
}

/// A running server. Dropping it without [`Server::shutdown`] leaves the
/// threads running until the process exits.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl Server {
    /// Validates `cfg`, binds `addr` and starts serving a paused session.
    pub fn start(addr: impl ToSocketAddrs, cfg: ScenarioConfig, opts: ServerOptions) -> Result<Server> {
        if !(opts.frame_rate > 0.0 && opts.frame_rate <= 1000.0) {
            return Err(Error::InvalidInput(format!("frame rate must lie in (0, 1000], got {}", opts.frame_rate)));
        }
        let session = Session::start(cfg, opts.session)?;
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel();

        let accept = {
            let stop = stop.clone();
            std::thread::spawn(move || accept_loop(listener, tx, stop))
        };
        let sim = {
            let stop = stop.clone();
            let interval = Duration::from_secs_f64(1.0 / opts.frame_rate);
            std::thread::spawn(move || session_loop(session, rx, stop, interval))
        };
        Ok(Server { addr, stop, threads: vec![accept, sim] })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, closes every connection and joins the server threads.
    pub fn shutdown(self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads {
            let _ = t.join();
        }
    }

    /// Blocks until the server stops.
    pub fn wait(self) {
        for t in self.threads {
            let _ = t.join();
        }
    }
}

fn accept_loop(listener: TcpListener, events: Sender<Event>, stop: Arc<AtomicBool>) {
    let mut next_id = 0;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                next_id += 1;
                if spawn_client(next_id, stream, &events).is_err() {
                    continue;
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(ACCEPT_POLL),
            Err(_) => std::thread::sleep(ACCEPT_POLL),
        }
    }
}

fn spawn_client(id: u64, stream: TcpStream, events: &Sender<Event>) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let (out, queue) = mpsc::sync_channel::<String>(CLIENT_QUEUE);
    let mut writer = stream.try_clone()?;
    let reader = stream.try_clone()?;
    std::thread::spawn(move || {
        for line in queue {
            if writer.write_all(line.as_bytes()).and_then(|_| writer.write_all(b"\n")).is_err() {
                break;
            }
        }
    });
    let tx = events.clone();
    if tx.send(Event::Connect { id, out, stream }).is_err() {
        return Ok(());
    }
    std::thread::spawn(move || {
        let mut r = BufReader::new(reader);
        loop {
            let mut line = String::new();
            match std::io::Read::take(&mut r, MAX_LINE).read_line(&mut line) {
                Ok(0) | Err(_) => break,
                Ok(_) => {
                    let line = line.trim();
                    if !line.is_empty() && tx.send(Event::Line { id, line: line.to_string() }).is_err() {
                        break;
                    }
                }
            }
        }
        let _ = tx.send(Event::Disconnect { id });
    });
    Ok(())
}

fn send(client: &Client, msg: &ServerMessage) {
    if let Ok(line) = encode(msg) {
        // A full queue drops this message; a closed one means the client left.
        let _ = client.out.try_send(line);
    }
}

struct Loop {
    session: Session,
    clients: Vec<Client>,
    controller: Option<u64>,
    epoch: Instant,
}

impl Loop {
    fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    fn broadcast(&self, msg: &ServerMessage) {
        for c in &self.clients {
            send(c, msg);
        }
    }

    fn reply(&self, id: u64, msg: ServerMessage) {
        if let Some(c) = self.clients.iter().find(|c| c.id == id) {
            send(c, &msg);
        }
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::Connect { id, out, stream } => {
                if self.controller.is_none() {
                    self.controller = Some(id);
                }
                let client = Client { id, out, stream };
                send(&client, &ServerMessage::Frame(self.session.frame()));
                self.clients.push(client);
            }
            Event::Disconnect { id } => {
                self.clients.retain(|c| c.id != id);
                if self.controller == Some(id) {
                    self.controller = None;
                }
            }
            Event::Line { id, line } => {
                if let Err((code, msg)) = self.command(id, &line) {
                    self.reply(id, ServerMessage::error(code, msg));
                }
            }
        }
    }

    fn command(&mut self, id: u64, line: &str) -> std::result::Result<(), (&'static str, String)> {
        let msg = decode_client(line).map_err(|e| ("bad-message", e.to_string()))?;
        if self.controller != Some(id) {
            return Err(("read-only", "another client holds control of this session".into()));
        }
        let state = |r: Result<()>| r.map_err(|e| ("invalid-state", e.to_string()));
        match msg {
            ClientMessage::Input { u_o, ct } => {
                let now = self.now();
                if self.session.ingest(u_o, ct, now) == Ingest::Rejected {
                    return Err(("rejected-sample", format!("u_o must be finite, got {u_o}")));
                }
                Ok(())
            }
            ClientMessage::Pause => state(self.session.pause()),
            ClientMessage::Resume => state(self.session.resume()),
            ClientMessage::Reset => state(self.session.reset()),
            ClientMessage::SetTimescale { r } => {
                self.session.set_timescale(r).map_err(|e| ("invalid-input", e.to_string()))
            }
        }
    }
}

fn session_loop(session: Session, events: Receiver<Event>, stop: Arc<AtomicBool>, interval: Duration) {
    let epoch = Instant::now();
    let mut lp = Loop { session, clients: Vec::new(), controller: None, epoch };
    let mut last_tick = epoch;
    let mut next_frame = epoch + interval;
    while !stop.load(Ordering::SeqCst) {
        let wait = next_frame.saturating_duration_since(Instant::now());
        match events.recv_timeout(wait) {
            Ok(ev) => lp.handle(ev),
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
        let now = Instant::now();
        if now >= next_frame {
            let wall_dt = (now - last_tick).as_secs_f64();
            last_tick = now;
            next_frame = (next_frame + interval).max(now);
            let frame = lp.session.tick(wall_dt, lp.now());
            lp.broadcast(&ServerMessage::Frame(frame));
            if let Some(report) = lp.session.take_report() {
                lp.broadcast(&ServerMessage::Report(report));
            }
        }
    }
    for c in &lp.clients {
        let _ = c.stream.shutdown(std::net::Shutdown::Both);
    }
}
