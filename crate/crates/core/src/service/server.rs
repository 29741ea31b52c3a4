use std::collections::HashMap;
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use tungstenite::{Message, WebSocket};

use super::midi::{self, MidiOutput};
use super::{osc, ws, Command, Output, Reply, Session, SessionConfig};
use crate::engine::Engine;
use crate::error::{Error, Result};

const POLL: Duration = Duration::from_millis(20);
const WS_POLL: Duration = Duration::from_millis(2);

enum Target {
    Nobody,
    Osc(SocketAddr),
    Ws(u64),
    Caller(Sender<Vec<Output>>),
}

struct Job {
    cmd: std::result::Result<Command, String>,
    at: Instant,
    reply: Target,
}

type Clients = Arc<Mutex<HashMap<u64, Sender<String>>>>;

/// A running server. Dropping it shuts it down.
pub struct ServerHandle {
    tx: Option<Sender<Job>>,
    stop: Arc<AtomicBool>,
    listeners: Vec<JoinHandle<()>>,
    consumer: Option<JoinHandle<()>>,
    osc_addr: Option<SocketAddr>,
    ws_addr: Option<SocketAddr>,
}

impl ServerHandle {
    /// The bound OSC address (useful when listening on port 0).
    pub fn osc_addr(&self) -> Option<SocketAddr> {
        self.osc_addr
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws_addr
    }

    /// Run a command through the queue like any transport and wait for
    /// everything it produced.
    pub fn request(&self, cmd: Command) -> Result<Vec<Output>> {
        let (tx, rx) = mpsc::channel();
        let job = Job {
            cmd: Ok(cmd),
            at: Instant::now(),
            reply: Target::Caller(tx),
        };
        let closed = || Error::Io(std::io::Error::new(ErrorKind::BrokenPipe, "server stopped"));
        self.tx.as_ref().ok_or_else(closed)?.send(job).map_err(|_| closed())?;
        rx.recv().map_err(|_| closed())
    }

    /// Flush held notes to every output, stop all threads and return what
    /// the flush emitted.
    pub fn shutdown(mut self) -> Result<Vec<Output>> {
        self.stop_all()
    }

    fn stop_all(&mut self) -> Result<Vec<Output>> {
        let out = if self.tx.is_some() { self.request(Command::Shutdown)? } else { Vec::new() };
        self.stop.store(true, Ordering::Relaxed);
        self.tx = None;
        for h in self.listeners.drain(..) {
            let _ = h.join();
        }
        if let Some(c) = self.consumer.take() {
            let _ = c.join();
        }
        Ok(out)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.tx.is_some() {
            if let Err(e) = self.stop_all() {
                log::warn!("shutdown: {e}");
            }
        }
    }
}

fn bind_error(what: &str, addr: SocketAddr, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{what} {addr}: {e}")))
}

/// Start every transport named in `config` around `engine`.
pub fn start(config: &SessionConfig, engine: Engine) -> Result<ServerHandle> {
    config.validate()?;
    let origin = Instant::now();
    let stop = Arc::new(AtomicBool::new(false));
    let clients: Clients = Arc::default();
    let (tx, rx) = mpsc::channel::<Job>();
    let mut listeners = Vec::new();

    let osc_socket = match config.osc.listen {
        Some(addr) => {
            let s = UdpSocket::bind(addr).map_err(|e| bind_error("osc", addr, e))?;
            s.set_read_timeout(Some(POLL))?;
            Some(s)
        }
        None => None,
    };
    let osc_addr = osc_socket.as_ref().map(UdpSocket::local_addr).transpose()?;
    let ws_socket = match config.ws.listen {
        Some(addr) => {
            let l = TcpListener::bind(addr).map_err(|e| bind_error("ws", addr, e))?;
            l.set_nonblocking(true)?;
            Some(l)
        }
        None => None,
    };
    let ws_addr = ws_socket.as_ref().map(TcpListener::local_addr).transpose()?;

    let osc_out = match &osc_socket {
        Some(s) => Some(s.try_clone()?),
        None if config.osc.send.is_some() => Some(UdpSocket::bind("0.0.0.0:0")?),
        None => None,
    };
    if let Some(s) = osc_socket {
        let (tx, stop) = (tx.clone(), stop.clone());
        listeners.push(thread::spawn(move || osc_listener(s, tx, stop)));
    }
    if let Some(l) = ws_socket {
        let (tx, stop, clients) = (tx.clone(), stop.clone(), clients.clone());
        listeners.push(thread::spawn(move || ws_listener(l, tx, stop, clients)));
    }
    if let Some(path) = config.midi.input.clone() {
        let tx = Mutex::new(tx.clone());
        // blocked device reads cannot be interrupted, so this one is not joined
        midi::spawn_input(path, stop.clone(), move |n| {
            let job = Job {
                cmd: Ok(Command::Play {
                    instrument: n.instrument.get(),
                    pitch: n.pitch,
                    velocity: n.velocity,
                    dt: None,
                }),
                at: Instant::now(),
                reply: Target::Nobody,
            };
            let _ = tx.lock().unwrap().send(job);
        });
    }

    let session = Session::new(engine, config.mode, config.app.clone(), config.seed);
    let sinks = Sinks {
        osc: osc_out,
        osc_send: config.osc.send,
        midi: config.midi.output.clone().map(MidiOutput::new),
        clients,
    };
    let consumer = thread::spawn(move || consume(session, rx, origin, sinks));
    Ok(ServerHandle {
        tx: Some(tx),
        stop,
        listeners,
        consumer: Some(consumer),
        osc_addr,
        ws_addr,
    })
}

/// Load the checkpoint, serve until Ctrl-C, then flush held notes.
pub fn serve(config: &SessionConfig) -> Result<()> {
    let path = config
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("no checkpoint given".into()))?;
    let engine = Engine::from_checkpoint(path).map_err(|e| Error::Config(format!("checkpoint {}: {e}", path.display())))?;
    let handle = start(config, engine)?;
    log::info!(
        "serving: osc {:?}, ws {:?}, midi in {:?}, out {:?}, mode {}",
        handle.osc_addr(),
        handle.ws_addr(),
        config.midi.input,
        config.midi.output,
        config.mode.name()
    );
    let (tx, rx) = mpsc::channel();
    ctrlc::set_handler(move || {
        let _ = tx.send(());
    })
    .map_err(|e| Error::Config(e.to_string()))?;
    let _ = rx.recv();
    let flushed = handle.shutdown()?;
    log::info!("stopped after flushing {} events", flushed.len());
    Ok(())
}

struct Sinks {
    osc: Option<UdpSocket>,
    osc_send: Option<SocketAddr>,
    midi: Option<MidiOutput>,
    clients: Clients,
}

impl Sinks {
    fn osc_to(&self, addr: SocketAddr, o: &Output) {
        if let (Some(s), Some(bytes)) = (&self.osc, osc::encode_reply(&o.reply)) {
            if let Err(e) = s.send_to(&bytes, addr) {
                log::warn!("osc send to {addr}: {e}");
            }
        }
    }

    fn ws_to(&self, id: Option<u64>, o: &Output) {
        let text = ws::encode(o);
        let clients = self.clients.lock().unwrap();
        match id {
            Some(id) => {
                if let Some(c) = clients.get(&id) {
                    let _ = c.send(text);
                }
            }
            None => clients.values().for_each(|c| {
                let _ = c.send(text.clone());
            }),
        }
    }

    fn route(&mut self, outputs: Vec<Output>, target: Target) {
        for o in &outputs {
            if o.reply.is_broadcast() {
                if let (Some(m), Reply::Event(e)) = (&mut self.midi, &o.reply) {
                    if let Err(err) = m.send(e) {
                        log::warn!("midi out: {err}");
                    }
                }
                if let Some(a) = self.osc_send {
                    self.osc_to(a, o);
                }
                self.ws_to(None, o);
                if let Target::Osc(a) = target {
                    if Some(a) != self.osc_send {
                        self.osc_to(a, o);
                    }
                }
            } else {
                match target {
                    Target::Osc(a) => self.osc_to(a, o),
                    Target::Ws(id) => self.ws_to(Some(id), o),
                    Target::Nobody => {
                        if let Reply::Error(e) = &o.reply {
                            log::warn!("{e}");
                        }
                    }
                    Target::Caller(_) => {}
                }
            }
        }
        if let Target::Caller(tx) = target {
            let _ = tx.send(outputs);
        }
    }
}

fn consume(mut session: Session, rx: Receiver<Job>, origin: Instant, mut sinks: Sinks) {
    let secs = |t: Instant| t.saturating_duration_since(origin).as_secs_f64();
    loop {
        let job = match session.next_deadline() {
            Some(due) => {
                let wait = (due - secs(Instant::now())).max(0.0);
                match rx.recv_timeout(Duration::from_secs_f64(wait)) {
                    Ok(j) => j,
                    Err(RecvTimeoutError::Timeout) => Job {
                        cmd: Ok(Command::Tick),
                        at: Instant::now(),
                        reply: Target::Nobody,
                    },
                    Err(RecvTimeoutError::Disconnected) => break,
                }
            }
            None => match rx.recv() {
                Ok(j) => j,
                Err(_) => break,
            },
        };
        let outputs = match job.cmd {
            Ok(cmd) => session.handle(cmd, secs(job.at)),
            Err(reason) => vec![session.reject(reason)],
        };
        sinks.route(outputs, job.reply);
        if session.is_closed() {
            break;
        }
    }
    // answer anything still queued so callers do not hang
    while let Ok(job) = rx.try_recv() {
        let out = session.handle(Command::Tick, secs(job.at));
        sinks.route(out, job.reply);
    }
}

fn osc_listener(socket: UdpSocket, tx: Sender<Job>, stop: Arc<AtomicBool>) {
    let mut buf = vec![0u8; rosc::decoder::MTU];
    while !stop.load(Ordering::Relaxed) {
        match socket.recv_from(&mut buf) {
            Ok((n, from)) => {
                let at = Instant::now();
                for cmd in osc::decode(&buf[..n]) {
                    let job = Job {
                        cmd,
                        at,
                        reply: Target::Osc(from),
                    };
                    if tx.send(job).is_err() {
                        return;
                    }
                }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => log::warn!("osc receive: {e}"),
        }
    }
}

fn ws_listener(listener: TcpListener, tx: Sender<Job>, stop: Arc<AtomicBool>, clients: Clients) {
    let next_id = AtomicU64::new(0);
    let mut conns = Vec::new();
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let id = next_id.fetch_add(1, Ordering::Relaxed);
                let (tx, stop, clients) = (tx.clone(), stop.clone(), clients.clone());
                conns.push(thread::spawn(move || {
                    if let Err(e) = ws_connection(stream, id, tx, stop, clients.clone()) {
                        log::debug!("ws {peer}: {e}");
                    }
                    clients.lock().unwrap().remove(&id);
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => log::warn!("ws accept: {e}"),
        }
    }
    for c in conns {
        let _ = c.join();
    }
}

fn ws_connection(stream: TcpStream, id: u64, tx: Sender<Job>, stop: Arc<AtomicBool>, clients: Clients) -> Result<()> {
    stream.set_nonblocking(false)?;
    let mut socket: WebSocket<TcpStream> =
        tungstenite::accept(stream).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    socket.get_ref().set_read_timeout(Some(WS_POLL))?;
    socket.get_ref().set_nodelay(true)?;
    let (out_tx, out_rx) = mpsc::channel::<String>();
    clients.lock().unwrap().insert(id, out_tx);
    let ws_err = |e: tungstenite::Error| Error::Io(std::io::Error::other(e.to_string()));
    while !stop.load(Ordering::Relaxed) {
        match socket.read() {
            Ok(Message::Text(text)) => {
                let job = Job {
                    cmd: ws::decode(&text),
                    at: Instant::now(),
                    reply: Target::Ws(id),
                };
                if tx.send(job).is_err() {
                    break;
                }
            }
            Ok(Message::Binary(_)) => {
                let job = Job {
                    cmd: Err("malformed frame: binary frames are not supported".into()),
                    at: Instant::now(),
                    reply: Target::Ws(id),
                };
                let _ = tx.send(job);
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(ws_err(e)),
        }
        let mut wrote = false;
        while let Ok(text) = out_rx.try_recv() {
            socket.write(Message::Text(text)).map_err(ws_err)?;
            wrote = true;
        }
        if wrote {
            socket.flush().map_err(ws_err)?;
        }
    }
    let _ = socket.close(None);
    let _ = socket.flush();
    Ok(())
}
