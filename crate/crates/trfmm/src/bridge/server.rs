//! WebSocket front end. One owner thread holds the [`Session`]; client
//! threads only move text between their socket and the owner's queue.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use tungstenite::{Error as WsError, Message};

use super::protocol::{Ack, ClientBody, ClientMessage, ErrorBody, ErrorCode, ServerBody, ServerMessage};
use super::session::{Session, SessionError};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub broadcast_period: Duration,
    /// Simulated seconds per wall second; 0 runs as fast as possible.
    pub pace: f64,
    /// Accepted commands are appended here as JSON lines.
    pub command_log: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            broadcast_period: Duration::from_millis(100),
            pace: 1.0,
            command_log: None,
        }
    }
}

enum Inbound {
    Connect { client: u64, tx: Sender<String> },
    Text { client: u64, text: String },
    Disconnect { client: u64 },
    Shutdown,
}

/// A running server. Dropping it without [`ServerHandle::shutdown`] leaves
/// the threads running.
pub struct ServerHandle {
    addr: SocketAddr,
    inbox: Sender<Inbound>,
    stop: Arc<AtomicBool>,
    owner: JoinHandle<Session>,
    acceptor: JoinHandle<()>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, ends the tick loop and hands back the session.
    pub fn shutdown(self) -> Session {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.inbox.send(Inbound::Shutdown);
        let _ = self.acceptor.join();
        self.owner.join().expect("owner thread panicked")
    }

    /// Blocks until the owner stops, which only happens on shutdown.
    pub fn wait(self) -> Session {
        let _ = self.acceptor.join();
        self.owner.join().expect("owner thread panicked")
    }
}

/// Binds `addr` and starts serving `session`.
pub fn serve(session: Session, addr: impl ToSocketAddrs + std::fmt::Debug, opts: ServeOptions) -> Result<ServerHandle, ServeError> {
    let shown = format!("{addr:?}");
    let bind_err = |source| ServeError::Bind {
        addr: shown.clone(),
        source,
    };
    let listener = TcpListener::bind(addr).map_err(bind_err)?;
    let local = listener.local_addr().map_err(bind_err)?;
    listener.set_nonblocking(true).map_err(bind_err)?;

    let (inbox, rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    let owner = thread::spawn(move || owner_loop(session, rx, opts));
    let acceptor = {
        let inbox = inbox.clone();
        let stop = stop.clone();
        thread::spawn(move || accept_loop(listener, inbox, stop))
    };
    Ok(ServerHandle {
        addr: local,
        inbox,
        stop,
        owner,
        acceptor,
    })
}

fn accept_loop(listener: TcpListener, inbox: Sender<Inbound>, stop: Arc<AtomicBool>) {
    let mut next_id = 0u64;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let inbox = inbox.clone();
                let stop = stop.clone();
                let id = next_id;
                next_id += 1;
                thread::spawn(move || client_loop(stream, id, inbox, stop));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
}

fn client_loop(stream: TcpStream, client: u64, inbox: Sender<Inbound>, stop: Arc<AtomicBool>) {
    if stream.set_nonblocking(false).is_err() {
        return;
    }
    let Ok(mut ws) = tungstenite::accept(stream) else { return };
    if ws.get_ref().set_read_timeout(Some(Duration::from_millis(5))).is_err() {
        return;
    }
    let (tx, rx) = mpsc::channel();
    if inbox.send(Inbound::Connect { client, tx }).is_err() {
        return;
    }
    'conn: while !stop.load(Ordering::SeqCst) {
        loop {
            match rx.try_recv() {
                Ok(text) => {
                    if ws.send(Message::text(text)).is_err() {
                        break 'conn;
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => break 'conn,
            }
        }
        match ws.read() {
            Ok(Message::Text(t)) => {
                if inbox
                    .send(Inbound::Text {
                        client,
                        text: t.to_string(),
                    })
                    .is_err()
                {
                    break;
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(WsError::Io(e)) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    let _ = inbox.send(Inbound::Disconnect { client });
}

struct Client {
    tx: Sender<String>,
    seq: u64,
}

impl Client {
    fn send(&mut self, body: ServerBody) {
        let msg = ServerMessage { seq: self.seq, body };
        self.seq += 1;
        let text = match msg.encode() {
            Ok(t) => t,
            Err(e) => ServerMessage {
                seq: msg.seq,
                body: ServerBody::Error(ErrorBody {
                    command_seq: None,
                    code: ErrorCode::Internal,
                    message: e.to_string(),
                }),
            }
            .encode()
            .expect("error bodies are finite"),
        };
        let _ = self.tx.send(text);
    }
}

fn error_code(e: &SessionError) -> ErrorCode {
    match e {
        SessionError::InvalidTarget(_) => ErrorCode::InvalidTarget,
        SessionError::UnknownObstacle(_) => ErrorCode::UnknownObstacle,
        SessionError::Config(_) | SessionError::ReplayStalled(_) => ErrorCode::InvalidConfig,
        SessionError::RasterUnavailable(_) => ErrorCode::RasterUnavailable,
    }
}

fn handle_text(session: &mut Session, client: &mut Client, text: &str, log: &mut Option<std::fs::File>) {
    let msg: ClientMessage = match serde_json::from_str(text) {
        Ok(m) => m,
        Err(e) => {
            client.send(ServerBody::Error(ErrorBody {
                command_seq: None,
                code: ErrorCode::BadMessage,
                message: e.to_string(),
            }));
            return;
        }
    };
    match msg.body {
        ClientBody::Command(cmd) => {
            let kind = cmd.kind().to_string();
            match session.apply_command(cmd) {
                Ok(()) => {
                    if let (Some(f), Some(entry)) = (log.as_mut(), session.log().last()) {
                        let line = serde_json::to_string(entry).expect("log entries serialize");
                        let _ = writeln!(f, "{line}");
                    }
                    client.send(ServerBody::Ack(Ack {
                        command_seq: msg.seq,
                        kind,
                    }));
                }
                Err(e) => client.send(ServerBody::Error(ErrorBody {
                    command_seq: Some(msg.seq),
                    code: error_code(&e),
                    message: e.to_string(),
                })),
            }
        }
        ClientBody::GetRaster { id } => match session.raster(id) {
            Ok(r) => client.send(ServerBody::Raster(r)),
            Err(e) => client.send(ServerBody::Error(ErrorBody {
                command_seq: Some(msg.seq),
                code: error_code(&e),
                message: e.to_string(),
            })),
        },
    }
}

fn owner_loop(mut session: Session, rx: Receiver<Inbound>, opts: ServeOptions) -> Session {
    let mut log = opts
        .command_log
        .as_ref()
        .and_then(|p| std::fs::OpenOptions::new().create(true).append(true).open(p).ok());
    let tick_period = (opts.pace > 0.0).then(|| Duration::from_secs_f64(session.config().dt / opts.pace));
    let mut clients: BTreeMap<u64, Client> = BTreeMap::new();
    let mut next_tick = Instant::now();
    let mut next_broadcast = Instant::now() + opts.broadcast_period;
    loop {
        let now = Instant::now();
        let mut deadline = next_broadcast;
        if !session.is_paused() {
            deadline = deadline.min(next_tick);
        }
        match rx.recv_timeout(deadline.saturating_duration_since(now)) {
            Ok(Inbound::Connect { client, tx }) => {
                let mut c = Client { tx, seq: 0 };
                c.send(ServerBody::FullState(Box::new(session.full_state())));
                clients.insert(client, c);
            }
            Ok(Inbound::Text { client, text }) => {
                if let Some(c) = clients.get_mut(&client) {
                    handle_text(&mut session, c, &text, &mut log);
                }
            }
            Ok(Inbound::Disconnect { client }) => {
                clients.remove(&client);
            }
            Ok(Inbound::Shutdown) | Err(RecvTimeoutError::Disconnected) => break,
            Err(RecvTimeoutError::Timeout) => {}
        }
        let now = Instant::now();
        if session.is_paused() {
            next_tick = now;
        } else {
            match tick_period {
                Some(p) => {
                    // Catch up at most a few steps after a stall.
                    let mut budget = 5;
                    while now >= next_tick && budget > 0 {
                        session.tick();
                        next_tick += p;
                        budget -= 1;
                    }
                    if now >= next_tick {
                        next_tick = now + p;
                    }
                }
                None => {
                    session.tick();
                }
            }
        }
        if now >= next_broadcast {
            let snap = session.snapshot();
            for c in clients.values_mut() {
                c.send(ServerBody::Snapshot(Box::new(snap.clone())));
            }
            next_broadcast = now + opts.broadcast_period;
        }
    }
    session
}
