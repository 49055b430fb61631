//! WebSocket transport over TCP. One simulation thread per session; each
//! client has a connection thread that feeds the session inbox and drains
//! its own outbound queue, so a slow socket never stalls the simulation.

use std::collections::{HashMap, VecDeque};
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::json;
use tungstenite::{Message, WebSocket};

use super::protocol::{ClientEnvelope, Hello, MessageKind, ServerMessage};
use super::session::{ClientQueue, Session};
use super::ServiceError;
use crate::harness::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pacing {
    /// One tick per `dt_s` of wall-clock time.
    Realtime,
    /// Tick as fast as the simulation allows.
    Fast,
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub pacing: Pacing,
    pub max_sessions: usize,
    /// How long a session keeps running with no client attached before pausing.
    pub grace: Duration,
    /// Frames buffered per client before the oldest are dropped.
    pub client_frame_cap: usize,
}

impl ServerConfig {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        Self { scenario, seed, pacing: Pacing::Realtime, max_sessions: 4, grace: Duration::from_secs(10), client_frame_cap: 8 }
    }
}

struct ClientOut {
    queue: Mutex<ClientQueue>,
    closed: AtomicBool,
}

impl ClientOut {
    fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
    }
}

struct SessionSlot {
    token: String,
    inbox: Mutex<VecDeque<ClientEnvelope>>,
    /// Attached clients plus the latest snapshot, updated together so a
    /// joining client sees every message after its snapshot.
    outputs: Mutex<Outputs>,
}

struct Outputs {
    clients: Vec<Arc<ClientOut>>,
    snapshot: serde_json::Value,
    next_seq: u64,
    t: f64,
    detached_since: Option<Instant>,
}

struct Shared {
    cfg: ServerConfig,
    sessions: Mutex<HashMap<String, Arc<SessionSlot>>>,
    shutdown: AtomicBool,
    created: Mutex<u64>,
}

pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
}

/// Stops a running server from another thread.
#[derive(Clone)]
pub struct ServerHandle {
    shared: Arc<Shared>,
    addr: SocketAddr,
}

impl ServerHandle {
    pub fn shutdown(&self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
    }

    pub fn session_count(&self) -> usize {
        self.shared.sessions.lock().expect("sessions lock").len()
    }
}

impl Server {
    pub fn bind(cfg: ServerConfig, addr: &str) -> Result<Self, ServiceError> {
        cfg.scenario.validate()?;
        let listener =
            TcpListener::bind(addr).map_err(|e| ServiceError::BindFailure { addr: addr.to_string(), reason: e.to_string() })?;
        let shared = Arc::new(Shared {
            cfg,
            sessions: Mutex::new(HashMap::new()),
            shutdown: AtomicBool::new(false),
            created: Mutex::new(0),
        });
        Ok(Self { listener, shared })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, ServiceError> {
        Ok(self.listener.local_addr()?)
    }

    pub fn handle(&self) -> Result<ServerHandle, ServiceError> {
        Ok(ServerHandle { shared: self.shared.clone(), addr: self.local_addr()? })
    }

    /// Accept connections until shut down.
    pub fn run(self) -> Result<(), ServiceError> {
        for stream in self.listener.incoming() {
            if self.shared.shutdown.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let shared = self.shared.clone();
            thread::spawn(move || {
                if let Err(e) = handle_connection(&shared, stream) {
                    eprintln!("connection closed: {e}");
                }
            });
        }
        Ok(())
    }
}

fn new_token() -> String {
    format!("{:032x}", rand::random::<u128>())
}

fn open_session(shared: &Arc<Shared>, token: Option<String>) -> Result<Arc<SessionSlot>, ServiceError> {
    let mut sessions = shared.sessions.lock().expect("sessions lock");
    if let Some(t) = token {
        return sessions.get(&t).cloned().ok_or(ServiceError::UnknownSession(t));
    }
    if sessions.len() >= shared.cfg.max_sessions {
        return Err(ServiceError::SessionLimitReached(shared.cfg.max_sessions));
    }
    let index = {
        let mut c = shared.created.lock().expect("counter lock");
        *c += 1;
        *c - 1
    };
    let seed = crate::rng::derive_seed(shared.cfg.seed, crate::rng::stream::SESSION, index);
    let session = Session::new(&shared.cfg.scenario, seed)?;
    let slot = Arc::new(SessionSlot {
        token: new_token(),
        inbox: Mutex::new(VecDeque::new()),
        outputs: Mutex::new(Outputs {
            clients: Vec::new(),
            snapshot: session.snapshot(),
            next_seq: session.next_seq(),
            t: session.trial().world.t,
            detached_since: None,
        }),
    });
    sessions.insert(slot.token.clone(), slot.clone());
    let (shared2, slot2) = (shared.clone(), slot.clone());
    thread::spawn(move || session_loop(&shared2, &slot2, session));
    Ok(slot)
}

fn session_loop(shared: &Shared, slot: &SessionSlot, mut session: Session) {
    let dt = Duration::from_secs_f64(shared.cfg.scenario.dt_s);
    let mut next_tick = Instant::now();
    while !shared.shutdown.load(Ordering::SeqCst) {
        for cmd in slot.inbox.lock().expect("inbox lock").drain(..) {
            session.submit(cmd);
        }
        let paused = {
            let mut out = slot.outputs.lock().expect("outputs lock");
            out.clients.retain(|c| !c.closed.load(Ordering::SeqCst));
            if out.clients.is_empty() {
                let since = *out.detached_since.get_or_insert_with(Instant::now);
                since.elapsed() >= shared.cfg.grace
            } else {
                out.detached_since = None;
                false
            }
        };
        if paused {
            thread::sleep(Duration::from_millis(20));
            next_tick = Instant::now();
            continue;
        }
        let msgs = match session.tick() {
            Ok(m) => m,
            Err(e) => {
                eprintln!("session {} stopped: {e}", slot.token);
                break;
            }
        };
        {
            let mut out = slot.outputs.lock().expect("outputs lock");
            for c in &out.clients {
                let mut q = c.queue.lock().expect("client queue lock");
                for m in &msgs {
                    q.push(m.clone());
                }
            }
            out.snapshot = session.snapshot();
            out.next_seq = session.next_seq();
            out.t = session.trial().world.t;
        }
        match shared.cfg.pacing {
            Pacing::Realtime => {
                next_tick += dt;
                let now = Instant::now();
                if next_tick > now {
                    thread::sleep(next_tick - now);
                } else {
                    next_tick = now;
                }
            }
            Pacing::Fast => thread::yield_now(),
        }
    }
}

/// Poll interval for client input while waiting on outbound messages.
const CLIENT_POLL: Duration = Duration::from_millis(5);

fn handle_connection(shared: &Arc<Shared>, stream: TcpStream) -> Result<(), ServiceError> {
    if shared.shutdown.load(Ordering::SeqCst) {
        return Ok(());
    }
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut ws = tungstenite::accept(stream).map_err(|e| ServiceError::Protocol(format!("handshake: {e}")))?;
    let hello = loop {
        match ws.read().map_err(ws_error)? {
            Message::Text(t) => break Hello::parse(t.as_str()),
            Message::Close(_) => return Ok(()),
            _ => {}
        }
    };
    let slot = match hello.and_then(|h| open_session(shared, h.token)) {
        Ok(s) => s,
        Err(e) => return refuse(&mut ws, &e),
    };

    let client = Arc::new(ClientOut {
        queue: Mutex::new(ClientQueue::new(shared.cfg.client_frame_cap)),
        closed: AtomicBool::new(false),
    });
    {
        let mut out = slot.outputs.lock().expect("outputs lock");
        let mut q = client.queue.lock().expect("client queue lock");
        let mut body = out.snapshot.clone();
        body["token"] = json!(slot.token);
        q.push_local(ServerMessage::json(MessageKind::Snapshot, out.next_seq, out.t, body));
        q.resume_at(out.next_seq);
        drop(q);
        out.clients.push(client.clone());
    }
    ws.get_mut().set_read_timeout(Some(CLIENT_POLL))?;
    let result = pump(&slot, &client, &mut ws, shared);
    client.close();
    let _ = ws.close(None);
    let _ = ws.flush();
    result
}

/// Alternate between flushing queued messages and reading commands.
fn pump(slot: &SessionSlot, client: &ClientOut, ws: &mut WebSocket<TcpStream>, shared: &Shared) -> Result<(), ServiceError> {
    loop {
        if shared.shutdown.load(Ordering::SeqCst) || client.closed.load(Ordering::SeqCst) {
            return Ok(());
        }
        loop {
            let next = client.queue.lock().expect("client queue lock").pop();
            let Some(m) = next else { break };
            ws.send(m.to_ws()).map_err(ws_error)?;
        }
        match ws.read() {
            Ok(Message::Text(t)) => match ClientEnvelope::parse(t.as_str()) {
                Ok(cmd) => slot.inbox.lock().expect("inbox lock").push_back(cmd),
                Err(e) => {
                    let out = slot.outputs.lock().expect("outputs lock");
                    let msg = ServerMessage::json(MessageKind::Error, out.next_seq, out.t, json!({ "message": e.to_string() }));
                    drop(out);
                    client.queue.lock().expect("client queue lock").push_local(msg);
                }
            },
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(ws_error(e)),
        }
    }
}

fn ws_error(e: tungstenite::Error) -> ServiceError {
    match e {
        tungstenite::Error::Io(io) => ServiceError::Io(io),
        other => ServiceError::Protocol(other.to_string()),
    }
}

fn refuse(ws: &mut WebSocket<TcpStream>, err: &ServiceError) -> Result<(), ServiceError> {
    let msg = ServerMessage::json(MessageKind::Error, 0, 0.0, json!({ "message": err.to_string() }));
    ws.send(msg.to_ws()).map_err(ws_error)?;
    let _ = ws.close(None);
    let _ = ws.flush();
    Ok(())
}
