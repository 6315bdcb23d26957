//! TCP registry service: one thread per agent session, all mutations under one lock so the
//! event log order is the order every session observes.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};

use roadscan_core::keyvalue::KeyValues;
use thiserror::Error;

use crate::protocol::{Alert, Message, PROTOCOL_VERSION};
use crate::record::{valid_agent_id, UpdateAction};
use crate::state::{load_events, EventLog, RegistryConfig, RegistryState, StateError};

pub const SERVER_KEYS: [&str; 4] = ["endpoint", "match_radius", "alert_radius", "log"];

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {endpoint}: {source}")]
    Bind { endpoint: String, source: std::io::Error },
    #[error(transparent)]
    State(#[from] StateError),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub endpoint: String,
    pub registry: RegistryConfig,
    /// Event log; replayed on start when present, appended to afterwards.
    pub log_path: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { endpoint: "127.0.0.1:7878".into(), registry: RegistryConfig::default(), log_path: None }
    }
}

impl ServerConfig {
    /// Overrides defaults with `endpoint`, `match_radius`, `alert_radius` and `log` keys.
    pub fn from_keyvalues(kv: &KeyValues) -> Result<Self, ServerError> {
        kv.check_known(&SERVER_KEYS).map_err(|e| ServerError::Config(e.to_string()))?;
        let mut cfg = Self::default();
        let num = |key| kv.parsed::<f64>(key).map_err(|e| ServerError::Config(e.to_string()));
        if let Some(v) = kv.get("endpoint") {
            cfg.endpoint = v.to_string();
        }
        if let Some(v) = num("match_radius")? {
            cfg.registry.match_radius = v;
        }
        if let Some(v) = num("alert_radius")? {
            cfg.registry.alert_radius = v;
        }
        cfg.log_path = kv.get("log").map(PathBuf::from);
        cfg.registry.validate()?;
        Ok(cfg)
    }
}

struct Session {
    position: Option<[f64; 2]>,
    /// (record id, revision) pairs this session already knows about.
    alerted: HashSet<(u64, u64)>,
    tx: Sender<String>,
    stream: TcpStream,
}

struct Shared {
    state: RegistryState,
    log: Option<EventLog>,
    sessions: HashMap<u64, Session>,
    next_session: u64,
}

struct Inner {
    shared: Mutex<Shared>,
    stop: AtomicBool,
    addr: SocketAddr,
}

impl Inner {
    fn lock(&self) -> MutexGuard<'_, Shared> {
        self.shared.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub struct Server {
    listener: TcpListener,
    inner: Arc<Inner>,
}

/// Control of a running server from other threads.
#[derive(Clone)]
pub struct ServerHandle {
    inner: Arc<Inner>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.inner.addr
    }

    pub fn snapshot(&self) -> RegistryState {
        self.inner.lock().state.clone()
    }

    /// Stops accepting, closes every session and lets `run` return.
    pub fn shutdown(&self) {
        self.inner.stop.store(true, Ordering::SeqCst);
        for s in self.inner.lock().sessions.values() {
            let _ = s.stream.shutdown(Shutdown::Both);
        }
        // wake the accept loop
        let _ = TcpStream::connect(self.inner.addr);
    }
}

impl Server {
    pub fn bind(config: &ServerConfig) -> Result<Self, ServerError> {
        let state = match &config.log_path {
            Some(p) if p.exists() => RegistryState::replay(config.registry, &load_events(p)?)?,
            _ => RegistryState::new(config.registry)?,
        };
        let log = config.log_path.as_deref().map(EventLog::open).transpose()?;
        let listener = TcpListener::bind(&config.endpoint)
            .map_err(|source| ServerError::Bind { endpoint: config.endpoint.clone(), source })?;
        let addr = listener.local_addr()?;
        let shared = Shared { state, log, sessions: HashMap::new(), next_session: 0 };
        Ok(Self { listener, inner: Arc::new(Inner { shared: Mutex::new(shared), stop: AtomicBool::new(false), addr }) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.inner.addr
    }

    pub fn handle(&self) -> ServerHandle {
        ServerHandle { inner: Arc::clone(&self.inner) }
    }

    /// Serves until [`ServerHandle::shutdown`].
    pub fn run(self) -> Result<(), ServerError> {
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        for conn in self.listener.incoming() {
            if self.inner.stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let inner = Arc::clone(&self.inner);
            workers.push(thread::spawn(move || session(inner, stream)));
            workers.retain(|w| !w.is_finished());
        }
        for s in self.inner.lock().sessions.values() {
            let _ = s.stream.shutdown(Shutdown::Both);
        }
        for w in workers {
            let _ = w.join();
        }
        Ok(())
    }

    /// Runs the server on a background thread.
    pub fn spawn(self) -> (ServerHandle, JoinHandle<Result<(), ServerError>>) {
        let handle = self.handle();
        (handle, thread::spawn(move || self.run()))
    }
}

fn send(tx: &Sender<String>, msg: &Message) {
    let _ = tx.send(msg.to_string());
}

fn within(a: [f64; 2], b: [f64; 2], r: f64) -> bool {
    (a[0] - b[0]).hypot(a[1] - b[1]) <= r
}

impl Shared {
    /// Moves a session and alerts it about nearby records it has not seen yet.
    fn relocate(&mut self, sid: u64, position: [f64; 2]) {
        let radius = self.state.config().alert_radius;
        let near: Vec<Alert> = self.state.query_vicinity(position, radius).into_iter().map(Alert::from).collect();
        let Some(s) = self.sessions.get_mut(&sid) else { return };
        s.position = Some(position);
        for a in near {
            if s.alerted.insert((a.id, a.revision)) {
                send(&s.tx, &Message::Alert(a));
            }
        }
    }

    /// Alerts every other nearby session about a new record revision.
    fn broadcast(&mut self, from: u64, alert: &Alert) {
        let radius = self.state.config().alert_radius;
        for (&sid, s) in &mut self.sessions {
            let key = (alert.id, alert.revision);
            if sid == from {
                s.alerted.insert(key);
            } else if s.position.is_some_and(|p| within(p, alert.position, radius)) && s.alerted.insert(key) {
                send(&s.tx, &Message::Alert(alert.clone()));
            }
        }
    }
}

fn session(inner: Arc<Inner>, stream: TcpStream) {
    let Ok(write_half) = stream.try_clone() else { return };
    let Ok(ctl) = stream.try_clone() else { return };
    let (tx, rx) = mpsc::channel::<String>();
    let writer = thread::spawn(move || {
        let mut w = BufWriter::new(write_half);
        for line in rx {
            if writeln!(w, "{line}").and_then(|()| w.flush()).is_err() {
                break;
            }
        }
    });
    let mut lines = BufReader::new(stream).lines();

    let hello = lines.next().and_then(Result::ok).map(|l| Message::parse(&l));
    let agent = match hello {
        Some(Ok(Message::Hello { version: PROTOCOL_VERSION, agent_id: Some(a) })) if valid_agent_id(&a) => Some(a),
        Some(Ok(Message::Hello { version, .. })) if version != PROTOCOL_VERSION => {
            send(&tx, &Message::Err(format!("unsupported protocol version {version}")));
            None
        }
        Some(_) => {
            send(&tx, &Message::Err("expected HELLO 1 <agent_id>".into()));
            None
        }
        None => None,
    };
    let Some(agent) = agent.filter(|_| !inner.stop.load(Ordering::SeqCst)) else {
        drop(tx);
        let _ = writer.join();
        let _ = ctl.shutdown(Shutdown::Both);
        return;
    };

    let sid = {
        let mut g = inner.lock();
        let sid = g.next_session;
        g.next_session += 1;
        let stream = ctl.try_clone().expect("socket clone");
        g.sessions.insert(sid, Session { position: None, alerted: HashSet::new(), tx: tx.clone(), stream });
        sid
    };
    send(&tx, &Message::Hello { version: PROTOCOL_VERSION, agent_id: None });

    for line in lines {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let msg = match Message::parse(&line) {
            Ok(m) => m,
            Err(e) => {
                send(&tx, &Message::Err(e.to_string()));
                break;
            }
        };
        match msg {
            Message::Report(report) => {
                let mut g = inner.lock();
                if report.agent_id != agent {
                    send(&tx, &Message::Err(format!("report from '{}' on session of '{agent}'", report.agent_id)));
                    continue;
                }
                match g.state.apply_report(&report) {
                    Ok(applied) => {
                        let g = &mut *g;
                        if let Some(log) = g.log.as_mut() {
                            let event = g.state.events().last().expect("just applied");
                            if let Err(e) = log.append(event) {
                                eprintln!("event log: {e}");
                            }
                        }
                        if matches!(applied.action, UpdateAction::Created | UpdateAction::Replaced) {
                            g.broadcast(sid, &Alert::from(&applied.record));
                        }
                        g.relocate(sid, report.position);
                        send(&tx, &Message::Ack { id: applied.id, action: applied.action });
                    }
                    Err(e) => send(&tx, &Message::Err(e.to_string())),
                }
            }
            Message::Query { position, radius } => {
                if !(radius > 0.0 && radius.is_finite() && position.iter().all(|v| v.is_finite())) {
                    send(&tx, &Message::Err("query needs a finite position and positive radius".into()));
                    continue;
                }
                let mut g = inner.lock();
                g.relocate(sid, position);
                let found = g.state.query_vicinity(position, radius);
                let mut reply = Message::Records(found.len()).to_string();
                for r in found {
                    reply.push('\n');
                    reply.push_str(&Message::Record(r.clone()).to_string());
                }
                let _ = tx.send(reply);
            }
            Message::Bye => break,
            other => {
                let kind = other.to_string();
                let kind = kind.split(' ').next().unwrap_or_default();
                send(&tx, &Message::Err(format!("agents may not send {kind}")));
                break;
            }
        }
    }

    inner.lock().sessions.remove(&sid);
    drop(tx);
    let _ = writer.join();
    let _ = ctl.shutdown(Shutdown::Both);
}
