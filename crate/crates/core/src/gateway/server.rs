use std::collections::BTreeMap;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_channel::{bounded, unbounded, Receiver, Sender, TryRecvError, TrySendError};
use thiserror::Error;

use super::wire::{read_message, write_message, Message, RejectReason, WireError};
use crate::ecs::{InputBatches, PlayerInput, TickReport};
use crate::error::EngineError;
use crate::scenario::Scenario;
use crate::session::{EndReason, Engine};
use crate::storage::PlayerId;

pub type ConnId = u64;

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub listen: String,
    pub max_connections: usize,
    /// Unapplied messages a connection may have queued; one more closes it.
    pub queue_depth: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:0".into(),
            max_connections: 64,
            queue_depth: 1024,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("connection {0} has not joined")]
    NotJoined(ConnId),
    #[error("connection {0}: {1}")]
    Protocol(ConnId, String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputEvent {
    pub name: String,
    pub payload: Vec<u8>,
    pub client_seq: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GatewayStats {
    pub accepted: u64,
    pub joins: u64,
    pub rejects: u64,
    pub inputs_accepted: u64,
    pub frames_sent: u64,
    pub engine_down_sent: u64,
}

enum Outbound {
    Msg(Message),
    Close,
}

struct Registration {
    id: ConnId,
    inbound: Receiver<Message>,
    outbound: Sender<Outbound>,
    reader_done: Arc<AtomicBool>,
}

struct Conn {
    inbound: Receiver<Message>,
    outbound: Sender<Outbound>,
    reader_done: Arc<AtomicBool>,
    player: Option<PlayerId>,
    last_seq: Option<u64>,
}

/// TCP front-end for one engine.
///
/// Connection threads only parse and queue; every engine mutation happens in
/// [`Gateway::tick`], on the caller's thread, at the tick boundary.
pub struct Gateway {
    engine: Engine,
    scenario: Scenario,
    conns: BTreeMap<ConnId, Conn>,
    registrations: Receiver<Registration>,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    local_addr: SocketAddr,
    next_ordinal: u64,
    pending: InputBatches,
    stats: GatewayStats,
}

fn spawn_connection(id: ConnId, stream: TcpStream, depth: usize, live: Arc<AtomicUsize>) -> io::Result<Registration> {
    stream.set_nodelay(true)?;
    let read_half = stream.try_clone()?;
    let (in_tx, in_rx) = bounded(depth);
    let (out_tx, out_rx) = unbounded::<Outbound>();
    let reader_done = Arc::new(AtomicBool::new(false));

    thread::Builder::new().name(format!("conn-{id}-write")).spawn(move || {
        let mut w = BufWriter::new(&stream);
        for out in out_rx {
            let Outbound::Msg(m) = out else { break };
            if write_message(&mut w, &m).and_then(|()| w.flush()).is_err() {
                break;
            }
        }
        let _ = w.flush();
        drop(w);
        let _ = stream.shutdown(Shutdown::Both);
        live.fetch_sub(1, Ordering::SeqCst);
    })?;

    let done = Arc::clone(&reader_done);
    let out = out_tx.clone();
    thread::Builder::new().name(format!("conn-{id}-read")).spawn(move || {
        let mut r = BufReader::new(read_half);
        loop {
            match read_message(&mut r) {
                Ok(Some(m)) => match in_tx.try_send(m) {
                    Ok(()) => {}
                    Err(TrySendError::Full(_)) => {
                        log::warn!("connection {id}: input queue overflow, closing");
                        let _ = out.send(Outbound::Close);
                        break;
                    }
                    Err(TrySendError::Disconnected(_)) => break,
                },
                Ok(None) | Err(WireError::Io(_)) => break,
                Err(e) => {
                    log::info!("connection {id}: {e}");
                    let _ = out.send(Outbound::Msg(Message::reject(RejectReason::Protocol)));
                    let _ = out.send(Outbound::Close);
                    break;
                }
            }
        }
        done.store(true, Ordering::SeqCst);
    })?;

    Ok(Registration {
        id,
        inbound: in_rx,
        outbound: out_tx,
        reader_done,
    })
}

fn accept_loop(
    listener: TcpListener,
    config: GatewayConfig,
    stop: Arc<AtomicBool>,
    registrations: Sender<Registration>,
) {
    let live = Arc::new(AtomicUsize::new(0));
    let mut next_id = 0;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                if stream.set_nonblocking(false).is_err() {
                    continue;
                }
                if live.load(Ordering::SeqCst) >= config.max_connections {
                    log::warn!("refusing {peer}: connection limit reached");
                    let mut s = stream;
                    let _ = write_message(&mut s, &Message::reject(RejectReason::ServerFull));
                    let _ = s.shutdown(Shutdown::Both);
                    continue;
                }
                live.fetch_add(1, Ordering::SeqCst);
                match spawn_connection(next_id, stream, config.queue_depth, Arc::clone(&live)) {
                    Ok(reg) => {
                        log::debug!("connection {next_id} from {peer}");
                        next_id += 1;
                        if registrations.send(reg).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        live.fetch_sub(1, Ordering::SeqCst);
                        log::error!("cannot start connection threads: {e}");
                    }
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(1)),
            Err(e) => {
                log::error!("accept failed: {e}");
                thread::sleep(Duration::from_millis(10));
            }
        }
    }
}

impl Gateway {
    /// Binds the listener and starts accepting. The engine is built from the
    /// scenario; joining players get its profiles in join order.
    pub fn serve(scenario: Scenario, config: GatewayConfig) -> Result<Self, GatewayError> {
        let addr = config.listen.clone();
        let bind_err = |source| GatewayError::Bind {
            addr: addr.clone(),
            source,
        };
        let listener = TcpListener::bind(&config.listen).map_err(bind_err)?;
        listener.set_nonblocking(true).map_err(bind_err)?;
        let local_addr = listener.local_addr().map_err(bind_err)?;
        let stop = Arc::new(AtomicBool::new(false));
        let (reg_tx, reg_rx) = unbounded();
        let acceptor = {
            let stop = Arc::clone(&stop);
            thread::Builder::new()
                .name("gateway-accept".into())
                .spawn(move || accept_loop(listener, config, stop, reg_tx))
                .map_err(bind_err)?
        };
        log::info!("gateway listening on {local_addr}");
        Ok(Self {
            engine: scenario.build_engine(),
            scenario,
            conns: BTreeMap::new(),
            registrations: reg_rx,
            stop,
            acceptor: Some(acceptor),
            local_addr,
            next_ordinal: 0,
            pending: InputBatches::new(),
            stats: GatewayStats::default(),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn stats(&self) -> GatewayStats {
        self.stats
    }

    /// Connections registered with the tick thread so far.
    pub fn connections(&self) -> usize {
        self.conns.len()
    }

    pub fn player_of(&self, conn: ConnId) -> Option<PlayerId> {
        self.conns.get(&conn).and_then(|c| c.player)
    }

    fn accept_registrations(&mut self) {
        while let Ok(reg) = self.registrations.try_recv() {
            self.stats.accepted += 1;
            self.conns.insert(
                reg.id,
                Conn {
                    inbound: reg.inbound,
                    outbound: reg.outbound,
                    reader_done: reg.reader_done,
                    player: None,
                    last_seq: None,
                },
            );
        }
    }

    /// Waits until `n` connections are registered or `timeout` passes.
    pub fn wait_for_connections(&mut self, n: usize, timeout: Duration) -> bool {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            self.accept_registrations();
            if self.conns.len() >= n {
                return true;
            }
            if std::time::Instant::now() >= deadline {
                return false;
            }
            thread::sleep(Duration::from_millis(1));
        }
    }

    fn send(&mut self, conn: ConnId, m: Message) {
        if let Some(c) = self.conns.get(&conn) {
            if matches!(m, Message::Reject { .. }) {
                self.stats.rejects += 1;
            }
            let _ = c.outbound.send(Outbound::Msg(m));
        }
    }

    /// Ends the connection's session, if any, and closes it.
    fn close(&mut self, conn: ConnId, reason: EndReason) {
        let Some(c) = self.conns.remove(&conn) else {
            return;
        };
        if let Some(p) = c.player {
            self.pending.remove(&p);
            if let Err(e) = self.engine.end_session(p, reason) {
                log::debug!("connection {conn}: {e}");
            }
        }
        let _ = c.outbound.send(Outbound::Close);
    }

    fn on_join(&mut self, conn: ConnId) {
        if self.conns[&conn].player.is_some() {
            self.send(conn, Message::reject(RejectReason::Duplicate));
            return;
        }
        let profile = self.scenario.player_profile(self.next_ordinal);
        match self.engine.join(&profile) {
            Ok(session) => {
                self.next_ordinal += 1;
                self.stats.joins += 1;
                self.conns.get_mut(&conn).expect("live").player = Some(session.player);
                self.send(
                    conn,
                    Message::JoinAck {
                        player: session.player.0,
                    },
                );
            }
            Err(EngineError::CapacityExceeded {
                predicted_ms,
                budget_ms,
            }) => self.send(
                conn,
                Message::Reject {
                    reason: RejectReason::Capacity,
                    predicted_ms,
                    budget_ms,
                },
            ),
            Err(EngineError::EngineDown(_)) => self.send(conn, Message::reject(RejectReason::EngineDown)),
            Err(e) => {
                log::error!("join failed: {e}");
                self.send(conn, Message::reject(RejectReason::Capacity));
            }
        }
    }

    /// Queues an input as a local event of the connection's player for the
    /// next engine tick.
    pub fn on_input(&mut self, conn: ConnId, input: InputEvent) -> Result<(), GatewayError> {
        let c = self.conns.get_mut(&conn).ok_or(GatewayError::NotJoined(conn))?;
        let player = c.player.ok_or(GatewayError::NotJoined(conn))?;
        if c.last_seq.is_some_and(|last| input.client_seq <= last) {
            return Err(GatewayError::Protocol(
                conn,
                format!("client sequence {} is not increasing", input.client_seq),
            ));
        }
        c.last_seq = Some(input.client_seq);
        self.pending
            .entry(player)
            .or_default()
            .push(PlayerInput::new(input.name, input.payload));
        self.stats.inputs_accepted += 1;
        Ok(())
    }

    fn handle(&mut self, conn: ConnId, m: Message) -> bool {
        match m {
            Message::Join => self.on_join(conn),
            Message::Input {
                client_seq,
                name,
                payload,
            } => match self.on_input(
                conn,
                InputEvent {
                    name,
                    payload,
                    client_seq,
                },
            ) {
                Ok(()) => {}
                Err(GatewayError::NotJoined(_)) => self.send(conn, Message::reject(RejectReason::NotJoined)),
                Err(e) => {
                    log::info!("{e}");
                    self.send(conn, Message::reject(RejectReason::Protocol));
                    return false;
                }
            },
            Message::Leave => match self.conns[&conn].player {
                Some(p) => {
                    self.pending.remove(&p);
                    let _ = self.engine.leave(p);
                    self.conns.get_mut(&conn).expect("live").player = None;
                }
                None => self.send(conn, Message::reject(RejectReason::NotJoined)),
            },
            // server-to-client messages are not valid requests
            _ => {
                self.send(conn, Message::reject(RejectReason::Protocol));
                return false;
            }
        }
        true
    }

    /// Applies everything received since the last tick, advances the engine
    /// one tick and sends each joined connection its own frame.
    pub fn tick(&mut self) -> TickReport {
        self.accept_registrations();
        let ids: Vec<ConnId> = self.conns.keys().copied().collect();
        for id in ids {
            let done = self.conns[&id].reader_done.load(Ordering::SeqCst);
            while let Some(c) = self.conns.get(&id) {
                match c.inbound.try_recv() {
                    Ok(m) => {
                        if !self.handle(id, m) {
                            self.close(id, EndReason::Disconnected);
                        }
                    }
                    Err(TryRecvError::Empty) => {
                        if done {
                            self.close(id, EndReason::Disconnected);
                        }
                        break;
                    }
                    Err(TryRecvError::Disconnected) => {
                        self.close(id, EndReason::Disconnected);
                        break;
                    }
                }
            }
        }

        if !self.engine.is_down() {
            let tick = self.engine.world().tick_count();
            for (name, payload) in self.scenario.global_events_at(tick) {
                let _ = self.engine.emit_global(name, payload);
            }
        }
        let inputs = std::mem::take(&mut self.pending);
        let report = self.engine.tick(&inputs);
        self.broadcast_frames(&report);
        report
    }

    /// Sends each joined connection a FRAME with its own digest. Connections
    /// whose writer is gone are dropped and their players leave.
    pub fn broadcast_frames(&mut self, report: &TickReport) {
        let mut dead = Vec::new();
        for (&id, c) in &self.conns {
            let Some(p) = c.player else { continue };
            let Some(digest) = report.digest_for(p) else { continue };
            let frame = Message::Frame {
                tick: report.tick,
                digest,
                tick_model_ms: report.model_ms(),
            };
            if c.outbound.send(Outbound::Msg(frame)).is_err() {
                dead.push(id);
            } else {
                self.stats.frames_sent += 1;
            }
        }
        for id in dead {
            self.close(id, EndReason::Disconnected);
        }
    }

    /// Fate-sharing: the engine goes down, every connection is told so and
    /// closed. Returns how many ENGINE_DOWN messages were sent.
    pub fn terminate(&mut self, reason: &str) -> usize {
        self.accept_registrations();
        self.engine.terminate_engine(reason);
        let conns = std::mem::take(&mut self.conns);
        self.pending.clear();
        for c in conns.values() {
            let _ = c.outbound.send(Outbound::Msg(Message::EngineDown {
                reason: reason.to_string(),
            }));
            let _ = c.outbound.send(Outbound::Close);
        }
        self.stats.engine_down_sent += conns.len() as u64;
        conns.len()
    }

    /// Stops accepting and closes every connection without ending the engine.
    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        let ids: Vec<ConnId> = self.conns.keys().copied().collect();
        for id in ids {
            self.close(id, EndReason::Disconnected);
        }
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        self.shutdown();
    }
}
