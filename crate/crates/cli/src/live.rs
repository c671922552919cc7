//! Live data/service layer: UAV channels over TCP (framed codec), UI clients
//! over websocket, one actor owning the service state.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io;
use std::net::SocketAddr;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::sleep_until;
use tokio_tungstenite::tungstenite::Message as WsMessage;
use unet::dpsl::{ClientId, ClientMsg, ConnId, DpslCounters, DpslService, Effect, RosterEntry};
use unet::harness::{EventKind, Scenario, UavSpec};
use unet::link::Mobility;
use unet::message::{encode, AckMessage, ChannelKind, FrameReader, Message};
use unet::time::{from_secs, Nanos, MS};
use unet::uav::{ClientAction, FlightState, GcsClient, TopicSchedule, UavNode};

pub const DEFAULT_BRIDGE_PORT: u16 = 9090;
pub const DEFAULT_UAV_PORT: u16 = 9091;
const IDLE_TICK: Duration = Duration::from_millis(100);

#[derive(Clone, Debug)]
pub struct LiveConfig {
    pub listen_uav: SocketAddr,
    pub listen_bridge: SocketAddr,
    /// Fleet to simulate against the UAV listener.
    pub scenario: Option<Scenario>,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            listen_uav: SocketAddr::from(([0, 0, 0, 0], DEFAULT_UAV_PORT)),
            listen_bridge: SocketAddr::from(([0, 0, 0, 0], DEFAULT_BRIDGE_PORT)),
            scenario: None,
        }
    }
}

/// Monotonic service time since start.
#[derive(Clone, Copy, Debug)]
struct Clock(Instant);

impl Clock {
    fn now(&self) -> Nanos {
        self.0.elapsed().as_nanos() as Nanos
    }

    fn at(&self, t: Nanos) -> tokio::time::Instant {
        (self.0 + Duration::from_nanos(t)).into()
    }
}

enum Cmd {
    ClientOpen(mpsc::UnboundedSender<String>, oneshot::Sender<ClientId>),
    Client(ClientId, ClientMsg),
    ClientClose(ClientId),
    UavOpen(mpsc::UnboundedSender<Message>, oneshot::Sender<ConnId>),
    UavFrame(ConnId, Message),
    UavClose(ConnId),
    Query(oneshot::Sender<(DpslCounters, Vec<RosterEntry>)>),
}

pub struct Server {
    pub uav_addr: SocketAddr,
    pub bridge_addr: SocketAddr,
    tx: mpsc::UnboundedSender<Cmd>,
    tasks: Vec<JoinHandle<()>>,
}

impl Server {
    pub async fn counters(&self) -> Option<DpslCounters> {
        self.query().await.map(|q| q.0)
    }

    pub async fn roster(&self) -> Option<Vec<RosterEntry>> {
        self.query().await.map(|q| q.1)
    }

    async fn query(&self) -> Option<(DpslCounters, Vec<RosterEntry>)> {
        let (tx, rx) = oneshot::channel();
        self.tx.send(Cmd::Query(tx)).ok()?;
        rx.await.ok()
    }

    /// Runs until every listener stops.
    pub async fn join(mut self) {
        for t in self.tasks.drain(..) {
            let _ = t.await;
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

pub async fn start(cfg: LiveConfig) -> io::Result<Server> {
    let uav_l = TcpListener::bind(cfg.listen_uav).await?;
    let bridge_l = TcpListener::bind(cfg.listen_bridge).await?;
    let uav_addr = uav_l.local_addr()?;
    let bridge_addr = bridge_l.local_addr()?;
    let clock = Clock(Instant::now());
    let (tx, rx) = mpsc::unbounded_channel();
    let mut tasks = vec![
        tokio::spawn(actor(rx, clock)),
        tokio::spawn(accept_uavs(uav_l, tx.clone())),
        tokio::spawn(accept_bridge(bridge_l, tx.clone())),
    ];
    if let Some(s) = &cfg.scenario {
        tasks.extend(spawn_fleet(s, uav_addr, clock));
    }
    log::info!("UAV channels on {uav_addr}, bridge on ws://{bridge_addr}");
    Ok(Server { uav_addr, bridge_addr, tx, tasks })
}

async fn actor(mut rx: mpsc::UnboundedReceiver<Cmd>, clock: Clock) {
    let mut svc = DpslService::new();
    let mut clients: HashMap<ClientId, mpsc::UnboundedSender<String>> = HashMap::new();
    let mut uavs: HashMap<ConnId, mpsc::UnboundedSender<Message>> = HashMap::new();
    let mut next_conn: ConnId = 1;
    loop {
        let idle = tokio::time::Instant::now() + IDLE_TICK;
        let wake = svc.next_deadline().map_or(idle, |d| clock.at(d).min(idle));
        let effects = tokio::select! {
            cmd = rx.recv() => {
                let Some(cmd) = cmd else { break };
                let now = clock.now();
                match cmd {
                    Cmd::ClientOpen(out, reply) => {
                        let (id, eff) = svc.connect_client();
                        clients.insert(id, out);
                        let _ = reply.send(id);
                        eff
                    }
                    Cmd::Client(id, m) => svc.on_client(id, m, now),
                    Cmd::ClientClose(id) => {
                        svc.disconnect_client(id);
                        clients.remove(&id);
                        Vec::new()
                    }
                    Cmd::UavOpen(out, reply) => {
                        uavs.insert(next_conn, out);
                        let _ = reply.send(next_conn);
                        next_conn += 1;
                        Vec::new()
                    }
                    Cmd::UavFrame(conn, msg) => match msg {
                        Message::Identify(id) => {
                            let (r, eff) = svc.on_identify(conn, &id, now);
                            if !r.accepted {
                                log::warn!("conn {conn}: {}", r.reason.as_deref().unwrap_or("identify rejected"));
                            }
                            if let Some(out) = uavs.get(&conn) {
                                let _ = out.send(Message::IdentifyReply(r));
                            }
                            eff
                        }
                        Message::Topic(t) => svc.on_topic(conn, &t, now),
                        Message::Ack(a) => svc.on_ack(conn, &a, now),
                        other => {
                            log::debug!("conn {conn}: ignoring {} frame", other.kind_name());
                            Vec::new()
                        }
                    },
                    Cmd::UavClose(conn) => {
                        uavs.remove(&conn);
                        svc.on_disconnect(conn, now)
                    }
                    Cmd::Query(reply) => {
                        let _ = reply.send((svc.counters(), svc.roster()));
                        Vec::new()
                    }
                }
            }
            _ = sleep_until(wake) => svc.tick(clock.now()),
        };
        for e in effects {
            match e {
                Effect::ToClient(c, m) => {
                    if let Some(out) = clients.get(&c) {
                        let _ = out.send(m.to_json());
                    }
                }
                Effect::ToUav { conn, msg, .. } => {
                    if let Some(out) = uavs.get(&conn) {
                        let _ = out.send(msg);
                    }
                }
            }
        }
    }
}

async fn accept_uavs(l: TcpListener, tx: mpsc::UnboundedSender<Cmd>) {
    loop {
        match l.accept().await {
            Ok((s, peer)) => {
                tokio::spawn(uav_conn(s, peer, tx.clone()));
            }
            Err(e) => log::warn!("UAV accept: {e}"),
        }
    }
}

async fn uav_conn(stream: TcpStream, peer: SocketAddr, tx: mpsc::UnboundedSender<Cmd>) {
    let _ = stream.set_nodelay(true);
    let (mut rd, mut wr) = stream.into_split();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Message>();
    let (id_tx, id_rx) = oneshot::channel();
    if tx.send(Cmd::UavOpen(out_tx, id_tx)).is_err() {
        return;
    }
    let Ok(conn) = id_rx.await else { return };
    let writer = tokio::spawn(async move {
        while let Some(m) = out_rx.recv().await {
            let Ok(bytes) = encode(&m) else { continue };
            if wr.write_all(&bytes).await.is_err() {
                break;
            }
        }
    });
    let mut frames = FrameReader::new();
    let mut buf = vec![0u8; 16 * 1024];
    'read: loop {
        let n = match rd.read(&mut buf).await {
            Ok(0) | Err(_) => break,
            Ok(n) => n,
        };
        frames.push(&buf[..n]);
        loop {
            match frames.next_frame() {
                Ok(Some(m)) => {
                    let _ = tx.send(Cmd::UavFrame(conn, m));
                }
                Ok(None) => break,
                Err(e) => {
                    log::warn!("{peer}: closing channel after bad frame: {e}");
                    break 'read;
                }
            }
        }
    }
    let _ = tx.send(Cmd::UavClose(conn));
    writer.abort();
}

async fn accept_bridge(l: TcpListener, tx: mpsc::UnboundedSender<Cmd>) {
    loop {
        match l.accept().await {
            Ok((s, peer)) => {
                tokio::spawn(bridge_session(s, peer, tx.clone()));
            }
            Err(e) => log::warn!("bridge accept: {e}"),
        }
    }
}

async fn bridge_session(stream: TcpStream, peer: SocketAddr, tx: mpsc::UnboundedSender<Cmd>) {
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            log::warn!("{peer}: websocket handshake failed: {e}");
            return;
        }
    };
    let (mut sink, mut source) = ws.split();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<String>();
    let (id_tx, id_rx) = oneshot::channel();
    if tx.send(Cmd::ClientOpen(out_tx, id_tx)).is_err() {
        return;
    }
    let Ok(id) = id_rx.await else { return };
    let writer = tokio::spawn(async move {
        while let Some(text) = out_rx.recv().await {
            if sink.send(WsMessage::Text(text)).await.is_err() {
                break;
            }
        }
    });
    while let Some(frame) = source.next().await {
        match frame {
            Ok(WsMessage::Text(t)) => match ClientMsg::parse(&t) {
                Ok(m) => {
                    let _ = tx.send(Cmd::Client(id, m));
                }
                Err(e) => log::warn!("{peer}: ignoring malformed bridge message: {e}"),
            },
            Ok(WsMessage::Close(_)) | Err(_) => break,
            Ok(WsMessage::Binary(_)) => log::warn!("{peer}: ignoring binary bridge message"),
            Ok(_) => {}
        }
    }
    let _ = tx.send(Cmd::ClientClose(id));
    writer.abort();
}

fn spawn_fleet(s: &Scenario, addr: SocketAddr, clock: Clock) -> Vec<JoinHandle<()>> {
    for e in &s.events {
        if !matches!(e.kind, EventKind::FailNode { .. } | EventKind::RecoverNode { .. }) {
            log::info!("live mode ignores scripted {:?} at {} s", e.kind, e.at_s);
        }
    }
    s.uavs
        .iter()
        .map(|u| {
            let mut outages: Vec<(Nanos, bool)> = s
                .events
                .iter()
                .filter_map(|e| match &e.kind {
                    EventKind::FailNode { node } if *node == u.id => Some((from_secs(e.at_s), false)),
                    EventKind::RecoverNode { node } if *node == u.id => Some((from_secs(e.at_s), true)),
                    _ => None,
                })
                .collect();
            outages.sort_by_key(|o| o.0);
            let sim = SimUav {
                spec: u.clone(),
                hz: u.topic_hz.unwrap_or(s.topic_hz),
                addr,
                clock,
                outages,
                end: s.duration(),
                session: s.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ u64::from(u.id.index) | 1,
            };
            tokio::spawn(sim.run())
        })
        .collect()
}

/// A simulated UAV that talks to the service over real sockets.
struct SimUav {
    spec: UavSpec,
    hz: f64,
    addr: SocketAddr,
    clock: Clock,
    /// (time, up) changes from the script.
    outages: Vec<(Nanos, bool)>,
    end: Nanos,
    session: u64,
}

type Inbound = (ChannelKind, u64, Option<Message>);

impl SimUav {
    fn up_at(&self, t: Nanos) -> bool {
        self.outages.iter().take_while(|o| o.0 <= t).last().is_none_or(|o| o.1)
    }

    async fn run(self) {
        let start = from_secs(self.spec.join_at_s);
        sleep_until(self.clock.at(start)).await;
        let u = &self.spec;
        let state = if !u.waypoints.is_empty() {
            FlightState::flying(Mobility::with_path(u.position, u.waypoints.clone(), u.speed_mps), u.battery_v)
        } else if u.position[2] > 0.0 {
            FlightState::flying(Mobility::fixed(u.position), u.battery_v)
        } else {
            FlightState::on_ground(u.position, u.battery_v)
        };
        let mut node = UavNode::new(u.id, state, TopicSchedule::standard(self.hz), Default::default(), start);
        let mut client = GcsClient::new(u.id, self.session);
        let (in_tx, mut in_rx) = mpsc::unbounded_channel::<Inbound>();
        let mut chans: BTreeMap<ChannelKind, (u64, mpsc::UnboundedSender<Message>)> = BTreeMap::new();
        let mut gen = 0u64;
        let mut acks: VecDeque<(Nanos, AckMessage)> = VecDeque::new();
        let mut work: VecDeque<ClientAction> = VecDeque::new();
        loop {
            let now = self.clock.now();
            if now >= self.end {
                break;
            }
            let up = self.up_at(now);
            let topics = node.autopilot_step(now);
            if up {
                work.extend(topics.into_iter().filter_map(|t| client.publish(t)));
                work.extend(client.poll(now));
                while acks.front().is_some_and(|a| a.0 <= now) {
                    let (_, ack) = acks.pop_front().unwrap();
                    work.push_back(ClientAction::Send(ChannelKind::Service, Message::Ack(ack)));
                }
            } else if !chans.is_empty() {
                for kind in std::mem::take(&mut chans).into_keys() {
                    client.on_transport_down(kind, now);
                }
                acks.clear();
            }
            while let Some(a) = work.pop_front() {
                match a {
                    ClientAction::Connect(kind) => match TcpStream::connect(self.addr).await {
                        Ok(s) => {
                            gen += 1;
                            chans.insert(kind, (gen, open_channel(s, kind, gen, in_tx.clone())));
                            work.extend(client.on_transport_up(kind));
                        }
                        Err(e) => {
                            log::debug!("{}: connect failed: {e}", u.id);
                            client.on_transport_down(kind, now);
                        }
                    },
                    ClientAction::Send(kind, msg) => {
                        let sent = chans.get(&kind).is_some_and(|c| c.1.send(msg).is_ok());
                        if !sent {
                            chans.remove(&kind);
                            client.on_transport_down(kind, now);
                        }
                    }
                }
            }

            let mut wake = node.next_due().min(self.end);
            if up {
                if let Some(r) = client.next_retry() {
                    wake = wake.min(r.max(now + MS));
                }
                if let Some(a) = acks.front() {
                    wake = wake.min(a.0);
                }
            }
            if let Some(o) = self.outages.iter().find(|o| o.0 > now) {
                wake = wake.min(o.0);
            }
            tokio::select! {
                ev = in_rx.recv() => {
                    let Some((kind, g, msg)) = ev else { break };
                    if chans.get(&kind).map(|c| c.0) != Some(g) {
                        continue;
                    }
                    let now = self.clock.now();
                    match msg {
                        None => {
                            chans.remove(&kind);
                            client.on_transport_down(kind, now);
                        }
                        Some(Message::IdentifyReply(r)) => {
                            for (topic, seq) in &r.resume_seq {
                                node.resume_after(topic, *seq);
                            }
                            work.extend(client.on_identify_reply(&r));
                        }
                        Some(Message::Service(req)) => {
                            let ack = node.handle_service(&req, now);
                            acks.push_back((now + node.config.state_change_ms * MS, ack));
                        }
                        Some(other) => log::debug!("{}: ignoring {} frame", u.id, other.kind_name()),
                    }
                }
                _ = sleep_until(self.clock.at(wake)) => {}
            }
        }
        log::info!("{} finished its scenario", u.id);
    }
}

fn open_channel(
    stream: TcpStream,
    kind: ChannelKind,
    gen: u64,
    inbound: mpsc::UnboundedSender<Inbound>,
) -> mpsc::UnboundedSender<Message> {
    let _ = stream.set_nodelay(true);
    let (mut rd, mut wr) = stream.into_split();
    let (tx, mut rx) = mpsc::unbounded_channel::<Message>();
    tokio::spawn(async move {
        while let Some(m) = rx.recv().await {
            let Ok(bytes) = encode(&m) else { continue };
            if wr.write_all(&bytes).await.is_err() {
                break;
            }
        }
    });
    tokio::spawn(async move {
        let mut frames = FrameReader::new();
        let mut buf = vec![0u8; 16 * 1024];
        'read: while let Ok(n) = rd.read(&mut buf).await {
            if n == 0 {
                break;
            }
            frames.push(&buf[..n]);
            while let Ok(Some(m)) = frames.next_frame() {
                if inbound.send((kind, gen, Some(m))).is_err() {
                    break 'read;
                }
            }
        }
        let _ = inbound.send((kind, gen, None));
    });
    tx
}
