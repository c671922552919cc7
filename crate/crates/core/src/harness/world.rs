//! Whole-system discrete-event simulation: UAVs with their autopilot, GCS
//! client, mesh router and topic directory; gateways with routing and the
//! forwarder; the data/service layer behind a LAN.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{Ipv4Addr, SocketAddrV4};

use rand::Rng;
use serde::Serialize;

use super::metrics::{bin_sums, Metric, MetricsRecord};
use super::scenario::{EventKind, Scenario};
use super::ScenarioError;
use crate::dpsl::{ClientId, ConnId, DpslCounters, DpslService, Effect, RosterEntry, ServerMsg};
use crate::gateway::{
    Egress, ForwarderParams, Gateway, GatewayConfig, GatewayView, HandoverDetector, InterfaceConfig, Translated,
    UplinkConfig, UplinkKind,
};
use crate::link::{EventQueue, LinkProfile, Mobility, Network, TxMode};
use crate::mesh::{MeshRouter, HELLO_PERIOD};
use crate::message::{frame_len, AckMessage, ChannelKind, Message, NodeId, NodeKind, TopicAdvertisement};
use crate::time::{from_secs, to_ms, to_ms_f64, Nanos, MS, SEC};
use crate::uav::{ClientAction, FlightState, GcsClient, TopicDirectory, TopicSchedule, UavNode, DEFAULT_SYNC_PERIOD};

/// Link-layer header added to every frame on every hop.
pub const HOP_HEADER: usize = 20;
/// Size of a transport open/accept segment.
pub const HANDSHAKE_BYTES: usize = 40;
const DPSL: NodeId = NodeId::dpsl(0);
const DPSL_TICK: Nanos = 100 * MS;

#[derive(Clone, Debug)]
enum Body {
    Msg(Message),
    Open,
    Accept,
}

#[derive(Clone, Debug)]
struct Packet {
    dst: NodeId,
    /// Gateway the logical connection runs through.
    via: NodeId,
    conn: ConnId,
    body: Body,
}

impl Packet {
    fn bytes(&self) -> usize {
        match &self.body {
            Body::Msg(m) => frame_len(m).unwrap_or(usize::MAX),
            Body::Open | Body::Accept => HANDSHAKE_BYTES,
        }
    }
}

#[derive(Clone, Debug)]
enum Ev {
    Script(usize),
    Join(NodeId),
    Uav(NodeId, u64),
    Hello(NodeId),
    AdvSync(NodeId),
    Arrive { at: NodeId, from: NodeId, pkt: Packet },
    Mesh { at: NodeId, from: NodeId, msg: Message },
    AckReady { uav: NodeId, conn: ConnId, ack: AckMessage },
    GwAdvance(NodeId),
    DpslTick,
}

/// Kind of bytes on the gateway's swarm-facing links.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TrafficClass {
    /// Topics, service requests and acks.
    Data,
    /// Beacons, joins, advertisements and channel set-up.
    Control,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TrafficSample {
    pub at: Nanos,
    pub bytes: usize,
    pub class: TrafficClass,
}

struct UavAgent {
    node: UavNode,
    client: GcsClient,
    router: MeshRouter,
    dir: TopicDirectory,
    detector: HandoverDetector,
    gateway: Option<NodeId>,
    conns: BTreeMap<ChannelKind, ConnId>,
    active: bool,
    failed: bool,
    tick_gen: u64,
    join_seq: u64,
}

struct GatewayAgent {
    router: MeshRouter,
    gw: Gateway<Packet>,
    /// Topics seen per UAV, from forwarded traffic.
    known: BTreeMap<NodeId, BTreeSet<String>>,
    failed: bool,
    advance_pending: bool,
}

#[derive(Clone, Copy, Debug)]
struct ConnInfo {
    uav: NodeId,
    kind: ChannelKind,
}

#[derive(Clone, Debug, Serialize)]
pub struct CommandOutcome {
    pub target: NodeId,
    pub service: String,
    pub issued_at_ms: f64,
    pub status: String,
    pub acked_at_ms: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct WorldReport {
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    pub roster: Vec<RosterEntry>,
    pub commands: Vec<CommandOutcome>,
    pub topics_stored: u64,
    pub handovers: u64,
    #[serde(skip)]
    pub counters: DpslCounters,
    #[serde(skip)]
    pub traffic: Vec<TrafficSample>,
    /// (stored at, publisher, topic, seq, sent_at ms)
    #[serde(skip)]
    pub topic_log: Vec<(Nanos, NodeId, String, u64, u64)>,
    #[serde(skip)]
    pub metrics: Vec<MetricsRecord>,
}

pub struct World {
    scenario: Scenario,
    q: EventQueue<Ev>,
    net: Network,
    uavs: BTreeMap<NodeId, UavAgent>,
    gateways: BTreeMap<NodeId, GatewayAgent>,
    dpsl: DpslService,
    gcs: ClientId,
    conns: BTreeMap<ConnId, ConnInfo>,
    next_conn: ConnId,
    /// client_ref -> index into `commands`.
    calls: BTreeMap<u64, usize>,
    commands: Vec<CommandOutcome>,
    traffic: Vec<TrafficSample>,
    topic_log: Vec<(Nanos, NodeId, String, u64, u64)>,
    pdd: Vec<(Nanos, f64)>,
    handovers: u64,
    /// Gateways send a joining UAV the advertisements they know of.
    pub adverts_on_join: bool,
}

fn gateway_config(profile: &str) -> GatewayConfig {
    GatewayConfig::new(
        vec![InterfaceConfig {
            name: "mesh0".into(),
            profile: profile.into(),
            address: Ipv4Addr::new(10, 0, 1, 1),
            netmask: Ipv4Addr::new(255, 255, 255, 0),
            dns: None,
        }],
        UplinkConfig {
            kind: UplinkKind::Lan,
            address: Ipv4Addr::new(192, 168, 1, 2),
            netmask: Ipv4Addr::new(255, 255, 255, 0),
        },
    )
}

fn inner_addr(uav: NodeId, kind: ChannelKind) -> SocketAddrV4 {
    let port = match kind {
        ChannelKind::Topic => 5000,
        ChannelKind::Service => 5001,
    };
    SocketAddrV4::new(Ipv4Addr::new(10, 0, 1, (uav.index % 250) as u8 + 2), port)
}

fn class_of(body: &Body) -> TrafficClass {
    match body {
        Body::Msg(Message::Topic(_) | Message::Service(_) | Message::Ack(_)) => TrafficClass::Data,
        _ => TrafficClass::Control,
    }
}

impl World {
    pub fn new(scenario: &Scenario) -> Result<World, ScenarioError> {
        scenario.validate()?;
        let mesh = scenario.profile(&scenario.mesh_profile)?;
        let lan = scenario.profile(&scenario.lan_profile)?;
        let mut q = EventQueue::new(scenario.seed);
        let mut net = Network::new();
        net.set_position(DPSL, [0.0; 3]);

        let mut gateways = BTreeMap::new();
        let mut gw_profiles: BTreeMap<NodeId, LinkProfile> = BTreeMap::new();
        for g in &scenario.gateways {
            let pname = g.profile.clone().unwrap_or_else(|| scenario.mesh_profile.clone());
            gw_profiles.insert(g.id, scenario.profile(&pname)?);
            net.set_position(g.id, g.position);
            net.attach_link(g.id, DPSL, lan.clone()).expect("fresh pair");
            let mut gw = Gateway::new(gateway_config(&pname), ForwarderParams::new(lan.clone()));
            gw.keep_records(false);
            gw.configure().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            gateways.insert(
                g.id,
                GatewayAgent {
                    router: MeshRouter::new(g.id),
                    gw,
                    known: BTreeMap::new(),
                    failed: false,
                    advance_pending: false,
                },
            );
            let phase = q.rng().gen_range(0..HELLO_PERIOD);
            q.schedule(phase, Ev::Hello(g.id));
        }

        let mut uavs = BTreeMap::new();
        for u in &scenario.uavs {
            let state = if !u.waypoints.is_empty() {
                FlightState::flying(Mobility::with_path(u.position, u.waypoints.clone(), u.speed_mps), u.battery_v)
            } else if u.position[2] > 0.0 {
                FlightState::flying(Mobility::fixed(u.position), u.battery_v)
            } else {
                FlightState::on_ground(u.position, u.battery_v)
            };
            let join = from_secs(u.join_at_s);
            let schedule = TopicSchedule::standard(u.topic_hz.unwrap_or(scenario.topic_hz));
            let node = UavNode::new(u.id, state, schedule, Default::default(), join);
            let session = q.rng().gen::<u64>() | 1;
            let dir = TopicDirectory::new(u.id, node.topic_names(), DEFAULT_SYNC_PERIOD);
            net.set_position(u.id, u.position);
            for (g, p) in &gw_profiles {
                net.attach_link(u.id, *g, p.clone()).expect("fresh pair");
            }
            uavs.insert(
                u.id,
                UavAgent {
                    node,
                    client: GcsClient::new(u.id, session),
                    router: MeshRouter::new(u.id),
                    dir,
                    detector: HandoverDetector::default(),
                    gateway: None,
                    conns: BTreeMap::new(),
                    active: false,
                    failed: false,
                    tick_gen: 0,
                    join_seq: 0,
                },
            );
            q.schedule(join, Ev::Join(u.id));
        }
        let ids: Vec<NodeId> = uavs.keys().copied().collect();
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                net.attach_link(*a, *b, mesh.clone()).expect("fresh pair");
            }
        }
        for (i, e) in scenario.events.iter().enumerate() {
            q.schedule(from_secs(e.at_s), Ev::Script(i));
        }
        q.schedule(0, Ev::DpslTick);
        let mut dpsl = DpslService::new();
        let (gcs, _) = dpsl.connect_client();
        Ok(World {
            scenario: scenario.clone(),
            q,
            net,
            uavs,
            gateways,
            dpsl,
            gcs,
            conns: BTreeMap::new(),
            next_conn: 1,
            calls: BTreeMap::new(),
            commands: Vec::new(),
            traffic: Vec::new(),
            topic_log: Vec::new(),
            pdd: Vec::new(),
            handovers: 0,
            adverts_on_join: true,
        })
    }

    pub fn now(&self) -> Nanos {
        self.q.now()
    }

    pub fn dpsl(&self) -> &DpslService {
        &self.dpsl
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn router(&self, node: NodeId) -> Option<&MeshRouter> {
        match node.kind {
            NodeKind::Uav => self.uavs.get(&node).map(|u| &u.router),
            NodeKind::Gateway => self.gateways.get(&node).map(|g| &g.router),
            _ => None,
        }
    }

    pub fn uav(&self, id: NodeId) -> Option<&UavNode> {
        self.uavs.get(&id).map(|u| &u.node)
    }

    pub fn uav_gateway(&self, id: NodeId) -> Option<NodeId> {
        self.uavs.get(&id).and_then(|u| u.gateway)
    }

    pub fn client(&self, id: NodeId) -> Option<&GcsClient> {
        self.uavs.get(&id).map(|u| &u.client)
    }

    pub fn traffic(&self) -> &[TrafficSample] {
        &self.traffic
    }

    /// Runs until `until` (inclusive).
    pub fn run_until(&mut self, until: Nanos) {
        while let Some((now, ev)) = self.q.pop_until(until) {
            self.dispatch(now, ev);
        }
        self.q.set_time(until);
    }

    pub fn run(mut self) -> WorldReport {
        let end = self.scenario.duration();
        self.run_until(end);
        self.report()
    }

    pub fn report(&self) -> WorldReport {
        let end = self.q.now();
        let name = self.scenario.name.clone();
        let mut metrics = Vec::new();
        let total = bin_sums(self.traffic.iter().map(|s| (s.at, s.bytes as f64)), SEC, end.max(1));
        let ctrl = bin_sums(
            self.traffic.iter().filter(|s| s.class == TrafficClass::Control).map(|s| (s.at, s.bytes as f64)),
            SEC,
            end.max(1),
        );
        for (i, (t, c)) in total.iter().zip(&ctrl).enumerate() {
            let ms = (i as f64 + 1.0) * 1000.0;
            metrics.push(MetricsRecord::new(ms, Metric::CtrlBytes, *t).labels("world", "ALL", &name));
            metrics.push(MetricsRecord::new(ms, Metric::CtrlBytes, *c).labels("world", "CONTROL", &name));
        }
        for &(t, d) in &self.pdd {
            metrics.push(MetricsRecord::new(to_ms_f64(t), Metric::Pdd, d).labels("world", "TOPIC", &name));
        }
        for c in &self.commands {
            if let (Some(a), "SUCCESS") = (c.acked_at_ms, c.status.as_str()) {
                metrics.push(
                    MetricsRecord::new(a, Metric::TaskExec, a - c.issued_at_ms).labels("world", &c.service, &name),
                );
            }
        }
        WorldReport {
            name,
            seed: self.scenario.seed,
            duration_s: end as f64 / SEC as f64,
            roster: self.dpsl.roster(),
            commands: self.commands.clone(),
            topics_stored: self.dpsl.counters().topics_stored,
            handovers: self.handovers,
            counters: self.dpsl.counters(),
            traffic: self.traffic.clone(),
            topic_log: self.topic_log.clone(),
            metrics,
        }
    }

    fn dispatch(&mut self, now: Nanos, ev: Ev) {
        match ev {
            Ev::Script(i) => self.on_script(i, now),
            Ev::Join(u) => self.on_join(u, now),
            Ev::Uav(u, gen) => {
                if self.uavs[&u].tick_gen == gen {
                    self.on_uav_tick(u, now);
                }
            }
            Ev::Hello(n) => self.on_hello_timer(n, now),
            Ev::AdvSync(u) => self.on_adv_sync(u, now),
            Ev::Arrive { at, from, pkt } => self.on_arrive(at, from, pkt, now),
            Ev::Mesh { at, from, msg } => self.on_mesh(at, from, msg, now),
            Ev::AckReady { uav, conn, ack } => {
                if self.uavs[&uav].conns.get(&ChannelKind::Service) == Some(&conn) {
                    self.send_from_uav(uav, conn, Message::Ack(ack), now);
                }
            }
            Ev::GwAdvance(g) => {
                self.gateways.get_mut(&g).unwrap().advance_pending = false;
                let out = self.gateways.get_mut(&g).unwrap().gw.advance(now);
                self.gw_egress(g, out, now);
            }
            Ev::DpslTick => {
                let eff = self.dpsl.tick(now);
                self.apply_effects(eff, now);
                self.q.schedule(now + DPSL_TICK, Ev::DpslTick);
            }
        }
    }

    fn is_up(&self, n: NodeId) -> bool {
        match n.kind {
            NodeKind::Uav => self.uavs.get(&n).is_some_and(|u| u.active && !u.failed),
            NodeKind::Gateway => self.gateways.get(&n).is_some_and(|g| !g.failed),
            NodeKind::Dpsl => true,
            NodeKind::UiClient => false,
        }
    }

    /// Live swarm-side neighbors of `n`.
    fn mesh_neighbors(&self, n: NodeId) -> Vec<NodeId> {
        self.net
            .live_neighbors(n)
            .into_iter()
            .map(|(_, m)| m)
            .filter(|m| m.kind != NodeKind::Dpsl && self.is_up(*m))
            .filter(|m| !(n.kind == NodeKind::Gateway && m.kind == NodeKind::Gateway))
            .collect()
    }

    /// One hop. Returns the first arrival time, or None if the frame was lost.
    fn hop(
        &mut self,
        from: NodeId,
        to: NodeId,
        bytes: usize,
        class: TrafficClass,
        mode: TxMode,
        now: Nanos,
    ) -> Option<Nanos> {
        if !self.is_up(from) || !self.is_up(to) {
            return None;
        }
        let link = self.net.link_between(from, to)?;
        let wire = bytes + HOP_HEADER;
        let out = self.net.transmit(link, from, wire, now, mode, self.q.rng()).ok()?;
        let swarm_side = (from.kind == NodeKind::Gateway) != (to.kind == NodeKind::Gateway)
            && from.kind != NodeKind::Dpsl
            && to.kind != NodeKind::Dpsl;
        if swarm_side {
            for k in 0..out.attempts {
                let at = out.first_attempt_at + k as Nanos * (self.net.link(link).unwrap().profile.retx_timeout_ns());
                self.traffic.push(TrafficSample { at, bytes: wire, class });
            }
        }
        out.delivered_at()
    }

    fn send_mesh(&mut self, from: NodeId, to: NodeId, msg: Message, now: Nanos) {
        let bytes = frame_len(&msg).unwrap_or(usize::MAX);
        if let Some(t) = self.hop(from, to, bytes, TrafficClass::Control, TxMode::Unreliable, now) {
            self.q.schedule(t, Ev::Mesh { at: to, from, msg });
        }
    }

    fn beacons_from(&mut self, n: NodeId, now: Nanos) {
        for m in self.mesh_neighbors(n) {
            let b = self.router(n).unwrap().beacon_for(m, now);
            self.send_mesh(n, m, Message::Hello(b), now);
        }
    }

    fn on_hello_timer(&mut self, n: NodeId, now: Nanos) {
        if self.is_up(n) {
            match n.kind {
                NodeKind::Uav => self.uavs.get_mut(&n).unwrap().router.expire(now),
                _ => self.gateways.get_mut(&n).unwrap().router.expire(now),
            }
            self.beacons_from(n, now);
        }
        self.q.schedule(now + HELLO_PERIOD, Ev::Hello(n));
    }

    fn on_adv_sync(&mut self, u: NodeId, now: Nanos) {
        if self.is_up(u) {
            self.uavs.get_mut(&u).unwrap().dir.expire(now);
            let adv = self.uavs[&u].dir.advertisement(to_ms(now));
            for m in self.mesh_neighbors(u) {
                if m.kind == NodeKind::Uav {
                    self.send_mesh(u, m, Message::Advertise(adv.clone()), now);
                }
            }
        }
        self.q.schedule(now + DEFAULT_SYNC_PERIOD, Ev::AdvSync(u));
    }

    fn on_join(&mut self, u: NodeId, now: Nanos) {
        let a = self.uavs.get_mut(&u).unwrap();
        a.active = true;
        a.join_seq += 1;
        let join = a.router.originate_join(a.join_seq, now);
        for m in self.mesh_neighbors(u) {
            self.send_mesh(u, m, Message::Join(join.clone()), now);
        }
        self.beacons_from(u, now);
        self.q.schedule(now + HELLO_PERIOD, Ev::Hello(u));
        self.q.schedule(now + DEFAULT_SYNC_PERIOD, Ev::AdvSync(u));
        self.schedule_uav(u, now);
    }

    fn on_mesh(&mut self, at: NodeId, from: NodeId, msg: Message, now: Nanos) {
        if !self.is_up(at) {
            return;
        }
        match msg {
            Message::Hello(b) => {
                match at.kind {
                    NodeKind::Uav => self.uavs.get_mut(&at).unwrap().router.on_hello(&b, now),
                    _ => self.gateways.get_mut(&at).unwrap().router.on_hello(&b, now),
                };
            }
            Message::Join(j) => {
                let fresh = match at.kind {
                    NodeKind::Uav => self.uavs.get_mut(&at).unwrap().router.on_join(&j),
                    _ => self.gateways.get_mut(&at).unwrap().router.on_join(&j),
                };
                if !fresh {
                    return;
                }
                for m in self.mesh_neighbors(at) {
                    if m != from && m != j.node {
                        self.send_mesh(at, m, Message::Join(j.clone()), now);
                    }
                }
                self.beacons_from(at, now);
                if at.kind == NodeKind::Gateway && self.adverts_on_join && self.mesh_neighbors(at).contains(&j.node) {
                    let known: Vec<(NodeId, Vec<String>)> = self.gateways[&at]
                        .known
                        .iter()
                        .filter(|(n, _)| **n != j.node)
                        .map(|(n, t)| (*n, t.iter().cloned().collect()))
                        .collect();
                    for (origin, topics) in known {
                        let adv = TopicAdvertisement { origin, topics, sent_at: to_ms(now) };
                        self.send_mesh(at, j.node, Message::Advertise(adv), now);
                    }
                }
            }
            Message::Advertise(adv) => {
                if at.kind == NodeKind::Uav {
                    self.uavs.get_mut(&at).unwrap().dir.on_advertisement(&adv, now);
                }
            }
            _ => {}
        }
    }

    fn schedule_uav(&mut self, u: NodeId, now: Nanos) {
        let up = self.is_up(u);
        let a = self.uavs.get_mut(&u).unwrap();
        a.tick_gen += 1;
        let mut next = a.node.next_due();
        if let Some(r) = a.client.next_retry().filter(|_| up) {
            next = next.min(r.max(now + 1));
        }
        let gen = a.tick_gen;
        self.q.schedule(next.max(now + 1), Ev::Uav(u, gen));
    }

    fn on_uav_tick(&mut self, u: NodeId, now: Nanos) {
        if !self.is_up(u) {
            // Failed nodes keep flying but stay silent.
            let a = self.uavs.get_mut(&u).unwrap();
            a.node.autopilot_step(now);
            let pos = a.node.state.position();
            self.net.set_position(u, pos);
            self.schedule_uav(u, now);
            return;
        }
        let topics = self.uavs.get_mut(&u).unwrap().node.autopilot_step(now);
        let pos = self.uavs[&u].node.state.position();
        self.net.set_position(u, pos);
        self.select_gateway(u, now);
        let mut actions = Vec::new();
        for t in topics {
            actions.extend(self.uavs.get_mut(&u).unwrap().client.publish(t));
        }
        actions.extend(self.uavs.get_mut(&u).unwrap().client.poll(now));
        self.run_actions(u, actions, now);
        self.schedule_uav(u, now);
    }

    fn select_gateway(&mut self, u: NodeId, now: Nanos) {
        let views: Vec<GatewayView> = self
            .gateways
            .keys()
            .map(|&g| GatewayView {
                id: g,
                distance_m: self.net.distance(u, g),
                reachable: self.uavs[&u].router.next_hop(g).is_ok(),
            })
            .collect();
        let a = self.uavs.get_mut(&u).unwrap();
        let current = a.gateway;
        let choice = a.detector.evaluate(current, &views, now);
        if choice != current {
            a.gateway = choice;
            if current.is_some() {
                self.handovers += 1;
            }
            let open: Vec<ConnId> = self.uavs[&u].conns.values().copied().collect();
            for c in open {
                self.break_conn(c, now);
            }
        }
    }

    fn run_actions(&mut self, u: NodeId, actions: Vec<ClientAction>, now: Nanos) {
        for act in actions {
            match act {
                ClientAction::Connect(kind) => self.open_conn(u, kind, now),
                ClientAction::Send(kind, msg) => match self.uavs[&u].conns.get(&kind).copied() {
                    Some(c) => self.send_from_uav(u, c, msg, now),
                    None => self.uavs.get_mut(&u).unwrap().client.on_transport_down(kind, now),
                },
            }
        }
    }

    fn open_conn(&mut self, u: NodeId, kind: ChannelKind, now: Nanos) {
        let Some(g) = self.uavs[&u].gateway else {
            self.uavs.get_mut(&u).unwrap().client.on_transport_down(kind, now);
            return;
        };
        let conn = self.next_conn;
        self.next_conn += 1;
        self.conns.insert(conn, ConnInfo { uav: u, kind });
        self.uavs.get_mut(&u).unwrap().conns.insert(kind, conn);
        let pkt = Packet { dst: DPSL, via: g, conn, body: Body::Open };
        self.forward(u, pkt, now);
    }

    fn send_from_uav(&mut self, u: NodeId, conn: ConnId, msg: Message, now: Nanos) {
        let Some(g) = self.uavs[&u].gateway else {
            self.break_conn(conn, now);
            return;
        };
        self.forward(u, Packet { dst: DPSL, via: g, conn, body: Body::Msg(msg) }, now);
    }

    /// Closes a logical connection at both ends.
    fn break_conn(&mut self, conn: ConnId, now: Nanos) {
        let Some(info) = self.conns.remove(&conn) else { return };
        let a = self.uavs.get_mut(&info.uav).unwrap();
        if a.conns.get(&info.kind) == Some(&conn) {
            a.conns.remove(&info.kind);
            a.client.on_transport_down(info.kind, now);
        }
        let eff = self.dpsl.on_disconnect(conn, now);
        self.apply_effects(eff, now);
        self.schedule_uav(info.uav, now);
    }

    /// Moves a packet one hop closer to its destination from `at`.
    fn forward(&mut self, at: NodeId, pkt: Packet, now: Nanos) {
        let next = match at.kind {
            NodeKind::Uav => {
                let toward = if pkt.dst == DPSL { pkt.via } else { pkt.dst };
                self.uavs[&at].router.next_hop(toward).ok()
            }
            NodeKind::Gateway if pkt.dst == DPSL => Some(DPSL),
            NodeKind::Gateway => self.gateways[&at].router.next_hop(pkt.dst).ok(),
            NodeKind::Dpsl => Some(pkt.via),
            NodeKind::UiClient => None,
        };
        let Some(next) = next else {
            self.break_conn(pkt.conn, now);
            return;
        };
        let bytes = pkt.bytes();
        let class = class_of(&pkt.body);
        match self.hop(at, next, bytes, class, TxMode::Reliable, now) {
            Some(t) => self.q.schedule(t, Ev::Arrive { at: next, from: at, pkt }),
            None => self.break_conn(pkt.conn, now),
        }
    }

    fn gw_egress(&mut self, g: NodeId, out: Vec<Egress<Translated<Packet>>>, now: Nanos) {
        for e in out {
            let pkt = e.item.item;
            let bytes = pkt.bytes();
            match self.hop(g, DPSL, bytes, class_of(&pkt.body), TxMode::Reliable, e.record.sent_at) {
                Some(t) => self.q.schedule(t, Ev::Arrive { at: DPSL, from: g, pkt }),
                None => self.break_conn(pkt.conn, now),
            }
        }
        let agent = self.gateways.get_mut(&g).unwrap();
        if agent.gw.forwarder().bytes_queued() > 0 && !agent.advance_pending {
            agent.advance_pending = true;
            let step = agent.gw.forwarder().frame_cost().max(1);
            self.q.schedule(now + step, Ev::GwAdvance(g));
        }
    }

    fn on_arrive(&mut self, at: NodeId, from: NodeId, pkt: Packet, now: Nanos) {
        if !self.conns.contains_key(&pkt.conn) || !self.is_up(at) {
            return;
        }
        if at == pkt.dst {
            match at.kind {
                NodeKind::Dpsl => self.at_dpsl(pkt, now),
                NodeKind::Uav => self.at_uav(at, pkt, now),
                _ => {}
            }
            return;
        }
        if at.kind == NodeKind::Gateway && pkt.dst == DPSL {
            let info = self.conns[&pkt.conn];
            if let Body::Msg(Message::Topic(t)) = &pkt.body {
                self.gateways.get_mut(&at).unwrap().known.entry(t.publisher).or_default().insert(t.topic_name.clone());
            }
            let bytes = pkt.bytes();
            let src = inner_addr(info.uav, info.kind);
            let out = self.gateways.get_mut(&at).unwrap().gw.forward(0, src, bytes, pkt, now);
            self.gw_egress(at, out, now);
            return;
        }
        if at.kind == NodeKind::Gateway && from == DPSL {
            // Downlink: processing only, no contention modelled.
            let cost = self.gateways[&at].gw.forwarder().frame_cost();
            self.forward(at, pkt, now + cost);
            return;
        }
        self.forward(at, pkt, now);
    }

    fn at_dpsl(&mut self, pkt: Packet, now: Nanos) {
        let conn = pkt.conn;
        let via = pkt.via;
        let info = self.conns[&conn];
        let reply = |body| Packet { dst: info.uav, via, conn, body };
        match pkt.body {
            Body::Open => self.forward(DPSL, reply(Body::Accept), now),
            Body::Accept => {}
            Body::Msg(Message::Identify(id)) => {
                let (r, eff) = self.dpsl.on_identify(conn, &id, now);
                self.forward(DPSL, reply(Body::Msg(Message::IdentifyReply(r))), now);
                self.apply_effects(eff, now);
            }
            Body::Msg(Message::Topic(t)) => {
                let before = self.dpsl.counters().topics_stored;
                let eff = self.dpsl.on_topic(conn, &t, now);
                if self.dpsl.counters().topics_stored > before {
                    self.pdd.push((now, to_ms_f64(now) - t.sent_at as f64));
                    self.topic_log.push((now, t.publisher, t.topic_name.clone(), t.seq, t.sent_at));
                }
                self.apply_effects(eff, now);
            }
            Body::Msg(Message::Ack(a)) => {
                let eff = self.dpsl.on_ack(conn, &a, now);
                self.apply_effects(eff, now);
            }
            Body::Msg(_) => {}
        }
    }

    fn at_uav(&mut self, u: NodeId, pkt: Packet, now: Nanos) {
        let info = self.conns[&pkt.conn];
        if self.uavs[&u].conns.get(&info.kind) != Some(&pkt.conn) {
            return;
        }
        let actions = match pkt.body {
            Body::Accept => self.uavs.get_mut(&u).unwrap().client.on_transport_up(info.kind),
            Body::Msg(Message::IdentifyReply(r)) => {
                let a = self.uavs.get_mut(&u).unwrap();
                for (topic, seq) in &r.resume_seq {
                    a.node.resume_after(topic, *seq);
                }
                a.client.on_identify_reply(&r)
            }
            Body::Msg(Message::Service(s)) => {
                let a = self.uavs.get_mut(&u).unwrap();
                let ack = a.node.handle_service(&s, now);
                let done = now + a.node.config.state_change_ms * MS;
                self.q.schedule(done, Ev::AckReady { uav: u, conn: pkt.conn, ack });
                Vec::new()
            }
            _ => Vec::new(),
        };
        self.run_actions(u, actions, now);
        self.schedule_uav(u, now);
    }

    fn apply_effects(&mut self, effects: Vec<Effect>, now: Nanos) {
        for e in effects {
            match e {
                Effect::ToUav { conn, uav, msg } => {
                    let Some(info) = self.conns.get(&conn).copied() else { continue };
                    if info.uav != uav {
                        continue;
                    }
                    let Some(g) = self.uavs[&uav].gateway else { continue };
                    self.forward(DPSL, Packet { dst: uav, via: g, conn, body: Body::Msg(msg) }, now);
                }
                Effect::ToClient(c, ServerMsg::ServiceAck { id, status, .. }) if c == self.gcs => {
                    if let Some(&i) = self.calls.get(&id) {
                        let cmd = &mut self.commands[i];
                        if cmd.acked_at_ms.is_none() {
                            cmd.status = serde_json::to_string(&status).unwrap().trim_matches('"').to_string();
                            cmd.acked_at_ms = Some(to_ms_f64(now));
                        }
                    }
                }
                Effect::ToClient(..) => {}
            }
        }
    }

    fn on_script(&mut self, i: usize, now: Nanos) {
        let kind = self.scenario.events[i].kind.clone();
        match kind {
            EventKind::Command { target, service, args } => {
                let client_ref = self.commands.len() as u64 + 1;
                self.calls.insert(client_ref, self.commands.len());
                self.commands.push(CommandOutcome {
                    target,
                    service: service.to_string(),
                    issued_at_ms: to_ms_f64(now),
                    status: "PENDING".into(),
                    acked_at_ms: None,
                });
                let eff = self.dpsl.call_service(self.gcs, client_ref, service, target, args, now);
                self.apply_effects(eff, now);
            }
            EventKind::FailNode { node } => self.set_node(node, false, now),
            EventKind::RecoverNode { node } => self.set_node(node, true, now),
            EventKind::FailLink { a, b } | EventKind::RecoverLink { a, b } => {
                let up = matches!(self.scenario.events[i].kind, EventKind::RecoverLink { .. });
                if let Some(l) = self.net.link_between(a, b) {
                    self.net.set_enabled(l, up).unwrap();
                }
            }
            EventKind::Waypoints { uav, points, speed_mps } => {
                let m = &mut self.uavs.get_mut(&uav).unwrap().node.state.mobility;
                m.waypoints.extend(points);
                if let Some(s) = speed_mps {
                    m.speed_mps = s;
                }
            }
        }
    }

    fn set_node(&mut self, node: NodeId, up: bool, now: Nanos) {
        match node.kind {
            NodeKind::Uav => {
                self.uavs.get_mut(&node).unwrap().failed = !up;
                if !up {
                    let open: Vec<ConnId> = self.uavs[&node].conns.values().copied().collect();
                    for c in open {
                        self.break_conn(c, now);
                    }
                }
            }
            NodeKind::Gateway => {
                self.gateways.get_mut(&node).unwrap().failed = !up;
                if !up {
                    let gone: Vec<ConnId> = self
                        .conns
                        .iter()
                        .filter(|(_, i)| self.uavs[&i.uav].gateway == Some(node))
                        .map(|(c, _)| *c)
                        .collect();
                    for c in gone {
                        self.break_conn(c, now);
                    }
                }
            }
            _ => {}
        }
    }
}

/// Builds and runs a scenario to its end.
pub fn run_scenario(s: &Scenario) -> Result<WorldReport, ScenarioError> {
    Ok(World::new(s)?.run())
}
