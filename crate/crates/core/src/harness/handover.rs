use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::Serialize;

use super::metrics::{Ci, Metric, MetricsRecord};
use super::ScenarioError;
use crate::gateway::{EcmpGroup, FlowKey, GatewayView, HandoverDetector, LIVENESS_PERIOD};
use crate::link::{EventQueue, LinkId, LinkProfile, Mobility, Network, TxMode};
use crate::message::{ChannelKind, NodeId};
use crate::time::{from_ms, to_ms_f64, Nanos, MS, SEC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProbeKind {
    /// Stream with retransmission (TCP-like).
    Reliable,
    /// Datagrams (UDP-like).
    Unreliable,
    /// Request/reply (ICMP-like), observed at the UAV.
    Echo,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 3] = [ProbeKind::Reliable, ProbeKind::Unreliable, ProbeKind::Echo];
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::Reliable => "RELIABLE",
            ProbeKind::Unreliable => "UNRELIABLE",
            ProbeKind::Echo => "ECHO",
        })
    }
}

impl FromStr for ProbeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "RELIABLE" | "TCP" => Ok(ProbeKind::Reliable),
            "UNRELIABLE" | "UDP" => Ok(ProbeKind::Unreliable),
            "ECHO" | "ICMP" => Ok(ProbeKind::Echo),
            _ => Err(format!("unknown channel kind {s:?}")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct HandoverParams {
    pub profile: LinkProfile,
    pub kind: ProbeKind,
    /// Minimum number of handovers in each direction.
    pub crossings: usize,
    pub g1: [f64; 3],
    pub g2: [f64; 3],
    /// The UAV shuttles between these two points.
    pub path: ([f64; 3], [f64; 3]),
    pub speed_mps: f64,
    pub probe_interval: Nanos,
    /// Minimum retransmission timeout of the reliable stream.
    pub rto_min: Nanos,
    /// Segments the reliable stream may have unacknowledged.
    pub window: usize,
    pub seed: u64,
}

impl HandoverParams {
    pub fn new(profile: LinkProfile, kind: ProbeKind) -> Self {
        Self {
            profile,
            kind,
            crossings: 30,
            g1: [0.0, 0.0, 2.0],
            g2: [300.0, 0.0, 2.0],
            path: ([20.0, 0.0, 20.0], [280.0, 0.0, 20.0]),
            speed_mps: 10.0,
            probe_interval: 20 * MS,
            rto_min: SEC,
            window: 10,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HandoverResult {
    pub profile: String,
    pub kind: ProbeKind,
    /// Delays in ms per crossing direction.
    pub g1_to_g2: Vec<f64>,
    pub g2_to_g1: Vec<f64>,
    pub sim_time_s: f64,
}

impl HandoverResult {
    pub fn all(&self) -> Vec<f64> {
        self.g1_to_g2.iter().chain(&self.g2_to_g1).copied().collect()
    }

    /// Mean and interval in seconds over both directions.
    pub fn ci_s(&self) -> Ci {
        let s: Vec<f64> = self.all().iter().map(|ms| ms / 1000.0).collect();
        Ci::of(&s)
    }

    pub fn records(&self) -> Vec<MetricsRecord> {
        let mut out = Vec::new();
        for (dir, v) in [("G1->G2", &self.g1_to_g2), ("G2->G1", &self.g2_to_g1)] {
            for (i, d) in v.iter().enumerate() {
                out.push(MetricsRecord::new(i as f64, Metric::HandoverDelay, *d).labels(
                    "handover",
                    &self.kind.to_string(),
                    &format!("{} {dir}", self.profile),
                ));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
enum Ev {
    Move,
    Hello,
    AssocDone(NodeId),
    Probe(u64),
    EchoReply { gw: NodeId, at_gw: Nanos },
    Ack { seq: u64, gw: NodeId },
    Rto(u64),
}

const MOVE_STEP: Nanos = 50 * MS;
const UAV: NodeId = NodeId::uav(1);
const G1: NodeId = NodeId::gateway(1);
const G2: NodeId = NodeId::gateway(2);
/// Bytes per probe on the air.
const PROBE_BYTES: usize = 128;
const FAST_RETRANSMIT_DUPACKS: u32 = 3;

struct Tcp {
    /// Oldest unacknowledged segment.
    una: u64,
    /// Next never-sent segment.
    next: u64,
    /// Highest generated segment + 1.
    produced: u64,
    rto: Nanos,
    timer_gen: u64,
    timer_armed: bool,
    dupacks: u32,
    /// Receiver side: out-of-order arrivals and next in-order seq.
    rcv_next: u64,
    rcv_buf: BTreeMap<u64, NodeId>,
}

struct Sim {
    p: HandoverParams,
    q: EventQueue<Ev>,
    net: Network,
    links: BTreeMap<NodeId, LinkId>,
    mobility: Mobility,
    towards_end: bool,
    assoc: Option<NodeId>,
    pending: Option<NodeId>,
    detector: HandoverDetector,
    ecmp: EcmpGroup,
    /// (time, gateway) of every observed frame, in time order of observation.
    arrivals: Vec<(Nanos, NodeId)>,
    associations: usize,
    tcp: Tcp,
}

impl Sim {
    fn flow(&self) -> FlowKey {
        FlowKey { src: UAV, dst: NodeId::dpsl(0), channel: ChannelKind::Topic }
    }

    fn route(&self, now: Nanos) -> Option<NodeId> {
        self.ecmp.select(&self.flow(), now).ok().filter(|g| self.net.is_live(self.links[g]))
    }

    fn on_move(&mut self, now: Nanos) {
        if !self.mobility.is_moving() {
            self.towards_end = !self.towards_end;
            let target = if self.towards_end { self.p.path.1 } else { self.p.path.0 };
            self.mobility.waypoints.push_back(target);
        }
        self.mobility.step(MOVE_STEP as f64 / SEC as f64);
        self.net.set_position(UAV, self.mobility.position);
        if self.pending.is_none() {
            let views: Vec<GatewayView> = [G1, G2]
                .iter()
                .map(|&g| GatewayView {
                    id: g,
                    distance_m: self.net.distance(UAV, g),
                    reachable: self.p.profile.in_range(self.net.distance(UAV, g)),
                })
                .collect();
            let choice = self.detector.evaluate(self.assoc, &views, now);
            if choice != self.assoc {
                if let Some(old) = self.assoc.take() {
                    self.net.set_enabled(self.links[&old], false).unwrap();
                    self.ecmp.set_link(old, false);
                }
                if let Some(new) = choice {
                    let (lo, hi) = (self.p.profile.assoc_min_ms, self.p.profile.assoc_max_ms);
                    let a = if hi > lo { self.q.rng().gen_range(lo..=hi) } else { lo };
                    self.pending = Some(new);
                    self.q.schedule(now + from_ms(a), Ev::AssocDone(new));
                }
            }
        }
        self.q.schedule(now + MOVE_STEP, Ev::Move);
    }

    fn on_assoc(&mut self, g: NodeId, now: Nanos) {
        self.pending = None;
        self.associations += 1;
        self.assoc = Some(g);
        self.net.set_enabled(self.links[&g], true).unwrap();
        self.ecmp.set_link(g, true);
        self.ecmp.on_hello(g, now);
        if self.p.kind == ProbeKind::Reliable {
            self.tcp_send(now);
        }
    }

    fn on_hello(&mut self, now: Nanos) {
        for g in [G1, G2] {
            if self.assoc == Some(g) {
                self.ecmp.on_hello(g, now);
            }
        }
        self.q.schedule(now + LIVENESS_PERIOD, Ev::Hello);
    }

    fn on_probe(&mut self, k: u64, now: Nanos) {
        self.q.schedule(now + self.p.probe_interval, Ev::Probe(k + 1));
        match self.p.kind {
            ProbeKind::Unreliable | ProbeKind::Echo => {
                let Some(g) = self.route(now) else { return };
                let link = self.links[&g];
                let out = self.net.transmit(link, UAV, PROBE_BYTES, now, TxMode::Unreliable, self.q.rng()).unwrap();
                if let Some(t) = out.delivered_at() {
                    if self.p.kind == ProbeKind::Unreliable {
                        self.arrivals.push((t, g));
                    } else {
                        self.q.schedule(t, Ev::EchoReply { gw: g, at_gw: t });
                    }
                }
            }
            ProbeKind::Reliable => {
                self.tcp.produced = k + 1;
                self.tcp_send(now);
            }
        }
    }

    fn on_echo_reply(&mut self, g: NodeId, at_gw: Nanos) {
        let link = self.links[&g];
        if !self.net.is_live(link) {
            return;
        }
        let out = self.net.transmit(link, g, PROBE_BYTES, at_gw, TxMode::Unreliable, self.q.rng()).unwrap();
        if let Some(t) = out.delivered_at() {
            self.arrivals.push((t, g));
        }
    }

    fn arm_timer(&mut self, now: Nanos) {
        self.tcp.timer_gen += 1;
        self.tcp.timer_armed = true;
        self.q.schedule(now + self.tcp.rto, Ev::Rto(self.tcp.timer_gen));
    }

    /// Sends new segments while the window allows.
    fn tcp_send(&mut self, now: Nanos) {
        while self.tcp.next < self.tcp.produced && (self.tcp.next - self.tcp.una) < self.p.window as u64 {
            let seq = self.tcp.next;
            self.tcp.next += 1;
            self.tcp_transmit(seq, now);
            if !self.tcp.timer_armed {
                self.arm_timer(now);
            }
        }
    }

    fn tcp_transmit(&mut self, seq: u64, now: Nanos) {
        // Without a usable gateway the segment is lost at the interface.
        let Some(g) = self.route(now) else { return };
        let link = self.links[&g];
        let out = self.net.transmit(link, UAV, PROBE_BYTES, now, TxMode::Reliable, self.q.rng()).unwrap();
        let Some(t) = out.delivered_at() else { return };
        if seq >= self.tcp.rcv_next {
            self.tcp.rcv_buf.insert(seq, g);
            // Segments released by this arrival reach the application through `g`.
            while self.tcp.rcv_buf.remove(&self.tcp.rcv_next).is_some() {
                self.arrivals.push((t, g));
                self.tcp.rcv_next += 1;
            }
        }
        let ack = self.tcp.rcv_next;
        self.q.schedule(t + self.p.profile.base_latency_ns(), Ev::Ack { seq: ack, gw: g });
    }

    fn on_ack(&mut self, ack: u64, g: NodeId, now: Nanos) {
        if !self.net.is_live(self.links[&g]) || ack < self.tcp.una {
            return;
        }
        if ack == self.tcp.una {
            if self.tcp.una < self.tcp.next {
                self.tcp.dupacks += 1;
                if self.tcp.dupacks == FAST_RETRANSMIT_DUPACKS {
                    self.tcp_transmit(self.tcp.una, now);
                }
            }
            return;
        }
        self.tcp.dupacks = 0;
        self.tcp.una = ack;
        self.tcp.rto = self.p.rto_min;
        if self.tcp.una < self.tcp.next {
            self.arm_timer(now);
        } else {
            self.tcp.timer_armed = false;
        }
        self.tcp_send(now);
    }

    fn on_rto(&mut self, gen: u64, now: Nanos) {
        if gen != self.tcp.timer_gen || !self.tcp.timer_armed {
            return;
        }
        // Go-back-N from the oldest unacknowledged segment.
        for seq in self.tcp.una..self.tcp.next {
            self.tcp_transmit(seq, now);
        }
        self.tcp.rto = (self.tcp.rto * 2).min(60 * SEC);
        self.arm_timer(now);
    }

    fn crossings(&self) -> (Vec<f64>, Vec<f64>) {
        let mut arr = self.arrivals.clone();
        arr.sort_by_key(|&(t, _)| t);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for w in arr.windows(2) {
            let ((t0, g0), (t1, g1)) = (w[0], w[1]);
            if g0 != g1 {
                let d = to_ms_f64(t1 - t0);
                if g0 == G1 {
                    a.push(d)
                } else {
                    b.push(d)
                }
            }
        }
        (a, b)
    }
}

/// Runs the two-gateway handover scenario until at least `crossings`
/// handovers have been observed in each direction.
pub fn run_handover(p: &HandoverParams) -> Result<HandoverResult, ScenarioError> {
    p.profile.validate().map_err(ScenarioError::Invalid)?;
    let mut net = Network::new();
    net.set_position(G1, p.g1);
    net.set_position(G2, p.g2);
    net.set_position(UAV, p.path.0);
    let mut links = BTreeMap::new();
    for g in [G1, G2] {
        let id = net.attach_link(UAV, g, p.profile.clone()).unwrap();
        net.set_enabled(id, false).unwrap();
        links.insert(g, id);
    }
    let mut sim = Sim {
        q: EventQueue::new(p.seed),
        net,
        links,
        mobility: Mobility::with_path(p.path.0, VecDeque::from([p.path.1]), p.speed_mps),
        towards_end: true,
        assoc: None,
        pending: None,
        detector: HandoverDetector::default(),
        ecmp: EcmpGroup::new(vec![G1, G2]),
        arrivals: Vec::new(),
        associations: 0,
        tcp: Tcp {
            una: 0,
            next: 0,
            produced: 0,
            rto: p.rto_min,
            timer_gen: 0,
            timer_armed: false,
            dupacks: 0,
            rcv_next: 0,
            rcv_buf: BTreeMap::new(),
        },
        p: p.clone(),
    };
    sim.q.schedule(0, Ev::Move);
    sim.q.schedule(0, Ev::Hello);
    sim.q.schedule(p.probe_interval, Ev::Probe(0));

    let leg = crate::link::distance(p.path.0, p.path.1) / p.speed_mps.max(1e-9);
    let limit = from_ms(((p.crossings as f64 * 2.0 + 4.0) * leg * 1.5 + 60.0) * 1000.0);
    let check_every = from_ms(leg * 1000.0).max(SEC);
    let mut next_check = check_every * 2;
    loop {
        let Some((now, ev)) = sim.q.pop_until(limit) else { break };
        match ev {
            Ev::Move => sim.on_move(now),
            Ev::Hello => sim.on_hello(now),
            Ev::AssocDone(g) => sim.on_assoc(g, now),
            Ev::Probe(k) => sim.on_probe(k, now),
            Ev::EchoReply { gw, at_gw } => sim.on_echo_reply(gw, at_gw),
            Ev::Ack { seq, gw } => sim.on_ack(seq, gw, now),
            Ev::Rto(gen) => sim.on_rto(gen, now),
        }
        if now >= next_check {
            next_check += check_every;
            if sim.associations < 2 {
                return Err(ScenarioError::NoCrossing);
            }
            let (a, b) = sim.crossings();
            if a.len() >= p.crossings && b.len() >= p.crossings {
                break;
            }
        }
    }
    let (g1_to_g2, g2_to_g1) = sim.crossings();
    if g1_to_g2.is_empty() && g2_to_g1.is_empty() {
        return Err(ScenarioError::NoCrossing);
    }
    Ok(HandoverResult {
        profile: p.profile.name.clone(),
        kind: p.kind,
        g1_to_g2,
        g2_to_g1,
        sim_time_s: sim.q.now() as f64 / SEC as f64,
    })
}
