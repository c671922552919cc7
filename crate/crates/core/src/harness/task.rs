use std::net::{Ipv4Addr, SocketAddrV4};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::gateway_load::config;
use super::metrics::{Ci, Metric, MetricsRecord};
use super::ScenarioError;
use crate::gateway::{ForwarderParams, Gateway};
use crate::link::{LinkProfile, Mobility, Network, TxMode};
use crate::message::{frame_len, AckStatus, Message, NodeId, ServiceMessage, ServiceName};
use crate::time::{to_ms, to_ms_f64, Nanos, MS};
use crate::uav::{AutopilotConfig, FlightState, TopicSchedule, UavNode};

#[derive(Clone, Debug)]
pub struct TaskParams {
    pub service: ServiceName,
    pub profile: LinkProfile,
    pub lan: LinkProfile,
    pub autopilot: AutopilotConfig,
    pub trials: usize,
    /// Time between the issue instants of consecutive trials.
    pub spacing: Nanos,
    pub distance_m: f64,
    pub seed: u64,
}

impl TaskParams {
    pub fn new(service: ServiceName, profile: LinkProfile, lan: LinkProfile) -> Self {
        Self {
            service,
            profile,
            lan,
            autopilot: AutopilotConfig::default(),
            trials: 500,
            spacing: 200 * MS,
            distance_m: 50.0,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TaskResult {
    pub profile: String,
    pub service: String,
    /// Issue to ack receipt, ms, completed trials only.
    pub task_ms: Vec<f64>,
    /// Issue to arrival of the request at the UAV, ms.
    pub one_way_ms: Vec<f64>,
    pub timeouts: usize,
}

impl TaskResult {
    pub fn task(&self) -> Ci {
        Ci::of(&self.task_ms)
    }

    pub fn one_way(&self) -> Ci {
        Ci::of(&self.one_way_ms)
    }

    pub fn metrics(&self) -> Vec<MetricsRecord> {
        self.task_ms
            .iter()
            .enumerate()
            .map(|(i, v)| {
                MetricsRecord::new(i as f64, Metric::TaskExec, *v).labels("task", &self.service, &self.profile)
            })
            .collect()
    }
}

const UAV: NodeId = NodeId::uav(1);
const GW: NodeId = NodeId::gateway(1);
const DPSL: NodeId = NodeId::dpsl(0);

fn args(service: ServiceName) -> Option<String> {
    match service {
        ServiceName::SetMode => Some("GUIDED".into()),
        ServiceName::Takeoff => Some("10".into()),
        _ => None,
    }
}

/// Repeated command round trips from the data/service layer to a UAV behind
/// one gateway. Each trial starts from a fresh UAV in a state that accepts
/// the command.
pub fn run_task_exec(p: &TaskParams) -> Result<TaskResult, ScenarioError> {
    p.profile.validate().map_err(ScenarioError::Invalid)?;
    p.lan.validate().map_err(ScenarioError::Invalid)?;
    if p.trials == 0 {
        return Err(ScenarioError::Invalid("no trials".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut net = Network::new();
    net.set_position(DPSL, [0.0; 3]);
    net.set_position(GW, [0.0; 3]);
    net.set_position(UAV, [p.distance_m, 0.0, 0.0]);
    let air = net.attach_link(UAV, GW, p.profile.clone()).unwrap();
    let lan = net.attach_link(GW, DPSL, p.lan.clone()).unwrap();
    let mut gw: Gateway<()> = Gateway::new(config(1), ForwarderParams::new(p.lan.clone()));
    gw.keep_records(false);
    gw.configure().expect("generated gateway config is valid");
    let frame_cost = gw.forwarder().frame_cost();
    let src = SocketAddrV4::new(Ipv4Addr::new(10, 0, 1, 10), 5000);
    let lan_latency = p.lan.base_latency_ns();

    let mut res = TaskResult {
        profile: p.profile.name.clone(),
        service: p.service.to_string(),
        task_ms: Vec::new(),
        one_way_ms: Vec::new(),
        timeouts: 0,
    };
    for k in 0..p.trials {
        let issue = k as Nanos * p.spacing;
        let mut state = FlightState::on_ground([p.distance_m, 0.0, 0.0], 12.6);
        match p.service {
            ServiceName::Land => state = FlightState::flying(Mobility::fixed([p.distance_m, 0.0, 10.0]), 12.6),
            ServiceName::Takeoff => state.armed = true,
            _ => {}
        }
        let mut uav = UavNode::new(UAV, state, TopicSchedule::standard(1.0), p.autopilot.clone(), issue);
        let req = ServiceMessage {
            service: p.service,
            target: UAV,
            request_id: k as u64 + 1,
            args: args(p.service),
            issued_at: to_ms(issue),
        };
        let req_len = frame_len(&Message::Service(req.clone())).expect("request fits a frame");

        // Downlink: LAN, gateway processing, air.
        let Some(at_gw) = net.transmit(lan, DPSL, req_len, issue, TxMode::Reliable, &mut rng).unwrap().delivered_at()
        else {
            res.timeouts += 1;
            continue;
        };
        let out = net.transmit(air, GW, req_len, at_gw + frame_cost, TxMode::Reliable, &mut rng).unwrap();
        let Some(at_uav) = out.delivered_at() else {
            res.timeouts += 1;
            continue;
        };
        res.one_way_ms.push(to_ms_f64(at_uav - issue));

        let ack = uav.handle_service(&req, at_uav);
        if ack.status != AckStatus::Success {
            return Err(ScenarioError::Invalid(format!("{} rejected: {:?}", p.service, ack.reason)));
        }
        let ack_at = at_uav + p.autopilot.state_change_ms * MS;
        let ack_len = frame_len(&Message::Ack(ack)).expect("ack fits a frame");

        // Uplink: air, gateway forwarder, LAN.
        let Some(at_gw) = net.transmit(air, UAV, ack_len, ack_at, TxMode::Reliable, &mut rng).unwrap().delivered_at()
        else {
            res.timeouts += 1;
            continue;
        };
        let mut egress = gw.forward(0, src, ack_len, (), at_gw);
        egress.extend(gw.advance(Nanos::MAX));
        let Some(e) = egress.first() else {
            res.timeouts += 1;
            continue;
        };
        let done = e.record.sent_at + lan_latency;
        res.task_ms.push(to_ms_f64(done - issue));
    }
    Ok(res)
}
