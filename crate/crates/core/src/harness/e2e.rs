use std::collections::BTreeMap;
use std::net::{Ipv4Addr, SocketAddrV4};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::gateway_load::config;
use super::metrics::{bin_sums, Ci, Metric, MetricsRecord};
use super::ScenarioError;
use crate::gateway::{ForwarderParams, Gateway};
use crate::link::{LinkProfile, Network, TxMode};
use crate::message::NodeId;
use crate::time::{to_ms_f64, Nanos, SEC};

#[derive(Clone, Debug)]
pub struct E2eParams {
    pub profile: LinkProfile,
    /// Gateway to data/service layer.
    pub lan: LinkProfile,
    pub frame_bytes: usize,
    pub distance_m: f64,
    pub duration: Nanos,
    pub seed: u64,
}

impl E2eParams {
    pub fn new(profile: LinkProfile, lan: LinkProfile) -> Self {
        Self { profile, lan, frame_bytes: 64 * 1024, distance_m: 50.0, duration: 30 * SEC, seed: 1 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct E2eResult {
    pub profile: String,
    /// Per delivered frame, ms.
    pub pdd_ms: Vec<f64>,
    /// Per second, Mbps.
    pub throughput_mbps: Vec<f64>,
    pub offered: u64,
    pub delivered: u64,
    pub lost: u64,
    /// Offered but not resolved when the run ended.
    pub in_flight: u64,
}

impl E2eResult {
    pub fn pdd(&self) -> Ci {
        Ci::of(&self.pdd_ms)
    }

    pub fn throughput(&self) -> Ci {
        Ci::of(&self.throughput_mbps)
    }

    pub fn plp(&self) -> f64 {
        let resolved = self.delivered + self.lost;
        if resolved == 0 {
            0.0
        } else {
            self.lost as f64 / resolved as f64
        }
    }

    pub fn metrics(&self) -> Vec<MetricsRecord> {
        let m = |t: f64, metric, v| MetricsRecord::new(t, metric, v).labels("e2e", "RELIABLE", &self.profile);
        let mut out: Vec<MetricsRecord> = self
            .throughput_mbps
            .iter()
            .enumerate()
            .map(|(i, v)| m((i as f64 + 1.0) * 1000.0, Metric::Throughput, *v))
            .collect();
        let end = self.throughput_mbps.len() as f64 * 1000.0;
        out.push(m(end, Metric::Pdd, self.pdd().mean));
        out.push(m(end, Metric::Plp, self.plp()));
        out
    }
}

const UAV: NodeId = NodeId::uav(1);
const GW: NodeId = NodeId::gateway(1);

/// Saturated UAV-to-data-layer transfer: a reliable wireless hop, the
/// gateway forwarder and a LAN hop.
pub fn run_e2e(p: &E2eParams) -> Result<E2eResult, ScenarioError> {
    p.profile.validate().map_err(ScenarioError::Invalid)?;
    p.lan.validate().map_err(ScenarioError::Invalid)?;
    if !p.profile.in_range(p.distance_m) {
        return Err(ScenarioError::Invalid(format!("{} does not reach {} m", p.profile.name, p.distance_m)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut net = Network::new();
    net.set_position(GW, [0.0; 3]);
    net.set_position(UAV, [p.distance_m, 0.0, 0.0]);
    let air = net.attach_link(UAV, GW, p.profile.clone()).unwrap();
    let mut fparams = ForwarderParams::new(p.lan.clone());
    fparams.queue_cap_bytes = fparams.queue_cap_bytes.max(p.frame_bytes);
    let mut gw: Gateway<u64> = Gateway::new(config(1), fparams);
    gw.keep_records(false);
    gw.configure().expect("generated gateway config is valid");

    // Air side: the sender offers the next frame once the previous one is done.
    let mut first_attempt = Vec::new();
    let mut arrivals: Vec<(Nanos, u64)> = Vec::new();
    let mut now = 0;
    while now < p.duration {
        let id = first_attempt.len() as u64;
        let out = net.transmit(air, UAV, p.frame_bytes, now, TxMode::Reliable, &mut rng).unwrap();
        first_attempt.push(out.first_attempt_at);
        arrivals.extend(out.deliveries.iter().map(|&t| (t, id)));
        now = out.done_at.max(now + 1);
    }
    arrivals.sort();

    // Gateway and LAN. Duplicates are forwarded and removed at the receiver.
    let src = SocketAddrV4::new(Ipv4Addr::new(10, 0, 1, 10), 5000);
    let lan_latency = p.lan.base_latency_ns();
    let mut delivered_at: BTreeMap<u64, Nanos> = BTreeMap::new();
    let mut sink = |egress: Vec<crate::gateway::Egress<crate::gateway::Translated<u64>>>| {
        for e in egress {
            delivered_at.entry(e.item.item).or_insert(e.record.sent_at + lan_latency);
        }
    };
    for &(t, id) in &arrivals {
        sink(gw.forward(0, src, p.frame_bytes, id, t));
    }
    sink(gw.advance(Nanos::MAX));

    let mut pdd_ms = Vec::new();
    let mut in_flight = 0u64;
    let mut delivered = 0u64;
    let mut bits = Vec::new();
    for (&id, &t) in &delivered_at {
        if t >= p.duration {
            in_flight += 1;
            continue;
        }
        delivered += 1;
        pdd_ms.push(to_ms_f64(t - first_attempt[id as usize]));
        bits.push((t, (p.frame_bytes * 8) as f64 / 1e6));
    }
    let offered = first_attempt.len() as u64;
    // Lost on the air after all retries, or dropped at the gateway.
    let lost = offered - delivered_at.len() as u64;
    Ok(E2eResult {
        profile: p.profile.name.clone(),
        pdd_ms,
        throughput_mbps: bin_sums(bits, SEC, p.duration),
        offered,
        delivered,
        lost,
        in_flight,
    })
}
