//! Bytes exchanged between the gateway and the swarm while UAVs join one by
//! one.

use serde::Serialize;

use super::metrics::{bin_sums, Metric, MetricsRecord};
use super::scenario::{GatewaySpec, Scenario, UavSpec};
use super::world::{TrafficClass, World};
use super::ScenarioError;
use crate::message::NodeId;
use crate::time::SEC;

#[derive(Clone, Debug)]
pub struct TrafficParams {
    pub n_max: usize,
    pub join_period_s: f64,
    /// Time of the first join.
    pub first_join_s: f64,
    pub freq_hz: f64,
    pub mesh_profile: String,
    /// UAVs hover on a circle of this radius around the gateway.
    pub radius_m: f64,
    pub seed: u64,
}

impl TrafficParams {
    pub fn new(freq_hz: f64) -> Self {
        Self {
            n_max: 5,
            join_period_s: 100.0,
            first_join_s: 5.0,
            freq_hz,
            mesh_profile: "Microhard pMDDL2450".into(),
            radius_m: 150.0,
            seed: 1,
        }
    }

    pub fn join_at_s(&self, k: usize) -> f64 {
        self.first_join_s + self.join_period_s * k as f64
    }

    pub fn duration_s(&self) -> f64 {
        self.first_join_s + self.join_period_s * self.n_max as f64
    }

    pub fn scenario(&self) -> Scenario {
        let uavs = (0..self.n_max)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / self.n_max as f64;
                UavSpec {
                    id: NodeId::uav(k as u32 + 1),
                    position: [self.radius_m * a.cos(), self.radius_m * a.sin(), 20.0],
                    waypoints: Vec::new(),
                    speed_mps: 10.0,
                    join_at_s: self.join_at_s(k),
                    battery_v: 12.6,
                    topic_hz: None,
                }
            })
            .collect();
        Scenario {
            name: format!("traffic-{}hz", self.freq_hz),
            seed: self.seed,
            duration_s: self.duration_s(),
            mesh_profile: self.mesh_profile.clone(),
            lan_profile: "LAN".into(),
            topic_hz: self.freq_hz,
            gateways: vec![GatewaySpec { id: NodeId::gateway(1), position: [0.0, 0.0, 2.0], profile: None }],
            uavs,
            events: Vec::new(),
            profiles: Vec::new(),
        }
    }
}

/// Traffic around the `n`-th join.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Spike {
    /// Swarm size after the join.
    pub n: usize,
    pub at_s: f64,
    /// Largest 1 s bin in the two seconds after the join.
    pub peak: f64,
    /// Mean of the five bins before the join.
    pub prior: f64,
}

impl Spike {
    pub fn magnitude(&self) -> f64 {
        self.peak - self.prior
    }

    pub fn ratio(&self) -> f64 {
        if self.prior == 0.0 {
            f64::INFINITY
        } else {
            self.peak / self.prior
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrafficResult {
    pub freq_hz: f64,
    /// Bytes per second on the gateway's swarm links, all classes.
    pub total: Vec<f64>,
    /// Control share of `total`.
    pub control: Vec<f64>,
    pub spikes: Vec<Spike>,
    /// Mean rate between joins with `n` UAVs, index `n - 1`; excludes the
    /// ten seconds after each join.
    pub steady: Vec<f64>,
    #[serde(skip)]
    pub scenario: String,
}

impl TrafficResult {
    pub fn metrics(&self) -> Vec<MetricsRecord> {
        let mut out = Vec::new();
        for (i, (t, c)) in self.total.iter().zip(&self.control).enumerate() {
            let ms = (i as f64 + 1.0) * 1000.0;
            out.push(MetricsRecord::new(ms, Metric::CtrlBytes, *t).labels("traffic", "ALL", &self.scenario));
            out.push(MetricsRecord::new(ms, Metric::CtrlBytes, *c).labels("traffic", "CONTROL", &self.scenario));
        }
        out
    }
}

pub fn run_traffic(p: &TrafficParams) -> Result<TrafficResult, ScenarioError> {
    if p.n_max == 0 || !(p.join_period_s >= 20.0) || !(p.first_join_s >= 5.0) {
        return Err(ScenarioError::Invalid("traffic run needs n_max ≥ 1, join period ≥ 20 s, first join ≥ 5 s".into()));
    }
    let s = p.scenario();
    let mut w = World::new(&s)?;
    w.run_until(s.duration());
    let horizon = s.duration();
    let total = bin_sums(w.traffic().iter().map(|t| (t.at, t.bytes as f64)), SEC, horizon);
    let control = bin_sums(
        w.traffic().iter().filter(|t| t.class == TrafficClass::Control).map(|t| (t.at, t.bytes as f64)),
        SEC,
        horizon,
    );
    let mean = |lo: usize, hi: usize| total[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
    let mut spikes = Vec::new();
    let mut steady = Vec::new();
    for k in 0..p.n_max {
        let at = p.join_at_s(k);
        let j = at.floor() as usize;
        spikes.push(Spike {
            n: k + 1,
            at_s: at,
            peak: total[j..j + 2].iter().copied().fold(0.0, f64::max),
            prior: mean(j - 5, j),
        });
        let end = (p.join_at_s(k + 1).floor() as usize).min(total.len());
        steady.push(mean(j + 10, end));
    }
    Ok(TrafficResult { freq_hz: p.freq_hz, total, control, spikes, steady, scenario: s.name })
}
