use std::fmt;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::metrics::{Ci, Metric, MetricsRecord};
use crate::gateway::{
    ForwardRecord, ForwarderParams, Gateway, GatewayConfig, InterfaceConfig, UplinkConfig, UplinkKind,
    DEFAULT_FRAME_COST, DEFAULT_POLL_COST,
};
use crate::link::LinkProfile;
use crate::time::{Nanos, SEC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum LoadCase {
    /// One input.
    C1,
    /// Two inputs, one of them transmitting.
    C2,
    /// Two inputs, both transmitting.
    C3,
}

impl LoadCase {
    pub const ALL: [LoadCase; 3] = [LoadCase::C1, LoadCase::C2, LoadCase::C3];

    pub fn inputs(self) -> usize {
        match self {
            LoadCase::C1 => 1,
            _ => 2,
        }
    }

    pub fn active(self) -> usize {
        match self {
            LoadCase::C3 => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for LoadCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for LoadCase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "C1" => Ok(LoadCase::C1),
            "C2" => Ok(LoadCase::C2),
            "C3" => Ok(LoadCase::C3),
            _ => Err(format!("unknown load case {s:?}")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GatewayLoadParams {
    pub case: LoadCase,
    pub uplink_rate_mbps: f64,
    pub frame_bytes: usize,
    /// Offered load of each active input relative to the one-input capacity.
    pub load_factor: f64,
    pub frame_cost: Nanos,
    pub poll_cost: Nanos,
    pub duration: Nanos,
    /// Leading interval excluded from the series.
    pub warmup: Nanos,
    pub seed: u64,
}

impl GatewayLoadParams {
    pub fn new(case: LoadCase) -> Self {
        Self {
            case,
            uplink_rate_mbps: 100.0,
            frame_bytes: 16 * 1024,
            load_factor: 1.25,
            frame_cost: DEFAULT_FRAME_COST,
            poll_cost: DEFAULT_POLL_COST,
            duration: 20 * SEC,
            warmup: 2 * SEC,
            seed: 1,
        }
    }

    fn forwarder(&self) -> ForwarderParams {
        let mut f = ForwarderParams::new(LinkProfile::ideal("uplink", self.uplink_rate_mbps));
        f.frame_cost = self.frame_cost;
        f.poll_cost = self.poll_cost;
        f
    }

    /// Interval between frames of one active input.
    pub fn arrival_interval(&self) -> Nanos {
        let one_input =
            self.frame_cost + LinkProfile::ideal("uplink", self.uplink_rate_mbps).serialization_ns(self.frame_bytes);
        ((one_input as f64) / self.load_factor).round() as Nanos
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GatewayLoadResult {
    pub case: LoadCase,
    /// Per-second throughput of one flow (mean over active inputs), Mbps.
    pub per_flow_mbps: Vec<f64>,
    /// Per-second aggregate throughput, Mbps.
    pub total_mbps: Vec<f64>,
    /// Per-second mean processing delay, ms.
    pub proc_delay_ms: Vec<f64>,
    pub offered_bytes: u64,
    pub bytes_out: u64,
    pub bytes_dropped: u64,
    pub bytes_queued: u64,
    pub conservation_held: bool,
    #[serde(skip)]
    pub records: Vec<ForwardRecord>,
    #[serde(skip)]
    pub iface_names: Vec<String>,
}

impl GatewayLoadResult {
    pub fn throughput(&self) -> Ci {
        Ci::of(&self.per_flow_mbps)
    }

    pub fn delay(&self) -> Ci {
        Ci::of(&self.proc_delay_ms)
    }

    pub fn metrics(&self, warmup_s: usize) -> Vec<MetricsRecord> {
        let case = self.case.to_string();
        let mut out = Vec::new();
        for (i, (t, d)) in self.per_flow_mbps.iter().zip(&self.proc_delay_ms).enumerate() {
            let time_ms = ((warmup_s + i + 1) * 1000) as f64;
            out.push(MetricsRecord::new(time_ms, Metric::Throughput, *t).labels("gateway", "", &case));
            out.push(MetricsRecord::new(time_ms, Metric::ProcDelay, *d).labels("gateway", "", &case));
        }
        out
    }
}

pub(super) fn config(inputs: usize) -> GatewayConfig {
    let interfaces = (0..inputs)
        .map(|i| InterfaceConfig {
            name: format!("wlan{i}"),
            profile: "ideal".into(),
            address: Ipv4Addr::new(10, 0, i as u8 + 1, 1),
            netmask: Ipv4Addr::new(255, 255, 255, 0),
            dns: None,
        })
        .collect();
    GatewayConfig::new(
        interfaces,
        UplinkConfig {
            kind: UplinkKind::Lan,
            address: Ipv4Addr::new(192, 168, 1, 2),
            netmask: Ipv4Addr::new(255, 255, 255, 0),
        },
    )
}

/// Saturates the gateway from one or two inputs and measures per-second
/// throughput and processing delay.
pub fn run_gateway_load(p: &GatewayLoadParams) -> GatewayLoadResult {
    let mut gw: Gateway<()> = Gateway::new(config(p.case.inputs()), p.forwarder());
    gw.configure().expect("generated gateway config is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let interval = p.arrival_interval();
    let mut next: Vec<Nanos> = (0..p.case.active()).map(|_| rng.gen_range(0..interval)).collect();
    let srcs: Vec<SocketAddrV4> =
        (0..p.case.active()).map(|i| SocketAddrV4::new(Ipv4Addr::new(10, 0, i as u8 + 1, 10), 5000)).collect();
    let mut offered = 0u64;
    let mut conservation_held = true;
    loop {
        let (i, &t) = next.iter().enumerate().min_by_key(|&(i, t)| (*t, i)).unwrap();
        if t >= p.duration {
            break;
        }
        gw.forward(i, srcs[i], p.frame_bytes, (), t);
        offered += p.frame_bytes as u64;
        conservation_held &= gw.forwarder().conservation_holds();
        next[i] = t + interval;
    }
    gw.advance(p.duration - 1);
    conservation_held &= gw.forwarder().conservation_holds();

    let bins = ((p.duration - p.warmup) / SEC) as usize;
    let mut bytes = vec![vec![0u64; bins]; p.case.inputs()];
    let mut delay_sum = vec![0u64; bins];
    let mut delay_n = vec![0u64; bins];
    for r in gw.records() {
        if r.dequeued_at < p.warmup {
            continue;
        }
        let b = ((r.dequeued_at - p.warmup) / SEC) as usize;
        if b >= bins {
            continue;
        }
        bytes[r.ingress][b] += r.bytes as u64;
        delay_sum[b] += r.processing_delay();
        delay_n[b] += 1;
    }
    let mbps = |b: u64| b as f64 * 8.0 / 1e6;
    let total_mbps: Vec<f64> = (0..bins).map(|b| mbps(bytes.iter().map(|v| v[b]).sum())).collect();
    let per_flow_mbps: Vec<f64> = (0..bins)
        .map(|b| bytes[..p.case.active()].iter().map(|v| mbps(v[b])).sum::<f64>() / p.case.active() as f64)
        .collect();
    let proc_delay_ms: Vec<f64> =
        (0..bins).map(|b| if delay_n[b] == 0 { 0.0 } else { delay_sum[b] as f64 / delay_n[b] as f64 / 1e6 }).collect();
    let c = gw.forwarder().counters();
    GatewayLoadResult {
        case: p.case,
        per_flow_mbps,
        total_mbps,
        proc_delay_ms,
        offered_bytes: offered,
        bytes_out: c.bytes_out,
        bytes_dropped: c.bytes_dropped,
        bytes_queued: gw.forwarder().bytes_queued(),
        conservation_held,
        records: gw.records().to_vec(),
        iface_names: gw.iface_names(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(case: LoadCase) -> GatewayLoadParams {
        let mut p = GatewayLoadParams::new(case);
        p.duration = 6 * SEC;
        p
    }

    #[test]
    fn bytes_are_conserved() {
        for case in LoadCase::ALL {
            let r = run_gateway_load(&short(case));
            assert!(r.conservation_held);
            assert_eq!(r.offered_bytes, r.bytes_out + r.bytes_dropped + r.bytes_queued);
        }
    }

    #[test]
    fn idle_interface_costs_nothing_without_polling() {
        let mut c1 = short(LoadCase::C1);
        let mut c2 = short(LoadCase::C2);
        c1.poll_cost = 0;
        c2.poll_cost = 0;
        let (a, b) = (run_gateway_load(&c1), run_gateway_load(&c2));
        assert_eq!(a.per_flow_mbps, b.per_flow_mbps);
        assert_eq!(a.proc_delay_ms, b.proc_delay_ms);
    }

    #[test]
    fn case_names() {
        assert_eq!("c3".parse::<LoadCase>().unwrap(), LoadCase::C3);
        assert_eq!((LoadCase::C2.inputs(), LoadCase::C2.active()), (2, 1));
    }
}
