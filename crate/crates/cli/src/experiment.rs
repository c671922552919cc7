use std::fmt::Write as _;

use clap::{Args, Subcommand};
use unet::harness::{
    run_e2e, run_gateway_load, run_handover, run_reliability, run_task_exec, run_traffic, E2eParams, GatewayLoadParams,
    HandoverParams, LoadCase, MetricsRecord, ProbeKind, ReliabilityParams, ScenarioError, TaskParams, TrafficParams,
};
use unet::link::{builtin_profiles, LinkProfile, TxMode};
use unet::message::ServiceName;
use unet::time::from_secs;

const WIFI: [&str; 3] = ["AlfaTube 2H", "Ubiquiti Bullet M2", "TPLink WR902AC"];

#[derive(Debug, Subcommand)]
pub enum Experiment {
    /// Delay to resume traffic after switching gateways.
    Handover(HandoverArgs),
    /// Gateway throughput and processing delay for load cases C1..C3.
    Gateway(GatewayArgs),
    /// Saturated UAV-to-service path: delivery delay, throughput, loss.
    E2e(E2eArgs),
    /// Command round trip from the GCS to a UAV and back.
    Task(TaskArgs),
    /// Bytes between gateway and swarm while UAVs join.
    Traffic(TrafficArgs),
    /// Video frame loss and throughput against bandwidth use.
    Reliability(ReliabilityArgs),
}

#[derive(Debug, Args)]
pub struct HandoverArgs {
    /// Link profile name; all Wi-Fi profiles when absent.
    #[arg(long)]
    pub profile: Option<String>,
    /// RELIABLE, UNRELIABLE or ECHO; all when absent.
    #[arg(long)]
    pub kind: Option<ProbeKind>,
    #[arg(long, default_value_t = 30)]
    pub crossings: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GatewayArgs {
    /// C1, C2 or C3; all when absent.
    #[arg(long)]
    pub case: Option<LoadCase>,
    #[arg(long, default_value_t = 20.0)]
    pub duration_s: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct E2eArgs {
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    pub duration_s: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TaskArgs {
    /// ARM_THROTTLE, SET_MODE, TAKEOFF or LAND; ARM_THROTTLE and SET_MODE when absent.
    #[arg(long)]
    pub service: Option<ServiceName>,
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrafficArgs {
    /// Topic rate in Hz; 3 and 6 when absent.
    #[arg(long)]
    pub freq: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub n_max: usize,
    #[arg(long, default_value_t = 100.0)]
    pub join_period_s: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReliabilityArgs {
    /// 20 or 30; both when absent.
    #[arg(long)]
    pub fps: Option<u32>,
    #[arg(long)]
    pub profile: Option<String>,
    /// Multiplies the raw 320x240 frame size.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 60.0)]
    pub duration_s: f64,
    /// Send fragments without link-layer retransmission.
    #[arg(long)]
    pub unreliable: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Human-readable summary plus the metric rows of a run.
pub struct Outcome {
    pub summary: String,
    pub records: Vec<MetricsRecord>,
}

fn profiles(name: &Option<String>) -> Result<Vec<LinkProfile>, ScenarioError> {
    let set = builtin_profiles();
    let names: Vec<&str> = match name {
        Some(n) => vec![n.as_str()],
        None => WIFI.to_vec(),
    };
    names.into_iter().map(|n| set.get(n).cloned().ok_or_else(|| ScenarioError::UnknownProfile(n.to_string()))).collect()
}

fn lan() -> LinkProfile {
    builtin_profiles()["LAN"].clone()
}

fn positive(what: &str, v: f64) -> Result<(), ScenarioError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ScenarioError::Invalid(format!("{what} must be positive, got {v}")))
    }
}

pub fn run(e: &Experiment) -> Result<Outcome, ScenarioError> {
    let mut summary = String::new();
    let mut records = Vec::new();
    match e {
        Experiment::Handover(a) => {
            let kinds = a.kind.map_or(ProbeKind::ALL.to_vec(), |k| vec![k]);
            for prof in profiles(&a.profile)? {
                for &kind in &kinds {
                    let mut p = HandoverParams::new(prof.clone(), kind);
                    p.crossings = a.crossings;
                    p.seed = a.seed;
                    let r = run_handover(&p)?;
                    writeln!(summary, "handover {:<20} {:<10} {} s", r.profile, kind, r.ci_s()).unwrap();
                    records.extend(r.records());
                }
            }
        }
        Experiment::Gateway(a) => {
            positive("duration_s", a.duration_s)?;
            for case in a.case.map_or(LoadCase::ALL.to_vec(), |c| vec![c]) {
                let mut p = GatewayLoadParams::new(case);
                p.duration = from_secs(a.duration_s);
                p.warmup = p.warmup.min(p.duration / 2);
                p.seed = a.seed;
                let r = run_gateway_load(&p);
                writeln!(summary, "gateway {case} throughput {} Mbps, delay {} ms", r.throughput(), r.delay()).unwrap();
                records.extend(r.metrics((p.warmup / unet::time::SEC) as usize));
            }
        }
        Experiment::E2e(a) => {
            positive("duration_s", a.duration_s)?;
            for prof in profiles(&a.profile)? {
                let mut p = E2eParams::new(prof.clone(), lan());
                p.duration = from_secs(a.duration_s);
                p.seed = a.seed;
                let r = run_e2e(&p)?;
                writeln!(
                    summary,
                    "e2e {:<20} PDD {} ms, throughput {} Mbps, PLP {:.5}",
                    prof.name,
                    r.pdd(),
                    r.throughput(),
                    r.plp()
                )
                .unwrap();
                records.extend(r.metrics());
            }
        }
        Experiment::Task(a) => {
            let services = a.service.map_or(vec![ServiceName::ArmThrottle, ServiceName::SetMode], |s| vec![s]);
            for prof in profiles(&a.profile)? {
                for &s in &services {
                    let mut p = TaskParams::new(s, prof.clone(), lan());
                    p.trials = a.trials;
                    p.seed = a.seed;
                    let r = run_task_exec(&p)?;
                    writeln!(
                        summary,
                        "task {:<20} {:<12} {} ms (one-way {} ms, {} timeouts)",
                        prof.name,
                        s,
                        r.task(),
                        r.one_way(),
                        r.timeouts
                    )
                    .unwrap();
                    records.extend(r.metrics());
                }
            }
        }
        Experiment::Traffic(a) => {
            for hz in a.freq.map_or(vec![3.0, 6.0], |f| vec![f]) {
                positive("freq", hz)?;
                let mut p = TrafficParams::new(hz);
                p.n_max = a.n_max;
                p.join_period_s = a.join_period_s;
                p.seed = a.seed;
                let r = run_traffic(&p)?;
                for s in &r.spikes {
                    writeln!(
                        summary,
                        "traffic {hz} Hz n={} spike {:.0} B/s over prior {:.0} B/s, steady {:.0} B/s",
                        s.n,
                        s.peak,
                        s.prior,
                        r.steady[s.n - 1]
                    )
                    .unwrap();
                }
                records.extend(r.metrics());
            }
        }
        Experiment::Reliability(a) => {
            positive("duration_s", a.duration_s)?;
            positive("scale", a.scale)?;
            for prof in profiles(&a.profile)? {
                for fps in a.fps.map_or(vec![20, 30], |f| vec![f]) {
                    if fps == 0 {
                        return Err(ScenarioError::Invalid("fps must be positive".into()));
                    }
                    let mut p = ReliabilityParams::new(fps, prof.clone());
                    p.scale = a.scale;
                    p.duration = from_secs(a.duration_s);
                    p.seed = a.seed;
                    if a.unreliable {
                        p.mode = TxMode::Unreliable;
                    }
                    let r = run_reliability(&p)?;
                    writeln!(
                        summary,
                        "reliability {:<20} {fps} fps frame loss {} ({} of {} lost)",
                        prof.name,
                        r.loss(),
                        r.frames_lost,
                        r.frames_sent
                    )
                    .unwrap();
                    records.extend(r.metrics());
                }
            }
        }
    }
    Ok(Outcome { summary, records })
}
