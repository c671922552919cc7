//! Reproducible experiments over the emulated stack.

pub mod e2e;
pub mod gateway_load;
pub mod handover;
pub mod metrics;
pub mod reliability;
pub mod scenario;
pub mod task;
pub mod traffic;
pub mod world;

pub use e2e::{run_e2e, E2eParams, E2eResult};
pub use gateway_load::{run_gateway_load, GatewayLoadParams, GatewayLoadResult, LoadCase};
pub use handover::{run_handover, HandoverParams, HandoverResult, ProbeKind};
pub use metrics::{bin_sums, write_metrics_csv, Ci, Metric, MetricsRecord};
pub use reliability::{run_reliability, ReliabilityParams, ReliabilityResult};
pub use scenario::{EventKind, EventSpec, GatewaySpec, Scenario, UavSpec};
pub use task::{run_task_exec, TaskParams, TaskResult};
pub use traffic::{run_traffic, Spike, TrafficParams, TrafficResult};
pub use world::{run_scenario, TrafficClass, TrafficSample, World, WorldReport};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown link profile {0:?}")]
    UnknownProfile(String),
    #[error("scenario file: {0}")]
    Parse(String),
    #[error("the UAV never crossed between gateways")]
    NoCrossing,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
