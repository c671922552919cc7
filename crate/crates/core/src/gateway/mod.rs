//! Multi-interface gateway: configuration procedure, address translation,
//! the forwarding queue model and gateway selection for handover.

mod config;
mod ecmp;
mod forward;
mod nat;

pub use config::{
    GatewayConfig, GatewayError, GatewayState, InterfaceConfig, RecordingOps, SystemOps, UplinkConfig, UplinkKind,
};
pub use ecmp::{
    EcmpGroup, FlowKey, GatewayView, HandoverDetector, NoGateway, HYSTERESIS_HOLD, HYSTERESIS_MARGIN, LIVENESS_PERIOD,
    MISSED_HELLOS,
};
pub use forward::{
    write_metrics_csv, ByteCounters, DropCounters, Egress, ForwardRecord, Forwarder, ForwarderParams, Gateway,
    Translated, DEFAULT_FRAME_COST, DEFAULT_INGRESS_QUEUE, DEFAULT_NAT_CAPACITY, DEFAULT_POLL_COST,
};
pub use nat::{NatError, NatTable, DEFAULT_IDLE_TIMEOUT, PORT_MAX, PORT_MIN};
