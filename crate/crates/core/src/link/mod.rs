//! Wireless link emulation: per-module link profiles, a deterministic event
//! queue, and range-gated links with serialization delay, latency, Bernoulli
//! loss and per-hop retransmission.

mod network;
mod profile;
mod queue;

pub use network::{
    distance, DropReason, Link, LinkError, LinkId, LinkStats, Mobility, Network, TraceRow, TxMode, TxOutcome,
    DEFAULT_QUEUE_CAP_BYTES,
};
pub use profile::{
    builtin_profiles, load_profiles, ConfigError, LinkProfile, ProfileSet, Standard, Topology, LOSS_SCALE_CAP,
};
pub use queue::EventQueue;
