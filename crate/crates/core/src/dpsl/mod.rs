//! Data processing and service layer: accepts UAV channel pairs, stores and
//! fans out topics, dispatches service calls, and speaks the bridge protocol.

pub mod bridge;
mod service;
mod store;

pub use bridge::{ClientMsg, Pattern, RosterEntry, ServerMsg, Subscription, UavStatus};
pub use service::{
    ClientId, ConnId, DpslCounters, DpslService, Effect, PendingCall, LIVENESS_WINDOW, SERVICE_DEADLINE,
};
pub use store::{Stored, TopicEntry, TopicStore, RING_SIZE};
