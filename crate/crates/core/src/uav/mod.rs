//! UAV node: autopilot model, data bridge and its two communication modules.

mod flight;
mod gcscom;
mod node;
mod uavcom;

pub use flight::{AutopilotConfig, FlightMode, FlightState};
pub use gcscom::{backoff, ChannelState, ClientAction, GcsClient, BACKOFF_BASE, BACKOFF_CAP, DEFAULT_BUFFER};
pub use node::{TopicSchedule, TopicSpec, UavNode, MOTION_STEP};
pub use uavcom::{TopicDirectory, DEFAULT_SYNC_PERIOD};
