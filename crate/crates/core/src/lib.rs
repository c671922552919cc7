//! Multi-UAV communication and networking stack.
//!
//! The crate is organised along the layers of the system: [`message`] defines
//! what travels on the wire, [`link`] emulates the radios, [`mesh`] routes
//! between UAVs, [`uav`] is the airborne node, [`gateway`] bridges the ad hoc
//! side to the backhaul, [`dpsl`] is the data processing and service layer, and
//! [`harness`] turns all of it into reproducible experiments.

pub mod dpsl;
pub mod gateway;
pub mod harness;
pub mod link;
pub mod mesh;
pub mod message;
pub mod time;
pub mod uav;
