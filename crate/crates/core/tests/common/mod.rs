//! Oracles shared by the integration tests.
#![allow(dead_code)]

pub mod dpsl;
pub mod graphs;
pub mod messages;

use unet::link::Mobility;
use unet::message::{frame_len, DigestEntry, HelloBeacon, Message, NodeId};
use unet::time::{from_secs, SEC};
use unet::uav::{FlightState, TopicSchedule, UavNode};

/// Per-hop header the world adds to each frame.
pub const HOP_HEADER: f64 = 20.0;

/// Mean wire size of one topic frame of a hovering UAV, header included.
pub fn topic_frame_bytes(hz: f64) -> f64 {
    let start = from_secs(100.0);
    let state = FlightState::flying(Mobility::fixed([150.0, 0.0, 20.0]), 12.6);
    let mut node = UavNode::new(NodeId::uav(1), state, TopicSchedule::standard(hz), Default::default(), start);
    let msgs = node.autopilot_step(start + 20 * SEC);
    let sizes: Vec<f64> =
        msgs.into_iter().map(|t| frame_len(&Message::Topic(t)).unwrap() as f64 + HOP_HEADER).collect();
    sizes.iter().sum::<f64>() / sizes.len() as f64
}

fn beacon_bytes(sender: NodeId, neighbors: Vec<NodeId>, digest: Vec<NodeId>) -> f64 {
    let b = HelloBeacon {
        sender,
        neighbor_set: neighbors,
        table_digest: digest
            .into_iter()
            .map(|destination| DigestEntry { destination, metric: 1, seq: 250_000 })
            .collect(),
        sent_at: 250_000,
    };
    frame_len(&Message::Hello(b)).unwrap() as f64 + HOP_HEADER
}

/// Bytes per second between one gateway and `n` one-hop UAVs: two standard
/// topics per UAV at `hz` plus one beacon each way per UAV per second.
pub fn steady_rate(n: usize, hz: f64) -> f64 {
    let gw = NodeId::gateway(1);
    let uavs: Vec<NodeId> = (1..=n as u32).map(NodeId::uav).collect();
    let topics = n as f64 * 2.0 * hz * topic_frame_bytes(hz);
    let mut beacons = 0.0;
    for &u in &uavs {
        let others: Vec<NodeId> = uavs.iter().copied().filter(|&v| v != u).collect();
        beacons += beacon_bytes(gw, uavs.clone(), others.clone());
        let mut nb = vec![gw];
        nb.extend(&others);
        beacons += beacon_bytes(u, nb, others);
    }
    topics + beacons
}
