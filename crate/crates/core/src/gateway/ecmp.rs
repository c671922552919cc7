use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::{ChannelKind, NodeId};
use crate::time::{Nanos, MS, SEC};

pub const LIVENESS_PERIOD: Nanos = 500 * MS;
pub const MISSED_HELLOS: u64 = 3;
pub const HYSTERESIS_MARGIN: f64 = 0.2;
pub const HYSTERESIS_HOLD: Nanos = SEC;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("no live gateway")]
pub struct NoGateway;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub src: NodeId,
    pub dst: NodeId,
    pub channel: ChannelKind,
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn node_bytes(n: NodeId) -> impl Iterator<Item = u8> {
    std::iter::once(n.kind as u8).chain(n.index.to_be_bytes())
}

/// Rendezvous weight of `member` for `flow`.
fn weight(flow: &FlowKey, member: NodeId) -> u64 {
    let ch = match flow.channel {
        ChannelKind::Topic => 0u8,
        ChannelKind::Service => 1,
    };
    let h = fnv1a(node_bytes(flow.src).chain(node_bytes(flow.dst)).chain([ch]).chain(node_bytes(member)));
    // Final avalanche so members differing in one byte spread evenly.
    let mut x = h;
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x
}

/// Equal-cost gateway group. A flow goes to the live member with the highest
/// rendezvous weight, so membership changes only move the flows that hashed
/// to the affected member.
#[derive(Clone, Debug)]
pub struct EcmpGroup {
    members: Vec<NodeId>,
    last_hello: BTreeMap<NodeId, Nanos>,
    link_up: BTreeMap<NodeId, bool>,
    period: Nanos,
}

impl EcmpGroup {
    pub fn new(members: Vec<NodeId>) -> Self {
        Self::with_period(members, LIVENESS_PERIOD)
    }

    pub fn with_period(members: Vec<NodeId>, period: Nanos) -> Self {
        Self { members, last_hello: BTreeMap::new(), link_up: BTreeMap::new(), period }
    }

    pub fn members(&self) -> &[NodeId] {
        &self.members
    }

    /// Time without hellos after which a member is declared dead.
    pub fn detection_time(&self) -> Nanos {
        self.period * MISSED_HELLOS
    }

    pub fn on_hello(&mut self, member: NodeId, now: Nanos) {
        if self.members.contains(&member) {
            self.last_hello.insert(member, now);
        }
    }

    /// Local link state towards a member, independent of its hellos.
    pub fn set_link(&mut self, member: NodeId, up: bool) {
        self.link_up.insert(member, up);
    }

    pub fn is_live(&self, member: NodeId, now: Nanos) -> bool {
        self.link_up.get(&member).copied().unwrap_or(true)
            && self.last_hello.get(&member).is_some_and(|&t| now.saturating_sub(t) < self.detection_time())
    }

    pub fn live_members(&self, now: Nanos) -> Vec<NodeId> {
        self.members.iter().copied().filter(|m| self.is_live(*m, now)).collect()
    }

    pub fn select(&self, flow: &FlowKey, now: Nanos) -> Result<NodeId, NoGateway> {
        self.members
            .iter()
            .copied()
            .filter(|m| self.is_live(*m, now))
            .max_by_key(|m| (weight(flow, *m), std::cmp::Reverse(*m)))
            .ok_or(NoGateway)
    }
}

/// UAV-side switch decision: leave a gateway whose link is down at once;
/// otherwise move only when another gateway has stayed at least 20% closer
/// for the hold time.
#[derive(Clone, Debug)]
pub struct HandoverDetector {
    pub margin: f64,
    pub hold: Nanos,
    candidate: Option<(NodeId, Nanos)>,
}

impl Default for HandoverDetector {
    fn default() -> Self {
        Self { margin: HYSTERESIS_MARGIN, hold: HYSTERESIS_HOLD, candidate: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GatewayView {
    pub id: NodeId,
    pub distance_m: f64,
    pub reachable: bool,
}

impl HandoverDetector {
    /// Returns the gateway to use from now on (may equal `current`), or
    /// `None` when nothing is reachable.
    pub fn evaluate(&mut self, current: Option<NodeId>, views: &[GatewayView], now: Nanos) -> Option<NodeId> {
        let best = views
            .iter()
            .filter(|v| v.reachable)
            .min_by(|a, b| a.distance_m.total_cmp(&b.distance_m).then(a.id.cmp(&b.id)))
            .copied();
        let cur = current.and_then(|c| views.iter().find(|v| v.id == c && v.reachable));
        let Some(cur) = cur else {
            self.candidate = None;
            return best.map(|b| b.id);
        };
        let Some(best) = best.filter(|b| b.id != cur.id && b.distance_m <= cur.distance_m * (1.0 - self.margin)) else {
            self.candidate = None;
            return Some(cur.id);
        };
        match self.candidate {
            Some((id, since)) if id == best.id => {
                if now.saturating_sub(since) >= self.hold {
                    self.candidate = None;
                    Some(best.id)
                } else {
                    Some(cur.id)
                }
            }
            _ => {
                self.candidate = Some((best.id, now));
                Some(cur.id)
            }
        }
    }
}
