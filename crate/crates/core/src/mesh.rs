//! Proactive distance-vector routing over UAV-to-UAV links.
//!
//! Every node beacons its table to each neighbor once per hello period. The
//! digest sent to a neighbor leaves out routes whose next hop is that neighbor
//! (split horizon). Each route carries the send time of the destination's own
//! latest beacon as a sequence number: fresher routes win, equal ones go by
//! metric, and a route counts as refreshed only when its sequence number
//! advances. Routes not refreshed for three periods expire, so a vanished
//! destination disappears even from tables that point at each other.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;

use crate::message::{DigestEntry, HelloBeacon, JoinAnnouncement, NodeId};
use crate::time::{to_ms, Nanos, SEC};

pub const HELLO_PERIOD: Nanos = SEC;
pub const EXPIRY_PERIODS: u64 = 3;
/// Metrics above this are unreachable.
pub const MAX_METRIC: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RouteEntry {
    pub next_hop: NodeId,
    pub metric: u32,
    pub seq: u64,
    /// When `seq` was first seen.
    pub last_updated: Nanos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no route to {0}")]
pub struct NoRoute(pub NodeId);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoutingTable {
    owner: NodeId,
    entries: BTreeMap<NodeId, RouteEntry>,
}

#[derive(Serialize)]
struct RouteRow {
    node: NodeId,
    dest: NodeId,
    next_hop: NodeId,
    metric: u32,
}

impl RoutingTable {
    pub fn new(owner: NodeId) -> Self {
        Self { owner, entries: BTreeMap::new() }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn get(&self, dest: NodeId) -> Option<&RouteEntry> {
        self.entries.get(&dest)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&NodeId, &RouteEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_hop(&self, dest: NodeId) -> Result<NodeId, NoRoute> {
        self.entries.get(&dest).map(|e| e.next_hop).ok_or(NoRoute(dest))
    }

    /// Appends `node,dest,next_hop,metric` rows (no header) to `w`.
    pub fn write_csv_rows<W: Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        for (dest, e) in &self.entries {
            w.serialize(RouteRow { node: self.owner, dest: *dest, next_hop: e.next_hop, metric: e.metric })?;
        }
        Ok(())
    }
}

/// Writes a routing-table dump for several nodes as CSV with a header.
pub fn write_tables_csv<'a, W: Write>(out: W, tables: impl IntoIterator<Item = &'a RoutingTable>) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["node", "dest", "next_hop", "metric"])?;
    for t in tables {
        t.write_csv_rows(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug)]
struct Offer {
    metric: u32,
    seq: u64,
    first_seen: Nanos,
}

#[derive(Clone, Debug)]
struct NeighborState {
    heard_at: Nanos,
    sent_at: u64,
    digest: BTreeMap<NodeId, Offer>,
}

/// Routing state of one mesh node.
#[derive(Clone, Debug)]
pub struct MeshRouter {
    table: RoutingTable,
    neighbors: BTreeMap<NodeId, NeighborState>,
    seen_joins: BTreeSet<(NodeId, u64)>,
    /// Newest sequence number heard per destination and when it first arrived.
    freshest: BTreeMap<NodeId, (u64, Nanos)>,
    period: Nanos,
}

impl MeshRouter {
    pub fn new(owner: NodeId) -> Self {
        Self::with_period(owner, HELLO_PERIOD)
    }

    pub fn with_period(owner: NodeId, period: Nanos) -> Self {
        Self {
            table: RoutingTable::new(owner),
            neighbors: BTreeMap::new(),
            seen_joins: BTreeSet::new(),
            freshest: BTreeMap::new(),
            period,
        }
    }

    pub fn owner(&self) -> NodeId {
        self.table.owner
    }

    pub fn table(&self) -> &RoutingTable {
        &self.table
    }

    pub fn period(&self) -> Nanos {
        self.period
    }

    pub fn next_hop(&self, dest: NodeId) -> Result<NodeId, NoRoute> {
        self.table.next_hop(dest)
    }

    pub fn neighbors(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.neighbors.keys().copied()
    }

    /// Applies a received beacon. Returns false for stale or self beacons.
    pub fn on_hello(&mut self, beacon: &HelloBeacon, now: Nanos) -> bool {
        let sender = beacon.sender;
        if sender == self.owner() {
            return false;
        }
        let previous = self.neighbors.get(&sender);
        if previous.is_some_and(|n| n.sent_at > beacon.sent_at) {
            return false;
        }
        let digest: BTreeMap<NodeId, Offer> = beacon
            .table_digest
            .iter()
            .filter(|e| e.destination != self.owner() && e.destination != sender)
            .map(|e| (e.destination, Offer { metric: e.metric, seq: e.seq, first_seen: 0 }))
            .collect::<Vec<_>>()
            .into_iter()
            .filter_map(|(d, o)| Some((d, Offer { first_seen: self.first_seen(d, o.seq, now)?, ..o })))
            .collect();
        self.first_seen(sender, beacon.sent_at, now);
        self.neighbors.insert(sender, NeighborState { heard_at: now, sent_at: beacon.sent_at, digest });

        self.table
            .entries
            .insert(sender, RouteEntry { next_hop: sender, metric: 1, seq: beacon.sent_at, last_updated: now });

        let horizon = EXPIRY_PERIODS * self.period;
        let offered: Vec<(NodeId, Offer)> = self.neighbors[&sender]
            .digest
            .iter()
            .filter(|(_, o)| o.metric < MAX_METRIC && now.saturating_sub(o.first_seen) <= horizon)
            .map(|(d, o)| (*d, Offer { metric: o.metric + 1, ..*o }))
            .collect();
        for (dest, o) in offered {
            let fresh = RouteEntry { next_hop: sender, metric: o.metric, seq: o.seq, last_updated: o.first_seen };
            match self.table.entries.get_mut(&dest) {
                None => {
                    self.table.entries.insert(dest, fresh);
                }
                Some(e) if o.seq > e.seq || (o.seq == e.seq && o.metric < e.metric) => *e = fresh,
                Some(e) if e.next_hop == sender && o.seq == e.seq => e.metric = o.metric,
                Some(_) => {}
            }
        }

        // Routes the sender no longer offers (withdrawn, poisoned or too long).
        let withdrawn: Vec<NodeId> = self
            .table
            .entries
            .iter()
            .filter(|(d, e)| {
                e.next_hop == sender
                    && **d != sender
                    && self.neighbors[&sender].digest.get(d).map_or(true, |o| o.metric + 1 > MAX_METRIC)
            })
            .map(|(d, _)| *d)
            .collect();
        for dest in withdrawn {
            self.reroute(dest, now);
        }
        true
    }

    /// Local arrival time of `seq` for `dest`, or None once a newer one is known.
    fn first_seen(&mut self, dest: NodeId, seq: u64, now: Nanos) -> Option<Nanos> {
        let f = self.freshest.entry(dest).or_insert((seq, now));
        if seq > f.0 {
            *f = (seq, now);
        }
        (seq == f.0).then_some(f.1)
    }

    /// Best alternative for `dest` among the cached neighbor digests, or
    /// removal when there is none.
    fn reroute(&mut self, dest: NodeId, now: Nanos) {
        let horizon = EXPIRY_PERIODS * self.period;
        let best = match self.neighbors.get(&dest) {
            Some(n) => Some(RouteEntry { next_hop: dest, metric: 1, seq: n.sent_at, last_updated: n.heard_at }),
            None => self
                .neighbors
                .iter()
                .filter_map(|(n, st)| st.digest.get(&dest).map(|o| (*n, *o)))
                .filter(|(_, o)| o.metric < MAX_METRIC && now.saturating_sub(o.first_seen) <= horizon)
                .min_by_key(|(n, o)| (std::cmp::Reverse(o.seq), o.metric, *n))
                .map(|(n, o)| RouteEntry { next_hop: n, metric: o.metric + 1, seq: o.seq, last_updated: o.first_seen }),
        };
        match best {
            Some(e) => {
                self.table.entries.insert(dest, e);
            }
            None => {
                self.table.entries.remove(&dest);
            }
        }
    }

    /// Forgets neighbors silent for more than three periods and drops (or
    /// re-routes) every route that has gone unrefreshed as long.
    pub fn expire(&mut self, now: Nanos) {
        let horizon = EXPIRY_PERIODS * self.period;
        self.neighbors.retain(|_, st| now.saturating_sub(st.heard_at) <= horizon);
        let stale: Vec<NodeId> = self
            .table
            .entries
            .iter()
            .filter(|(_, e)| now.saturating_sub(e.last_updated) > horizon || !self.neighbors.contains_key(&e.next_hop))
            .map(|(d, _)| *d)
            .collect();
        for dest in stale {
            self.table.entries.remove(&dest);
            self.reroute(dest, now);
        }
    }

    /// Beacon for one neighbor, with split horizon applied.
    pub fn beacon_for(&self, neighbor: NodeId, now: Nanos) -> HelloBeacon {
        HelloBeacon {
            sender: self.owner(),
            neighbor_set: self.neighbors.keys().copied().collect(),
            table_digest: self
                .table
                .entries
                .iter()
                .filter(|(d, e)| **d != neighbor && e.next_hop != neighbor)
                .map(|(d, e)| DigestEntry { destination: *d, metric: e.metric, seq: e.seq })
                .collect(),
            sent_at: to_ms(now),
        }
    }

    /// Records a JOIN announcement; true the first time it is seen, in which
    /// case the caller re-floods it and sends triggered beacons.
    pub fn on_join(&mut self, join: &JoinAnnouncement) -> bool {
        join.node != self.owner() && self.seen_joins.insert((join.node, join.join_id))
    }

    /// Marks an own announcement as seen so floods do not echo back.
    pub fn originate_join(&mut self, join_id: u64, now: Nanos) -> JoinAnnouncement {
        self.seen_joins.insert((self.owner(), join_id));
        JoinAnnouncement { node: self.owner(), join_id, sent_at: to_ms(now) }
    }
}

/// Byte log of mesh control frames (beacons and joins) as they are sent.
#[derive(Clone, Debug, Default)]
pub struct ControlTrafficLog {
    records: Vec<(Nanos, NodeId, usize)>,
}

impl ControlTrafficLog {
    pub fn record(&mut self, at: Nanos, sender: NodeId, bytes: usize) {
        self.records.push((at, sender, bytes));
    }

    /// Per-sender and aggregate control bytes sent in `[from, to)`.
    pub fn bytes_in(&self, from: Nanos, to: Nanos) -> (BTreeMap<NodeId, u64>, u64) {
        let mut per_node = BTreeMap::new();
        let mut total = 0;
        for &(t, node, bytes) in &self.records {
            if t >= from && t < to {
                *per_node.entry(node).or_insert(0) += bytes as u64;
                total += bytes as u64;
            }
        }
        (per_node, total)
    }
}
