use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use rand::Rng;
use serde::Serialize;

use super::profile::LinkProfile;
use crate::message::NodeId;
use crate::time::{to_ms_f64, Nanos};

/// Default drop-tail cap per link direction.
pub const DEFAULT_QUEUE_CAP_BYTES: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct LinkId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LinkError {
    #[error("a link needs two distinct endpoints")]
    SameNode,
    #[error("link between {0} and {1} already exists")]
    AlreadyExists(NodeId, NodeId),
    #[error("no such link")]
    UnknownLink,
    #[error("{0} is not an endpoint of this link")]
    NotEndpoint(NodeId),
    #[error("link is down")]
    LinkDown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxMode {
    /// One attempt, no acknowledgement.
    Unreliable,
    /// Per-hop ARQ: a lost attempt (or lost hop acknowledgement) is retried
    /// after `retx_timeout`, up to `retx_limit` times.
    Reliable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    Loss,
    QueueFull,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxOutcome {
    /// Arrival times at the far end. The first entry is the delivery, any
    /// further entries are duplicates caused by lost hop acknowledgements.
    pub deliveries: Vec<Nanos>,
    pub attempts: u32,
    pub first_attempt_at: Nanos,
    /// When the sender is done with the frame (confirmed or given up).
    pub done_at: Nanos,
    pub dropped: Option<DropReason>,
}

impl TxOutcome {
    pub fn delivered_at(&self) -> Option<Nanos> {
        self.deliveries.first().copied()
    }
}

/// Straight-line waypoint mobility in a local east-north-up frame (metres).
#[derive(Clone, Debug, PartialEq)]
pub struct Mobility {
    pub position: [f64; 3],
    pub waypoints: VecDeque<[f64; 3]>,
    pub speed_mps: f64,
}

impl Mobility {
    pub fn fixed(position: [f64; 3]) -> Self {
        Self { position, waypoints: VecDeque::new(), speed_mps: 0.0 }
    }

    pub fn with_path(position: [f64; 3], waypoints: impl IntoIterator<Item = [f64; 3]>, speed_mps: f64) -> Self {
        assert!(speed_mps >= 0.0 && speed_mps.is_finite(), "speed must be a finite non-negative number");
        assert!(position.iter().all(|v| v.is_finite()), "position must be finite");
        Self { position, waypoints: waypoints.into_iter().collect(), speed_mps }
    }

    pub fn is_moving(&self) -> bool {
        !self.waypoints.is_empty() && self.speed_mps > 0.0
    }

    /// Moves along the path for `dt_s` seconds; reached waypoints are popped.
    pub fn step(&mut self, dt_s: f64) {
        let mut budget = self.speed_mps * dt_s;
        while budget > 0.0 {
            let Some(target) = self.waypoints.front().copied() else { break };
            let d = distance(self.position, target);
            if d <= budget + 1e-9 {
                self.position = target;
                self.waypoints.pop_front();
                budget -= d;
            } else {
                let f = budget / d;
                for (p, t) in self.position.iter_mut().zip(target) {
                    *p += (t - *p) * f;
                }
                budget = 0.0;
            }
        }
    }
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LinkStats {
    pub offered_frames: u64,
    pub offered_bytes: u64,
    pub delivered_frames: u64,
    pub delivered_bytes: u64,
    pub duplicate_frames: u64,
    pub dropped_frames: u64,
    pub dropped_bytes: u64,
    pub attempts: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub time_ms: String,
    pub link: u32,
    pub event: &'static str,
    pub bytes: usize,
}

#[derive(Debug, Default)]
struct Direction {
    busy_until: Nanos,
    /// (start, end, bytes) of frames not yet fully sent.
    pending: VecDeque<(Nanos, Nanos, usize)>,
}

impl Direction {
    fn queued_bytes(&mut self, now: Nanos) -> usize {
        while self.pending.front().is_some_and(|&(_, end, _)| end <= now) {
            self.pending.pop_front();
        }
        self.pending.iter().filter(|&&(start, _, _)| start > now).map(|&(_, _, b)| b).sum()
    }
}

#[derive(Debug)]
pub struct Link {
    pub id: LinkId,
    pub a: NodeId,
    pub b: NodeId,
    pub profile: LinkProfile,
    /// Administrative state; a disabled link is down regardless of range.
    pub enabled: bool,
    dirs: [Direction; 2],
    stats: [LinkStats; 2],
}

impl Link {
    pub fn other(&self, node: NodeId) -> Option<NodeId> {
        if node == self.a {
            Some(self.b)
        } else if node == self.b {
            Some(self.a)
        } else {
            None
        }
    }

    pub fn stats(&self) -> LinkStats {
        let [x, y] = self.stats;
        LinkStats {
            offered_frames: x.offered_frames + y.offered_frames,
            offered_bytes: x.offered_bytes + y.offered_bytes,
            delivered_frames: x.delivered_frames + y.delivered_frames,
            delivered_bytes: x.delivered_bytes + y.delivered_bytes,
            duplicate_frames: x.duplicate_frames + y.duplicate_frames,
            dropped_frames: x.dropped_frames + y.dropped_frames,
            dropped_bytes: x.dropped_bytes + y.dropped_bytes,
            attempts: x.attempts + y.attempts,
        }
    }

    /// Stats for frames sent by `from`.
    pub fn stats_from(&self, from: NodeId) -> Option<LinkStats> {
        if from == self.a {
            Some(self.stats[0])
        } else if from == self.b {
            Some(self.stats[1])
        } else {
            None
        }
    }
}

/// Node positions plus the set of emulated links between them.
#[derive(Debug)]
pub struct Network {
    positions: BTreeMap<NodeId, [f64; 3]>,
    links: Vec<Link>,
    by_pair: BTreeMap<(NodeId, NodeId), LinkId>,
    queue_cap_bytes: usize,
    trace: Option<Vec<TraceRow>>,
}

impl Default for Network {
    fn default() -> Self {
        Self::new()
    }
}

fn pair(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Network {
    pub fn new() -> Self {
        Self {
            positions: BTreeMap::new(),
            links: Vec::new(),
            by_pair: BTreeMap::new(),
            queue_cap_bytes: DEFAULT_QUEUE_CAP_BYTES,
            trace: None,
        }
    }

    pub fn with_queue_cap(mut self, bytes: usize) -> Self {
        self.queue_cap_bytes = bytes;
        self
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[TraceRow] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn set_position(&mut self, node: NodeId, position: [f64; 3]) {
        self.positions.insert(node, position);
    }

    /// Unplaced nodes sit at the origin.
    pub fn position(&self, node: NodeId) -> [f64; 3] {
        self.positions.get(&node).copied().unwrap_or([0.0; 3])
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        distance(self.position(a), self.position(b))
    }

    pub fn attach_link(&mut self, a: NodeId, b: NodeId, profile: LinkProfile) -> Result<LinkId, LinkError> {
        if a == b {
            return Err(LinkError::SameNode);
        }
        let key = pair(a, b);
        if self.by_pair.contains_key(&key) {
            return Err(LinkError::AlreadyExists(key.0, key.1));
        }
        let id = LinkId(self.links.len() as u32);
        self.links.push(Link { id, a, b, profile, enabled: true, dirs: Default::default(), stats: Default::default() });
        self.by_pair.insert(key, id);
        Ok(id)
    }

    pub fn link(&self, id: LinkId) -> Option<&Link> {
        self.links.get(id.0 as usize)
    }

    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.links.iter()
    }

    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<LinkId> {
        self.by_pair.get(&pair(a, b)).copied()
    }

    pub fn set_enabled(&mut self, id: LinkId, enabled: bool) -> Result<(), LinkError> {
        self.links.get_mut(id.0 as usize).ok_or(LinkError::UnknownLink)?.enabled = enabled;
        Ok(())
    }

    pub fn is_live(&self, id: LinkId) -> bool {
        self.link(id).is_some_and(|l| l.enabled && l.profile.in_range(self.distance(l.a, l.b)))
    }

    /// Live links incident to `node`, with the neighbor on the far side.
    pub fn live_neighbors(&self, node: NodeId) -> Vec<(LinkId, NodeId)> {
        self.links.iter().filter_map(|l| l.other(node).map(|n| (l.id, n))).filter(|&(id, _)| self.is_live(id)).collect()
    }

    fn record(&mut self, at: Nanos, link: LinkId, event: &'static str, bytes: usize) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRow { time_ms: format!("{:.3}", to_ms_f64(at)), link: link.0, event, bytes });
        }
    }

    /// Offers a frame of `bytes` to the link from `from`'s side at `now` and
    /// resolves its fate. The link direction stays busy while the frame is
    /// serialized and, on loss, while the sender waits to retry, so frames on
    /// one direction are delivered in the order offered.
    pub fn transmit<R: Rng + ?Sized>(
        &mut self,
        id: LinkId,
        from: NodeId,
        bytes: usize,
        now: Nanos,
        mode: TxMode,
        rng: &mut R,
    ) -> Result<TxOutcome, LinkError> {
        if !self.is_live(id) {
            return Err(LinkError::LinkDown);
        }
        let cap = self.queue_cap_bytes;
        let (dir_idx, p) = {
            let link = &self.links[id.0 as usize];
            let dir_idx = if from == link.a {
                0
            } else if from == link.b {
                1
            } else {
                return Err(LinkError::NotEndpoint(from));
            };
            (dir_idx, link.profile.loss_at(self.distance(link.a, link.b)))
        };
        let link = &mut self.links[id.0 as usize];
        let ser = link.profile.serialization_ns(bytes);
        let latency = link.profile.base_latency_ns();
        let rto = link.profile.retx_timeout_ns();
        let max_attempts = match mode {
            TxMode::Unreliable => 1,
            TxMode::Reliable => link.profile.retx_limit + 1,
        };
        let dir = &mut link.dirs[dir_idx];
        let stats = &mut link.stats[dir_idx];
        stats.offered_frames += 1;
        stats.offered_bytes += bytes as u64;

        if dir.queued_bytes(now) + bytes > cap {
            stats.dropped_frames += 1;
            stats.dropped_bytes += bytes as u64;
            self.record(now, id, "drop_queue", bytes);
            return Ok(TxOutcome {
                deliveries: Vec::new(),
                attempts: 0,
                first_attempt_at: now,
                done_at: now,
                dropped: Some(DropReason::QueueFull),
            });
        }

        let start = now.max(dir.busy_until);
        let mut t = start;
        let mut deliveries = Vec::new();
        let mut attempts = 0;
        let mut done_at = start;
        while attempts < max_attempts {
            attempts += 1;
            let end = t + ser;
            let forward_ok = rng.gen::<f64>() >= p;
            if forward_ok {
                deliveries.push(end + latency);
            }
            match mode {
                TxMode::Unreliable => {
                    done_at = end;
                    break;
                }
                TxMode::Reliable => {
                    let ack_ok = forward_ok && rng.gen::<f64>() >= p;
                    if ack_ok {
                        done_at = end;
                        break;
                    }
                    done_at = end + rto;
                    t = end + rto;
                }
            }
        }
        dir.busy_until = done_at;
        dir.pending.push_back((start, done_at, bytes));
        stats.attempts += attempts as u64;

        let dropped = if deliveries.is_empty() {
            stats.dropped_frames += 1;
            stats.dropped_bytes += bytes as u64;
            Some(DropReason::Loss)
        } else {
            stats.delivered_frames += 1;
            stats.delivered_bytes += bytes as u64;
            stats.duplicate_frames += deliveries.len() as u64 - 1;
            None
        };
        self.record(now, id, "offer", bytes);
        match deliveries.split_first() {
            Some((&first, dups)) => {
                self.record(first, id, "deliver", bytes);
                for &d in dups {
                    self.record(d, id, "duplicate", bytes);
                }
            }
            None => self.record(done_at, id, "drop_loss", bytes),
        }
        Ok(TxOutcome { deliveries, attempts, first_attempt_at: start, done_at, dropped })
    }

    /// Writes the event trace as CSV: `time_ms,link,event,bytes`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.trace() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::profile::builtin_profiles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tplink() -> LinkProfile {
        builtin_profiles()["TPLink WR902AC"].clone()
    }

    fn two_nodes(dist: f64, profile: LinkProfile) -> (Network, LinkId) {
        let mut net = Network::new();
        net.set_position(NodeId::uav(0), [0.0; 3]);
        net.set_position(NodeId::gateway(0), [dist, 0.0, 0.0]);
        let id = net.attach_link(NodeId::uav(0), NodeId::gateway(0), profile).unwrap();
        (net, id)
    }

    #[test]
    fn liveness_follows_range() {
        let (net, id) = two_nodes(100.0, tplink());
        assert!(net.is_live(id));
        let (net, id) = two_nodes(500.0, tplink());
        assert!(!net.is_live(id));
    }

    #[test]
    fn liveness_toggles_exactly_at_max_range() {
        let (mut net, id) = two_nodes(0.0, tplink());
        for d in [432.0, 432.999, 433.0, 433.001, 434.0, 433.0, 100.0] {
            net.set_position(NodeId::gateway(0), [d, 0.0, 0.0]);
            assert_eq!(net.is_live(id), d <= 433.0, "distance {d}");
        }
    }

    #[test]
    fn attach_rejects_duplicates_and_self_links() {
        let (mut net, _) = two_nodes(10.0, tplink());
        assert!(matches!(
            net.attach_link(NodeId::gateway(0), NodeId::uav(0), tplink()),
            Err(LinkError::AlreadyExists(..))
        ));
        assert_eq!(net.attach_link(NodeId::uav(1), NodeId::uav(1), tplink()), Err(LinkError::SameNode));
    }

    #[test]
    fn down_link_refuses_frames() {
        let (mut net, id) = two_nodes(1000.0, tplink());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(net.transmit(id, NodeId::uav(0), 100, 0, TxMode::Reliable, &mut rng), Err(LinkError::LinkDown));
    }

    #[test]
    fn lossless_link_is_fifo_and_exactly_once() {
        let mut p = LinkProfile::ideal("x", 10.0);
        p.base_latency_ms = 3.0;
        let (mut net, id) = two_nodes(1.0, p.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut last = 0;
        for i in 0..100 {
            let out = net.transmit(id, NodeId::uav(0), 1000, i * 100, TxMode::Reliable, &mut rng).unwrap();
            assert_eq!(out.deliveries.len(), 1);
            let at = out.delivered_at().unwrap();
            assert!(at > last);
            last = at;
        }
        // 1000 B at 10 Mbps = 800 us per frame; back-to-back from t=0.
        assert_eq!(last, 99 * 800_000 + 800_000 + 3_000_000);
    }

    #[test]
    fn total_loss_drops_everything() {
        let mut p = LinkProfile::ideal("x", 10.0);
        p.loss_prob = 1.0;
        let (mut net, id) = two_nodes(1.0, p);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..50 {
            let out = net.transmit(id, NodeId::uav(0), 100, i, TxMode::Reliable, &mut rng).unwrap();
            assert_eq!(out.dropped, Some(DropReason::Loss));
        }
        let s = net.link(id).unwrap().stats();
        assert_eq!(s.dropped_frames, 50);
        assert_eq!(s.offered_frames, s.delivered_frames + s.dropped_frames);
    }

    #[test]
    fn bernoulli_loss_matches_binomial() {
        // p = 0.1, n = 10_000: binomial sd of the delivered fraction is 0.003,
        // so the 0.01 band is more than 3 sd wide.
        let mut p = LinkProfile::ideal("x", 100.0);
        p.loss_prob = 0.1;
        let (mut net, id) = two_nodes(1.0, p);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut delivered = 0;
        for i in 0..10_000u64 {
            let out = net.transmit(id, NodeId::uav(0), 200, i * 1_000_000, TxMode::Reliable, &mut rng).unwrap();
            delivered += out.deliveries.len().min(1);
        }
        let frac = delivered as f64 / 10_000.0;
        assert!((frac - 0.9).abs() <= 0.01, "delivered fraction {frac}");
    }

    #[test]
    fn retries_follow_timeout() {
        let mut p = LinkProfile::ideal("x", 8.0);
        p.loss_prob = 0.5;
        p.retx_limit = 30;
        p.retx_timeout_ms = 10.0;
        let (mut net, id) = two_nodes(1.0, p);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..200u64 {
            let now = i * 10_000_000_000;
            let out = net.transmit(id, NodeId::uav(0), 1000, now, TxMode::Reliable, &mut rng).unwrap();
            // 1000 B at 8 Mbps = 1 ms; each attempt starts 11 ms after the last.
            let first = out.delivered_at().unwrap();
            assert_eq!((first - now - 1_000_000) % 11_000_000, 0);
        }
    }

    #[test]
    fn drop_tail_queue() {
        let mut net2 = Network::new().with_queue_cap(10_000);
        let id2 = net2.attach_link(NodeId::uav(0), NodeId::gateway(0), LinkProfile::ideal("x", 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let outcomes: Vec<_> = (0..20)
            .map(|_| net2.transmit(id2, NodeId::uav(0), 1000, 0, TxMode::Unreliable, &mut rng).unwrap())
            .collect();
        // The first frame is on the wire, ten more fit the queue.
        let queued = outcomes.iter().filter(|o| o.dropped.is_none()).count();
        assert_eq!(queued, 11);
        let s = net2.link(id2).unwrap().stats();
        assert_eq!(s.offered_frames, s.delivered_frames + s.dropped_frames);
    }

    #[test]
    fn mobility_arrival_time() {
        // 300 m at 10 m/s, 100 ms steps: arrival at 30 s within one step.
        let mut m = Mobility::with_path([0.0; 3], [[300.0, 0.0, 0.0]], 10.0);
        let mut t = 0.0;
        while m.is_moving() {
            m.step(0.1);
            t += 0.1;
        }
        assert!((t - 30.0f64).abs() <= 0.1 + 1e-9, "arrived at {t}");
        assert_eq!(m.position, [300.0, 0.0, 0.0]);
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let (mut net, id) = two_nodes(1.0, LinkProfile::ideal("x", 1.0));
        net.enable_trace();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        net.transmit(id, NodeId::uav(0), 125, 0, TxMode::Unreliable, &mut rng).unwrap();
        let mut buf = Vec::new();
        net.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "time_ms,link,event,bytes\n0.000,0,offer,125\n1.000,0,deliver,125\n");
    }
}
