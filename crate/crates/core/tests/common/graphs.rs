//! Random topologies and a synchronous beacon-round driver for mesh routers.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unet::mesh::{MeshRouter, HELLO_PERIOD};
use unet::message::NodeId;
use unet::time::{Nanos, MS};

pub type Graph = BTreeMap<NodeId, BTreeSet<NodeId>>;

/// Random connected graph of 2 to `max_nodes` nodes: GW-1 plus UAVs, a
/// random spanning tree and a few extra edges.
pub fn random_connected(seed: u64, max_nodes: u32) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_nodes);
    let nodes: Vec<NodeId> = (0..n).map(|i| if i == 0 { NodeId::gateway(1) } else { NodeId::uav(i) }).collect();
    let mut g: Graph = nodes.iter().map(|&v| (v, BTreeSet::new())).collect();
    for i in 1..nodes.len() {
        let j = rng.gen_range(0..i);
        link(&mut g, nodes[i], nodes[j]);
    }
    for _ in 0..rng.gen_range(0..n) {
        let (a, b) = (nodes[rng.gen_range(0..nodes.len())], nodes[rng.gen_range(0..nodes.len())]);
        if a != b {
            link(&mut g, a, b);
        }
    }
    g
}

pub fn link(g: &mut Graph, a: NodeId, b: NodeId) {
    g.get_mut(&a).unwrap().insert(b);
    g.get_mut(&b).unwrap().insert(a);
}

pub fn unlink_node(g: &mut Graph, v: NodeId) {
    for n in std::mem::take(g.get_mut(&v).unwrap()) {
        g.get_mut(&n).unwrap().remove(&v);
    }
}

/// Hop distances from `src`.
pub fn bfs(g: &Graph, src: NodeId) -> BTreeMap<NodeId, u32> {
    let mut dist = BTreeMap::from([(src, 0)]);
    let mut q = VecDeque::from([src]);
    while let Some(v) = q.pop_front() {
        for &w in &g[&v] {
            if !dist.contains_key(&w) {
                dist.insert(w, dist[&v] + 1);
                q.push_back(w);
            }
        }
    }
    dist
}

/// One hello period: every node beacons every current neighbor, then all
/// beacons are applied and stale routes expire.
pub fn round(g: &Graph, routers: &mut BTreeMap<NodeId, MeshRouter>, k: u64) -> Nanos {
    let now = k * HELLO_PERIOD + 10 * MS;
    let mut beacons = Vec::new();
    for (&v, nbrs) in g {
        for &w in nbrs {
            beacons.push((w, routers[&v].beacon_for(w, now)));
        }
    }
    for (to, b) in beacons {
        routers.get_mut(&to).unwrap().on_hello(&b, now + MS);
    }
    for r in routers.values_mut() {
        r.expire(now + 2 * MS);
    }
    now
}

pub fn check_against_bfs(g: &Graph, routers: &BTreeMap<NodeId, MeshRouter>) -> Result<(), String> {
    for &src in g.keys() {
        let dist = bfs(g, src);
        let table = routers[&src].table();
        for (&dst, &d) in &dist {
            if dst == src {
                if table.get(src).is_some() {
                    return Err(format!("{src} has a route to itself"));
                }
                continue;
            }
            let e = table.get(dst).ok_or(format!("{src} has no route to {dst}"))?;
            if e.metric != d {
                return Err(format!("{src}->{dst}: metric {} vs hops {d}", e.metric));
            }
            // Following next hops reaches the destination within `metric` steps.
            let mut at = src;
            for _ in 0..e.metric {
                at = routers[&at].next_hop(dst).map_err(|e| e.to_string())?;
                if !g[&src].contains(&routers[&src].next_hop(dst).unwrap()) {
                    return Err(format!("{src}->{dst}: next hop is not a neighbor"));
                }
                if at == dst {
                    break;
                }
            }
            if at != dst {
                return Err(format!("{src}->{dst}: next hops do not reach the destination"));
            }
        }
        for (dst, _) in table.entries() {
            if !dist.contains_key(dst) {
                return Err(format!("{src} routes to unreachable {dst}"));
            }
        }
    }
    Ok(())
}

pub fn converge(g: &Graph) -> BTreeMap<NodeId, MeshRouter> {
    let mut routers: BTreeMap<NodeId, MeshRouter> = g.keys().map(|&v| (v, MeshRouter::new(v))).collect();
    for k in 0..g.len() as u64 {
        round(g, &mut routers, k);
    }
    routers
}
