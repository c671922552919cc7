mod common;

use common::graphs::{bfs, check_against_bfs, converge, random_connected, round, unlink_node, Graph};
use proptest::prelude::*;
use unet::mesh::EXPIRY_PERIODS;

#[test]
fn fifty_random_graphs_match_bfs_within_n_periods() {
    for seed in 0..50 {
        let g = random_connected(seed, 13);
        let routers = converge(&g);
        check_against_bfs(&g, &routers).unwrap_or_else(|e| panic!("graph {seed} ({} nodes): {e}", g.len()));
    }
}

#[test]
fn cut_off_node_expires_everywhere() {
    for seed in 0..20 {
        let mut g = random_connected(seed, 13);
        if g.len() < 3 {
            continue;
        }
        let mut routers = converge(&g);
        let n = g.len() as u64;
        let victim = *g.keys().last().unwrap();
        unlink_node(&mut g, victim);
        for k in n..n + EXPIRY_PERIODS + n + 1 {
            round(&g, &mut routers, k);
        }
        for (&v, r) in &routers {
            if v != victim {
                assert!(r.table().get(victim).is_none(), "graph {seed}: {v} still routes to {victim}");
            }
        }
        // Whatever is left must still be consistent where it stayed connected.
        let rest: Graph = g.iter().filter(|(v, _)| **v != victim).map(|(v, n)| (*v, n.clone())).collect();
        let reach = bfs(&rest, *rest.keys().next().unwrap());
        if reach.len() == rest.len() {
            routers.remove(&victim);
            check_against_bfs(&rest, &routers).unwrap_or_else(|e| panic!("graph {seed}: {e}"));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn beacons_never_list_their_sender(seed in any::<u64>()) {
        let g = random_connected(seed, 13);
        let routers = converge(&g);
        for (v, nbrs) in &g {
            for w in nbrs {
                let b = routers[v].beacon_for(*w, 0);
                prop_assert!(!b.neighbor_set.contains(v));
                prop_assert!(b.table_digest.iter().all(|e| e.metric >= 1 && e.destination != *w));
            }
        }
    }

    #[test]
    fn tables_agree_with_bfs(seed in any::<u64>()) {
        let g = random_connected(seed, 13);
        let routers = converge(&g);
        prop_assert!(check_against_bfs(&g, &routers).is_ok());
    }
}
