use powsim_core::adversary::{eclipse, expected_fault_surface, fault_injectability, partition_edges, FaultKind, FaultRecord};
use powsim_core::ledger::{BlockId, BlockTree, ChainView, BLOCK_WORK};
use powsim_core::topology::{generate_watts_strogatz, NetworkGraph, NodeId};
use proptest::prelude::*;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

fn k4() -> NetworkGraph {
    NetworkGraph::from_edges(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap()
}

#[test]
fn single_edge_removal_frequency() {
    let g = NetworkGraph::from_edges(2, &[(0, 1)]).unwrap();
    let seeds = 10_000u64;
    for &p in &[0.1, 0.5, 0.9, 0.99] {
        let removed = (0..seeds).filter(|&s| partition_edges(&g, p, s).unwrap().edge_count() == 0).count();
        let f = removed as f64 / seeds as f64;
        let se = (p * (1.0 - p) / seeds as f64).sqrt();
        assert!((f - p).abs() <= 4.0 * se, "p={p}: {f}");
    }
}

#[test]
fn k4_half_partition_keeps_three_edges_on_average() {
    let g = k4();
    let seeds = 10_000u64;
    let total: usize = (0..seeds).map(|s| partition_edges(&g, 0.5, s).unwrap().edge_count()).sum();
    let mean = total as f64 / seeds as f64;
    assert!((mean - 3.0).abs() <= 4.0 * (1.5 / seeds as f64).sqrt(), "mean {mean}");
}

/// Nodes reachable from `start` without entering `blocked`.
fn reachable_avoiding(g: &NetworkGraph, start: NodeId, blocked: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for (w, _) in g.neighbors(u) {
            if !blocked.contains(&w) && seen.insert(w) {
                queue.push_back(w);
            }
        }
    }
    seen.remove(&start);
    seen
}

fn sorted_edges(g: &NetworkGraph) -> Vec<(NodeId, NodeId, u32)> {
    let mut e: Vec<_> = g.edges().collect();
    e.sort();
    e
}

/// Random tree of `parents.len() + 1` blocks; block `i + 1` hangs off an
/// earlier block chosen by `parents[i]`.
fn random_tree(parents: &[usize]) -> BlockTree {
    let mut tree = BlockTree::new();
    for (i, &p) in parents.iter().enumerate() {
        let parent = BlockId((p % (i + 1)) as u32);
        tree.push(parent, NodeId(0), BLOCK_WORK, true, None, BTreeMap::new()).unwrap();
    }
    tree
}

fn view(tree: &BlockTree, tip: BlockId) -> ChainView {
    ChainView { tip, cumulative_work: tree.chain_work(tip), first_seen_tick: BTreeMap::from([(tip, 0)]) }
}

fn on_path_by_walk(tree: &BlockTree, victim: BlockId, global: BlockId) -> bool {
    let mut cur = Some(global);
    while let Some(b) = cur {
        if b == victim {
            return true;
        }
        cur = tree.block(b).parent;
    }
    false
}

#[test]
fn fault_injectability_examples() {
    // genesis - 1 - 2, plus orphan 3 off block 1.
    let tree = random_tree(&[0, 1, 1]);
    let rec = FaultRecord {
        tick: 4,
        target: NodeId(2),
        message_kind: FaultKind::StaleChain,
        block_id: BlockId(3),
        caused_deviation: false,
    };
    let global = view(&tree, BlockId(2));
    assert!(!fault_injectability(&rec, &view(&tree, BlockId(2)), &global, &tree));
    assert!(!fault_injectability(&rec, &view(&tree, BlockId(1)), &global, &tree));
    assert!(fault_injectability(&rec, &view(&tree, BlockId(3)), &global, &tree));
}

fn kind_of(i: u8) -> FaultKind {
    match i % 3 {
        0 => FaultKind::InvalidBlock,
        1 => FaultKind::StaleChain,
        _ => FaultKind::ForgedHeaderSequence,
    }
}

proptest! {
    #[test]
    fn partition_only_removes_edges(seed in any::<u64>(), p in 0.0f64..0.99) {
        let g = generate_watts_strogatz(30, 4, 0.2, seed).unwrap();
        let h = partition_edges(&g, p, seed).unwrap();
        prop_assert_eq!(h.node_count(), g.node_count());
        for (u, v, lat) in h.edges() {
            prop_assert_eq!(g.latency(u, v), Some(lat));
        }
        prop_assert_eq!(partition_edges(&g, p, seed).unwrap(), h);
    }

    #[test]
    fn eclipse_isolates_target(seed in any::<u64>(), target in 0u32..40, adv in proptest::collection::btree_set(0u32..40, 1..5)) {
        let adv: BTreeSet<NodeId> = adv.into_iter().map(NodeId).collect();
        let target = NodeId(target);
        prop_assume!(!adv.contains(&target));
        let g = generate_watts_strogatz(40, 6, 0.3, seed).unwrap();
        let e = eclipse(&g, target, &adv).unwrap();
        prop_assert!(reachable_avoiding(&e, target, &adv).is_empty());
        let peers: BTreeSet<NodeId> = e.neighbors(target).map(|(w, _)| w).collect();
        prop_assert_eq!(&peers, &adv);
        // Edges not touching the target are untouched.
        let away = |g: &NetworkGraph| sorted_edges(g).into_iter().filter(|&(u, v, _)| u != target && v != target).collect::<Vec<_>>();
        prop_assert_eq!(away(&e), away(&g));
        prop_assert_eq!(eclipse(&e, target, &adv).unwrap(), e);
    }

    #[test]
    fn injectability_matches_path_walk(parents in proptest::collection::vec(any::<usize>(), 1..40), a in any::<usize>(), b in any::<usize>()) {
        let tree = random_tree(&parents);
        let victim = BlockId((a % tree.len()) as u32);
        let global = BlockId((b % tree.len()) as u32);
        let rec = FaultRecord { tick: 0, target: NodeId(0), message_kind: FaultKind::InvalidBlock, block_id: victim, caused_deviation: false };
        let got = fault_injectability(&rec, &view(&tree, victim), &view(&tree, global), &tree);
        prop_assert_eq!(got, !on_path_by_walk(&tree, victim, global));
    }

    #[test]
    fn fault_surface_termwise(recs in proptest::collection::vec((any::<u8>(), any::<bool>()), 0..30),
                              probs in proptest::collection::vec(0.0f64..=1.0, 3)) {
        let map: BTreeMap<FaultKind, f64> = (0..3u8).map(|i| (kind_of(i), probs[i as usize])).collect();
        let records: Vec<FaultRecord> = recs
            .iter()
            .enumerate()
            .map(|(i, &(k, dev))| FaultRecord { tick: i as u64, target: NodeId(1), message_kind: kind_of(k), block_id: BlockId(0), caused_deviation: dev })
            .collect();
        let mut oracle = 0.0;
        for &(k, dev) in &recs {
            if dev {
                oracle += probs[(k % 3) as usize];
            }
        }
        let got = expected_fault_surface(&records, &map).unwrap();
        prop_assert!((got - oracle).abs() < 1e-12);
    }
}
