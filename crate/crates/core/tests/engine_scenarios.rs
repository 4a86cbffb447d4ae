mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use powsim_core::adversary::FaultKind;
use powsim_core::engine::*;
use powsim_core::ledger::BlockId;
use powsim_core::policy::PolicyState;
use powsim_core::topology::{assign_latencies, diameter, ClassKind, NodeClass, NodeId};

const SPV: NodeClass = NodeClass::SpvClient;
const HFN: NodeClass = NodeClass::HomeFullNode;

fn all_kinds_certain() -> BTreeMap<FaultKind, f64> {
    [FaultKind::InvalidBlock, FaultKind::StaleChain, FaultKind::ForgedHeaderSequence].into_iter().map(|k| (k, 1.0)).collect()
}

fn p_class(trace: &SimTrace, kind: ClassKind) -> f64 {
    divergence_probability(std::slice::from_ref(trace), &NodeFilter::Class(kind), At::Horizon).unwrap()
}

#[test]
fn single_miner_network_converges_once_propagation_ends() {
    for seed in 0..5 {
        let g = network(40, 4, 1, 0.5, (1, 1), seed);
        let diam = diameter(&g, None).unwrap() as u64;
        let mut cfg = config(g, 200, 0.1, 0.0, seed);
        let tr = run_simulation(&cfg).unwrap();
        let last_block = tr.block_meta.iter().map(|m| m.produced_tick).max().unwrap();
        assert!(last_block > 0, "seed {seed} produced nothing");
        for f in tr.frames.iter().filter(|f| f.tick >= last_block + diam) {
            assert!(f.tips.iter().all(|&t| t == f.global_tip), "seed {seed} tick {}", f.tick);
        }

        cfg.options.settle = true;
        let settled = run_simulation(&cfg).unwrap();
        let last = settled.frames.last().unwrap();
        assert!(settled.graph.nodes().all(|v| !last.delta(v)));
        assert_eq!(last.delta_spv, 0.0);
        assert_eq!(last.delta_hfn, 0.0);
    }
}

/// 0 honest miner, 1 adversary miner, 2 eclipsed SPV, 3 and 5 SPV, 4 HFN.
fn eclipse_scenario(seed: u64) -> SimConfig {
    let g = hand_graph(
        &[miner(0.7), miner(0.3), SPV, SPV, HFN, SPV],
        &[(0, 1, 1), (0, 3, 1), (0, 4, 1), (3, 2, 1), (4, 5, 1), (2, 5, 1), (1, 5, 1)],
    );
    let mut cfg = config(g, 400, 0.2, 0.0, seed);
    cfg.adversary.alpha = 0.3;
    cfg.adversary.nodes = BTreeSet::from([NodeId(1)]);
    cfg.adversary.eclipse_targets = BTreeSet::from([NodeId(2)]);
    cfg.options.settle = true;
    cfg
}

#[test]
fn eclipsed_spv_follows_the_private_branch_and_its_peers_do_not() {
    for seed in 0..10 {
        let tr = run_simulation(&eclipse_scenario(seed)).unwrap();
        let last = tr.frames.last().unwrap();
        let victim = NodeId(2);

        // Oracle: the victim only hears the adversary's branch, so its tip is
        // the highest block it was sent.
        let expected = tr
            .target_receipts
            .iter()
            .filter(|r| r.to == victim)
            .map(|r| r.block)
            .max_by_key(|b| (tr.tree.block(*b).height, std::cmp::Reverse(*b)))
            .unwrap();
        assert_eq!(last.tips[victim.index()], expected, "seed {seed}");
        assert!(last.delta(victim));
        assert!(tr.tree.chain_work(expected) < tr.tree.chain_work(last.global_tip));
        for v in [NodeId(3), NodeId(5)] {
            assert!(!last.delta(v), "seed {seed}: SPV {v} diverged");
        }
    }
}

#[test]
fn same_tick_blocks_resolve_by_first_seen() {
    let g = hand_graph(
        &[miner(0.5), miner(0.5), SPV, HFN, SPV],
        &[(0, 1, 1), (0, 2, 1), (1, 2, 3), (1, 3, 1), (0, 3, 2), (2, 4, 1), (3, 4, 1)],
    );
    let mut cfg = config(g, 8, 0.0, 0.0, 1);
    cfg.options.schedule =
        Some(vec![ScheduledBlock { tick: 1, producer: NodeId(0) }, ScheduledBlock { tick: 1, producer: NodeId(1) }]);
    let tr = run_simulation(&cfg).unwrap();
    let (b0, b1) = (BlockId(1), BlockId(2));
    assert_eq!(tr.tree.block(b0).producer, Some(NodeId(0)));
    assert_eq!(tr.tree.block(b1).producer, Some(NodeId(1)));

    let last = tr.frames.last().unwrap();
    // Node 4 hears both at tick 3 and falls back to the smaller id.
    assert_eq!(last.tips, vec![b0, b1, b0, b1, b0]);
    assert_eq!(last.global_tip, b0);
    assert_eq!(tr.final_views[4].first_seen_tick[&b0], 3);
    assert_eq!(tr.final_views[4].first_seen_tick[&b1], 3);
    assert_eq!(run_simulation(&cfg).unwrap().digest(), tr.digest());
}

fn adversarial_config(seed: u64) -> SimConfig {
    let g = network(60, 6, 6, 0.5, (1, 3), seed);
    let adv = g.miners()[0];
    let mut cfg = config(g, 250, 0.08, 0.05, seed);
    cfg.adversary.alpha = 0.3;
    cfg.adversary.invalid_injection_rate = 0.4;
    cfg.adversary.delay_budget = 2;
    cfg.adversary.partition_probability = 0.05;
    cfg.adversary.seed = seed;
    cfg.adversary.nodes = BTreeSet::from([adv]);
    cfg.options.validation_delay = 1;
    cfg
}

#[test]
fn identical_configs_give_identical_traces_and_csv() {
    let cfg = adversarial_config(7);
    let a = run_simulation(&cfg).unwrap();
    let b = run_simulation(&cfg).unwrap();
    assert_eq!(a.digest(), b.digest());
    let csv = |t: &SimTrace| {
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, t).unwrap();
        buf
    };
    assert_eq!(csv(&a), csv(&b));

    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(run_simulation(&other).unwrap().digest(), a.digest());
}

#[test]
fn trace_csv_carries_hash_seed_and_columns() {
    let cfg = adversarial_config(3);
    let tr = run_simulation(&cfg).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, &tr).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), format!("# config_hash={} seed=3", cfg.config_hash()));
    let header = lines.next().unwrap();
    assert!(header.starts_with("tick,event_kind,node_id,block_id,parent_id,height,producer,consensus_valid,policy,delta_i,D,delta_spv,delta_hfn"));
    let width = header.split(',').count();
    let rows: Vec<&str> = lines.collect();
    assert!(rows.iter().all(|r| r.split(',').count() == width));
    assert_eq!(rows.iter().filter(|r| r.split(',').nth(1) == Some("frame")).count(), 250);
    assert!(rows.iter().any(|r| r.split(',').nth(1) == Some("fault")));

    let mut summary = Vec::new();
    write_summary_json(&mut summary, &tr).unwrap();
    let parsed: TraceSummary = serde_json::from_slice(&summary).unwrap();
    assert_eq!(parsed, summarize(&tr));
}

#[test]
fn flipping_home_node_verdicts_leaves_the_global_chain_untouched() {
    let mut any_effect = false;
    for seed in 0..10 {
        for relay in [true, false] {
            let mut cfg = adversarial_config(seed);
            cfg.options.relay_rejected = relay;
            let base = run_simulation(&cfg).unwrap();
            cfg.options.invert_hfn_verdicts = true;
            let flipped = run_simulation(&cfg).unwrap();
            assert_eq!(base.global_chain_bytes(), flipped.global_chain_bytes(), "seed {seed} relay {relay}");
            any_effect |= base.rejections != flipped.rejections;
        }
    }
    assert!(any_effect, "inversion never changed a local verdict");
}

#[test]
fn global_chain_only_rewrites_at_logged_reorgs_and_only_miners_append() {
    let mut reorgs = 0;
    for seed in 0..20 {
        let tr = run_simulation(&adversarial_config(seed)).unwrap();
        reorgs += tr.reorgs.len();
        let mut prev = BlockId::GENESIS;
        for f in &tr.frames {
            if !tr.tree.is_ancestor_or_equal(prev, f.global_tip) {
                assert!(
                    tr.reorgs.iter().any(|r| r.tick == f.tick && tr.tree.is_ancestor_or_equal(r.new_tip, f.global_tip)),
                    "seed {seed}: unlogged rewrite at tick {}",
                    f.tick
                );
            }
            for b in tr.tree.path(f.global_tip).into_iter().skip(1) {
                let blk = tr.tree.block(b);
                assert!(blk.consensus_valid);
                assert!(tr.graph.role(blk.producer.unwrap()).is_miner());
            }
            prev = f.global_tip;
        }
    }
    assert!(reorgs > 0, "race battery never reorganised the global chain");
}

#[test]
fn eclipse_victims_hear_only_the_adversary() {
    for seed in 0..10 {
        let g = network(50, 4, 5, 0.5, (1, 2), seed);
        let adv = g.miners()[0];
        let targets: BTreeSet<NodeId> =
            g.nodes().filter(|v| !g.role(*v).is_miner()).take(2).collect();
        let mut cfg = config(g, 300, 0.1, 0.0, seed);
        cfg.adversary.alpha = 0.25;
        cfg.adversary.nodes = BTreeSet::from([adv]);
        cfg.adversary.eclipse_targets = targets.clone();
        cfg.adversary.delay_budget = 1;
        let tr = run_simulation(&cfg).unwrap();
        for &t in &targets {
            assert!(tr.graph.neighbors(t).all(|(w, _)| w == adv));
            let heard: Vec<_> = tr.target_receipts.iter().filter(|r| r.to == t).collect();
            assert!(!heard.is_empty());
            assert!(heard.iter().all(|r| r.from == adv && tr.block_meta[r.block.index()].adversarial));
            let tip = tr.frames.last().unwrap().tips[t.index()];
            assert!(tr.tree.path(tip).iter().skip(1).all(|b| tr.block_meta[b.index()].adversarial));
        }
    }
}

#[test]
fn spv_with_a_miner_peer_never_diverges_without_an_adversary() {
    for seed in 0..100 {
        let g = network(50, 4, 4, 0.5, (1, 1), seed);
        let mut cfg = config(g, 200, 0.05, 0.05, seed);
        cfg.options.settle = true;
        let tr = run_simulation(&cfg).unwrap();
        let covered: BTreeSet<NodeId> = tr
            .nodes_matching(&NodeFilter::Class(ClassKind::Spv))
            .into_iter()
            .filter(|&v| tr.graph.neighbors(v).any(|(w, _)| tr.graph.role(w).is_miner()))
            .collect();
        assert!(!covered.is_empty());
        let p = divergence_probability(std::slice::from_ref(&tr), &NodeFilter::Nodes(covered), At::Horizon).unwrap();
        assert_eq!(p, 0.0, "seed {seed}");
    }
}

#[test]
fn home_nodes_diverge_more_than_spv_under_attack() {
    let (mut hfn, mut spv) = (Vec::new(), Vec::new());
    for seed in 0..300 {
        let g = network(100, 6, 8, 0.5, (1, 3), seed);
        let adv = g.miners()[0];
        let mut cfg = config(g, 600, 0.05, 0.02, seed);
        cfg.adversary.alpha = 0.3;
        cfg.adversary.invalid_injection_rate = 0.25;
        cfg.adversary.nodes = BTreeSet::from([adv]);
        cfg.options.validation_delay = 1;
        let tr = run_simulation(&cfg).unwrap();
        hfn.push(p_class(&tr, ClassKind::Hfn));
        spv.push(p_class(&tr, ClassKind::Spv));
    }
    let (t, crit) = paired_t(&hfn, &spv, 0.99);
    assert!(t > crit, "P(hfn)={:.4} P(spv)={:.4} t={t:.2} crit={crit:.2}", mean(&hfn), mean(&spv));
}

/// SPV clients get an honest miner peer, home nodes lose theirs.
fn leakage_config(seed: u64, injection: f64) -> Option<SimConfig> {
    let mut g = network(100, 6, 8, 0.5, (1, 3), seed);
    let miners = g.miners();
    let (adv, honest) = (miners[0], miners[1..].to_vec());
    for v in g.nodes_of(ClassKind::Hfn) {
        for &m in &honest {
            g.remove_edge(v, m);
        }
    }
    for (i, v) in g.nodes_of(ClassKind::Spv).into_iter().enumerate() {
        if !honest.iter().any(|&m| g.has_edge(v, m)) {
            g.add_edge(v, honest[i % honest.len()], 2).unwrap();
        }
    }
    if !g.is_connected(None).unwrap() {
        return None;
    }
    let mut cfg = config(g, 300, 0.05, 0.02, seed);
    cfg.adversary.alpha = 0.3;
    cfg.adversary.nodes = BTreeSet::from([adv]);
    cfg.adversary.invalid_injection_rate = injection;
    cfg.adversary.delay_budget = 3;
    cfg.options.validation_delay = 1;
    Some(cfg)
}

#[test]
fn home_nodes_carry_the_larger_fault_surface_for_propagation_faults() {
    let probs = all_kinds_certain();
    let (mut hfn, mut spv) = (Vec::new(), Vec::new());
    let mut seed = 0;
    while hfn.len() < 200 {
        if let Some(cfg) = leakage_config(seed, 0.0) {
            let tr = run_simulation(&cfg).unwrap();
            hfn.push(mean_fault_surface(&tr, ClassKind::Hfn, &probs).unwrap());
            spv.push(mean_fault_surface(&tr, ClassKind::Spv, &probs).unwrap());
        }
        seed += 1;
    }
    assert!(mean(&hfn) > mean(&spv), "E[sigma] hfn={:.5} spv={:.5}", mean(&hfn), mean(&spv));
}

#[test]
fn every_adversary_neighbour_can_be_made_to_deviate() {
    let g = network(40, 4, 4, 0.5, (1, 2), 11);
    let adv = g.miners()[0];
    let exposed: Vec<NodeId> = g.neighbors(adv).map(|(w, _)| w).filter(|w| !g.role(*w).is_miner()).collect();
    assert!(!exposed.is_empty());

    let mut battery = Vec::new();
    for seed in 0..30 {
        let mut cfg = config(g.clone(), 200, 0.1, 0.05, seed);
        cfg.adversary.alpha = 0.3;
        cfg.adversary.invalid_injection_rate = 1.0;
        cfg.adversary.nodes = BTreeSet::from([adv]);
        battery.push(cfg);
    }
    for &v in &exposed {
        let mut cfg = battery[0].clone();
        cfg.adversary.invalid_injection_rate = 0.0;
        cfg.adversary.eclipse_targets = BTreeSet::from([v]);
        battery.push(cfg);
    }
    let mut deviated: BTreeSet<NodeId> = BTreeSet::new();
    for cfg in &battery {
        let tr = run_simulation(cfg).unwrap();
        deviated.extend(tr.faults.iter().filter(|r| r.caused_deviation).map(|r| r.target));
    }
    for v in exposed {
        assert!(deviated.contains(&v), "{v} never deviated");
    }
}

#[test]
fn validation_surplus_set_scenarios() {
    let g = network(30, 4, 3, 0.4, (1, 2), 5);
    let hfns = g.nodes_of(ClassKind::Hfn);
    let stubborn = hfns[0];

    let mut cfg = config(g, 200, 0.1, 0.0, 5);
    cfg.options.settle = true;
    let tr = run_simulation(&cfg).unwrap();
    for &v in &hfns {
        assert!(validation_surplus_set(&tr, v).unwrap().is_empty());
    }

    cfg.options.frozen_policies = BTreeMap::from([(stubborn, PolicyState(2))]);
    let tr = run_simulation(&cfg).unwrap();
    let surplus = validation_surplus_set(&tr, stubborn).unwrap();
    // Every block the node rejected made it into the global chain anyway.
    let expected: BTreeSet<BlockId> = tr.global_chain().into_iter().skip(1).collect();
    assert!(!expected.is_empty());
    assert_eq!(surplus, expected);
    assert_eq!(tr.frames.last().unwrap().tips[stubborn.index()], BlockId::GENESIS);

    let m = tr.graph.miners()[0];
    assert!(matches!(validation_surplus_set(&tr, m), Err(EngineError::WrongClass { .. })));
}

#[test]
fn pairwise_rates_match_exhaustive_recount() {
    let tr = run_simulation(&adversarial_config(2)).unwrap();
    let classes = [ClassKind::Miner, ClassKind::Spv, ClassKind::Hfn];
    for at in [At::Tick(50), At::Tick(125), At::Horizon] {
        let f = tr.frame(at).unwrap();
        for a in classes {
            for b in classes {
                let na = tr.nodes_matching(&NodeFilter::Class(a));
                let nb = tr.nodes_matching(&NodeFilter::Class(b));
                let (mut diff, mut pairs) = (0u64, 0u64);
                for &u in &na {
                    for &v in &nb {
                        if a == b && u >= v {
                            continue;
                        }
                        pairs += 1;
                        diff += (f.tips[u.index()] != f.tips[v.index()]) as u64;
                    }
                }
                let got = pairwise_divergence_rate(&tr, a, b, at).unwrap();
                assert!((got - diff as f64 / pairs as f64).abs() < 1e-12);
            }
        }
        assert_eq!(f.delta_spv, pairwise_divergence_rate(&tr, ClassKind::Spv, ClassKind::Spv, at).unwrap());
        assert_eq!(f.delta_hfn, pairwise_divergence_rate(&tr, ClassKind::Hfn, ClassKind::Hfn, at).unwrap());
    }
}

#[test]
fn two_node_disagreement_and_unanimity() {
    let g = hand_graph(&[miner(1.0), SPV, SPV], &[(0, 1, 1), (0, 2, 5)]);
    let mut cfg = config(g, 3, 0.0, 0.0, 0);
    cfg.options.schedule = Some(vec![ScheduledBlock { tick: 1, producer: NodeId(0) }]);
    let tr = run_simulation(&cfg).unwrap();
    assert_eq!(pairwise_divergence_rate(&tr, ClassKind::Spv, ClassKind::Spv, At::Tick(3)).unwrap(), 1.0);
    assert_eq!(pairwise_divergence_rate(&tr, ClassKind::Spv, ClassKind::Spv, At::Tick(1)).unwrap(), 0.0);
    assert!(matches!(
        pairwise_divergence_rate(&tr, ClassKind::Hfn, ClassKind::Spv, At::Horizon),
        Err(EngineError::EmptyClass(ClassKind::Hfn))
    ));
}

#[test]
fn divergence_probability_edge_cases() {
    assert!(matches!(divergence_probability(&[], &NodeFilter::Class(ClassKind::Spv), At::Horizon), Err(EngineError::NoTraces)));
    let mut cfg = config(network(30, 4, 2, 0.5, (1, 1), 1), 50, 0.0, 0.0, 1);
    cfg.options.settle = true;
    let tr = run_simulation(&cfg).unwrap();
    for k in [ClassKind::Spv, ClassKind::Hfn, ClassKind::Miner] {
        assert_eq!(p_class(&tr, k), 0.0);
    }
    assert!((composed_divergence(0.1, 0.2) - 0.28).abs() < 1e-12);
}

#[test]
fn latency_curve_rises_once_latency_reaches_the_block_interval() {
    let base = network(60, 4, 4, 0.5, (1, 1), 21);
    let latencies = [1u32, 5, 20, 40];
    let configs: Vec<SimConfig> = latencies
        .iter()
        .map(|&l| config(assign_latencies(&base, l, l, 21).unwrap(), 300, 0.05, 0.0, 100))
        .collect();
    let curve = latency_divergence_curve(&configs, 60).unwrap();
    assert_eq!(curve.iter().map(|p| p.latency).collect::<Vec<_>>(), latencies);
    assert!(curve[0].observations > 0);
    for w in curve.windows(2) {
        let se = (sample_var(&w[0].per_replication) / 60.0 + sample_var(&w[1].per_replication) / 60.0).sqrt();
        assert!(w[1].p_delta >= w[0].p_delta - 3.0 * se, "{w:?}");
    }
    // Mean block interval is 20 ticks.
    let (t, crit) = welch_t(&curve[2].per_replication, &curve[0].per_replication, 0.99);
    assert!(t > crit, "baseline {} vs {} (t={t:.2})", curve[0].p_delta, curve[2].p_delta);

    let idle: Vec<SimConfig> = configs
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.block_rate = 0.0;
            c
        })
        .collect();
    assert!(latency_divergence_curve(&idle, 10).unwrap().iter().all(|p| p.p_delta == 0.0));
}

#[test]
fn latency_curve_rejects_configs_with_different_edges() {
    let a = config(network(30, 4, 2, 0.5, (1, 1), 1), 10, 0.1, 0.0, 1);
    let b = config(network(30, 4, 2, 0.5, (1, 1), 2), 10, 0.1, 0.0, 1);
    assert!(matches!(latency_divergence_curve(&[a, b], 1), Err(EngineError::IncomparableConfigs(_))));
}

#[test]
fn config_validation_rejects_bad_inputs() {
    let g = network(20, 4, 2, 0.5, (1, 1), 1);
    let ok = config(g.clone(), 10, 0.1, 0.0, 1);
    assert!(ok.validate().is_ok());

    let mut c = ok.clone();
    c.ticks = 0;
    assert!(matches!(run_simulation(&c), Err(EngineError::Config(_))));
    let mut c = ok.clone();
    c.block_rate = 1.5;
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.adversary.alpha = 0.6;
    c.adversary.nodes = BTreeSet::from([g.miners()[0]]);
    assert!(matches!(c.validate(), Err(EngineError::Adversary(_))));
    let mut c = ok.clone();
    let spv = g.nodes_of(ClassKind::Spv)[0];
    c.adversary.alpha = 0.2;
    c.adversary.nodes = BTreeSet::from([spv]);
    assert!(matches!(c.validate(), Err(EngineError::Config(_))));
    let mut c = ok.clone();
    c.graph.add_node(NodeClass::SpvClient);
    assert!(matches!(c.validate(), Err(EngineError::Config(_))));
    let mut c = ok;
    c.options.frozen_policies = BTreeMap::from([(spv, PolicyState(9))]);
    assert!(c.validate().is_err());
}
