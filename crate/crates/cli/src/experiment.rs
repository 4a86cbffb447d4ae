//! Seeded batch replication for each experiment kind.
//!
//! Replication `r` uses seed `base_seed + r`. Replications run on the rayon
//! pool and are collected in replication order, so output files do not
//! depend on scheduling.

use std::collections::BTreeSet;

use log::info;
use powsim_core::engine::{
    divergence_probability, run_simulation, summarize, write_trace_csv, At, NodeFilter, SimTrace,
};
use powsim_core::game::{enumerate_equilibria, run_best_response_dynamics, StrategyProfile};
use powsim_core::ledger::{finality_probability, fit_inertia_rate, reorg_probability_bound, simulate_races};
use powsim_core::policy::{divergence_lower_bound, estimate_mismatch_p, population_divergence};
use powsim_core::rng::{stream, stream_rng};
use powsim_core::surplus::{surplus_ratio, validation_surplus, TxClass};
use powsim_core::topology::{
    assign_roles, diameter, effective_diameter, generate_watts_strogatz, min_vertex_cut, ClassKind, NetworkGraph,
    NodeClass, NodeId, TopologyError,
};
use rand::Rng;
use rayon::prelude::*;

use crate::bundle::{aggregate, Derived, ResultBundle, Row};
use crate::config::{
    EquilibriumSection, ExperimentConfig, ExperimentKind, PartitionSection, PolicySection, ReorgSection,
    SurplusSection, TopologySection,
};
use crate::stats::{paired_greater, OneSidedTest};
use crate::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep per-run trace CSVs (partition experiments only).
    pub traces: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub bundle: ResultBundle,
    /// File name and CSV body of each kept trace.
    pub traces: Vec<(String, Vec<u8>)>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultBundle, CliError> {
    Ok(run_experiment_with(config, RunOptions::default())?.bundle)
}

type RepOutput = (Vec<Row>, Vec<(String, Vec<u8>)>);

pub fn run_experiment_with(config: &ExperimentConfig, opts: RunOptions) -> Result<RunOutput, CliError> {
    config.validate()?;
    info!("running {} with {} replications from seed {}", config.kind, config.replications, config.base_seed);
    let reps: Vec<RepOutput> = (0..config.replications)
        .into_par_iter()
        .map(|r| replicate(config, r, opts))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for (r, t) in reps {
        rows.extend(r);
        traces.extend(t);
    }
    let (derived, tests) = derive(config, &rows)?;
    let bundle = ResultBundle {
        tool_version: TOOL_VERSION.to_string(),
        kind: config.kind,
        config_hash: config.config_hash(),
        config: config.clone(),
        aggregates: aggregate(&rows),
        rows,
        derived,
        tests,
    };
    Ok(RunOutput { bundle, traces })
}

fn replicate(config: &ExperimentConfig, r: u64, opts: RunOptions) -> Result<RepOutput, CliError> {
    let seed = config.seed(r);
    match config.kind {
        ExperimentKind::PartitionDivergence => {
            partition_rep(config.partition_divergence.as_ref().expect("validated"), r, seed, opts)
        }
        ExperimentKind::ReorgDecay => Ok((reorg_rep(config.reorg_decay.as_ref().expect("validated"), r, seed)?, vec![])),
        ExperimentKind::PolicyDivergence => {
            Ok((policy_rep(config.policy_divergence.as_ref().expect("validated"), r, seed)?, vec![]))
        }
        ExperimentKind::Equilibrium => {
            Ok((equilibrium_rep(config.equilibrium.as_ref().expect("validated"), r, seed)?, vec![]))
        }
        ExperimentKind::Surplus => Ok((surplus_rep(config.surplus.as_ref().expect("validated"), r, seed)?, vec![])),
        ExperimentKind::TopologyClaims => {
            Ok((topology_rep(config.topology_claims.as_ref().expect("validated"), r, seed)?, vec![]))
        }
    }
}

/// Derived values and tests, recomputed from rows (and the config) alone.
pub fn derive(config: &ExperimentConfig, rows: &[Row]) -> Result<(Vec<Derived>, Vec<OneSidedTest>), CliError> {
    Ok(match config.kind {
        ExperimentKind::PartitionDivergence => {
            let s = config.partition_divergence.as_ref().expect("validated");
            (vec![], partition_tests(s, rows, config.confidence))
        }
        ExperimentKind::ReorgDecay => (reorg_derived(config.reorg_decay.as_ref().expect("validated"), rows), vec![]),
        ExperimentKind::PolicyDivergence => {
            (policy_derived(config.policy_divergence.as_ref().expect("validated"), config.base_seed, rows)?, vec![])
        }
        ExperimentKind::Equilibrium => (equilibrium_derived(config.equilibrium.as_ref().expect("validated"))?, vec![]),
        ExperimentKind::Surplus | ExperimentKind::TopologyClaims => (vec![], vec![]),
    })
}

pub fn partition_point(p: f64) -> String {
    format!("p={p}")
}

/// Honest SPV clients with at least one miner neighbor.
fn spv_with_miner_peer(tr: &SimTrace) -> BTreeSet<NodeId> {
    tr.nodes_matching(&NodeFilter::Class(ClassKind::Spv))
        .into_iter()
        .filter(|&v| tr.graph.neighbors(v).any(|(w, _)| tr.graph.role(w).is_miner()))
        .collect()
}

fn partition_rep(s: &PartitionSection, r: u64, seed: u64, opts: RunOptions) -> Result<RepOutput, CliError> {
    let scenario = s.scenario();
    let graph = scenario.network.build(seed)?;
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for (i, &p) in s.partition_probability.iter().enumerate() {
        let point = partition_point(p);
        let sim = scenario.sim_config_on(graph.clone(), seed, p)?;
        let tr = run_simulation(&sim)?;
        let sum = summarize(&tr);
        let mut push = |metric: &str, v: f64| rows.push(Row::new(r, seed, &point, metric, v));
        push("delta_hfn", sum.delta_hfn);
        push("delta_spv", sum.delta_spv);
        push("p_delta_hfn", sum.p_delta_hfn);
        push("p_delta_spv", sum.p_delta_spv);
        push("global_height", sum.global_height as f64);
        push("reorgs", sum.reorgs as f64);
        push("deviating_faults", sum.deviating_faults as f64);
        let covered = spv_with_miner_peer(&tr);
        push("spv_miner_peer_count", covered.len() as f64);
        if !covered.is_empty() {
            let d = divergence_probability(std::slice::from_ref(&tr), &NodeFilter::Nodes(covered), At::Horizon)?;
            push("spv_miner_peer_divergence", d);
        }
        if s.verdict_inversion {
            let mut flipped = sim.clone();
            flipped.options.invert_hfn_verdicts = !sim.options.invert_hfn_verdicts;
            let tr2 = run_simulation(&flipped)?;
            let same = tr.global_chain_bytes() == tr2.global_chain_bytes();
            push("inversion_identical", if same { 1.0 } else { 0.0 });
        }
        if opts.traces {
            let mut buf = Vec::new();
            write_trace_csv(&mut buf, &tr)?;
            traces.push((format!("rep{r}_p{i}.csv"), buf));
        }
    }
    Ok((rows, traces))
}

fn partition_tests(s: &PartitionSection, rows: &[Row], confidence: f64) -> Vec<OneSidedTest> {
    s.partition_probability
        .iter()
        .map(|&p| {
            let point = partition_point(p);
            let hfn = crate::bundle::values(rows, &point, "delta_hfn");
            let spv = crate::bundle::values(rows, &point, "delta_spv");
            paired_greater(&point, ("delta_hfn", &hfn), ("delta_spv", &spv), confidence)
        })
        .collect()
}

pub fn reorg_point(q: f64, depth: u32) -> String {
    format!("q={q};dh={depth}")
}

pub fn q_point(q: f64) -> String {
    format!("q={q}")
}

fn reorg_rep(s: &ReorgSection, r: u64, seed: u64) -> Result<Vec<Row>, CliError> {
    let grid: Vec<(f64, u32)> = s.q.iter().flat_map(|&q| (s.min_depth..=s.max_depth).map(move |d| (q, d))).collect();
    let outcomes = grid
        .par_iter()
        .map(|&(q, d)| simulate_races(q, d, s.races, seed).map(|o| (q, d, o)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for (q, d, o) in outcomes {
        let point = reorg_point(q, d);
        rows.push(Row::new(r, seed, &point, "wins", o.attacker_wins as f64));
        rows.push(Row::new(r, seed, &point, "races", o.races as f64));
    }
    Ok(rows)
}

/// Pooled reversal frequencies against the analytic curve, per-q log-linear
/// fits and the analytic finality monotonicity check.
///
/// The standard error at each point is the binomial one under the analytic
/// probability, `sqrt(P(1−P)/N)`; the empirical one is 0 whenever no race
/// is won, which happens routinely in the deep tail.
fn reorg_derived(s: &ReorgSection, rows: &[Row]) -> Vec<Derived> {
    let mut out = Vec::new();
    for &q in &s.q {
        let mut points = Vec::new();
        for d in s.min_depth..=s.max_depth {
            let point = reorg_point(q, d);
            let wins: f64 = crate::bundle::values(rows, &point, "wins").iter().sum();
            let races: f64 = crate::bundle::values(rows, &point, "races").iter().sum();
            let f = if races > 0.0 { wins / races } else { 0.0 };
            let analytic = reorg_probability_bound(q, d).expect("validated q");
            let se = (analytic * (1.0 - analytic) / races.max(1.0)).sqrt();
            out.push(Derived::new(&point, "frequency", f));
            out.push(Derived::new(&point, "analytic", analytic));
            out.push(Derived::new(&point, "null_std_error", se));
            out.push(Derived::new(&point, "within_3se", ((f - analytic).abs() <= 3.0 * se) as u8 as f64));
            points.push((d as f64, f));
        }
        let qp = q_point(q);
        match fit_inertia_rate(&points) {
            Ok(fit) => {
                out.push(Derived::new(&qp, "lambda", fit.lambda));
                out.push(Derived::new(&qp, "r_squared", fit.r_squared));
                out.push(Derived::new(&qp, "dropped_zero", fit.dropped_zero as f64));
            }
            Err(e) => {
                log::warn!("fit failed for q={q}: {e}");
                out.push(Derived::new(&qp, "fit_failed", 1.0));
            }
        }
    }
    let monotone = s.finality_q.iter().all(|&q| {
        (1..=s.finality_max_depth).all(|d| {
            finality_probability(q, d).expect("validated q") > finality_probability(q, d - 1).expect("validated q")
        })
    });
    out.push(Derived::new("all", "finality_strictly_increasing", monotone as u8 as f64));
    out
}

pub fn redundant_point(r: usize) -> String {
    format!("R={r}")
}

fn policy_rep(s: &PolicySection, r: u64, seed: u64) -> Result<Vec<Row>, CliError> {
    let (space, kernel) = (s.space()?, s.kernel()?);
    let mut rows = Vec::new();
    for &red in &s.redundant {
        let g = s.graph(red, seed)?;
        let d = population_divergence(&g, space, kernel, s.horizon, seed)?;
        rows.push(Row::new(r, seed, &redundant_point(red), "divergence", d));
    }
    Ok(rows)
}

/// `p̂` from isolated-node replications seeded with `base_seed`, then the
/// lower bound and the share of replications meeting it at each `|R|`.
fn policy_derived(s: &PolicySection, base_seed: u64, rows: &[Row]) -> Result<Vec<Derived>, CliError> {
    let p_hat = estimate_mismatch_p(&s.kernel()?, &s.space()?, s.horizon, s.mismatch_replications, base_seed)?;
    let mut out = vec![Derived::new("all", "p_hat", p_hat)];
    let mut means = Vec::new();
    for &red in &s.redundant {
        let point = redundant_point(red);
        let ds = crate::bundle::values(rows, &point, "divergence");
        let bound = divergence_lower_bound(s.nodes, red, p_hat)?;
        let above = ds.iter().filter(|&&d| d >= bound).count() as f64 / ds.len().max(1) as f64;
        out.push(Derived::new(&point, "lower_bound", bound));
        out.push(Derived::new(&point, "fraction_at_or_above_bound", above));
        means.push(crate::stats::mean(&ds));
    }
    let increasing = means.windows(2).all(|w| w[1] > w[0]);
    out.push(Derived::new("all", "mean_strictly_increasing", increasing as u8 as f64));
    Ok(out)
}

fn game_roles(nodes: usize, miners: usize) -> Vec<NodeClass> {
    (0..nodes)
        .map(|i| if i < miners { NodeClass::Miner { hashrate_share: 1.0 / miners as f64 } } else { NodeClass::SpvClient })
        .collect()
}

fn equilibrium_rep(s: &EquilibriumSection, r: u64, seed: u64) -> Result<Vec<Row>, CliError> {
    let roles = game_roles(s.nodes, s.miners);
    let target = StrategyProfile::equilibrium_for(&roles);
    let init = StrategyProfile::random(&roles, seed);
    let out = run_best_response_dynamics(&init, &s.utility, s.max_rounds, s.update_mode)?;
    let point = "all";
    Ok(vec![
        Row::new(r, seed, point, "converged", out.converged as u8 as f64),
        Row::new(r, seed, point, "rounds", out.rounds as f64),
        Row::new(r, seed, point, "reached_equilibrium", (out.profile == target) as u8 as f64),
    ])
}

/// Exhaustive enumeration for every size up to `enumerate_max_nodes` and
/// every miner count: exact when the only equilibrium found is the
/// canonical profile.
fn equilibrium_derived(s: &EquilibriumSection) -> Result<Vec<Derived>, CliError> {
    let mut exact = true;
    let mut role_sets = 0u64;
    for n in 1..=s.enumerate_max_nodes {
        for m in 0..=n {
            let roles = game_roles(n, m);
            let eq = enumerate_equilibria(&roles, &s.utility)?;
            exact &= eq == [StrategyProfile::equilibrium_for(&roles)];
            role_sets += 1;
        }
    }
    Ok(vec![
        Derived::new("all", "enumeration_exact", exact as u8 as f64),
        Derived::new("all", "enumerated_role_sets", role_sets as f64),
        Derived::new("all", "lemma_regime", s.utility.in_lemma_regime() as u8 as f64),
    ])
}

fn surplus_rep(s: &SurplusSection, r: u64, seed: u64) -> Result<Vec<Row>, CliError> {
    let mut rows = Vec::new();
    for class in TxClass::ALL {
        let surplus = validation_surplus(class, &s.cost_model, s.samples, seed)?;
        let ratio = surplus_ratio(class, &s.cost_model, s.samples, seed)?;
        rows.push(Row::new(r, seed, class.name(), "surplus", surplus));
        rows.push(Row::new(r, seed, class.name(), "ratio", ratio));
    }
    Ok(rows)
}

/// Base graph and the same graph with `leaves` degree-1 home nodes, each
/// hung off a uniformly chosen base node.
pub fn topology_pair(s: &TopologySection, seed: u64) -> Result<(NetworkGraph, NetworkGraph), CliError> {
    let g = generate_watts_strogatz(s.base_nodes, s.k, s.beta, seed)?;
    let g = assign_roles(&g, s.miners, s.spv_fraction, s.core_extra_edges, seed)?;
    let mut h = g.clone();
    let mut rng = stream_rng(seed, &[stream::LEAVES]);
    for _ in 0..s.leaves {
        let anchor = NodeId(rng.random_range(0..s.base_nodes as u32));
        h.attach_leaf(anchor, NodeClass::HomeFullNode, 1)?;
    }
    Ok((g, h))
}

fn topology_rep(s: &TopologySection, r: u64, seed: u64) -> Result<Vec<Row>, CliError> {
    let (g, h) = topology_pair(s, seed)?;
    let miners: Vec<NodeId> = g.miners();
    let core: BTreeSet<NodeId> = miners.iter().copied().collect();
    let mut pairs = 0u64;
    let mut changes = 0u64;
    for (i, &a) in miners.iter().enumerate() {
        for &b in &miners[i + 1..] {
            let before = cut_size(&g, a, b)?;
            let after = cut_size(&h, a, b)?;
            pairs += 1;
            changes += (before != after) as u64;
        }
    }
    let point = "all";
    Ok(vec![
        Row::new(r, seed, point, "miner_pairs", pairs as f64),
        Row::new(r, seed, point, "cut_changes", changes as f64),
        Row::new(r, seed, point, "core_eff_diameter_before", effective_diameter(&g, s.epsilon, Some(&core))? as f64),
        Row::new(r, seed, point, "core_eff_diameter_after", effective_diameter(&h, s.epsilon, Some(&core))? as f64),
        Row::new(r, seed, point, "diameter_before", diameter(&g, None)? as f64),
        Row::new(r, seed, point, "diameter_after", diameter(&h, None)? as f64),
    ])
}

/// Minimum vertex cut size; adjacent pairs have none and report `None`.
fn cut_size(g: &NetworkGraph, a: NodeId, b: NodeId) -> Result<Option<usize>, CliError> {
    match min_vertex_cut(g, a, b) {
        Ok(c) => Ok(Some(c.len())),
        Err(TopologyError::Adjacent(..)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}
