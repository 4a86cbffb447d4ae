//! Discrete policy states, the adopt-then-drift update kernel, entropy and
//! divergence metrics.
//!
//! Entropies are in bits.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, stream_rng};
use crate::topology::{NetworkGraph, NodeId};

/// Index into a [`PolicySpace`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolicyState(pub u16);

impl fmt::Display for PolicyState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("policy space needs K >= 2 (got {0})")]
    Cardinality(u16),
    #[error("policy {0} outside space of size {1}")]
    OutOfSpace(PolicyState, u16),
    #[error("drift rate must lie in [0,1] (got {0})")]
    DriftRate(f64),
    #[error("probability vector sums to {0}, expected 1")]
    Normalization(f64),
    #[error("probability vector has an entry outside [0,1]")]
    BadEntry,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no enforcer flag for node {0}")]
    MissingFlag(NodeId),
    #[error("policy vector has {got} entries for {expected} nodes")]
    VectorLength { got: usize, expected: usize },
}

pub type Result<T> = std::result::Result<T, PolicyError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpace {
    cardinality: u16,
    canonical: PolicyState,
}

impl PolicySpace {
    pub fn new(cardinality: u16, canonical: PolicyState) -> Result<Self> {
        if cardinality < 2 {
            return Err(PolicyError::Cardinality(cardinality));
        }
        if canonical.0 >= cardinality {
            return Err(PolicyError::OutOfSpace(canonical, cardinality));
        }
        Ok(PolicySpace { cardinality, canonical })
    }

    pub fn cardinality(&self) -> u16 {
        self.cardinality
    }

    pub fn canonical(&self) -> PolicyState {
        self.canonical
    }

    pub fn contains(&self, p: PolicyState) -> bool {
        p.0 < self.cardinality
    }

    /// The smallest policy other than the canonical one.
    pub fn first_non_canonical(&self) -> PolicyState {
        if self.canonical.0 == 0 {
            PolicyState(1)
        } else {
            PolicyState(0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdoptionRule {
    /// Most frequent inbox policy; ties go to the lowest index.
    MajorityOfInbox,
    /// A uniformly chosen inbox element.
    UniformRandomPeer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyKernel {
    drift_rate: f64,
    pub adoption_rule: AdoptionRule,
    /// Stationary mismatch probability, once estimated.
    pub mismatch_p: Option<f64>,
}

impl PolicyKernel {
    pub fn new(drift_rate: f64, adoption_rule: AdoptionRule) -> Result<Self> {
        if !(0.0..=1.0).contains(&drift_rate) {
            return Err(PolicyError::DriftRate(drift_rate));
        }
        Ok(PolicyKernel { drift_rate, adoption_rule, mismatch_p: None })
    }

    pub fn drift_rate(&self) -> f64 {
        self.drift_rate
    }
}

/// Policies of every node at one tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyVector {
    pub states: Vec<PolicyState>,
    pub tick: u64,
}

/// One kernel step: adopt from a non-empty inbox, then drift.
///
/// Draw order is fixed: one index draw for `UniformRandomPeer` (non-empty
/// inbox only), then one drift draw, then one uniform draw if drifting.
pub fn step_policy<R: Rng + ?Sized>(
    current: PolicyState,
    inbox: &[PolicyState],
    kernel: &PolicyKernel,
    space: &PolicySpace,
    rng: &mut R,
) -> PolicyState {
    let mut next = current;
    if !inbox.is_empty() {
        next = match kernel.adoption_rule {
            AdoptionRule::MajorityOfInbox => majority(inbox),
            AdoptionRule::UniformRandomPeer => inbox[rng.random_range(0..inbox.len())],
        };
    }
    if rng.random::<f64>() < kernel.drift_rate {
        next = PolicyState(rng.random_range(0..space.cardinality));
    }
    next
}

fn majority(inbox: &[PolicyState]) -> PolicyState {
    let mut counts: BTreeMap<PolicyState, usize> = BTreeMap::new();
    for &p in inbox {
        *counts.entry(p).or_default() += 1;
    }
    // BTreeMap iterates ascending, so `>` keeps the lowest index on ties.
    let mut best = (inbox[0], 0usize);
    for (&p, &c) in &counts {
        if c > best.1 {
            best = (p, c);
        }
    }
    best.0
}

fn check_distribution(v: &[f64]) -> Result<()> {
    if v.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(PolicyError::BadEntry);
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(PolicyError::Normalization(s));
    }
    Ok(())
}

fn entropy_bits(v: &[f64]) -> f64 {
    v.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum()
}

/// Shannon entropy in bits of a distribution over policies.
pub fn policy_entropy(marginal: &[f64]) -> Result<f64> {
    check_distribution(marginal)?;
    Ok(entropy_bits(marginal))
}

/// Empirical distribution of `states` over a space of size `k`.
pub fn empirical_marginal(states: &[PolicyState], k: u16) -> Vec<f64> {
    let mut c = vec![0.0; k as usize];
    for s in states {
        c[s.0 as usize] += 1.0;
    }
    let n = states.len().max(1) as f64;
    c.iter_mut().for_each(|x| *x /= n);
    c
}

/// Fraction of ordered node pairs whose policies differ, normalized by
/// `|V|^2` (the diagonal counts as agreement).
pub fn divergence_metric(states: &[PolicyState]) -> f64 {
    if states.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<PolicyState, u64> = BTreeMap::new();
    for &s in states {
        *counts.entry(s).or_default() += 1;
    }
    let n = states.len() as u64;
    let agree: u64 = counts.values().map(|c| c * c).sum();
    (n * n - agree) as f64 / (n * n) as f64
}

/// `|R|·(|V|−|R|)/|V|² · p`.
pub fn divergence_lower_bound(total_nodes: usize, redundant_count: usize, mismatch_p: f64) -> Result<f64> {
    if total_nodes == 0 {
        return Err(PolicyError::Domain("total_nodes must be positive".into()));
    }
    if redundant_count > total_nodes {
        return Err(PolicyError::Domain(format!(
            "redundant_count {redundant_count} exceeds total_nodes {total_nodes}"
        )));
    }
    if !(0.0..=1.0).contains(&mismatch_p) {
        return Err(PolicyError::Domain(format!("mismatch probability {mismatch_p} outside [0,1]")));
    }
    let v = total_nodes as f64;
    let r = redundant_count as f64;
    Ok(r * (v - r) / (v * v) * mismatch_p)
}

/// Exact `P[policy ≠ π*]` after `t` steps for an isolated node that starts
/// at `π*`: each step leaves the state alone with probability `1 − ξ` and
/// otherwise redraws it uniformly.
pub fn isolated_mismatch_exact(drift_rate: f64, k: u16, t: u64) -> f64 {
    let k = k as f64;
    (k - 1.0) / k * (1.0 - (1.0 - drift_rate).powf(t as f64))
}

/// Monte Carlo estimate of `P[policy ≠ π*]` at `horizon` for an isolated
/// node started at `π*`. Replication `r` draws from stream `(seed, r)`.
pub fn estimate_mismatch_p(
    kernel: &PolicyKernel,
    space: &PolicySpace,
    horizon: u64,
    replications: u64,
    seed: u64,
) -> Result<f64> {
    if replications == 0 {
        return Err(PolicyError::Domain("replications must be >= 1".into()));
    }
    let mut mismatched = 0u64;
    for r in 0..replications {
        let mut rng = stream_rng(seed, &[stream::MISMATCH, r]);
        let mut s = space.canonical;
        for _ in 0..horizon {
            s = step_policy(s, &[], kernel, space, &mut rng);
        }
        if s != space.canonical {
            mismatched += 1;
        }
    }
    Ok(mismatched as f64 / replications as f64)
}

/// Sum of verdict entropies over the nodes that are not enforcers.
pub fn redundant_entropy(
    decisions: &BTreeMap<NodeId, Vec<f64>>,
    enforcer_flags: &BTreeMap<NodeId, bool>,
) -> Result<f64> {
    let mut total = 0.0;
    for (&node, dist) in decisions {
        check_distribution(dist)?;
        let enforcer = *enforcer_flags.get(&node).ok_or(PolicyError::MissingFlag(node))?;
        if !enforcer {
            total += entropy_bits(dist);
        }
    }
    Ok(total)
}

/// Policy evolution over a graph. Each tick every unpinned node steps the
/// kernel with an inbox holding each neighbor's policy as it was
/// `latency` ticks earlier. Node `i` at tick `t` draws from stream
/// `(seed, POLICY, i, t)`, so the update order is irrelevant.
#[derive(Clone, Debug)]
pub struct PolicyDynamics {
    space: PolicySpace,
    kernel: PolicyKernel,
    seed: u64,
    pinned: Vec<bool>,
    neighbors: Vec<Vec<(NodeId, u32)>>,
    /// `history[0]` is the current vector, `history[d]` the vector `d` ticks ago.
    history: VecDeque<Vec<PolicyState>>,
    depth: usize,
    tick: u64,
}

impl PolicyDynamics {
    pub fn new(
        graph: &NetworkGraph,
        space: PolicySpace,
        kernel: PolicyKernel,
        initial: Vec<PolicyState>,
        pinned: Vec<bool>,
        seed: u64,
    ) -> Result<Self> {
        let n = graph.node_count();
        if initial.len() != n {
            return Err(PolicyError::VectorLength { got: initial.len(), expected: n });
        }
        if pinned.len() != n {
            return Err(PolicyError::VectorLength { got: pinned.len(), expected: n });
        }
        if let Some(&bad) = initial.iter().find(|p| !space.contains(**p)) {
            return Err(PolicyError::OutOfSpace(bad, space.cardinality));
        }
        let neighbors: Vec<Vec<(NodeId, u32)>> = graph.nodes().map(|v| graph.neighbors(v).collect()).collect();
        let depth = graph.max_latency() as usize + 1;
        Ok(PolicyDynamics {
            space,
            kernel,
            seed,
            pinned,
            neighbors,
            history: VecDeque::from([initial]),
            depth,
            tick: 0,
        })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn current(&self) -> &[PolicyState] {
        &self.history[0]
    }

    pub fn vector(&self) -> PolicyVector {
        PolicyVector { states: self.history[0].clone(), tick: self.tick }
    }

    pub fn space(&self) -> &PolicySpace {
        &self.space
    }

    /// Policy of `node` as seen `lag` ticks ago (clamped to the start).
    fn lagged(&self, node: NodeId, lag: u32) -> PolicyState {
        let idx = (lag as usize).min(self.history.len() - 1);
        self.history[idx][node.index()]
    }

    /// Advance one tick.
    pub fn step(&mut self) {
        let t = self.tick + 1;
        let n = self.pinned.len();
        let mut next = Vec::with_capacity(n);
        let mut inbox = Vec::new();
        for i in 0..n {
            let cur = self.history[0][i];
            if self.pinned[i] {
                next.push(cur);
                continue;
            }
            inbox.clear();
            // Policy emitted at tick t - lat is received at t; `history[lat - 1]`
            // is the vector from tick t - lat.
            for &(w, lat) in &self.neighbors[i] {
                inbox.push(self.lagged(w, lat - 1));
            }
            let mut rng = stream_rng(self.seed, &[stream::POLICY, i as u64, t]);
            next.push(step_policy(cur, &inbox, &self.kernel, &self.space, &mut rng));
        }
        self.history.push_front(next);
        self.history.truncate(self.depth);
        self.tick = t;
    }

    pub fn run(&mut self, ticks: u64) {
        for _ in 0..ticks {
            self.step();
        }
    }
}

/// Run the kernel on `graph` for `horizon` ticks from an all-`π*` start
/// with no pinned nodes and return the divergence of the final vector.
pub fn population_divergence(
    graph: &NetworkGraph,
    space: PolicySpace,
    kernel: PolicyKernel,
    horizon: u64,
    seed: u64,
) -> Result<f64> {
    let n = graph.node_count();
    let mut dynamics = PolicyDynamics::new(graph, space, kernel, vec![space.canonical; n], vec![false; n], seed)?;
    dynamics.run(horizon);
    Ok(divergence_metric(dynamics.current()))
}
