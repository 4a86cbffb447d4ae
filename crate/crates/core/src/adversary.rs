//! Adversary configuration and the graph transformations it applies:
//! random edge partition, eclipse, and fault accounting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{BlockId, BlockTree, ChainView};
use crate::rng::{stream, stream_rng};
use crate::topology::{NetworkGraph, NodeId};

#[derive(Debug, Error, PartialEq)]
pub enum AdversaryError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid adversary parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, AdversaryError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversaryConfig {
    /// Share of total hashrate controlled by the adversary, `< 0.5`.
    pub alpha: f64,
    /// Extra ticks the adversary may add to a message (hard cap).
    pub delay_budget: u32,
    pub eclipse_targets: BTreeSet<NodeId>,
    /// Per-edge removal probability applied before the run.
    pub partition_probability: f64,
    /// Probability that an adversary block is consensus-invalid.
    pub invalid_injection_rate: f64,
    pub seed: u64,
    /// Graph nodes under adversary control. They must have the miner role.
    pub nodes: BTreeSet<NodeId>,
    /// Nodes whose incident edges carry the extra `delay_budget`.
    pub delayed: BTreeSet<NodeId>,
    /// A private branch is abandoned once the public chain leads it by more
    /// than this many blocks of work.
    pub give_up_depth: u32,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        AdversaryConfig {
            alpha: 0.0,
            delay_budget: 0,
            eclipse_targets: BTreeSet::new(),
            partition_probability: 0.0,
            invalid_injection_rate: 0.0,
            seed: 0,
            nodes: BTreeSet::new(),
            delayed: BTreeSet::new(),
            give_up_depth: 2,
        }
    }
}

impl AdversaryConfig {
    /// Checks that do not need the graph.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.alpha) {
            return Err(AdversaryError::InvalidParameter(format!("alpha must lie in [0, 0.5) (got {})", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.partition_probability) {
            return Err(AdversaryError::InvalidParameter(format!(
                "partition_probability must lie in [0, 1) (got {})",
                self.partition_probability
            )));
        }
        if !(0.0..=1.0).contains(&self.invalid_injection_rate) {
            return Err(AdversaryError::InvalidParameter(format!(
                "invalid_injection_rate must lie in [0, 1] (got {})",
                self.invalid_injection_rate
            )));
        }
        if self.alpha > 0.0 && self.nodes.is_empty() {
            return Err(AdversaryError::InvalidParameter("alpha > 0 needs at least one adversary node".into()));
        }
        if !self.eclipse_targets.is_empty() && self.nodes.is_empty() {
            return Err(AdversaryError::InvalidParameter("eclipse targets need at least one adversary node".into()));
        }
        if let Some(t) = self.eclipse_targets.intersection(&self.nodes).next() {
            return Err(AdversaryError::InvalidParameter(format!("node {t} is both adversary and eclipse target")));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.alpha > 0.0 || !self.eclipse_targets.is_empty() || self.delay_budget > 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaultKind {
    InvalidBlock,
    StaleChain,
    ForgedHeaderSequence,
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FaultKind::InvalidBlock => "InvalidBlock",
            FaultKind::StaleChain => "StaleChain",
            FaultKind::ForgedHeaderSequence => "ForgedHeaderSequence",
        })
    }
}

/// An adversarial message reaching `target` at `tick`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub tick: u64,
    pub target: NodeId,
    pub message_kind: FaultKind,
    pub block_id: BlockId,
    /// Filled in after the run against the final global chain.
    pub caused_deviation: bool,
}

/// Remove each edge independently with probability `p`. Edges are visited
/// in sorted order with one draw each.
pub fn partition_edges(graph: &NetworkGraph, p: f64, seed: u64) -> Result<NetworkGraph> {
    if !(0.0..1.0).contains(&p) {
        return Err(AdversaryError::InvalidParameter(format!("p must lie in [0, 1) (got {p})")));
    }
    let mut g = graph.clone();
    let mut rng = stream_rng(seed, &[stream::PARTITION]);
    let edges: Vec<(NodeId, NodeId, u32)> = graph.edges().collect();
    for (u, v, _) in edges {
        if rng.random::<f64>() < p {
            g.remove_edge(u, v);
        }
    }
    Ok(g)
}

/// Replace every edge of `target` by edges to each adversary node. An
/// existing target-adversary edge keeps its latency; new ones get 1 tick.
pub fn eclipse(graph: &NetworkGraph, target: NodeId, adversary_nodes: &BTreeSet<NodeId>) -> Result<NetworkGraph> {
    if !graph.contains(target) {
        return Err(AdversaryError::UnknownNode(target));
    }
    if let Some(&bad) = adversary_nodes.iter().find(|v| !graph.contains(**v)) {
        return Err(AdversaryError::UnknownNode(bad));
    }
    if adversary_nodes.is_empty() {
        return Err(AdversaryError::InvalidParameter("adversary node set is empty".into()));
    }
    if adversary_nodes.contains(&target) {
        return Err(AdversaryError::InvalidParameter(format!("target {target} is an adversary node")));
    }
    let mut g = graph.clone();
    let old: Vec<(NodeId, u32)> = graph.neighbors(target).collect();
    for &(w, _) in &old {
        if !adversary_nodes.contains(&w) {
            g.remove_edge(target, w);
        }
    }
    for &a in adversary_nodes {
        if !g.has_edge(target, a) {
            g.add_edge(target, a, 1).expect("nodes checked above");
        }
    }
    Ok(g)
}

/// True iff the victim's tip is not on the path from genesis to the global
/// tip (a stale-but-ancestral tip is not a deviation).
pub fn fault_injectability(
    _record: &FaultRecord,
    victim_local_chain: &ChainView,
    global_chain: &ChainView,
    tree: &BlockTree,
) -> bool {
    !tree.is_ancestor_or_equal(victim_local_chain.tip, global_chain.tip)
}

/// `Σ 1[caused_deviation] · P(kind)` over the records. Kinds missing from
/// the map count with probability 0.
pub fn expected_fault_surface(records: &[FaultRecord], message_probabilities: &BTreeMap<FaultKind, f64>) -> Result<f64> {
    if let Some((k, p)) = message_probabilities.iter().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
        return Err(AdversaryError::InvalidParameter(format!("probability {p} for {k} outside [0,1]")));
    }
    Ok(records
        .iter()
        .filter(|r| r.caused_deviation)
        .map(|r| message_probabilities.get(&r.message_kind).copied().unwrap_or(0.0))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k4() -> NetworkGraph {
        NetworkGraph::from_edges(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap()
    }

    #[test]
    fn partition_zero_is_identity() {
        let g = k4();
        assert_eq!(partition_edges(&g, 0.0, 9).unwrap(), g);
        assert!(partition_edges(&g, 1.0, 9).is_err());
    }

    #[test]
    fn partition_half_on_k4() {
        let g = k4();
        let total: usize = (0..4000).map(|s| partition_edges(&g, 0.5, s).unwrap().edge_count()).sum();
        let mean = total as f64 / 4000.0;
        // sd of one count is sqrt(6 * 0.25); of the mean, that over sqrt(4000).
        assert!((mean - 3.0).abs() < 4.0 * (1.5f64 / 4000.0).sqrt(), "mean {mean}");
    }

    #[test]
    fn eclipse_examples() {
        let g = NetworkGraph::from_edges(5, &[(0, 1), (0, 2), (0, 3), (3, 4)]).unwrap();
        let adv = BTreeSet::from([NodeId(4)]);
        let e = eclipse(&g, NodeId(0), &adv).unwrap();
        assert_eq!(e.neighbors(NodeId(0)).map(|x| x.0).collect::<Vec<_>>(), vec![NodeId(4)]);
        assert_eq!(eclipse(&e, NodeId(0), &adv).unwrap(), e);
        assert_eq!(eclipse(&g, NodeId(9), &adv), Err(AdversaryError::UnknownNode(NodeId(9))));
        assert!(eclipse(&g, NodeId(4), &adv).is_err());
    }

    #[test]
    fn fault_surface_examples() {
        let probs = BTreeMap::from([(FaultKind::InvalidBlock, 1.0), (FaultKind::StaleChain, 0.25)]);
        assert_eq!(expected_fault_surface(&[], &probs).unwrap(), 0.0);
        let rec = |kind, dev| FaultRecord { tick: 1, target: NodeId(0), message_kind: kind, block_id: BlockId(1), caused_deviation: dev };
        assert_eq!(expected_fault_surface(&[rec(FaultKind::InvalidBlock, true)], &probs).unwrap(), 1.0);
        let mixed = [
            rec(FaultKind::InvalidBlock, true),
            rec(FaultKind::StaleChain, true),
            rec(FaultKind::StaleChain, false),
            rec(FaultKind::ForgedHeaderSequence, true),
        ];
        assert_eq!(expected_fault_surface(&mixed, &probs).unwrap(), 1.25);
        let bad = BTreeMap::from([(FaultKind::StaleChain, 2.0)]);
        assert!(expected_fault_surface(&mixed, &bad).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = AdversaryConfig::default();
        c.validate().unwrap();
        c.alpha = 0.5;
        assert!(c.validate().is_err());
        c.alpha = 0.3;
        assert!(c.validate().is_err());
        c.nodes.insert(NodeId(1));
        c.validate().unwrap();
        c.eclipse_targets.insert(NodeId(1));
        assert!(c.validate().is_err());
    }
}
