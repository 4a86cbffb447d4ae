use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EngineError;
use crate::adversary::{expected_fault_surface, FaultKind, FaultRecord};
use crate::ledger::{BlockId, BlockTree, ChainView};
use crate::policy::{PolicyState, PolicyVector};
use crate::surplus::TxClass;
use crate::topology::{ClassKind, NetworkGraph, NodeId};

/// Metrics snapshot at the end of a tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFrame {
    pub tick: u64,
    /// Tip of the heaviest released valid chain.
    pub global_tip: BlockId,
    pub tips: Vec<BlockId>,
    pub policies: Vec<PolicyState>,
    /// Policy divergence metric over all nodes.
    pub divergence: f64,
    /// Fraction of SPV pairs on different tips.
    pub delta_spv: f64,
    /// Fraction of home-full-node pairs on different tips.
    pub delta_hfn: f64,
    /// Entropy (bits) of the policy distribution over isolated nodes.
    pub isolated_entropy: f64,
}

impl MetricsFrame {
    /// Divergence bit: the node's tip is not the global tip.
    pub fn delta(&self, node: NodeId) -> bool {
        self.tips[node.index()] != self.global_tip
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Produce,
    Receive,
    Adopt,
    Reject,
    Release,
    Abandon,
    Reorg,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Produce => "produce",
            EventKind::Receive => "receive",
            EventKind::Adopt => "adopt",
            EventKind::Reject => "reject",
            EventKind::Release => "release",
            EventKind::Abandon => "abandon",
            EventKind::Reorg => "reorg",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub tick: u64,
    pub kind: EventKind,
    pub node: Option<NodeId>,
    pub block: Option<BlockId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockMeta {
    pub produced_tick: u64,
    /// When the block became public; `None` for withheld blocks.
    pub released_tick: Option<u64>,
    pub adversarial: bool,
}

/// The global chain switched to a tip that does not extend the old one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReorgEvent {
    pub tick: u64,
    pub old_tip: BlockId,
    pub new_tip: BlockId,
    /// Blocks of the old chain that left the global chain.
    pub depth: u64,
}

/// A home full node's negative verdict on a block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub tick: u64,
    pub node: NodeId,
    pub block: BlockId,
}

/// A message delivered to an eclipse target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Receipt {
    pub tick: u64,
    pub to: NodeId,
    pub from: NodeId,
    pub block: BlockId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub config_hash: String,
    pub seed: u64,
    /// Graph after partition and eclipse.
    pub graph: NetworkGraph,
    pub tree: BlockTree,
    pub block_meta: Vec<BlockMeta>,
    pub frames: Vec<MetricsFrame>,
    pub events: Vec<TraceEvent>,
    pub faults: Vec<FaultRecord>,
    pub reorgs: Vec<ReorgEvent>,
    pub rejections: Vec<Rejection>,
    pub final_views: Vec<ChainView>,
    pub final_policies: PolicyVector,
    /// Degree-0 nodes of the effective graph.
    pub redundant: Vec<bool>,
    pub eclipsed: BTreeSet<NodeId>,
    pub adversary_nodes: BTreeSet<NodeId>,
    pub target_receipts: Vec<Receipt>,
}

/// Which frame to read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum At {
    /// The last recorded frame.
    Horizon,
    Tick(u64),
}

/// Which nodes a divergence statistic covers.
#[derive(Clone, Debug, PartialEq)]
pub enum NodeFilter {
    /// Honest nodes of a class (adversary nodes never count).
    Class(ClassKind),
    Nodes(BTreeSet<NodeId>),
    /// Honest non-miners with no miner neighbor.
    NoMinerPeers,
}

impl SimTrace {
    pub fn horizon(&self) -> u64 {
        self.frames.last().map_or(0, |f| f.tick)
    }

    pub fn frame(&self, at: At) -> Option<&MetricsFrame> {
        match at {
            At::Horizon => self.frames.last(),
            At::Tick(t) => self.frames.binary_search_by_key(&t, |f| f.tick).ok().map(|i| &self.frames[i]),
        }
    }

    pub fn final_global_tip(&self) -> BlockId {
        self.frames.last().map_or(BlockId::GENESIS, |f| f.global_tip)
    }

    /// Blocks of the final global chain, genesis first.
    pub fn global_chain(&self) -> Vec<BlockId> {
        self.tree.path(self.final_global_tip())
    }

    /// JSON of the final global chain's blocks; equal strings mean equal
    /// chains down to every field.
    pub fn global_chain_bytes(&self) -> String {
        let blocks: Vec<_> = self.global_chain().into_iter().map(|b| self.tree.block(b)).collect();
        serde_json::to_string(&blocks).expect("blocks serialize")
    }

    /// Hex SHA-256 over the whole serialized trace.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("trace serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn nodes_matching(&self, filter: &NodeFilter) -> Vec<NodeId> {
        let g = &self.graph;
        match filter {
            NodeFilter::Class(kind) => g
                .nodes()
                .filter(|v| g.role(*v).kind() == *kind && !self.adversary_nodes.contains(v))
                .collect(),
            NodeFilter::Nodes(set) => set.iter().copied().filter(|v| g.contains(*v)).collect(),
            NodeFilter::NoMinerPeers => g
                .nodes()
                .filter(|&v| {
                    !g.role(v).is_miner()
                        && !self.adversary_nodes.contains(&v)
                        && g.neighbors(v).all(|(w, _)| !g.role(w).is_miner())
                })
                .collect(),
        }
    }

    pub fn is_rejected_by(&self, node: NodeId, block: BlockId) -> bool {
        self.rejections.iter().any(|r| r.node == node && r.block == block)
    }
}

/// Fraction of (trace, node) pairs whose node is diverged at `at`.
pub fn divergence_probability(traces: &[SimTrace], filter: &NodeFilter, at: At) -> Result<f64, EngineError> {
    if traces.is_empty() {
        return Err(EngineError::NoTraces);
    }
    let mut hits = 0u64;
    let mut total = 0u64;
    for tr in traces {
        let frame = tr.frame(at).ok_or(EngineError::NoFrame(at_tick(at)))?;
        for v in tr.nodes_matching(filter) {
            total += 1;
            hits += frame.delta(v) as u64;
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

fn at_tick(at: At) -> u64 {
    match at {
        At::Horizon => u64::MAX,
        At::Tick(t) => t,
    }
}

/// Mean of `1[tip_u ≠ tip_v]` over unordered pairs within one class, or
/// over all cross pairs of two classes.
pub fn pairwise_divergence_rate(trace: &SimTrace, class_a: ClassKind, class_b: ClassKind, at: At) -> Result<f64, EngineError> {
    let a = trace.nodes_matching(&NodeFilter::Class(class_a));
    let b = trace.nodes_matching(&NodeFilter::Class(class_b));
    if a.is_empty() {
        return Err(EngineError::EmptyClass(class_a));
    }
    if b.is_empty() {
        return Err(EngineError::EmptyClass(class_b));
    }
    let frame = trace.frame(at).ok_or(EngineError::NoFrame(at_tick(at)))?;
    let tips: Vec<BlockId> = a.iter().map(|v| frame.tips[v.index()]).collect();
    if class_a == class_b {
        Ok(within_pair_disagreement(&tips))
    } else {
        let mut diff = 0u64;
        for &u in &a {
            for &v in &b {
                diff += (frame.tips[u.index()] != frame.tips[v.index()]) as u64;
            }
        }
        Ok(diff as f64 / (a.len() * b.len()) as f64)
    }
}

/// Fraction of unordered pairs with different values; 0 with fewer than two.
pub(crate) fn within_pair_disagreement<T: Ord + Copy>(values: &[T]) -> f64 {
    let n = values.len() as u64;
    if n < 2 {
        return 0.0;
    }
    let mut counts: BTreeMap<T, u64> = BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_default() += 1;
    }
    let same: u64 = counts.values().map(|c| c * (c - 1) / 2).sum();
    let pairs = n * (n - 1) / 2;
    (pairs - same) as f64 / pairs as f64
}

/// Blocks the home full node `node` rejected that nonetheless sit on the
/// final global chain.
pub fn validation_surplus_set(trace: &SimTrace, node: NodeId) -> Result<BTreeSet<BlockId>, EngineError> {
    if !trace.graph.contains(node) {
        return Err(EngineError::UnknownNode(node));
    }
    let kind = trace.graph.role(node).kind();
    if kind != ClassKind::Hfn {
        return Err(EngineError::WrongClass { node, class: kind });
    }
    let chain: BTreeSet<BlockId> = trace.global_chain().into_iter().collect();
    Ok(trace
        .rejections
        .iter()
        .filter(|r| r.node == node && chain.contains(&r.block))
        .map(|r| r.block)
        .collect())
}

/// Mean expected fault surface per honest node of `class`.
pub fn mean_fault_surface(trace: &SimTrace, class: ClassKind, probabilities: &BTreeMap<FaultKind, f64>) -> Result<f64, EngineError> {
    let nodes = trace.nodes_matching(&NodeFilter::Class(class));
    if nodes.is_empty() {
        return Err(EngineError::EmptyClass(class));
    }
    let members: BTreeSet<NodeId> = nodes.iter().copied().collect();
    let records: Vec<FaultRecord> = trace.faults.iter().filter(|r| members.contains(&r.target)).cloned().collect();
    let total = expected_fault_surface(&records, probabilities)?;
    Ok(total / nodes.len() as f64)
}

/// Relative excess of home-full-node rejection delay over SPV receipt delay
/// for invalid (malformed-transaction) blocks: `mean_hfn / mean_spv − 1`.
/// `None` when either side has no observations.
pub fn rejection_latency_excess(trace: &SimTrace) -> Option<f64> {
    let invalid: BTreeSet<BlockId> = trace
        .tree
        .blocks()
        .iter()
        .filter(|b| b.tx_class_counts.contains_key(&TxClass::T3Malformed))
        .map(|b| b.id)
        .collect();
    let produced = |b: BlockId| trace.block_meta[b.index()].produced_tick;
    let hfn: Vec<f64> = trace
        .rejections
        .iter()
        .filter(|r| invalid.contains(&r.block))
        .map(|r| (r.tick - produced(r.block)) as f64)
        .collect();
    let spv_nodes: BTreeSet<NodeId> = trace.nodes_matching(&NodeFilter::Class(ClassKind::Spv)).into_iter().collect();
    let spv: Vec<f64> = trace
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Receive)
        .filter(|e| e.node.is_some_and(|v| spv_nodes.contains(&v)))
        .filter_map(|e| e.block.filter(|b| invalid.contains(b)).map(|b| (e.tick - produced(b)) as f64))
        .collect();
    if hfn.is_empty() || spv.is_empty() {
        return None;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (h, s) = (mean(&hfn), mean(&spv));
    if s == 0.0 {
        return None;
    }
    Some(h / s - 1.0)
}

/// `1 − (1−ε)(1−P_desync)`: divergence from two independent mechanisms.
pub fn composed_divergence(rule_conflict: f64, desync: f64) -> f64 {
    1.0 - (1.0 - rule_conflict) * (1.0 - desync)
}

/// The two divergence mechanisms measured separately at the horizon over
/// honest non-miners.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceFactors {
    /// Fraction of nodes that locally rejected a block of the final global
    /// chain (rule mismatch, the ε term).
    pub rule_conflict: f64,
    /// Fraction diverged among nodes without such a rejection.
    pub desync: f64,
    /// Fraction diverged overall.
    pub p_delta: f64,
}

pub fn divergence_factors(trace: &SimTrace) -> DivergenceFactors {
    let chain: BTreeSet<BlockId> = trace.global_chain().into_iter().collect();
    let conflicted: BTreeSet<NodeId> =
        trace.rejections.iter().filter(|r| chain.contains(&r.block)).map(|r| r.node).collect();
    let frame = trace.frames.last().expect("trace has frames");
    let nodes: Vec<NodeId> = [ClassKind::Spv, ClassKind::Hfn]
        .into_iter()
        .flat_map(|k| trace.nodes_matching(&NodeFilter::Class(k)))
        .collect();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let clean: Vec<NodeId> = nodes.iter().copied().filter(|v| !conflicted.contains(v)).collect();
    DivergenceFactors {
        rule_conflict: ratio(nodes.len() - clean.len(), nodes.len()),
        desync: ratio(clean.iter().filter(|v| frame.delta(**v)).count(), clean.len()),
        p_delta: ratio(nodes.iter().filter(|v| frame.delta(**v)).count(), nodes.len()),
    }
}
