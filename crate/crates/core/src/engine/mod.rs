//! Deterministic discrete-time network simulation.
//!
//! Each tick runs in a fixed order:
//!
//! 1. deliver messages due this tick (sorted by receiver, block, sender),
//!    then apply home-full-node verdicts that fall due;
//! 2. produce at most one block (or the scheduled blocks);
//! 3. let the adversary release or abandon its private branch;
//! 4. advance every policy one kernel step;
//! 5. record a [`MetricsFrame`].
//!
//! Relays are enqueued the moment a node accepts a block, so a block
//! received at tick `t` over an edge of latency `l` is delivered at `t + l`.
//! Deliveries come before production, which makes a latency-1 miner link
//! behave like a shared view: a miner always builds on everything its
//! miner peers had produced by the previous tick.

mod config;
mod export;
mod trace;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use thiserror::Error;

pub use config::{EngineOptions, ScheduledBlock, SimConfig};
pub use export::{summarize, write_policy_csv, write_summary_json, write_trace_csv, TraceSummary};
pub use trace::{
    composed_divergence, divergence_factors, divergence_probability, mean_fault_surface, pairwise_divergence_rate, rejection_latency_excess,
    validation_surplus_set, At, BlockMeta, DivergenceFactors, EventKind, MetricsFrame, NodeFilter, Receipt, ReorgEvent, Rejection,
    SimTrace, TraceEvent,
};

use crate::adversary::{eclipse, partition_edges, AdversaryError, FaultKind, FaultRecord};
use crate::ledger::{fork_choice_cmp, BlockId, BlockTree, ChainView, LedgerError};
use crate::policy::{divergence_metric, empirical_marginal, policy_entropy, PolicyDynamics, PolicyError, PolicyState};
use crate::rng::{stream, stream_rng, SimRng};
use crate::surplus::TxClass;
use crate::topology::{ClassKind, NetworkGraph, NodeClass, NodeId, TopologyError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("node {node} is a {class} node; operation needs a home full node")]
    WrongClass { node: NodeId, class: ClassKind },
    #[error("no honest {0} nodes in trace")]
    EmptyClass(ClassKind),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("empty trace ensemble")]
    NoTraces,
    #[error("no frame recorded for tick {0}")]
    NoFrame(u64),
    #[error("configs differ in more than non-miner latency: {0}")]
    IncomparableConfigs(String),
}

/// Safety cap on extra ticks spent settling after the horizon.
const SETTLE_CAP: u64 = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Verdict {
    Accepted,
    Rejected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Miner,
    Hfn,
    Spv,
    Adversary,
}

#[derive(Clone, Debug, Default)]
struct NodeState {
    first_seen: BTreeMap<BlockId, u64>,
    adoptable: BTreeSet<BlockId>,
    verdicts: BTreeMap<BlockId, Verdict>,
    /// Blocks waiting for their parent, keyed by the missing parent.
    orphans: BTreeMap<BlockId, Vec<(BlockId, NodeId)>>,
    tip: BlockId,
}

#[derive(Clone, Debug)]
struct Msg {
    to: NodeId,
    from: NodeId,
    block: BlockId,
}

/// Shared state of the colluding adversary nodes.
#[derive(Clone, Debug)]
struct AdversaryState {
    nodes: Vec<NodeId>,
    first_seen: BTreeMap<BlockId, u64>,
    /// Best public valid block the adversary knows.
    public_tip: BlockId,
    invalid_tip: Option<BlockId>,
    private: Vec<BlockId>,
    eclipse_tip: BlockId,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    graph: NetworkGraph,
    roles: Vec<Role>,
    tree: BlockTree,
    meta: Vec<BlockMeta>,
    nodes: Vec<NodeState>,
    queue: BTreeMap<u64, Vec<Msg>>,
    validations: BTreeMap<u64, Vec<(NodeId, BlockId, NodeId)>>,
    adv: AdversaryState,
    targets: BTreeSet<NodeId>,
    delayed: BTreeSet<NodeId>,
    policies: PolicyDynamics,
    global_tip: BlockId,
    events: Vec<TraceEvent>,
    /// Records with the tick their effect is judged at and the victim's tip then.
    faults: Vec<(FaultRecord, u64, Option<BlockId>)>,
    reorgs: Vec<ReorgEvent>,
    rejections: Vec<Rejection>,
    receipts: Vec<Receipt>,
    frames: Vec<MetricsFrame>,
    honest_miners: Vec<(NodeId, f64)>,
    spv: Vec<NodeId>,
    hfn: Vec<NodeId>,
    redundant: Vec<bool>,
}

/// Run one simulation. Identical configs give identical traces.
pub fn run_simulation(config: &SimConfig) -> Result<SimTrace, EngineError> {
    config.validate()?;
    let mut sim = Sim::new(config)?;
    for t in 1..=config.ticks {
        sim.tick(t, false);
    }
    if config.options.settle {
        let mut t = config.ticks;
        while (!sim.queue.is_empty() || !sim.validations.is_empty()) && t < config.ticks + SETTLE_CAP {
            t += 1;
            sim.tick(t, true);
        }
    }
    Ok(sim.finish(config))
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self, EngineError> {
        let adv_cfg = &cfg.adversary;
        let mut graph = if adv_cfg.partition_probability > 0.0 {
            partition_edges(&cfg.graph, adv_cfg.partition_probability, adv_cfg.seed)?
        } else {
            cfg.graph.clone()
        };
        for &t in &adv_cfg.eclipse_targets {
            graph = eclipse(&graph, t, &adv_cfg.nodes)?;
        }
        let n = graph.node_count();
        let roles: Vec<Role> = graph
            .nodes()
            .map(|v| {
                if adv_cfg.nodes.contains(&v) {
                    Role::Adversary
                } else {
                    match graph.role(v) {
                        NodeClass::Miner { .. } => Role::Miner,
                        NodeClass::HomeFullNode => Role::Hfn,
                        NodeClass::SpvClient => Role::Spv,
                    }
                }
            })
            .collect();

        let canonical = cfg.space.canonical();
        let mut initial = cfg.options.initial_policies.clone().unwrap_or_else(|| vec![canonical; n]);
        let mut pinned = vec![false; n];
        for v in graph.nodes() {
            if matches!(roles[v.index()], Role::Miner | Role::Adversary) {
                initial[v.index()] = canonical;
                pinned[v.index()] = true;
            }
        }
        for (&v, &p) in &cfg.options.frozen_policies {
            initial[v.index()] = p;
            pinned[v.index()] = true;
        }
        let policies = PolicyDynamics::new(&graph, cfg.space, cfg.kernel, initial, pinned, cfg.seed)?;

        let mut nodes = vec![NodeState::default(); n];
        for s in &mut nodes {
            s.first_seen.insert(BlockId::GENESIS, 0);
            s.adoptable.insert(BlockId::GENESIS);
            s.verdicts.insert(BlockId::GENESIS, Verdict::Accepted);
        }

        let mut honest: Vec<(NodeId, f64)> = graph
            .nodes()
            .filter(|v| roles[v.index()] == Role::Miner)
            .map(|v| (v, graph.role(v).hashrate_share()))
            .collect();
        let total: f64 = honest.iter().map(|x| x.1).sum();
        if total > 0.0 {
            honest.iter_mut().for_each(|x| x.1 /= total);
        } else {
            let k = honest.len().max(1) as f64;
            honest.iter_mut().for_each(|x| x.1 = 1.0 / k);
        }

        let of = |r: Role| graph.nodes().filter(|v| roles[v.index()] == r).collect::<Vec<_>>();
        let spv = of(Role::Spv);
        let hfn = of(Role::Hfn);
        let redundant = graph.nodes().map(|v| graph.degree(v) == 0).collect();

        Ok(Sim {
            cfg,
            roles,
            tree: BlockTree::new(),
            meta: vec![BlockMeta { produced_tick: 0, released_tick: Some(0), adversarial: false }],
            nodes,
            queue: BTreeMap::new(),
            validations: BTreeMap::new(),
            adv: AdversaryState {
                nodes: adv_cfg.nodes.iter().copied().collect(),
                first_seen: BTreeMap::from([(BlockId::GENESIS, 0)]),
                public_tip: BlockId::GENESIS,
                invalid_tip: None,
                private: Vec::new(),
                eclipse_tip: BlockId::GENESIS,
            },
            targets: adv_cfg.eclipse_targets.clone(),
            delayed: adv_cfg.delayed.clone(),
            policies,
            global_tip: BlockId::GENESIS,
            events: Vec::new(),
            faults: Vec::new(),
            reorgs: Vec::new(),
            rejections: Vec::new(),
            receipts: Vec::new(),
            frames: Vec::new(),
            honest_miners: honest,
            spv,
            hfn,
            redundant,
            graph,
        })
    }

    fn role(&self, v: NodeId) -> Role {
        self.roles[v.index()]
    }

    fn event(&mut self, tick: u64, kind: EventKind, node: Option<NodeId>, block: Option<BlockId>) {
        self.events.push(TraceEvent { tick, kind, node, block });
    }

    fn tick(&mut self, t: u64, settling: bool) {
        // 1. deliveries, then due verdicts
        if let Some(mut msgs) = self.queue.remove(&t) {
            msgs.sort_by_key(|m| (m.to, m.block, m.from));
            for m in msgs {
                self.receive(m.to, m.from, m.block, t);
            }
        }
        if let Some(mut due) = self.validations.remove(&t) {
            due.sort_by_key(|&(v, b, _)| (v, b));
            for (v, b, from) in due {
                self.validate(v, b, from, t);
            }
        }

        // 2. production
        if !settling {
            self.produce(t);
        }

        // 3. adversary release / abandon
        self.adversary_decide(t);

        // 4. policies
        if !settling {
            self.policies.step();
        }

        // 5. metrics
        self.record_frame(t);
    }

    /// Message arrival tick from `from` to `to` with optional adversarial delay.
    fn arrival(&self, from: NodeId, to: NodeId, t: u64, adversarial_delay: bool) -> u64 {
        let lat = self.graph.latency(from, to).expect("messages follow edges") as u64;
        let delta = self.cfg.adversary.delay_budget as u64;
        let extra = if adversarial_delay || self.delayed.contains(&from) || self.delayed.contains(&to) {
            delta
        } else {
            0
        };
        t + lat + extra
    }

    fn send(&mut self, from: NodeId, to: NodeId, block: BlockId, t: u64, adversarial_delay: bool) -> u64 {
        let at = self.arrival(from, to, t, adversarial_delay);
        self.queue.entry(at).or_default().push(Msg { to, from, block });
        at
    }

    /// Relay from an honest node to every neighbor except `except`.
    fn relay(&mut self, from: NodeId, block: BlockId, t: u64, except: Option<NodeId>) {
        let peers: Vec<NodeId> = self.graph.neighbors(from).map(|(w, _)| w).filter(|&w| Some(w) != except).collect();
        for w in peers {
            self.send(from, w, block, t, false);
        }
    }

    fn receive(&mut self, to: NodeId, from: NodeId, block: BlockId, t: u64) {
        if self.targets.contains(&to) {
            self.receipts.push(Receipt { tick: t, to, from, block });
        }
        let st = &self.nodes[to.index()];
        if st.first_seen.contains_key(&block) || st.orphans.values().flatten().any(|&(b, _)| b == block) {
            return;
        }
        self.event(t, EventKind::Receive, Some(to), Some(block));
        let parent = self.tree.block(block).parent.expect("only genesis lacks a parent");
        if !self.nodes[to.index()].first_seen.contains_key(&parent) {
            self.nodes[to.index()].orphans.entry(parent).or_default().push((block, from));
            return;
        }
        let mut work = vec![(block, from)];
        while let Some((b, f)) = work.pop() {
            self.accept(to, f, b, t);
            if let Some(waiting) = self.nodes[to.index()].orphans.remove(&b) {
                work.extend(waiting.into_iter().rev());
            }
        }
    }

    /// `block` reached `node` with its parent already known.
    fn accept(&mut self, node: NodeId, from: NodeId, block: BlockId, t: u64) {
        self.nodes[node.index()].first_seen.insert(block, t);
        match self.role(node) {
            Role::Adversary => self.adversary_receive(node, from, block, t),
            Role::Miner => {
                if self.tree.chain_is_valid(block) {
                    self.nodes[node.index()].verdicts.insert(block, Verdict::Accepted);
                    self.make_adoptable(node, block, t);
                    self.relay(node, block, t, Some(from));
                }
            }
            Role::Spv => {
                self.nodes[node.index()].verdicts.insert(block, Verdict::Accepted);
                self.make_adoptable(node, block, t);
                self.relay(node, block, t, Some(from));
            }
            Role::Hfn => {
                let b = self.tree.block(block);
                let mut delay = self.cfg.options.validation_delay as u64;
                if b.tx_class_counts.contains_key(&TxClass::T3Malformed) {
                    delay += self.cfg.options.invalid_parse_delay as u64;
                }
                if delay == 0 {
                    self.validate(node, block, from, t);
                } else {
                    self.validations.entry(t + delay).or_default().push((node, block, from));
                }
            }
        }
    }

    fn validate(&mut self, node: NodeId, block: BlockId, from: NodeId, t: u64) {
        let own = self.policies.current()[node.index()];
        let tag_ok = self.tree.block(block).policy_tag.is_none_or(|tag| tag == own);
        let accepted = tag_ok != self.cfg.options.invert_hfn_verdicts;
        let verdict = if accepted { Verdict::Accepted } else { Verdict::Rejected };
        self.nodes[node.index()].verdicts.insert(block, verdict);
        if !accepted {
            self.rejections.push(Rejection { tick: t, node, block });
            self.event(t, EventKind::Reject, Some(node), Some(block));
        }
        let parent = self.tree.block(block).parent.expect("not genesis");
        if accepted && self.nodes[node.index()].adoptable.contains(&parent) {
            self.make_adoptable(node, block, t);
        }
        if accepted || self.cfg.options.relay_rejected {
            self.relay(node, block, t, Some(from));
        }
    }

    /// Mark `block` (whose parent is adoptable) adoptable at `node`, update
    /// the tip, and cascade to locally accepted children.
    fn make_adoptable(&mut self, node: NodeId, block: BlockId, t: u64) {
        let mut work = vec![block];
        while let Some(b) = work.pop() {
            let st = &mut self.nodes[node.index()];
            if !st.adoptable.insert(b) {
                continue;
            }
            let key = |st: &NodeState, x: BlockId, tree: &BlockTree| (tree.chain_work(x), st.first_seen[&x], x);
            if fork_choice_cmp(key(st, b, &self.tree), key(st, st.tip, &self.tree)) == Ordering::Greater {
                st.tip = b;
                self.events.push(TraceEvent { tick: t, kind: EventKind::Adopt, node: Some(node), block: Some(b) });
            }
            let st = &self.nodes[node.index()];
            let ready: Vec<BlockId> = self
                .tree
                .children(b)
                .filter(|c| st.verdicts.get(c) == Some(&Verdict::Accepted) && !st.adoptable.contains(c))
                .collect();
            work.extend(ready);
        }
    }

    fn new_block(&mut self, parent: BlockId, producer: NodeId, valid: bool, tag: PolicyState, t: u64, adversarial: bool) -> BlockId {
        let n = self.cfg.options.txs_per_block;
        let mut txs = BTreeMap::new();
        if valid {
            if n > 0 {
                txs.insert(TxClass::T1Standard, n);
            }
        } else {
            txs.insert(TxClass::T3Malformed, 1);
            if n > 1 {
                txs.insert(TxClass::T1Standard, n - 1);
            }
        }
        let id = self
            .tree
            .push(parent, producer, crate::ledger::BLOCK_WORK, valid, Some(tag), txs)
            .expect("parent exists and work is positive");
        self.meta.push(BlockMeta { produced_tick: t, released_tick: None, adversarial });
        self.event(t, EventKind::Produce, Some(producer), Some(id));
        id
    }

    fn produce(&mut self, t: u64) {
        if let Some(schedule) = &self.cfg.options.schedule {
            let due: Vec<NodeId> = schedule.iter().filter(|s| s.tick == t).map(|s| s.producer).collect();
            for m in due {
                self.produce_honest(m, t);
            }
            return;
        }
        // Three draws every tick, whatever the outcome.
        let mut rng = self.production_rng(t);
        let u_event: f64 = rng.random();
        let u_who: f64 = rng.random();
        let u_kind: f64 = rng.random();
        if u_event >= self.cfg.block_rate {
            return;
        }
        let alpha = self.cfg.adversary.alpha;
        if alpha > 0.0 && u_who < alpha {
            let invalid = u_kind < self.cfg.adversary.invalid_injection_rate;
            self.produce_adversarial(invalid, t);
            return;
        }
        let u = if alpha > 0.0 { (u_who - alpha) / (1.0 - alpha) } else { u_who };
        let mut acc = 0.0;
        let mut chosen = self.honest_miners.last().expect("validated: honest miner exists").0;
        for &(m, share) in &self.honest_miners {
            acc += share;
            if u < acc {
                chosen = m;
                break;
            }
        }
        self.produce_honest(chosen, t);
    }

    fn production_rng(&self, t: u64) -> SimRng {
        stream_rng(self.cfg.seed, &[stream::PRODUCTION, t])
    }

    fn produce_honest(&mut self, miner: NodeId, t: u64) {
        let parent = self.nodes[miner.index()].tip;
        let tag = self.policies.current()[miner.index()];
        let b = self.new_block(parent, miner, true, tag, t, false);
        self.release(b, t);
        let st = &mut self.nodes[miner.index()];
        st.first_seen.insert(b, t);
        st.verdicts.insert(b, Verdict::Accepted);
        self.make_adoptable(miner, b, t);
        self.relay(miner, b, t, None);
    }

    fn produce_adversarial(&mut self, invalid: bool, t: u64) {
        let producer = self.adv.nodes[0];
        if invalid {
            let parent = match self.adv.invalid_tip {
                Some(it) if self.tree.chain_work(it) > self.tree.chain_work(self.adv.public_tip) => it,
                _ => self.adv.public_tip,
            };
            let tag = self.cfg.space.first_non_canonical();
            let b = self.new_block(parent, producer, false, tag, t, true);
            self.adv.invalid_tip = Some(b);
            self.meta[b.index()].released_tick = Some(t);
            self.adv_learn(b, t);
            self.adv_broadcast(b, t, FaultKind::InvalidBlock);
        } else if !self.targets.is_empty() {
            let parent = self.adv.eclipse_tip;
            let b = self.new_block(parent, producer, true, self.cfg.space.canonical(), t, true);
            self.adv.eclipse_tip = b;
            self.adv_learn(b, t);
            let targets: Vec<NodeId> = self.targets.iter().copied().collect();
            for target in targets {
                let from = self
                    .graph
                    .neighbors(target)
                    .map(|(w, _)| w)
                    .find(|w| self.role(*w) == Role::Adversary)
                    .expect("eclipse wires every target to the adversary");
                let at = self.send(from, target, b, t, false);
                self.push_fault(at, target, FaultKind::ForgedHeaderSequence, b);
            }
        } else {
            let parent = self.adv.private.last().copied().unwrap_or(self.adv.public_tip);
            let b = self.new_block(parent, producer, true, self.cfg.space.canonical(), t, true);
            self.adv.private.push(b);
            self.adv_learn(b, t);
        }
    }

    fn push_fault(&mut self, tick: u64, target: NodeId, kind: FaultKind, block: BlockId) {
        let rec = FaultRecord { tick, target, message_kind: kind, block_id: block, caused_deviation: false };
        // A home full node acts on a message only once its verdict is in.
        let mut settled = tick;
        if self.role(target) == Role::Hfn {
            settled += self.cfg.options.validation_delay as u64;
            if self.tree.block(block).tx_class_counts.contains_key(&TxClass::T3Malformed) {
                settled += self.cfg.options.invalid_parse_delay as u64;
            }
        }
        self.faults.push((rec, settled, None));
    }

    /// Every adversary node learns `b` at once.
    fn adv_learn(&mut self, b: BlockId, t: u64) {
        self.adv.first_seen.entry(b).or_insert(t);
        for i in 0..self.adv.nodes.len() {
            let v = self.adv.nodes[i];
            self.nodes[v.index()].first_seen.entry(b).or_insert(t);
        }
    }

    /// Send an adversary block from every adversary node to its honest,
    /// non-target neighbors, logging a fault for each recipient.
    fn adv_broadcast(&mut self, b: BlockId, t: u64, kind: FaultKind) {
        for i in 0..self.adv.nodes.len() {
            let a = self.adv.nodes[i];
            let peers: Vec<NodeId> = self
                .graph
                .neighbors(a)
                .map(|(w, _)| w)
                .filter(|w| self.role(*w) != Role::Adversary && !self.targets.contains(w))
                .collect();
            for w in peers {
                let at = self.send(a, w, b, t, false);
                if kind == FaultKind::InvalidBlock {
                    self.push_fault(at, w, kind, b);
                }
            }
        }
    }

    fn adv_key(&self, b: BlockId) -> (f64, u64, BlockId) {
        (self.tree.chain_work(b), self.adv.first_seen.get(&b).copied().unwrap_or(u64::MAX), b)
    }

    fn adversary_receive(&mut self, node: NodeId, from: NodeId, block: BlockId, t: u64) {
        if self.adv.first_seen.contains_key(&block) {
            return;
        }
        self.adv_learn(block, t);
        if self.tree.chain_is_valid(block) && fork_choice_cmp(self.adv_key(block), self.adv_key(self.adv.public_tip)) == Ordering::Greater {
            self.adv.public_tip = block;
        }
        // Pass honest blocks on late, never to eclipse targets.
        let peers: Vec<NodeId> = self
            .graph
            .neighbors(node)
            .map(|(w, _)| w)
            .filter(|&w| w != from && self.role(w) != Role::Adversary && !self.targets.contains(&w))
            .collect();
        let delta = self.cfg.adversary.delay_budget;
        for w in peers {
            let at = self.send(node, w, block, t, true);
            if delta > 0 {
                self.push_fault(at, w, FaultKind::StaleChain, block);
            }
        }
    }

    fn adversary_decide(&mut self, t: u64) {
        let Some(&ptip) = self.adv.private.last() else { return };
        let private_work = self.tree.chain_work(ptip);
        let public_work = self.tree.chain_work(self.adv.public_tip);
        // Withhold while the honest chain has not moved past the fork point;
        // once it has, publish as soon as the private branch is heavier.
        let contested = !self.tree.is_ancestor_or_equal(self.adv.public_tip, ptip);
        if contested && private_work > public_work {
            let blocks = std::mem::take(&mut self.adv.private);
            for b in blocks {
                self.release(b, t);
                self.event(t, EventKind::Release, Some(self.adv.nodes[0]), Some(b));
                self.adv_broadcast(b, t, FaultKind::StaleChain);
            }
            self.adv.public_tip = ptip;
        } else if public_work - private_work > self.cfg.adversary.give_up_depth as f64 {
            self.event(t, EventKind::Abandon, Some(self.adv.nodes[0]), Some(ptip));
            self.adv.private.clear();
        }
    }

    /// Make `b` public and update the global chain if it is now heaviest.
    fn release(&mut self, b: BlockId, t: u64) {
        self.meta[b.index()].released_tick = Some(t);
        if !self.tree.block(b).consensus_valid {
            return;
        }
        let key = |s: &Self, x: BlockId| (s.tree.chain_work(x), s.meta[x.index()].released_tick.unwrap_or(u64::MAX), x);
        if fork_choice_cmp(key(self, b), key(self, self.global_tip)) == Ordering::Greater {
            let old = self.global_tip;
            if !self.tree.is_ancestor_or_equal(old, b) {
                let fork_height = self.tree.path(b).iter().zip(self.tree.path(old)).take_while(|(x, y)| *x == y).count() as u64;
                let depth = self.tree.block(old).height + 1 - fork_height;
                self.reorgs.push(ReorgEvent { tick: t, old_tip: old, new_tip: b, depth });
                self.event(t, EventKind::Reorg, None, Some(b));
            }
            self.global_tip = b;
        }
    }

    fn record_frame(&mut self, t: u64) {
        let tips: Vec<BlockId> = self
            .graph
            .nodes()
            .map(|v| if self.role(v) == Role::Adversary { self.adv.public_tip } else { self.nodes[v.index()].tip })
            .collect();
        let policies = self.policies.current().to_vec();
        let class_tips = |members: &[NodeId]| members.iter().map(|v| tips[v.index()]).collect::<Vec<_>>();
        let isolated: Vec<PolicyState> = self
            .graph
            .nodes()
            .filter(|v| self.redundant[v.index()])
            .map(|v| policies[v.index()])
            .collect();
        let isolated_entropy = if isolated.is_empty() {
            0.0
        } else {
            policy_entropy(&empirical_marginal(&isolated, self.cfg.space.cardinality())).unwrap_or(0.0)
        };
        for (rec, settled, tip) in self.faults.iter_mut() {
            if *settled == t && tip.is_none() {
                *tip = Some(tips[rec.target.index()]);
            }
        }
        self.frames.push(MetricsFrame {
            tick: t,
            global_tip: self.global_tip,
            divergence: divergence_metric(&policies),
            delta_spv: trace::within_pair_disagreement(&class_tips(&self.spv)),
            delta_hfn: trace::within_pair_disagreement(&class_tips(&self.hfn)),
            isolated_entropy,
            tips,
            policies,
        });
    }

    fn finish(self, cfg: &SimConfig) -> SimTrace {
        let last = self.frames.last().expect("ticks >= 1");
        let global = last.global_tip;
        let final_tips = last.tips.clone();
        let tree = self.tree;
        let faults = self
            .faults
            .into_iter()
            .map(|(mut rec, _, tip)| {
                let victim = tip.unwrap_or(final_tips[rec.target.index()]);
                rec.caused_deviation = !tree.is_ancestor_or_equal(victim, global);
                rec
            })
            .collect();
        let final_views = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, st)| {
                let tip = final_tips[i];
                ChainView { tip, cumulative_work: tree.chain_work(tip), first_seen_tick: st.first_seen.clone() }
            })
            .collect();
        SimTrace {
            config_hash: cfg.config_hash(),
            seed: cfg.seed,
            final_policies: self.policies.vector(),
            graph: self.graph,
            tree,
            block_meta: self.meta,
            frames: self.frames,
            events: self.events,
            faults,
            reorgs: self.reorgs,
            rejections: self.rejections,
            final_views,
            redundant: self.redundant,
            eclipsed: self.targets,
            adversary_nodes: cfg.adversary.nodes.clone(),
            target_receipts: self.receipts,
        }
    }
}

/// One point of a latency sweep.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatencyPoint {
    /// Largest latency on an edge that is not miner-miner.
    pub latency: u32,
    pub p_delta: f64,
    pub observations: u64,
    /// Diverged fraction of the covered nodes in each replication.
    pub per_replication: Vec<f64>,
}

/// Divergence probability at the horizon for nodes without miner peers,
/// per config; replication `r` of a config runs with seed `config.seed + r`.
pub fn latency_divergence_curve(configs: &[SimConfig], replications: u64) -> Result<Vec<LatencyPoint>, EngineError> {
    if let Some(first) = configs.first() {
        for c in &configs[1..] {
            if c.graph.node_count() != first.graph.node_count() || c.graph.roles() != first.graph.roles() {
                return Err(EngineError::IncomparableConfigs("graphs differ in nodes or roles".into()));
            }
            let edges = |g: &NetworkGraph| g.edges().map(|(u, v, _)| (u, v)).collect::<Vec<_>>();
            if edges(&c.graph) != edges(&first.graph) {
                return Err(EngineError::IncomparableConfigs("graphs differ in edges".into()));
            }
        }
    }
    let mut out = Vec::with_capacity(configs.len());
    for c in configs {
        let g = &c.graph;
        let latency = g
            .edges()
            .filter(|(u, v, _)| !(g.role(*u).is_miner() && g.role(*v).is_miner()))
            .map(|(_, _, l)| l)
            .max()
            .unwrap_or(1);
        let mut hits = 0u64;
        let mut total = 0u64;
        let mut per_replication = Vec::with_capacity(replications as usize);
        for r in 0..replications {
            let mut cr = c.clone();
            cr.seed = c.seed.wrapping_add(r);
            let tr = run_simulation(&cr)?;
            let frame = tr.frame(At::Horizon).expect("ticks >= 1");
            let nodes = tr.nodes_matching(&NodeFilter::NoMinerPeers);
            let diverged = nodes.iter().filter(|v| frame.delta(**v)).count();
            total += nodes.len() as u64;
            hits += diverged as u64;
            per_replication.push(if nodes.is_empty() { 0.0 } else { diverged as f64 / nodes.len() as f64 });
        }
        let p_delta = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
        out.push(LatencyPoint { latency, p_delta, observations: total, per_replication });
    }
    Ok(out)
}
