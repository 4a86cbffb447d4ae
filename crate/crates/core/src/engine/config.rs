use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EngineError;
use crate::adversary::AdversaryConfig;
use crate::policy::{PolicyKernel, PolicySpace, PolicyState};
use crate::topology::{ClassKind, NetworkGraph, NodeId};

/// A block forced at a given tick by a given honest miner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledBlock {
    pub tick: u64,
    pub producer: NodeId,
}

/// Engine knobs beyond the core model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineOptions {
    /// Ticks a home full node spends validating a block before its verdict.
    pub validation_delay: u32,
    /// Extra validation ticks for blocks carrying malformed transactions.
    pub invalid_parse_delay: u32,
    /// Home full nodes relay blocks they rejected.
    pub relay_rejected: bool,
    /// Flip every home-full-node verdict (used to show verdicts are inert).
    pub invert_hfn_verdicts: bool,
    /// After the horizon, keep delivering without production or policy
    /// drift until no message or validation is pending.
    pub settle: bool,
    pub txs_per_block: u32,
    /// Starting policy per node; defaults to the canonical policy.
    pub initial_policies: Option<Vec<PolicyState>>,
    /// Nodes whose policy is fixed for the whole run.
    pub frozen_policies: BTreeMap<NodeId, PolicyState>,
    /// Replaces random production when present. Several entries may share
    /// a tick; they are produced in listed order.
    pub schedule: Option<Vec<ScheduledBlock>>,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            validation_delay: 0,
            invalid_parse_delay: 0,
            relay_rejected: true,
            invert_hfn_verdicts: false,
            settle: false,
            txs_per_block: 10,
            initial_policies: None,
            frozen_policies: BTreeMap::new(),
            schedule: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub graph: NetworkGraph,
    pub ticks: u64,
    /// Network-wide probability that a block is produced in a tick.
    pub block_rate: f64,
    pub kernel: PolicyKernel,
    pub space: PolicySpace,
    pub adversary: AdversaryConfig,
    pub seed: u64,
    #[serde(default)]
    pub options: EngineOptions,
}

impl SimConfig {
    /// Default options, no adversary.
    pub fn new(graph: NetworkGraph, ticks: u64, block_rate: f64, kernel: PolicyKernel, space: PolicySpace, seed: u64) -> Self {
        SimConfig {
            graph,
            ticks,
            block_rate,
            kernel,
            space,
            adversary: AdversaryConfig::default(),
            seed,
            options: EngineOptions::default(),
        }
    }

    /// Hex SHA-256 of the JSON serialization.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let cfg = |m: String| Err(EngineError::Config(m));
        let g = &self.graph;
        if self.ticks == 0 {
            return cfg("ticks must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.block_rate) {
            return cfg(format!("block_rate must lie in [0, 1] (got {})", self.block_rate));
        }
        PolicySpace::new(self.space.cardinality(), self.space.canonical())?;
        PolicyKernel::new(self.kernel.drift_rate(), self.kernel.adoption_rule)?;
        g.validate()?;
        if g.node_count() == 0 {
            return cfg("graph has no nodes".into());
        }
        if !g.is_connected(None)? {
            return cfg("graph must be connected before partitioning".into());
        }
        let adv = &self.adversary;
        adv.validate()?;
        for &v in adv.nodes.iter().chain(&adv.eclipse_targets).chain(&adv.delayed) {
            if !g.contains(v) {
                return cfg(format!("adversary config names unknown node {v}"));
            }
        }
        if let Some(&v) = adv.nodes.iter().find(|v| !g.role(**v).is_miner()) {
            return cfg(format!("adversary node {v} must have the miner role"));
        }
        let honest_miners = g.nodes_of(ClassKind::Miner).into_iter().filter(|m| !adv.nodes.contains(m)).count();
        if honest_miners == 0 && (self.block_rate > 0.0 || self.options.schedule.is_some()) {
            return cfg("no honest miner left to produce blocks".into());
        }
        let o = &self.options;
        if let Some(init) = &o.initial_policies {
            if init.len() != g.node_count() {
                return cfg(format!("initial_policies has {} entries for {} nodes", init.len(), g.node_count()));
            }
        }
        for p in o.initial_policies.iter().flatten().chain(o.frozen_policies.values()) {
            if !self.space.contains(*p) {
                return cfg(format!("policy {p} outside the policy space"));
            }
        }
        if let Some(&v) = o.frozen_policies.keys().find(|v| !g.contains(**v)) {
            return cfg(format!("frozen policy for unknown node {v}"));
        }
        if let Some(schedule) = &o.schedule {
            for s in schedule {
                if !g.contains(s.producer) || !g.role(s.producer).is_miner() || adv.nodes.contains(&s.producer) {
                    return cfg(format!("scheduled producer {} is not an honest miner", s.producer));
                }
                if s.tick == 0 || s.tick > self.ticks {
                    return cfg(format!("scheduled tick {} outside 1..={}", s.tick, self.ticks));
                }
            }
        }
        Ok(())
    }
}
