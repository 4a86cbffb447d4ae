//! Experiment configuration files (TOML). Unknown keys are rejected
//! everywhere.

use std::collections::BTreeSet;

use powsim_core::adversary::AdversaryConfig;
use powsim_core::engine::{EngineOptions, SimConfig};
use powsim_core::game::{UpdateMode, UtilityParams};
use powsim_core::policy::{AdoptionRule, PolicyKernel, PolicySpace, PolicyState};
use powsim_core::surplus::CostModel;
use powsim_core::topology::{assign_latencies, assign_roles, generate_watts_strogatz, NetworkGraph, NodeId};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PartitionDivergence,
    ReorgDecay,
    PolicyDivergence,
    Equilibrium,
    Surplus,
    TopologyClaims,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::PartitionDivergence => "partition_divergence",
            ExperimentKind::ReorgDecay => "reorg_decay",
            ExperimentKind::PolicyDivergence => "policy_divergence",
            ExperimentKind::Equilibrium => "equilibrium",
            ExperimentKind::Surplus => "surplus",
            ExperimentKind::TopologyClaims => "topology_claims",
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_confidence() -> f64 {
    0.99
}

/// Top-level experiment file. Exactly the section named by `kind` must be
/// present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub replications: u64,
    pub base_seed: u64,
    /// Confidence level of the one-sided tests.
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition_divergence: Option<PartitionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reorg_decay: Option<ReorgSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_divergence: Option<PolicySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equilibrium: Option<EquilibriumSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surplus: Option<SurplusSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology_claims: Option<TopologySection>,
}

/// Small-world network with a connected miner core.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub nodes: usize,
    pub k: usize,
    pub beta: f64,
    pub miners: usize,
    pub spv_fraction: f64,
    /// Random miner-miner edges added to the core; defaults to `2 · miners`.
    #[serde(default)]
    pub core_extra_edges: Option<usize>,
    pub latency_min: u32,
    pub latency_max: u32,
}

impl NetworkSection {
    /// Graph, roles and latencies all drawn from `seed`.
    pub fn build(&self, seed: u64) -> Result<NetworkGraph, CliError> {
        let g = generate_watts_strogatz(self.nodes, self.k, self.beta, seed)?;
        let extra = self.core_extra_edges.unwrap_or(2 * self.miners);
        let g = assign_roles(&g, self.miners, self.spv_fraction, extra, seed)?;
        Ok(assign_latencies(&g, self.latency_min, self.latency_max, seed)?)
    }
}

fn default_cardinality() -> u16 {
    4
}
fn default_rule() -> AdoptionRule {
    AdoptionRule::MajorityOfInbox
}
fn default_true() -> bool {
    true
}
fn default_txs() -> u32 {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub ticks: u64,
    pub block_rate: f64,
    pub drift_rate: f64,
    #[serde(default = "default_cardinality")]
    pub policy_cardinality: u16,
    #[serde(default = "default_rule")]
    pub adoption_rule: AdoptionRule,
    #[serde(default)]
    pub validation_delay: u32,
    #[serde(default)]
    pub invalid_parse_delay: u32,
    #[serde(default = "default_true")]
    pub relay_rejected: bool,
    #[serde(default)]
    pub settle: bool,
    #[serde(default = "default_txs")]
    pub txs_per_block: u32,
}

fn default_adversary_nodes() -> usize {
    1
}
fn default_give_up() -> u32 {
    2
}

/// Adversary settings. The adversary controls the `adversary_nodes`
/// lowest-index miners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySection {
    pub alpha: f64,
    #[serde(default = "default_adversary_nodes")]
    pub adversary_nodes: usize,
    #[serde(default)]
    pub delay_budget: u32,
    #[serde(default)]
    pub invalid_injection_rate: f64,
    #[serde(default = "default_give_up")]
    pub give_up_depth: u32,
    #[serde(default)]
    pub eclipse_targets: Vec<u32>,
    #[serde(default)]
    pub delayed: Vec<u32>,
}

impl AdversarySection {
    pub fn is_inactive(&self) -> bool {
        self.alpha == 0.0 && self.eclipse_targets.is_empty() && self.delay_budget == 0
    }
}

/// Network, engine and adversary settings for one simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub network: NetworkSection,
    pub simulation: SimulationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<AdversarySection>,
}

impl ScenarioSection {
    /// Engine config for one replication, with the given edge-partition
    /// probability.
    pub fn sim_config(&self, seed: u64, partition_probability: f64) -> Result<SimConfig, CliError> {
        let graph = self.network.build(seed)?;
        self.sim_config_on(graph, seed, partition_probability)
    }

    pub fn sim_config_on(&self, graph: NetworkGraph, seed: u64, partition_probability: f64) -> Result<SimConfig, CliError> {
        let s = &self.simulation;
        let space = PolicySpace::new(s.policy_cardinality, PolicyState(0))?;
        let kernel = PolicyKernel::new(s.drift_rate, s.adoption_rule)?;
        let mut adversary = AdversaryConfig { partition_probability, seed, ..AdversaryConfig::default() };
        if let Some(a) = &self.adversary {
            let miners = graph.miners();
            if a.adversary_nodes > miners.len() {
                return Err(CliError::Config(format!(
                    "adversary_nodes = {} exceeds the {} miners",
                    a.adversary_nodes,
                    miners.len()
                )));
            }
            adversary.alpha = a.alpha;
            adversary.delay_budget = a.delay_budget;
            adversary.invalid_injection_rate = a.invalid_injection_rate;
            adversary.give_up_depth = a.give_up_depth;
            adversary.nodes = miners.into_iter().take(a.adversary_nodes).collect();
            adversary.eclipse_targets = a.eclipse_targets.iter().map(|&v| NodeId(v)).collect::<BTreeSet<_>>();
            adversary.delayed = a.delayed.iter().map(|&v| NodeId(v)).collect::<BTreeSet<_>>();
        }
        let options = EngineOptions {
            validation_delay: s.validation_delay,
            invalid_parse_delay: s.invalid_parse_delay,
            relay_rejected: s.relay_rejected,
            settle: s.settle,
            txs_per_block: s.txs_per_block,
            ..EngineOptions::default()
        };
        let cfg = SimConfig { graph, ticks: s.ticks, block_rate: s.block_rate, kernel, space, adversary, seed, options };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn adversary_inactive(&self) -> bool {
        self.adversary.as_ref().is_none_or(|a| a.is_inactive())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub partition_probability: Vec<f64>,
    /// Also rerun each replication with every home-node verdict flipped and
    /// record whether the global chain is unchanged.
    #[serde(default)]
    pub verdict_inversion: bool,
    pub network: NetworkSection,
    pub simulation: SimulationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<AdversarySection>,
}

impl PartitionSection {
    pub fn scenario(&self) -> ScenarioSection {
        ScenarioSection {
            network: self.network.clone(),
            simulation: self.simulation.clone(),
            adversary: self.adversary.clone(),
        }
    }
}

fn default_min_depth() -> u32 {
    1
}
fn default_max_depth() -> u32 {
    10
}
fn default_finality_q() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 20.0).collect()
}
fn default_finality_depth() -> u32 {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReorgSection {
    /// Attacker hashrate shares.
    pub q: Vec<f64>,
    #[serde(default = "default_min_depth")]
    pub min_depth: u32,
    #[serde(default = "default_max_depth")]
    pub max_depth: u32,
    /// Races per (q, depth) point per replication.
    pub races: u64,
    /// Grid for the analytic finality check.
    #[serde(default = "default_finality_q")]
    pub finality_q: Vec<f64>,
    #[serde(default = "default_finality_depth")]
    pub finality_max_depth: u32,
}

fn default_lattice_k() -> usize {
    4
}
fn default_policy_beta() -> f64 {
    0.1
}
fn default_horizon() -> u64 {
    200
}
fn default_mismatch_reps() -> u64 {
    10_000
}

/// A connected small-world population plus `redundant` isolated nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub nodes: usize,
    pub redundant: Vec<usize>,
    pub drift_rate: f64,
    #[serde(default = "default_cardinality")]
    pub cardinality: u16,
    #[serde(default = "default_rule")]
    pub adoption_rule: AdoptionRule,
    #[serde(default = "default_lattice_k")]
    pub lattice_k: usize,
    #[serde(default = "default_policy_beta")]
    pub beta: f64,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    /// Replications behind the isolated-node mismatch estimate.
    #[serde(default = "default_mismatch_reps")]
    pub mismatch_replications: u64,
}

impl PolicySection {
    pub fn space(&self) -> Result<PolicySpace, CliError> {
        Ok(PolicySpace::new(self.cardinality, PolicyState(0))?)
    }

    pub fn kernel(&self) -> Result<PolicyKernel, CliError> {
        Ok(PolicyKernel::new(self.drift_rate, self.adoption_rule)?)
    }

    pub fn graph(&self, redundant: usize, seed: u64) -> Result<NetworkGraph, CliError> {
        if redundant > self.nodes {
            return Err(CliError::Config(format!("redundant count {redundant} exceeds nodes {}", self.nodes)));
        }
        let g = generate_watts_strogatz(self.nodes - redundant, self.lattice_k, self.beta, seed)?;
        Ok(g.with_isolated_nodes(redundant, powsim_core::topology::NodeClass::HomeFullNode))
    }
}

fn default_max_rounds() -> u32 {
    10
}
fn default_enumerate() -> usize {
    8
}
fn default_mode() -> UpdateMode {
    UpdateMode::Synchronous
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumSection {
    pub nodes: usize,
    pub miners: usize,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u32,
    /// Exhaustive equilibrium enumeration covers every size up to this.
    #[serde(default = "default_enumerate")]
    pub enumerate_max_nodes: usize,
    #[serde(default = "default_mode")]
    pub update_mode: UpdateMode,
    #[serde(default)]
    pub utility: UtilityParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurplusSection {
    /// Transactions sampled per class.
    pub samples: u64,
    #[serde(default)]
    pub cost_model: CostModel,
}

fn default_topology_spv() -> f64 {
    0.3
}
fn default_epsilon() -> f64 {
    0.1
}

/// Base graphs with degree-1 home nodes attached afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub base_nodes: usize,
    pub k: usize,
    pub beta: f64,
    pub miners: usize,
    #[serde(default = "default_topology_spv")]
    pub spv_fraction: f64,
    #[serde(default)]
    pub core_extra_edges: usize,
    pub leaves: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Seed of replication `r`.
    pub fn seed(&self, replication: u64) -> u64 {
        self.base_seed.wrapping_add(replication)
    }

    fn present_sections(&self) -> Vec<ExperimentKind> {
        let mut v = Vec::new();
        if self.partition_divergence.is_some() {
            v.push(ExperimentKind::PartitionDivergence);
        }
        if self.reorg_decay.is_some() {
            v.push(ExperimentKind::ReorgDecay);
        }
        if self.policy_divergence.is_some() {
            v.push(ExperimentKind::PolicyDivergence);
        }
        if self.equilibrium.is_some() {
            v.push(ExperimentKind::Equilibrium);
        }
        if self.surplus.is_some() {
            v.push(ExperimentKind::Surplus);
        }
        if self.topology_claims.is_some() {
            v.push(ExperimentKind::TopologyClaims);
        }
        v
    }

    /// Structural checks plus a dry build of replication 0's inputs, so
    /// bad parameter values surface as config errors before any run.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.replications == 0 {
            return bad("replications must be >= 1".into());
        }
        if !(self.confidence > 0.5 && self.confidence < 1.0) {
            return bad(format!("confidence must lie in (0.5, 1) (got {})", self.confidence));
        }
        let present = self.present_sections();
        if present != [self.kind] {
            let names: Vec<&str> = present.iter().map(|k| k.name()).collect();
            return bad(format!("kind {} needs exactly a [{}] section, found [{}]", self.kind, self.kind, names.join(", ")));
        }
        let seed = self.seed(0);
        let config = |e: CliError| CliError::Config(e.to_string());
        match self.kind {
            ExperimentKind::PartitionDivergence => {
                let s = self.partition_divergence.as_ref().expect("checked");
                if s.partition_probability.is_empty() {
                    return bad("partition_probability grid is empty".into());
                }
                let scenario = s.scenario();
                for &p in &s.partition_probability {
                    scenario.sim_config(seed, p).map_err(config)?;
                }
            }
            ExperimentKind::ReorgDecay => {
                let s = self.reorg_decay.as_ref().expect("checked");
                if s.q.is_empty() || s.finality_q.is_empty() {
                    return bad("q grids must be non-empty".into());
                }
                if s.races == 0 {
                    return bad("races must be >= 1".into());
                }
                if s.min_depth == 0 || s.min_depth > s.max_depth {
                    return bad(format!("depth range {}..={} is empty or starts at 0", s.min_depth, s.max_depth));
                }
                for &q in s.q.iter().chain(&s.finality_q) {
                    powsim_core::ledger::reorg_probability_bound(q, 1).map_err(|e| CliError::Config(e.to_string()))?;
                }
            }
            ExperimentKind::PolicyDivergence => {
                let s = self.policy_divergence.as_ref().expect("checked");
                if s.redundant.is_empty() {
                    return bad("redundant grid is empty".into());
                }
                if s.mismatch_replications == 0 {
                    return bad("mismatch_replications must be >= 1".into());
                }
                s.space().map_err(config)?;
                s.kernel().map_err(config)?;
                for &r in &s.redundant {
                    s.graph(r, seed).map_err(config)?;
                }
            }
            ExperimentKind::Equilibrium => {
                let s = self.equilibrium.as_ref().expect("checked");
                if s.nodes == 0 || s.miners > s.nodes {
                    return bad(format!("need 0 < nodes and miners <= nodes (nodes {}, miners {})", s.nodes, s.miners));
                }
                if s.max_rounds == 0 {
                    return bad("max_rounds must be >= 1".into());
                }
                if s.enumerate_max_nodes > 10 {
                    return bad(format!("enumerate_max_nodes {} is too large (max 10)", s.enumerate_max_nodes));
                }
                s.utility.validate().map_err(|e| CliError::Config(e.to_string()))?;
            }
            ExperimentKind::Surplus => {
                let s = self.surplus.as_ref().expect("checked");
                if s.samples == 0 {
                    return bad("samples must be >= 1".into());
                }
                s.cost_model.validate().map_err(|e| CliError::Config(e.to_string()))?;
            }
            ExperimentKind::TopologyClaims => {
                let s = self.topology_claims.as_ref().expect("checked");
                if !(0.0..1.0).contains(&s.epsilon) {
                    return bad(format!("epsilon must lie in [0, 1) (got {})", s.epsilon));
                }
                let g = generate_watts_strogatz(s.base_nodes, s.k, s.beta, seed).map_err(|e| CliError::Config(e.to_string()))?;
                assign_roles(&g, s.miners, s.spv_fraction, s.core_extra_edges, seed)
                    .map_err(|e| CliError::Config(e.to_string()))?;
            }
        }
        Ok(())
    }
}
