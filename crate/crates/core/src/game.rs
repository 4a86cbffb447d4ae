//! The validation game: utilities, best responses, Nash certification and
//! best-response dynamics.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, stream_rng};
use crate::topology::{NodeClass, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    Spv,
    FullValidate,
    NoValidation,
}

impl Strategy {
    /// Tie-break preference order, most preferred first.
    pub const PREFERENCE: [Strategy; 3] = [Strategy::Spv, Strategy::FullValidate, Strategy::NoValidation];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Spv => "SPV",
            Strategy::FullValidate => "FullValidate",
            Strategy::NoValidation => "NoValidation",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GameError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, GameError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityParams {
    pub u0: f64,
    pub c_cpu: f64,
    pub c_net: f64,
    /// Marginal policy benefit of validating locally.
    pub epsilon_policy: f64,
    /// Convenience benefit of running SPV.
    pub delta_spv: f64,
    /// Miner reward for validating, and penalty for not validating.
    pub r_miner: f64,
}

impl Default for UtilityParams {
    fn default() -> Self {
        UtilityParams { u0: 10.0, c_cpu: 2.0, c_net: 1.0, epsilon_policy: 0.1, delta_spv: 4.0, r_miner: 5.0 }
    }
}

impl UtilityParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c_cpu", self.c_cpu), ("c_net", self.c_net), ("r_miner", self.r_miner)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(GameError::InvalidParameter(format!("{name} must be finite and >= 0 (got {v})")));
            }
        }
        Ok(())
    }

    /// Reasons the parameters fall outside the regime where SPV is the
    /// clear choice for non-miners: `δ > C_cpu + C_net` and a policy
    /// benefit `ε` smaller than the validation cost.
    pub fn regime_warnings(&self) -> Vec<String> {
        let cost = self.c_cpu + self.c_net;
        let mut w = Vec::new();
        if self.delta_spv <= cost {
            w.push(format!("delta_spv {} <= c_cpu + c_net {cost}", self.delta_spv));
        }
        if self.epsilon_policy >= cost {
            w.push(format!("epsilon_policy {} is not small against c_cpu + c_net {cost}", self.epsilon_policy));
        }
        w
    }

    pub fn in_lemma_regime(&self) -> bool {
        self.regime_warnings().is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub assignment: Vec<Strategy>,
    pub roles: Vec<NodeClass>,
}

impl StrategyProfile {
    pub fn new(assignment: Vec<Strategy>, roles: Vec<NodeClass>) -> Result<Self> {
        if assignment.len() != roles.len() {
            return Err(GameError::InvalidParameter(format!(
                "{} strategies for {} nodes",
                assignment.len(),
                roles.len()
            )));
        }
        Ok(StrategyProfile { assignment, roles })
    }

    /// Miners validate, everyone else runs SPV.
    pub fn equilibrium_for(roles: &[NodeClass]) -> Self {
        let assignment = roles
            .iter()
            .map(|r| if r.is_miner() { Strategy::FullValidate } else { Strategy::Spv })
            .collect();
        StrategyProfile { assignment, roles: roles.to_vec() }
    }

    /// Each node's strategy drawn uniformly from stream `(seed, GAME)`.
    pub fn random(roles: &[NodeClass], seed: u64) -> Self {
        let mut rng = stream_rng(seed, &[stream::GAME]);
        let assignment = roles.iter().map(|_| Strategy::PREFERENCE[rng.random_range(0..3)]).collect();
        StrategyProfile { assignment, roles: roles.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn strategy(&self, node: NodeId) -> Result<Strategy> {
        self.assignment.get(node.index()).copied().ok_or(GameError::UnknownNode(node))
    }

    /// Whether this is the miners-validate / others-SPV profile.
    pub fn is_canonical_equilibrium(&self) -> bool {
        *self == StrategyProfile::equilibrium_for(&self.roles)
    }
}

/// Payoff of `node` playing `strategy`. In this model a node's payoff does
/// not depend on what the others play.
pub fn utility(node: NodeId, strategy: Strategy, profile: &StrategyProfile, params: &UtilityParams) -> Result<f64> {
    let role = profile.roles.get(node.index()).ok_or(GameError::UnknownNode(node))?;
    let p = params;
    Ok(if role.is_miner() {
        match strategy {
            Strategy::FullValidate => p.u0 + p.r_miner - p.c_cpu - p.c_net,
            Strategy::Spv | Strategy::NoValidation => p.u0 - p.r_miner,
        }
    } else {
        match strategy {
            Strategy::FullValidate => p.u0 - p.c_cpu - p.c_net + p.epsilon_policy,
            Strategy::Spv => p.u0 + p.delta_spv,
            Strategy::NoValidation => p.u0,
        }
    })
}

/// Utility-maximizing strategy; ties prefer SPV, then FullValidate.
pub fn best_response(node: NodeId, profile: &StrategyProfile, params: &UtilityParams) -> Result<Strategy> {
    let mut best = Strategy::PREFERENCE[0];
    let mut best_u = utility(node, best, profile, params)?;
    for &s in &Strategy::PREFERENCE[1..] {
        let u = utility(node, s, profile, params)?;
        if u > best_u {
            best = s;
            best_u = u;
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NashCheck {
    pub is_equilibrium: bool,
    /// First node (lowest id) with a strictly improving deviation, and its
    /// best response.
    pub witness: Option<(NodeId, Strategy)>,
}

pub fn is_nash_equilibrium(profile: &StrategyProfile, params: &UtilityParams) -> NashCheck {
    for i in 0..profile.len() {
        let node = NodeId(i as u32);
        let cur = profile.assignment[i];
        let u_cur = utility(node, cur, profile, params).expect("node in range");
        let br = best_response(node, profile, params).expect("node in range");
        if utility(node, br, profile, params).expect("node in range") > u_cur {
            return NashCheck { is_equilibrium: false, witness: Some((node, br)) };
        }
    }
    NashCheck { is_equilibrium: true, witness: None }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// All nodes respond to the same previous profile.
    Synchronous,
    /// Nodes respond one at a time in id order, seeing earlier updates.
    Sequential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsOutcome {
    pub profile: StrategyProfile,
    /// Rounds executed, including the final round that changed nothing.
    pub rounds: u32,
    pub converged: bool,
}

pub fn run_best_response_dynamics(
    initial: &StrategyProfile,
    params: &UtilityParams,
    max_rounds: u32,
    mode: UpdateMode,
) -> Result<DynamicsOutcome> {
    if max_rounds == 0 {
        return Err(GameError::InvalidParameter("max_rounds must be >= 1".into()));
    }
    let mut profile = initial.clone();
    for round in 1..=max_rounds {
        let mut changed = false;
        match mode {
            UpdateMode::Synchronous => {
                let next: Vec<Strategy> = (0..profile.len())
                    .map(|i| best_response(NodeId(i as u32), &profile, params))
                    .collect::<Result<_>>()?;
                changed = next != profile.assignment;
                profile.assignment = next;
            }
            UpdateMode::Sequential => {
                for i in 0..profile.len() {
                    let br = best_response(NodeId(i as u32), &profile, params)?;
                    if br != profile.assignment[i] {
                        profile.assignment[i] = br;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return Ok(DynamicsOutcome { profile, rounds: round, converged: true });
        }
    }
    Ok(DynamicsOutcome { profile, rounds: max_rounds, converged: false })
}

/// All pure-strategy Nash equilibria over the given roles, by enumerating
/// every one of the `3^n` profiles.
pub fn enumerate_equilibria(roles: &[NodeClass], params: &UtilityParams) -> Result<Vec<StrategyProfile>> {
    if roles.len() > 12 {
        return Err(GameError::InvalidParameter(format!("{} nodes is too many to enumerate", roles.len())));
    }
    let n = roles.len();
    let total = 3usize.pow(n as u32);
    let mut out = Vec::new();
    let mut profile = StrategyProfile { assignment: vec![Strategy::Spv; n], roles: roles.to_vec() };
    for code in 0..total {
        let mut c = code;
        for slot in profile.assignment.iter_mut() {
            *slot = Strategy::PREFERENCE[c % 3];
            c /= 3;
        }
        if is_nash_equilibrium(&profile, params).is_equilibrium {
            out.push(profile.clone());
        }
    }
    Ok(out)
}

/// Human-readable equilibrium report: profile, per-node utilities and the
/// deviation witness if any.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub profile: StrategyProfile,
    pub utilities: Vec<f64>,
    pub check: NashCheck,
    pub warnings: Vec<String>,
}

impl EquilibriumReport {
    pub fn new(profile: &StrategyProfile, params: &UtilityParams) -> Self {
        let utilities = (0..profile.len())
            .map(|i| utility(NodeId(i as u32), profile.assignment[i], profile, params).expect("node in range"))
            .collect();
        EquilibriumReport {
            profile: profile.clone(),
            utilities,
            check: is_nash_equilibrium(profile, params),
            warnings: params.regime_warnings(),
        }
    }
}

impl fmt::Display for EquilibriumReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        writeln!(f, "node  role   strategy      utility")?;
        for (i, (s, u)) in self.profile.assignment.iter().zip(&self.utilities).enumerate() {
            let role = self.profile.roles[i].kind();
            writeln!(f, "{i:<5} {role:<6} {s:<13} {u}")?;
        }
        match self.check.witness {
            None => writeln!(f, "nash equilibrium: yes"),
            Some((node, s)) => writeln!(f, "nash equilibrium: no (node {node} improves by switching to {s})"),
        }
    }
}
