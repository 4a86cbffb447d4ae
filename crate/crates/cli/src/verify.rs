//! Acceptance criteria evaluated against a result bundle. Everything is
//! recomputed from the bundle's rows and config, never read from its
//! stored aggregates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bundle::ResultBundle;
use crate::config::{ExperimentConfig, ExperimentKind, PartitionSection};
use crate::experiment::{derive, partition_point, q_point, redundant_point, reorg_point, run_experiment};
use crate::stats::mean;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Criterion {
    PartitionOrdering,
    DivergenceBound,
    ReorgDecay,
    FinalityMonotone,
    EquilibriumConvergence,
    SurplusOrdering,
    SpvZeroDivergence,
    EnforcementInertness,
    TopologyClaims,
    Determinism,
}

impl Criterion {
    pub const ALL: [Criterion; 10] = [
        Criterion::PartitionOrdering,
        Criterion::DivergenceBound,
        Criterion::ReorgDecay,
        Criterion::FinalityMonotone,
        Criterion::EquilibriumConvergence,
        Criterion::SurplusOrdering,
        Criterion::SpvZeroDivergence,
        Criterion::EnforcementInertness,
        Criterion::TopologyClaims,
        Criterion::Determinism,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Criterion::PartitionOrdering => "C1",
            Criterion::DivergenceBound => "C2",
            Criterion::ReorgDecay => "C3",
            Criterion::FinalityMonotone => "C4",
            Criterion::EquilibriumConvergence => "C5",
            Criterion::SurplusOrdering => "C6",
            Criterion::SpvZeroDivergence => "C7",
            Criterion::EnforcementInertness => "C8",
            Criterion::TopologyClaims => "C9",
            Criterion::Determinism => "C10",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Criterion::PartitionOrdering => "partition divergence ordering",
            Criterion::DivergenceBound => "policy divergence lower bound",
            Criterion::ReorgDecay => "reorg decay",
            Criterion::FinalityMonotone => "finality monotonicity",
            Criterion::EquilibriumConvergence => "equilibrium convergence",
            Criterion::SurplusOrdering => "surplus ordering",
            Criterion::SpvZeroDivergence => "SPV zero-divergence baseline",
            Criterion::EnforcementInertness => "enforcement inertness",
            Criterion::TopologyClaims => "topology claims",
            Criterion::Determinism => "determinism",
        }
    }

    /// Bundle kind the criterion reads; `None` means any kind.
    pub fn kind(self) -> Option<ExperimentKind> {
        match self {
            Criterion::PartitionOrdering | Criterion::SpvZeroDivergence | Criterion::EnforcementInertness => {
                Some(ExperimentKind::PartitionDivergence)
            }
            Criterion::DivergenceBound => Some(ExperimentKind::PolicyDivergence),
            Criterion::ReorgDecay | Criterion::FinalityMonotone => Some(ExperimentKind::ReorgDecay),
            Criterion::EquilibriumConvergence => Some(ExperimentKind::Equilibrium),
            Criterion::SurplusOrdering => Some(ExperimentKind::Surplus),
            Criterion::TopologyClaims => Some(ExperimentKind::TopologyClaims),
            Criterion::Determinism => None,
        }
    }

    /// Kind-specific criteria applicable to a bundle of `kind`. Determinism
    /// is left out because it reruns the whole experiment.
    pub fn for_kind(kind: ExperimentKind) -> Vec<Criterion> {
        Criterion::ALL.iter().copied().filter(|c| c.kind() == Some(kind)).collect()
    }
}

impl Criterion {
    /// Criteria a config is set up to exercise: the partition kind covers
    /// the ordering test when every partition probability is positive, the
    /// SPV baseline when it is an unpartitioned adversary-free latency-1
    /// run, and inertness when verdict inversion is on.
    pub fn applicable(config: &ExperimentConfig) -> Vec<Criterion> {
        Criterion::for_kind(config.kind)
            .into_iter()
            .filter(|c| match (c, &config.partition_divergence) {
                (Criterion::PartitionOrdering, Some(s)) => s.partition_probability.iter().all(|&p| p > 0.0),
                (Criterion::SpvZeroDivergence, Some(s)) => spv_baseline_violations(s).is_empty(),
                (Criterion::EnforcementInertness, Some(s)) => s.verdict_inversion,
                _ => true,
            })
            .collect()
    }
}

fn spv_baseline_violations(s: &PartitionSection) -> Vec<&'static str> {
    let mut v = Vec::new();
    if !s.scenario().adversary_inactive() {
        v.push("adversary active");
    }
    if s.network.latency_max != 1 {
        v.push("latency_max != 1");
    }
    if s.partition_probability != [0.0] {
        v.push("partition grid is not [0]");
    }
    v
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Criterion {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Criterion::ALL
            .iter()
            .copied()
            .find(|c| c.id().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CliError::Config(format!("unknown criterion {s:?} (expected C1..C10)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionVerdict {
    pub criterion: Criterion,
    pub passed: bool,
    /// Measured values behind the verdict.
    pub measured: String,
}

impl fmt::Display for CriterionVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {} {}: {}", self.criterion.id(), self.criterion.name(), self.measured)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub verdicts: Vec<CriterionVerdict>,
}

impl AcceptanceReport {
    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn to_text(&self) -> String {
        self.verdicts.iter().map(|v| format!("{v}\n")).collect()
    }
}

/// Evaluate `criteria` against `bundle`. A criterion for another kind, or
/// any criterion on a bundle with no rows, is a mismatched-kind error.
pub fn verify_acceptance(bundle: &ResultBundle, criteria: &[Criterion]) -> Result<AcceptanceReport, CliError> {
    let mut report = AcceptanceReport::default();
    for &c in criteria {
        if bundle.rows.is_empty() {
            return Err(CliError::MismatchedKind {
                criterion: c.id().into(),
                expected: c.kind().map_or("non-empty".into(), |k| k.to_string()),
                found: "an empty bundle".into(),
            });
        }
        if let Some(k) = c.kind() {
            if k != bundle.kind {
                return Err(CliError::MismatchedKind {
                    criterion: c.id().into(),
                    expected: k.to_string(),
                    found: bundle.kind.to_string(),
                });
            }
        }
        let (passed, measured) = evaluate(c, bundle)?;
        report.verdicts.push(CriterionVerdict { criterion: c, passed, measured });
    }
    Ok(report)
}

fn fmt_list(xs: &[String]) -> String {
    xs.join("; ")
}

fn evaluate(c: Criterion, b: &ResultBundle) -> Result<(bool, String), CliError> {
    let cfg = &b.config;
    Ok(match c {
        Criterion::PartitionOrdering => {
            let (_, tests) = derive(cfg, &b.rows)?;
            let parts: Vec<String> = tests
                .iter()
                .map(|t| {
                    format!(
                        "{} hfn={:.4} spv={:.4} t={:.2} crit={:.2} n={}",
                        t.point, t.mean_larger, t.mean_smaller, t.t, t.critical, t.n
                    )
                })
                .collect();
            (tests.iter().all(|t| t.passed), fmt_list(&parts))
        }
        Criterion::DivergenceBound => {
            let s = cfg.policy_divergence.as_ref().expect("kind checked");
            let (derived, _) = derive(cfg, &b.rows)?;
            let get = |p: &str, n: &str| derived.iter().find(|d| d.point == p && d.name == n).map_or(f64::NAN, |d| d.value);
            let mut ok = true;
            let mut parts = vec![format!("p_hat={:.4}", get("all", "p_hat"))];
            for &r in &s.redundant {
                let p = redundant_point(r);
                let frac = get(&p, "fraction_at_or_above_bound");
                ok &= frac >= 0.95;
                let m = mean(&b.values(&p, "divergence"));
                parts.push(format!("{p} E[D]={m:.4} bound={:.4} share>=bound={frac:.2}", get(&p, "lower_bound")));
            }
            let inc = get("all", "mean_strictly_increasing") == 1.0;
            parts.push(format!("strictly increasing={inc}"));
            (ok && inc, fmt_list(&parts))
        }
        Criterion::ReorgDecay => {
            let s = cfg.reorg_decay.as_ref().expect("kind checked");
            let (derived, _) = derive(cfg, &b.rows)?;
            let get = |p: &str, n: &str| derived.iter().find(|d| d.point == p && d.name == n).map(|d| d.value);
            let mut ok = true;
            let mut parts = Vec::new();
            for &q in &s.q {
                let mut outside = Vec::new();
                for d in s.min_depth..=s.max_depth {
                    if get(&reorg_point(q, d), "within_3se") != Some(1.0) {
                        outside.push(d.to_string());
                    }
                }
                let qp = q_point(q);
                let lambda = get(&qp, "lambda").unwrap_or(f64::NAN);
                let r2 = get(&qp, "r_squared").unwrap_or(f64::NAN);
                let dropped = get(&qp, "dropped_zero").unwrap_or(f64::NAN);
                let pass = outside.is_empty() && lambda > 0.0 && r2 >= 0.98;
                ok &= pass;
                parts.push(format!(
                    "{qp} lambda={lambda:.3} R2={r2:.4} dropped={dropped} outside3se=[{}]",
                    outside.join(",")
                ));
            }
            (ok, fmt_list(&parts))
        }
        Criterion::FinalityMonotone => {
            let s = cfg.reorg_decay.as_ref().expect("kind checked");
            let (derived, _) = derive(cfg, &b.rows)?;
            let ok = derived.iter().any(|d| d.name == "finality_strictly_increasing" && d.value == 1.0);
            let qs: Vec<String> = s.finality_q.iter().map(|q| q.to_string()).collect();
            (ok, format!("q in {{{}}}, depth 0..={}, strictly increasing={ok}", qs.join(","), s.finality_max_depth))
        }
        Criterion::EquilibriumConvergence => {
            let (derived, _) = derive(cfg, &b.rows)?;
            let conv = b.values("all", "converged");
            let rounds = b.values("all", "rounds");
            let reached = b.values("all", "reached_equilibrium");
            let n = conv.len();
            let good = (0..n).filter(|&i| conv[i] == 1.0 && reached[i] == 1.0 && rounds[i] <= 2.0).count();
            let max_rounds = rounds.iter().cloned().fold(0.0, f64::max);
            let exact = derived.iter().any(|d| d.name == "enumeration_exact" && d.value == 1.0);
            let regime = derived.iter().any(|d| d.name == "lemma_regime" && d.value == 1.0);
            (
                good == n && exact && regime,
                format!("{good}/{n} profiles reached S* within 2 rounds (max rounds {max_rounds}); enumeration exact={exact}; lemma regime={regime}"),
            )
        }
        Criterion::SurplusOrdering => {
            use powsim_core::surplus::TxClass;
            let mut ok = true;
            let mut parts = Vec::new();
            for class in TxClass::ALL {
                let ratios = b.values(class.name(), "ratio");
                let (lo, hi) = ratios.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
                let pass = match class {
                    TxClass::T3Malformed => hi < 0.01,
                    _ => lo > 0.999,
                };
                ok &= pass && !ratios.is_empty();
                parts.push(format!("{} rho in [{lo:.6}, {hi:.6}]", class.name()));
            }
            (ok, fmt_list(&parts))
        }
        Criterion::SpvZeroDivergence => {
            let s = cfg.partition_divergence.as_ref().expect("kind checked");
            let pre = spv_baseline_violations(s);
            let point = partition_point(0.0);
            let counts = b.values(&point, "spv_miner_peer_count");
            let div = b.values(&point, "spv_miner_peer_divergence");
            let covered_runs = counts.iter().filter(|&&c| c > 0.0).count();
            let max = div.iter().cloned().fold(0.0, f64::max);
            let ok = pre.is_empty() && !counts.is_empty() && covered_runs == counts.len() && max == 0.0;
            let pre_txt = if pre.is_empty() { String::new() } else { format!("; preconditions violated: {}", pre.join(", ")) };
            (ok, format!("{covered_runs}/{} runs with covered SPV clients, max divergence {max}{pre_txt}", counts.len()))
        }
        Criterion::EnforcementInertness => {
            let s = cfg.partition_divergence.as_ref().expect("kind checked");
            if !s.verdict_inversion {
                return Ok((false, "verdict_inversion is off in this bundle".into()));
            }
            let mut total = 0;
            let mut same = 0;
            for p in b.points() {
                let v = b.values(&p, "inversion_identical");
                total += v.len();
                same += v.iter().filter(|&&x| x == 1.0).count();
            }
            (total > 0 && same == total, format!("{same}/{total} runs with identical global chains after flipping verdicts"))
        }
        Criterion::TopologyClaims => {
            let cuts = b.values("all", "cut_changes");
            let pairs: f64 = b.values("all", "miner_pairs").iter().sum();
            let eb = b.values("all", "core_eff_diameter_before");
            let ea = b.values("all", "core_eff_diameter_after");
            let db = b.values("all", "diameter_before");
            let da = b.values("all", "diameter_after");
            let cut_changes: f64 = cuts.iter().sum();
            let eff_changed = eb.iter().zip(&ea).filter(|(x, y)| x != y).count();
            let shrunk = db.iter().zip(&da).filter(|(x, y)| y < x).count();
            let grew = db.iter().zip(&da).filter(|(x, y)| y > x).count();
            (
                cut_changes == 0.0 && eff_changed == 0 && shrunk == 0 && !cuts.is_empty(),
                format!(
                    "{} graphs, {pairs} miner pairs: cut changes {cut_changes}, core eff-diameter changes {eff_changed}, diameter decreased {shrunk} (increased {grew})",
                    cuts.len()
                ),
            )
        }
        Criterion::Determinism => {
            let again = run_experiment(cfg)?;
            let a = b.rows_csv();
            let z = again.rows_csv();
            let same = a == z && again.config_hash == b.config_hash;
            (same, format!("{} rerun: {} CSV bytes, identical={same}", cfg.kind, a.len()))
        }
    })
}
