//! Acceptance suite: runs the shipped configs and prints one PASS/FAIL line
//! per criterion. Exits nonzero when any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use powsim_cli::{run_experiment, verify_acceptance, Criterion, CriterionVerdict, ExperimentConfig, ResultBundle};

const C1: &str = include_str!("../../../configs/c1_partition.toml");
const C2: &str = include_str!("../../../configs/c2_policy.toml");
const C3: &str = include_str!("../../../configs/c3_reorg.toml");
const C5: &str = include_str!("../../../configs/c5_equilibrium.toml");
const C6: &str = include_str!("../../../configs/c6_surplus.toml");
const C7: &str = include_str!("../../../configs/c7_spv_baseline.toml");
const C8: &str = include_str!("../../../configs/c8_inertness.toml");
const C9: &str = include_str!("../../../configs/c9_topology.toml");

fn run(text: &str) -> ResultBundle {
    let cfg = ExperimentConfig::from_toml_str(text).expect("shipped config is valid");
    run_experiment(&cfg).expect("experiment runs")
}

fn check(bundle: &ResultBundle, c: Criterion) -> CriterionVerdict {
    let report = verify_acceptance(bundle, &[c]).expect("criterion matches bundle kind");
    report.verdicts.into_iter().next().expect("one verdict")
}

fn report(v: &CriterionVerdict, started: Instant) -> bool {
    println!("{v} [{:.2}s]", started.elapsed().as_secs_f64());
    v.passed
}

fn main() -> ExitCode {
    let mut all = true;

    let t = Instant::now();
    let c1 = run(C1);
    all &= report(&check(&c1, Criterion::PartitionOrdering), t);

    let t = Instant::now();
    all &= report(&check(&run(C2), Criterion::DivergenceBound), t);

    let t = Instant::now();
    let c3 = run(C3);
    all &= report(&check(&c3, Criterion::ReorgDecay), t);

    let t = Instant::now();
    all &= report(&check(&c3, Criterion::FinalityMonotone), t);

    let t = Instant::now();
    all &= report(&check(&run(C5), Criterion::EquilibriumConvergence), t);

    let t = Instant::now();
    all &= report(&check(&run(C6), Criterion::SurplusOrdering), t);

    let t = Instant::now();
    all &= report(&check(&run(C7), Criterion::SpvZeroDivergence), t);

    let t = Instant::now();
    all &= report(&check(&run(C8), Criterion::EnforcementInertness), t);

    let t = Instant::now();
    all &= report(&check(&run(C9), Criterion::TopologyClaims), t);

    // Determinism reruns the partition and reorg experiments.
    let t = Instant::now();
    let d1 = check(&c1, Criterion::Determinism);
    let d3 = check(&c3, Criterion::Determinism);
    let merged = CriterionVerdict {
        criterion: Criterion::Determinism,
        passed: d1.passed && d3.passed,
        measured: format!("{}; {}", d1.measured, d3.measured),
    };
    all &= report(&merged, t);

    if all {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: some criteria failed");
        ExitCode::FAILURE
    }
}
