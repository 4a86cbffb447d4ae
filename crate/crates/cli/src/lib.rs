//! Experiment runner for the simulator: TOML configs, seeded replications,
//! aggregation, result export and acceptance checks.

pub mod bundle;
pub mod config;
pub mod experiment;
pub mod output;
pub mod stats;
pub mod verify;

use thiserror::Error;

pub use bundle::{Aggregate, Derived, ResultBundle, Row};
pub use config::{ExperimentConfig, ExperimentKind};
pub use experiment::{run_experiment, run_experiment_with, RunOptions, RunOutput};
pub use verify::{verify_acceptance, AcceptanceReport, Criterion, CriterionVerdict};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("criterion {criterion} needs a {expected} bundle, got {found}")]
    MismatchedKind { criterion: String, expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Engine(#[from] powsim_core::engine::EngineError),
    #[error(transparent)]
    Topology(#[from] powsim_core::topology::TopologyError),
    #[error(transparent)]
    Policy(#[from] powsim_core::policy::PolicyError),
    #[error(transparent)]
    Ledger(#[from] powsim_core::ledger::LedgerError),
    #[error(transparent)]
    Game(#[from] powsim_core::game::GameError),
    #[error(transparent)]
    Surplus(#[from] powsim_core::surplus::SurplusError),
}

/// Process exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    pub const RUNTIME: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const ASSERTION: u8 = 3;
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::MismatchedKind { .. } => exit::CONFIG,
            _ => exit::RUNTIME,
        }
    }
}
