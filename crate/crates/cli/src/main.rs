use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::info;
use powsim_cli::config::{AdversarySection, NetworkSection, ScenarioSection, SimulationSection};
use powsim_cli::output::write_run_dir;
use powsim_cli::{exit, run_experiment_with, verify_acceptance, CliError, Criterion, ExperimentConfig, ResultBundle, RunOptions};
use powsim_core::engine::{run_simulation, summarize, write_policy_csv, write_trace_csv};
use serde::Deserialize;

/// Environment variable that overrides the seed when `--seed` is absent.
const SEED_ENV: &str = "POWSIM_SEED";

#[derive(Parser)]
#[command(name = "powsim", version, about = "Proof-of-work network simulator and experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a network from a [network] section and print or save it in the text graph format.
    GenerateGraph {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one simulation and write its summary (and traces with --traces).
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (summary goes to stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        traces: bool,
    },
    /// Run a replicated experiment and evaluate its acceptance criteria.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides base_seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with status 3 when a criterion fails.
        #[arg(long = "assert")]
        assert_pass: bool,
        /// Keep per-run trace CSVs (partition experiments).
        #[arg(long)]
        traces: bool,
    },
    /// Evaluate acceptance criteria against a saved summary.json bundle.
    Verify {
        bundle: PathBuf,
        /// Comma-separated criterion ids (default: those the bundle's config exercises).
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<String>,
        #[arg(long = "assert")]
        assert_pass: bool,
    },
}

/// Input file of `generate-graph` and `simulate`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    partition_probability: f64,
    network: NetworkSection,
    #[serde(default)]
    simulation: Option<SimulationSection>,
    #[serde(default)]
    adversary: Option<AdversarySection>,
}

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            let seed = v.trim().parse().map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an integer")))?;
            info!("seed {seed} taken from {SEED_ENV}");
            Ok(Some(seed))
        }
        Err(_) => Ok(None),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

fn read_scenario(path: &Path) -> Result<(String, ScenarioFile), CliError> {
    let text = read_text(path)?;
    let file = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((text, file))
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::GenerateGraph { config, seed, out } => {
            let (_, file) = read_scenario(&config)?;
            let seed = resolve_seed(seed)?.unwrap_or(file.seed);
            let g = file.network.build(seed).map_err(|e| CliError::Config(e.to_string()))?;
            match out {
                Some(p) => fs::write(&p, g.to_text()).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{}", g.to_text()),
            }
        }
        Command::Simulate { config, seed, out, traces } => {
            let (text, file) = read_scenario(&config)?;
            let seed = resolve_seed(seed)?.unwrap_or(file.seed);
            let simulation =
                file.simulation.ok_or_else(|| CliError::Config("simulate needs a [simulation] section".into()))?;
            let scenario = ScenarioSection { network: file.network, simulation, adversary: file.adversary };
            let cfg = scenario
                .sim_config(seed, file.partition_probability)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let trace = run_simulation(&cfg)?;
            let summary = serde_json::to_string_pretty(&summarize(&trace))?;
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir)?;
                    fs::write(dir.join("config.toml"), text)?;
                    fs::write(dir.join("summary.json"), &summary)?;
                    if traces {
                        let mut buf = Vec::new();
                        write_trace_csv(&mut buf, &trace)?;
                        fs::write(dir.join("trace.csv"), &buf)?;
                        buf.clear();
                        write_policy_csv(&mut buf, &trace)?;
                        fs::write(dir.join("policies.csv"), &buf)?;
                    }
                    info!("wrote {}", dir.display());
                }
                None => println!("{summary}"),
            }
        }
        Command::Experiment { config, seed, out, assert_pass, traces } => {
            let text = read_text(&config)?;
            let mut cfg = ExperimentConfig::from_toml_str(&text)?;
            if let Some(s) = resolve_seed(seed)? {
                cfg.base_seed = s;
            }
            let run = run_experiment_with(&cfg, RunOptions { traces })?;
            let report = verify_acceptance(&run.bundle, &Criterion::applicable(&cfg))?;
            print!("{}", report.to_text());
            if let Some(dir) = out {
                write_run_dir(&dir, &text, &run, &report)?;
                info!("wrote {}", dir.display());
            }
            if assert_pass && !report.all_passed() {
                return Ok(exit::ASSERTION);
            }
        }
        Command::Verify { bundle, criteria, assert_pass } => {
            let text = read_text(&bundle)?;
            let b: ResultBundle =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", bundle.display())))?;
            let criteria: Vec<Criterion> = if criteria.is_empty() {
                Criterion::applicable(&b.config)
            } else {
                criteria.iter().map(|c| c.parse()).collect::<Result<_, _>>()?
            };
            let report = verify_acceptance(&b, &criteria)?;
            print!("{}", report.to_text());
            if assert_pass && !report.all_passed() {
                return Ok(exit::ASSERTION);
            }
        }
    }
    Ok(exit::OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(exit::RUNTIME, CliError::exit_code);
            ExitCode::from(code)
        }
    }
}
