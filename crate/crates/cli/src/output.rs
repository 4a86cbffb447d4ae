//! Run directory layout:
//!
//! ```text
//! <out>/config.toml      copy of the config as given
//! <out>/results.csv      replication,seed,point,metric,value
//! <out>/aggregates.csv   point,metric,n,mean,std_error
//! <out>/derived.csv      point,name,value
//! <out>/summary.json     the full result bundle
//! <out>/report.txt       acceptance verdicts for the experiment kind
//! <out>/traces/*.csv     per-run traces (only with --traces)
//! ```

use std::fs;
use std::path::Path;

use crate::bundle::{write_aggregates_csv, write_derived_csv};
use crate::experiment::RunOutput;
use crate::verify::AcceptanceReport;
use crate::CliError;

pub fn write_run_dir(dir: &Path, config_text: &str, run: &RunOutput, report: &AcceptanceReport) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), config_text)?;
    let b = &run.bundle;
    fs::write(dir.join("results.csv"), b.rows_csv())?;
    let mut buf = Vec::new();
    write_aggregates_csv(&mut buf, &b.aggregates)?;
    fs::write(dir.join("aggregates.csv"), &buf)?;
    buf.clear();
    write_derived_csv(&mut buf, &b.derived)?;
    fs::write(dir.join("derived.csv"), &buf)?;
    fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(b)?)?;
    fs::write(dir.join("report.txt"), report.to_text())?;
    if !run.traces.is_empty() {
        let tdir = dir.join("traces");
        fs::create_dir_all(&tdir)?;
        for (name, body) in &run.traces {
            fs::write(tdir.join(name), body)?;
        }
    }
    Ok(())
}
