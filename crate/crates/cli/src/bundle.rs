//! Per-replication rows and the result bundle built from them.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::stats::{mean, std_error, OneSidedTest};

/// One measured value of one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub replication: u64,
    pub seed: u64,
    /// Sweep point label, e.g. `p=0.1`.
    pub point: String,
    pub metric: String,
    pub value: f64,
}

impl Row {
    pub fn new(replication: u64, seed: u64, point: &str, metric: &str, value: f64) -> Self {
        Row { replication, seed, point: point.to_string(), metric: metric.to_string(), value }
    }
}

/// Mean and standard error of one metric at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub point: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std_error: f64,
}

/// A value computed from the rows as a whole (fits, bounds, pooled
/// frequencies) or from the config alone (analytic checks).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub point: String,
    pub name: String,
    pub value: f64,
}

impl Derived {
    pub fn new(point: &str, name: &str, value: f64) -> Self {
        Derived { point: point.to_string(), name: name.to_string(), value }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub tool_version: String,
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub rows: Vec<Row>,
    pub aggregates: Vec<Aggregate>,
    pub derived: Vec<Derived>,
    pub tests: Vec<OneSidedTest>,
}

impl ResultBundle {
    /// Values of `metric` at `point`, in replication order.
    pub fn values(&self, point: &str, metric: &str) -> Vec<f64> {
        values(&self.rows, point, metric)
    }

    /// Distinct points in first-appearance order.
    pub fn points(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.point) {
                out.push(r.point.clone());
            }
        }
        out
    }

    pub fn derived(&self, point: &str, name: &str) -> Option<f64> {
        self.derived.iter().find(|d| d.point == point && d.name == name).map(|d| d.value)
    }

    pub fn rows_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_rows_csv(&mut buf, &self.rows).expect("writing to memory");
        buf
    }
}

pub fn values(rows: &[Row], point: &str, metric: &str) -> Vec<f64> {
    rows.iter().filter(|r| r.point == point && r.metric == metric).map(|r| r.value).collect()
}

/// Group rows by (point, metric) in first-appearance order.
pub fn aggregate(rows: &[Row]) -> Vec<Aggregate> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let k = (r.point.as_str(), r.metric.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(point, metric)| {
            let xs = values(rows, point, metric);
            Aggregate { point: point.to_string(), metric: metric.to_string(), n: xs.len(), mean: mean(&xs), std_error: std_error(&xs) }
        })
        .collect()
}

pub fn write_rows_csv<W: Write>(mut w: W, rows: &[Row]) -> io::Result<()> {
    writeln!(w, "replication,seed,point,metric,value")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.replication, r.seed, r.point, r.metric, r.value)?;
    }
    Ok(())
}

pub fn write_aggregates_csv<W: Write>(mut w: W, aggs: &[Aggregate]) -> io::Result<()> {
    writeln!(w, "point,metric,n,mean,std_error")?;
    for a in aggs {
        writeln!(w, "{},{},{},{},{}", a.point, a.metric, a.n, a.mean, a.std_error)?;
    }
    Ok(())
}

pub fn write_derived_csv<W: Write>(mut w: W, derived: &[Derived]) -> io::Result<()> {
    writeln!(w, "point,name,value")?;
    for d in derived {
        writeln!(w, "{},{},{}", d.point, d.name, d.value)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregates_group_in_order() {
        let rows = vec![
            Row::new(0, 5, "p=0.1", "a", 1.0),
            Row::new(0, 5, "p=0.1", "b", 2.0),
            Row::new(1, 6, "p=0.1", "a", 3.0),
            Row::new(1, 6, "p=0.1", "b", 4.0),
        ];
        let aggs = aggregate(&rows);
        assert_eq!(aggs.len(), 2);
        assert_eq!((aggs[0].metric.as_str(), aggs[0].n, aggs[0].mean), ("a", 2, 2.0));
        assert_eq!(aggs[1].mean, 3.0);
        let mut buf = Vec::new();
        write_rows_csv(&mut buf, &rows[..1]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "replication,seed,point,metric,value\n0,5,p=0.1,a,1\n");
    }
}
