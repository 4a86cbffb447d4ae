//! Validation-surplus accounting over transaction classes.
//!
//! Costs are abstract cost units; nothing here measures real CPU time.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::{stream, stream_rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxClass {
    #[serde(rename = "T1_standard")]
    T1Standard,
    #[serde(rename = "T2_metadata")]
    T2Metadata,
    #[serde(rename = "T3_malformed")]
    T3Malformed,
    #[serde(rename = "T4_orphaned")]
    T4Orphaned,
}

impl TxClass {
    pub const ALL: [TxClass; 4] = [TxClass::T1Standard, TxClass::T2Metadata, TxClass::T3Malformed, TxClass::T4Orphaned];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TxClass::T1Standard => "T1_standard",
            TxClass::T2Metadata => "T2_metadata",
            TxClass::T3Malformed => "T3_malformed",
            TxClass::T4Orphaned => "T4_orphaned",
        }
    }
}

impl fmt::Display for TxClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One value per transaction class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassTable<T> {
    #[serde(rename = "T1_standard")]
    pub t1: T,
    #[serde(rename = "T2_metadata")]
    pub t2: T,
    #[serde(rename = "T3_malformed")]
    pub t3: T,
    #[serde(rename = "T4_orphaned")]
    pub t4: T,
}

impl<T: Copy> ClassTable<T> {
    pub fn uniform(v: T) -> Self {
        ClassTable { t1: v, t2: v, t3: v, t4: v }
    }

    pub fn get(&self, class: TxClass) -> T {
        match class {
            TxClass::T1Standard => self.t1,
            TxClass::T2Metadata => self.t2,
            TxClass::T3Malformed => self.t3,
            TxClass::T4Orphaned => self.t4,
        }
    }

    pub fn set(&mut self, class: TxClass, v: T) {
        match class {
            TxClass::T1Standard => self.t1 = v,
            TxClass::T2Metadata => self.t2 = v,
            TxClass::T3Malformed => self.t3 = v,
            TxClass::T4Orphaned => self.t4 = v,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SurplusError {
    #[error("sample_count must be >= 1")]
    NoSamples,
    #[error("c_home for {0} is zero; surplus ratio undefined")]
    ZeroCost(TxClass),
    #[error("invalid cost model: {0}")]
    InvalidModel(String),
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, SurplusError>;

/// Per-class validation cost, detection utility and invalidity rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub c_home: ClassTable<f64>,
    pub c_reject: ClassTable<f64>,
    pub invalid_probability: ClassTable<f64>,
}

impl Default for CostModel {
    /// Unit validation cost everywhere; malformed transactions are invalid
    /// with probability 0.999, every other class with probability 1e-5.
    fn default() -> Self {
        CostModel {
            c_home: ClassTable::uniform(1.0),
            c_reject: ClassTable::uniform(1.0),
            invalid_probability: ClassTable { t1: 1e-5, t2: 1e-5, t3: 0.999, t4: 1e-5 },
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        for c in TxClass::ALL {
            let (h, r, p) = (self.c_home.get(c), self.c_reject.get(c), self.invalid_probability.get(c));
            if !(h >= 0.0 && h.is_finite()) || !(r >= 0.0 && r.is_finite()) {
                return Err(SurplusError::InvalidModel(format!("{c}: costs must be finite and >= 0")));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(SurplusError::InvalidModel(format!("{c}: invalid_probability {p} outside [0,1]")));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the model's JSON form.
    pub fn model_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("cost model serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Sum over `sample_count` sampled transactions of `c_home − 1_invalid·c_reject`.
///
/// Computed from the invalid count so an all-valid class gives exactly
/// `sample_count · c_home`.
pub fn validation_surplus(class: TxClass, model: &CostModel, sample_count: u64, seed: u64) -> Result<f64> {
    let invalid = draw_invalid(class, model, sample_count, seed)?.iter().filter(|&&b| b).count() as f64;
    Ok(sample_count as f64 * model.c_home.get(class) - invalid * model.c_reject.get(class))
}

/// Per-transaction surplus terms, in draw order.
pub fn sample_surplus(class: TxClass, model: &CostModel, sample_count: u64, seed: u64) -> Result<Vec<f64>> {
    let (h, r) = (model.c_home.get(class), model.c_reject.get(class));
    Ok(draw_invalid(class, model, sample_count, seed)?
        .into_iter()
        .map(|invalid| if invalid { h - r } else { h })
        .collect())
}

/// One invalidity draw per transaction from stream `(seed, SURPLUS, class)`.
fn draw_invalid(class: TxClass, model: &CostModel, sample_count: u64, seed: u64) -> Result<Vec<bool>> {
    model.validate()?;
    if sample_count == 0 {
        return Err(SurplusError::NoSamples);
    }
    let mut rng = stream_rng(seed, &[stream::SURPLUS, class.index() as u64]);
    let p = model.invalid_probability.get(class);
    Ok((0..sample_count).map(|_| rng.random::<f64>() < p).collect())
}

/// `surplus / (sample_count · c_home)`.
pub fn surplus_ratio(class: TxClass, model: &CostModel, sample_count: u64, seed: u64) -> Result<f64> {
    let h = model.c_home.get(class);
    if h == 0.0 {
        return Err(SurplusError::ZeroCost(class));
    }
    let s = validation_surplus(class, model, sample_count, seed)?;
    Ok(s / (sample_count as f64 * h))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InefficiencyRatio {
    Finite(f64),
    /// Positive cost with zero enforcement effect.
    Divergent,
}

impl fmt::Display for InefficiencyRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InefficiencyRatio::Finite(x) => write!(f, "{x}"),
            InefficiencyRatio::Divergent => f.write_str("divergent"),
        }
    }
}

/// Redundant cost per unit of enforcement-effect probability.
pub fn entropy_inefficiency_ratio(redundant_cost: f64, enforcement_effect_probability: f64) -> Result<InefficiencyRatio> {
    if !(redundant_cost >= 0.0) {
        return Err(SurplusError::Domain(format!("redundant cost must be >= 0 (got {redundant_cost})")));
    }
    if !(0.0..=1.0).contains(&enforcement_effect_probability) {
        return Err(SurplusError::Domain(format!(
            "probability {enforcement_effect_probability} outside [0,1]"
        )));
    }
    if redundant_cost == 0.0 {
        return Ok(InefficiencyRatio::Finite(0.0));
    }
    if enforcement_effect_probability == 0.0 {
        return Ok(InefficiencyRatio::Divergent);
    }
    Ok(InefficiencyRatio::Finite(redundant_cost / enforcement_effect_probability))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurplusRow {
    pub class: TxClass,
    pub samples: u64,
    pub surplus: f64,
    pub ratio: f64,
}

/// Surplus and ratio for every class.
pub fn surplus_report(model: &CostModel, sample_count: u64, seed: u64) -> Result<Vec<SurplusRow>> {
    TxClass::ALL
        .iter()
        .map(|&class| {
            let surplus = validation_surplus(class, model, sample_count, seed)?;
            let ratio = surplus_ratio(class, model, sample_count, seed)?;
            Ok(SurplusRow { class, samples: sample_count, surplus, ratio })
        })
        .collect()
}

/// CSV with columns `class,samples,surplus,ratio,model_hash`.
pub fn write_surplus_csv<W: std::io::Write>(
    mut w: W,
    rows: &[SurplusRow],
    model: &CostModel,
    header_comment: &str,
) -> std::io::Result<()> {
    let hash = model.model_hash();
    writeln!(w, "# {header_comment}")?;
    writeln!(w, "class,samples,surplus,ratio,model_hash")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.class, r.samples, r.surplus, r.ratio, hash)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_valid_class_costs_exactly() {
        let mut m = CostModel::default();
        m.invalid_probability.set(TxClass::T2Metadata, 0.0);
        m.c_home.set(TxClass::T2Metadata, 2.5);
        assert_eq!(validation_surplus(TxClass::T2Metadata, &m, 400, 1).unwrap(), 1000.0);
        assert_eq!(surplus_ratio(TxClass::T2Metadata, &m, 400, 1).unwrap(), 1.0);
    }

    #[test]
    fn always_invalid_cancels() {
        let mut m = CostModel::default();
        m.invalid_probability.set(TxClass::T3Malformed, 1.0);
        assert_eq!(validation_surplus(TxClass::T3Malformed, &m, 100, 1).unwrap(), 0.0);
    }

    #[test]
    fn default_model_ordering() {
        let m = CostModel::default();
        assert!(surplus_ratio(TxClass::T1Standard, &m, 10_000, 3).unwrap() > 0.9999);
        assert!(surplus_ratio(TxClass::T3Malformed, &m, 10_000, 3).unwrap() < 0.01);
    }

    #[test]
    fn errors() {
        let mut m = CostModel::default();
        assert_eq!(validation_surplus(TxClass::T1Standard, &m, 0, 1), Err(SurplusError::NoSamples));
        m.c_home.set(TxClass::T4Orphaned, 0.0);
        assert_eq!(surplus_ratio(TxClass::T4Orphaned, &m, 10, 1), Err(SurplusError::ZeroCost(TxClass::T4Orphaned)));
        m.invalid_probability.set(TxClass::T1Standard, 1.2);
        assert!(matches!(m.validate(), Err(SurplusError::InvalidModel(_))));
    }

    #[test]
    fn inefficiency_examples() {
        assert_eq!(entropy_inefficiency_ratio(5.0, 0.0).unwrap(), InefficiencyRatio::Divergent);
        assert_eq!(entropy_inefficiency_ratio(0.0, 0.0).unwrap(), InefficiencyRatio::Finite(0.0));
        match entropy_inefficiency_ratio(10.0, 0.001).unwrap() {
            InefficiencyRatio::Finite(x) => assert!((x - 10_000.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
        assert!(entropy_inefficiency_ratio(-1.0, 0.5).is_err());
    }

    #[test]
    fn model_hash_is_stable_and_sensitive() {
        let a = CostModel::default();
        let mut b = a;
        assert_eq!(a.model_hash(), b.model_hash());
        b.c_reject.set(TxClass::T3Malformed, 0.5);
        assert_ne!(a.model_hash(), b.model_hash());
    }
}
