//! Means, standard errors and one-sided t-tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; 0 for fewer than two values.
pub fn sample_var(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_error(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    (sample_var(xs) / xs.len() as f64).sqrt()
}

/// Result of a one-sided paired test of `mean(a − b) > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneSidedTest {
    pub point: String,
    /// Metric expected to be larger.
    pub larger: String,
    pub smaller: String,
    pub n: usize,
    pub mean_larger: f64,
    pub mean_smaller: f64,
    pub t: f64,
    pub critical: f64,
    pub confidence: f64,
    pub passed: bool,
}

/// One-sided paired t-test. With zero variance in the differences the
/// statistic is `+inf` for a positive mean difference and 0 otherwise.
pub fn paired_greater(point: &str, larger: (&str, &[f64]), smaller: (&str, &[f64]), confidence: f64) -> OneSidedTest {
    let (a, b) = (larger.1, smaller.1);
    let n = a.len().min(b.len());
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let md = mean(&d);
    let se = std_error(&d);
    let t = if n == 0 {
        f64::NAN
    } else if se > 0.0 {
        md / se
    } else if md > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let critical = if n >= 2 {
        StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("dof > 0").inverse_cdf(confidence)
    } else {
        f64::INFINITY
    };
    OneSidedTest {
        point: point.to_string(),
        larger: larger.0.to_string(),
        smaller: smaller.0.to_string(),
        n,
        mean_larger: mean(a),
        mean_smaller: mean(b),
        t,
        critical,
        confidence,
        passed: t > critical,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((sample_var(&xs) - 5.0 / 3.0).abs() < 1e-12);
        assert!((std_error(&xs) - (5.0f64 / 12.0).sqrt()).abs() < 1e-12);
        assert_eq!(sample_var(&[1.0]), 0.0);
    }

    #[test]
    fn paired_test_direction() {
        let a = [0.5, 0.6, 0.55, 0.7, 0.65, 0.62];
        let b = [0.1, 0.2, 0.15, 0.1, 0.2, 0.12];
        assert!(paired_greater("x", ("a", &a), ("b", &b), 0.99).passed);
        assert!(!paired_greater("x", ("b", &b), ("a", &a), 0.99).passed);
        // t(5) 0.99 quantile.
        let t = paired_greater("x", ("a", &a), ("b", &b), 0.99);
        assert!((t.critical - 3.3649).abs() < 1e-3);
        let same = paired_greater("x", ("a", &a), ("a", &a), 0.99);
        assert_eq!(same.t, 0.0);
        assert!(!same.passed);
    }
}
