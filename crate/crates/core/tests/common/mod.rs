#![allow(dead_code)]

use powsim_core::engine::SimConfig;
use powsim_core::policy::{AdoptionRule, PolicyKernel, PolicySpace, PolicyState};
use powsim_core::topology::{assign_latencies, assign_roles, generate_watts_strogatz, NetworkGraph, NodeClass, NodeId};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn space4() -> PolicySpace {
    PolicySpace::new(4, PolicyState(0)).unwrap()
}

pub fn majority(drift: f64) -> PolicyKernel {
    PolicyKernel::new(drift, AdoptionRule::MajorityOfInbox).unwrap()
}

/// Small-world network with roles and latencies, all from one seed.
pub fn network(n: usize, k: usize, miners: usize, spv_fraction: f64, lat: (u32, u32), seed: u64) -> NetworkGraph {
    let g = generate_watts_strogatz(n, k, 0.1, seed).unwrap();
    let g = assign_roles(&g, miners, spv_fraction, 2 * miners, seed).unwrap();
    assign_latencies(&g, lat.0, lat.1, seed).unwrap()
}

pub fn config(graph: NetworkGraph, ticks: u64, rate: f64, drift: f64, seed: u64) -> SimConfig {
    SimConfig::new(graph, ticks, rate, majority(drift), space4(), seed)
}

/// Hand-built graph: `roles[i]` for node `i`, edges `(u, v, latency)`.
pub fn hand_graph(roles: &[NodeClass], edges: &[(u32, u32, u32)]) -> NetworkGraph {
    let mut g = NetworkGraph::empty(roles.len());
    for (i, r) in roles.iter().enumerate() {
        g.set_role(NodeId(i as u32), *r).unwrap();
    }
    for &(u, v, l) in edges {
        g.add_edge(NodeId(u), NodeId(v), l).unwrap();
    }
    g
}

pub fn miner(share: f64) -> NodeClass {
    NodeClass::Miner { hashrate_share: share }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// One-sided paired t-test of `mean(a - b) > 0` at level `conf`.
/// Returns (t statistic, critical value).
pub fn paired_t(a: &[f64], b: &[f64], conf: f64) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let se = (sample_var(&d) / n).sqrt();
    let t = if se == 0.0 { if mean(&d) > 0.0 { f64::INFINITY } else { 0.0 } } else { mean(&d) / se };
    let crit = StudentsT::new(0.0, 1.0, n - 1.0).unwrap().inverse_cdf(conf);
    (t, crit)
}

/// One-sided Welch test of `mean(a) > mean(b)`.
pub fn welch_t(a: &[f64], b: &[f64], conf: f64) -> (f64, f64) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_var(a) / na, sample_var(b) / nb);
    let se = (va + vb).sqrt();
    let t = (mean(a) - mean(b)) / se;
    let df = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let crit = StudentsT::new(0.0, 1.0, df).unwrap().inverse_cdf(conf);
    (t, crit)
}
