use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::trace::{divergence_factors, divergence_probability, At, MetricsFrame, NodeFilter, SimTrace};
use crate::adversary::FaultRecord;
use crate::ledger::BlockId;
use crate::topology::{ClassKind, NodeId};

/// Column dictionary shared by every trace CSV.
pub const TRACE_COLUMNS: &str = "tick,event_kind,node_id,block_id,parent_id,height,producer,consensus_valid,policy,delta_i,D,delta_spv,delta_hfn,fault_kind,caused_deviation";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-event trace CSV. Each tick contributes its events, its adversarial
/// deliveries (`fault` rows) and one `frame` row with the tick's metrics.
pub fn write_trace_csv<W: Write>(mut w: W, trace: &SimTrace) -> io::Result<()> {
    writeln!(w, "# config_hash={} seed={}", trace.config_hash, trace.seed)?;
    writeln!(w, "{TRACE_COLUMNS}")?;
    let frames: BTreeMap<u64, &MetricsFrame> = trace.frames.iter().map(|f| (f.tick, f)).collect();
    let mut faults: Vec<&FaultRecord> = trace.faults.iter().collect();
    faults.sort_by_key(|f| (f.tick, f.target, f.block_id));
    let mut faults = faults.into_iter().peekable();
    let mut events = trace.events.iter().peekable();

    let block_cols = |b: BlockId| -> String {
        let blk = trace.tree.block(b);
        format!("{},{},{},{},{}", b, opt(blk.parent), blk.height, opt(blk.producer), blk.consensus_valid)
    };
    let node_cols = |v: Option<NodeId>, f: Option<&MetricsFrame>| -> (String, String) {
        match (v, f) {
            (Some(v), Some(f)) => (f.policies[v.index()].to_string(), (f.delta(v) as u8).to_string()),
            _ => (String::new(), String::new()),
        }
    };
    let metric_cols = |f: Option<&MetricsFrame>| -> String {
        f.map(|f| format!("{},{},{}", f.divergence, f.delta_spv, f.delta_hfn)).unwrap_or_else(|| ",,".into())
    };

    let ticks: Vec<u64> = frames.keys().copied().chain(std::iter::once(u64::MAX)).collect();
    for tick in ticks {
        let frame = frames.get(&tick).copied();
        while let Some(e) = events.next_if(|e| e.tick <= tick) {
            let f = frames.get(&e.tick).copied();
            let (mut policy, delta) = node_cols(e.node, f);
            if e.node.is_none() {
                policy = opt(e.block.and_then(|b| trace.tree.block(b).policy_tag));
            }
            let blocks = e.block.map(block_cols).unwrap_or_else(|| ",,,,".into());
            writeln!(w, "{},{},{},{},{},{},{},,", e.tick, e.kind.name(), opt(e.node), blocks, policy, delta, metric_cols(f))?;
        }
        while let Some(r) = faults.next_if(|r| r.tick <= tick) {
            let f = frames.get(&r.tick).copied();
            let (policy, delta) = node_cols(Some(r.target), f);
            writeln!(
                w,
                "{},fault,{},{},{},{},{},{},{}",
                r.tick,
                r.target,
                block_cols(r.block_id),
                policy,
                delta,
                metric_cols(f),
                r.message_kind,
                r.caused_deviation
            )?;
        }
        if let Some(f) = frame {
            writeln!(w, "{},frame,,{},,,{},,", tick, block_cols(f.global_tip), metric_cols(Some(f)))?;
        }
    }
    Ok(())
}

/// Policy trajectory CSV: one row per node per tick.
pub fn write_policy_csv<W: Write>(mut w: W, trace: &SimTrace) -> io::Result<()> {
    writeln!(w, "# config_hash={} seed={}", trace.config_hash, trace.seed)?;
    writeln!(w, "tick,node_id,policy,is_redundant")?;
    for f in &trace.frames {
        for (i, p) in f.policies.iter().enumerate() {
            writeln!(w, "{},{},{},{}", f.tick, i, p, trace.redundant[i])?;
        }
    }
    Ok(())
}

/// Final metrics of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub config_hash: String,
    pub seed: u64,
    pub horizon: u64,
    pub blocks: usize,
    pub global_tip: u32,
    pub global_height: u64,
    pub delta_spv: f64,
    pub delta_hfn: f64,
    pub divergence: f64,
    pub isolated_entropy_bits: f64,
    pub p_delta_spv: f64,
    pub p_delta_hfn: f64,
    pub p_delta_miner: f64,
    pub faults: usize,
    pub deviating_faults: usize,
    pub reorgs: usize,
    pub rejections: usize,
    /// Rule-conflict and desynchronisation shares of non-miner divergence.
    pub rule_conflict: f64,
    pub desync: f64,
}

pub fn summarize(trace: &SimTrace) -> TraceSummary {
    let last = trace.frames.last().expect("trace has frames");
    let factors = divergence_factors(trace);
    let p = |k| divergence_probability(std::slice::from_ref(trace), &NodeFilter::Class(k), At::Horizon).unwrap_or(0.0);
    TraceSummary {
        config_hash: trace.config_hash.clone(),
        seed: trace.seed,
        horizon: last.tick,
        blocks: trace.tree.len(),
        global_tip: last.global_tip.0,
        global_height: trace.tree.block(last.global_tip).height,
        delta_spv: last.delta_spv,
        delta_hfn: last.delta_hfn,
        divergence: last.divergence,
        isolated_entropy_bits: last.isolated_entropy,
        p_delta_spv: p(ClassKind::Spv),
        p_delta_hfn: p(ClassKind::Hfn),
        p_delta_miner: p(ClassKind::Miner),
        faults: trace.faults.len(),
        deviating_faults: trace.faults.iter().filter(|f| f.caused_deviation).count(),
        reorgs: trace.reorgs.len(),
        rejections: trace.rejections.len(),
        rule_conflict: factors.rule_conflict,
        desync: factors.desync,
    }
}

pub fn write_summary_json<W: Write>(w: W, trace: &SimTrace) -> io::Result<()> {
    serde_json::to_writer_pretty(w, &summarize(trace)).map_err(io::Error::other)
}
