//! Blocks, chain views, fork choice and the finality formulas.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::PolicyState;
use crate::rng::{stream, stream_rng};
use crate::surplus::TxClass;
use crate::topology::NodeId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub u32);

impl BlockId {
    pub const GENESIS: BlockId = BlockId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Work carried by every block; difficulty is flat.
pub const BLOCK_WORK: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    /// `None` only for genesis.
    pub parent: Option<BlockId>,
    pub height: u64,
    /// `None` only for genesis.
    pub producer: Option<NodeId>,
    pub work: f64,
    pub consensus_valid: bool,
    pub policy_tag: Option<PolicyState>,
    pub tx_class_counts: BTreeMap<TxClass, u32>,
}

#[derive(Debug, Error, PartialEq)]
pub enum LedgerError {
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("block work must be positive and finite (got {0})")]
    InvalidWork(f64),
}

pub type Result<T> = std::result::Result<T, LedgerError>;

/// Append-only block store. Ids are dense and assigned in insertion order,
/// so a parent always has a smaller id than its children.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockTree {
    blocks: Vec<Block>,
    chain_work: Vec<f64>,
}

impl Default for BlockTree {
    fn default() -> Self {
        Self::new()
    }
}

impl BlockTree {
    pub fn new() -> Self {
        let genesis = Block {
            id: BlockId::GENESIS,
            parent: None,
            height: 0,
            producer: None,
            work: BLOCK_WORK,
            consensus_valid: true,
            policy_tag: None,
            tx_class_counts: BTreeMap::new(),
        };
        BlockTree { blocks: vec![genesis], chain_work: vec![BLOCK_WORK] }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn get(&self, id: BlockId) -> Result<&Block> {
        self.blocks.get(id.index()).ok_or(LedgerError::UnknownBlock(id))
    }

    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id.index()]
    }

    pub fn contains(&self, id: BlockId) -> bool {
        id.index() < self.blocks.len()
    }

    /// Append a child of `parent`; returns the new id.
    pub fn push(
        &mut self,
        parent: BlockId,
        producer: NodeId,
        work: f64,
        consensus_valid: bool,
        policy_tag: Option<PolicyState>,
        tx_class_counts: BTreeMap<TxClass, u32>,
    ) -> Result<BlockId> {
        if !(work > 0.0 && work.is_finite()) {
            return Err(LedgerError::InvalidWork(work));
        }
        let height = self.get(parent)?.height + 1;
        let id = BlockId(self.blocks.len() as u32);
        self.chain_work.push(self.chain_work[parent.index()] + work);
        self.blocks.push(Block {
            id,
            parent: Some(parent),
            height,
            producer: Some(producer),
            work,
            consensus_valid,
            policy_tag,
            tx_class_counts,
        });
        Ok(id)
    }

    /// Cumulative work from genesis to `id` inclusive.
    pub fn chain_work(&self, id: BlockId) -> f64 {
        self.chain_work[id.index()]
    }

    /// Cumulative work recomputed by walking the ancestor path.
    pub fn recompute_chain_work(&self, id: BlockId) -> f64 {
        self.ancestors(id).map(|b| self.block(b).work).sum()
    }

    /// `id`, its parent, ..., genesis.
    pub fn ancestors(&self, id: BlockId) -> impl Iterator<Item = BlockId> + '_ {
        std::iter::successors(Some(id), move |b| self.blocks[b.index()].parent)
    }

    /// Genesis-first path to `id`.
    pub fn path(&self, id: BlockId) -> Vec<BlockId> {
        let mut p: Vec<BlockId> = self.ancestors(id).collect();
        p.reverse();
        p
    }

    pub fn ancestor_at_height(&self, id: BlockId, height: u64) -> Option<BlockId> {
        let mut cur = id;
        loop {
            let b = &self.blocks[cur.index()];
            match b.height.cmp(&height) {
                Ordering::Equal => return Some(cur),
                Ordering::Less => return None,
                Ordering::Greater => cur = b.parent?,
            }
        }
    }

    /// True if `a` lies on the path from genesis to `b` (or equals it).
    pub fn is_ancestor_or_equal(&self, a: BlockId, b: BlockId) -> bool {
        let ha = self.blocks[a.index()].height;
        self.ancestor_at_height(b, ha) == Some(a)
    }

    /// True if every block on the path to `id` is consensus-valid.
    pub fn chain_is_valid(&self, id: BlockId) -> bool {
        self.ancestors(id).all(|b| self.blocks[b.index()].consensus_valid)
    }

    pub fn children(&self, id: BlockId) -> impl Iterator<Item = BlockId> + '_ {
        self.blocks[id.index() + 1..]
            .iter()
            .filter(move |b| b.parent == Some(id))
            .map(|b| b.id)
    }
}

/// A node's local view: its tip, the tip's cumulative work and when it saw
/// each block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainView {
    pub tip: BlockId,
    pub cumulative_work: f64,
    pub first_seen_tick: BTreeMap<BlockId, u64>,
}

impl ChainView {
    pub fn genesis() -> Self {
        ChainView {
            tip: BlockId::GENESIS,
            cumulative_work: BLOCK_WORK,
            first_seen_tick: BTreeMap::from([(BlockId::GENESIS, 0)]),
        }
    }

    pub fn tip_first_seen(&self) -> u64 {
        self.first_seen_tick.get(&self.tip).copied().unwrap_or(u64::MAX)
    }
}

/// Fork-choice order on `(work, first_seen, id)`: `Greater` means `a` is
/// preferred. More work wins, then earlier first sighting, then smaller id.
pub fn fork_choice_cmp(a: (f64, u64, BlockId), b: (f64, u64, BlockId)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then_with(|| b.1.cmp(&a.1))
        .then_with(|| b.2.cmp(&a.2))
}

/// Pick the preferred view by cumulative work with deterministic ties.
pub fn select_best_tip(candidates: &[ChainView]) -> Result<&ChainView> {
    candidates
        .iter()
        .reduce(|best, c| {
            let key = |v: &ChainView| (v.cumulative_work, v.tip_first_seen(), v.tip);
            if fork_choice_cmp(key(c), key(best)) == Ordering::Greater {
                c
            } else {
                best
            }
        })
        .ok_or(LedgerError::EmptyCandidates)
}

fn check_q(q: f64) -> Result<()> {
    if !(0.0..0.5).contains(&q) {
        return Err(LedgerError::Domain(format!("attacker share q must lie in [0, 0.5) (got {q})")));
    }
    Ok(())
}

/// Probability that an attacker with hashrate share `q` ever catches up
/// with an honest chain that is `delta_h` blocks ahead of the fork point.
///
/// While the honest network mines `delta_h` blocks the attacker mines a
/// negative-binomial number `k` of blocks; from a deficit `delta_h - k` the
/// attacker then draws level with probability `(q/p)^(delta_h - k)`:
///
/// ```text
/// P = sum_{k >= z} C(k+z-1, k) p^z q^k  +  sum_{k < z} C(k+z-1, k) q^z p^k
/// ```
///
/// Both sums are non-negative, so the result keeps full relative precision
/// deep into the tail.
pub fn reorg_probability_bound(q: f64, delta_h: u32) -> Result<f64> {
    check_q(q)?;
    if delta_h == 0 {
        return Ok(1.0);
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    let z = delta_h as f64;
    let p = 1.0 - q;

    // b_k = C(k+z-1, k) q^z p^k for k < z.
    let mut b = q.powf(z);
    let mut caught_from_behind = 0.0;
    for k in 0..delta_h {
        if k > 0 {
            b *= (k as f64 + z - 1.0) / k as f64 * p;
        }
        caught_from_behind += b;
    }

    // a_k = C(k+z-1, k) p^z q^k; tail k >= z, ratio a_{k+1}/a_k -> q.
    let mut a = p.powf(z);
    for k in 1..=delta_h {
        a *= (k as f64 + z - 1.0) / k as f64 * q;
    }
    let mut ahead = 0.0;
    let mut k = delta_h as f64;
    loop {
        ahead += a;
        let next = a * (k + z) / (k + 1.0) * q;
        k += 1.0;
        if next <= ahead * 1e-17 || next == 0.0 {
            break;
        }
        a = next;
    }
    Ok((ahead + caught_from_behind).min(1.0))
}

/// `1 - reorg_probability_bound(q, delta_h)`.
pub fn finality_probability(q: f64, delta_h: u32) -> Result<f64> {
    Ok(1.0 - reorg_probability_bound(q, delta_h)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InertiaFit {
    /// Decay rate: negated slope of log-frequency against depth.
    pub lambda: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Points with zero (or negative) frequency left out of the fit.
    pub dropped_zero: usize,
}

/// Least-squares fit of `ln(freq) = intercept - lambda * delta_h`.
pub fn fit_inertia_rate(points: &[(f64, f64)]) -> Result<InertiaFit> {
    let kept: Vec<(f64, f64)> = points.iter().copied().filter(|&(_, f)| f > 0.0).collect();
    let dropped = points.len() - kept.len();
    if dropped > 0 {
        log::warn!("fit_inertia_rate: dropped {dropped} zero-frequency point(s)");
    }
    if kept.len() < 3 {
        return Err(LedgerError::DegenerateData(format!(
            "need at least 3 positive-frequency points, have {}",
            kept.len()
        )));
    }
    if kept.iter().all(|&(_, f)| f == kept[0].1) {
        return Err(LedgerError::DegenerateData("all frequencies are equal".into()));
    }
    let n = kept.len() as f64;
    let mx = kept.iter().map(|p| p.0).sum::<f64>() / n;
    let my = kept.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxx: f64 = kept.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(LedgerError::DegenerateData("all depths are equal".into()));
    }
    let sxy: f64 = kept.iter().map(|p| (p.0 - mx) * (p.1.ln() - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = kept.iter().map(|p| (p.1.ln() - my).powi(2)).sum();
    let ss_res: f64 = kept
        .iter()
        .map(|p| (p.1.ln() - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(InertiaFit { lambda: -slope, intercept, r_squared, dropped_zero: dropped })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaceOutcome {
    pub races: u64,
    pub attacker_wins: u64,
}

impl RaceOutcome {
    pub fn frequency(&self) -> f64 {
        if self.races == 0 {
            0.0
        } else {
            self.attacker_wins as f64 / self.races as f64
        }
    }

    /// Binomial standard error of the win frequency.
    pub fn std_error(&self) -> f64 {
        let f = self.frequency();
        (f * (1.0 - f) / self.races.max(1) as f64).sqrt()
    }
}

/// Monte Carlo of private-chain races: each new block belongs to the
/// attacker with probability `q`. Once the honest chain has `delta_h`
/// blocks past the fork, the attacker wins if it has at least as many;
/// otherwise the deficit follows a biased walk that is absorbed at 0 (win)
/// or abandoned once reaching it is less likely than 1e-12.
pub fn simulate_races(q: f64, delta_h: u32, races: u64, seed: u64) -> Result<RaceOutcome> {
    check_q(q)?;
    let cap = if q == 0.0 {
        0
    } else {
        ((1e-12f64).ln() / (q / (1.0 - q)).ln()).ceil() as i64
    };
    let mut rng = stream_rng(seed, &[stream::RACE, q.to_bits(), delta_h as u64]);
    let mut wins = 0u64;
    for _ in 0..races {
        let mut honest = 0u32;
        let mut attacker = 0i64;
        while honest < delta_h {
            if rng.random::<f64>() < q {
                attacker += 1;
            } else {
                honest += 1;
            }
        }
        let mut deficit = delta_h as i64 - attacker;
        while deficit > 0 && deficit <= cap {
            if rng.random::<f64>() < q {
                deficit -= 1;
            } else {
                deficit += 1;
            }
        }
        if deficit <= 0 {
            wins += 1;
        }
    }
    Ok(RaceOutcome { races, attacker_wins: wins })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(tip: u32, work: f64, seen: u64) -> ChainView {
        ChainView {
            tip: BlockId(tip),
            cumulative_work: work,
            first_seen_tick: BTreeMap::from([(BlockId(tip), seen)]),
        }
    }

    #[test]
    fn best_tip_examples() {
        assert_eq!(select_best_tip(&[]), Err(LedgerError::EmptyCandidates));
        let one = [view(3, 4.0, 1)];
        assert_eq!(select_best_tip(&one).unwrap().tip, BlockId(3));
        let c = [view(1, 10.0, 5), view(2, 12.0, 3), view(3, 12.0, 4)];
        assert_eq!(select_best_tip(&c).unwrap().tip, BlockId(2));
        let tie = [view(9, 5.0, 2), view(4, 5.0, 2)];
        assert_eq!(select_best_tip(&tie).unwrap().tip, BlockId(4));
    }

    #[test]
    fn reorg_edge_cases() {
        assert_eq!(reorg_probability_bound(0.0, 1).unwrap(), 0.0);
        assert_eq!(reorg_probability_bound(0.3, 0).unwrap(), 1.0);
        assert_eq!(finality_probability(0.0, 1).unwrap(), 1.0);
        assert_eq!(finality_probability(0.3, 0).unwrap(), 0.0);
        assert!(reorg_probability_bound(0.5, 3).is_err());
        assert!(reorg_probability_bound(-0.1, 3).is_err());
    }

    #[test]
    fn reorg_single_block_closed_form() {
        // z = 1: sum_{k>=1} p q^k = q from the first term, plus q^1 p^0 = q.
        for &q in &[0.05, 0.2, 0.35, 0.45] {
            let got = reorg_probability_bound(q, 1).unwrap();
            assert!((got - 2.0 * q).abs() < 1e-12, "q={q}: {got}");
        }
    }

    #[test]
    fn reorg_is_strictly_decreasing() {
        for &q in &[0.01, 0.1, 0.2, 0.3, 0.45, 0.49] {
            let mut prev = reorg_probability_bound(q, 0).unwrap();
            for z in 1..=20 {
                let cur = reorg_probability_bound(q, z).unwrap();
                assert!(cur < prev, "q={q} z={z}: {cur} !< {prev}");
                assert!(cur > 0.0);
                prev = cur;
            }
        }
    }

    #[test]
    fn fit_exact_exponential() {
        let pts: Vec<(f64, f64)> = (0..8).map(|h| (h as f64, (-0.5 * h as f64).exp())).collect();
        let fit = fit_inertia_rate(&pts).unwrap();
        assert!((fit.lambda - 0.5).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fit_degenerate_inputs() {
        let flat = [(1.0, 0.2), (2.0, 0.2), (3.0, 0.2)];
        assert!(matches!(fit_inertia_rate(&flat), Err(LedgerError::DegenerateData(_))));
        let sparse = [(1.0, 0.2), (2.0, 0.0), (3.0, 0.05)];
        assert!(matches!(fit_inertia_rate(&sparse), Err(LedgerError::DegenerateData(_))));
        let with_zero = [(1.0, 0.2), (2.0, 0.1), (3.0, 0.05), (4.0, 0.0)];
        assert_eq!(fit_inertia_rate(&with_zero).unwrap().dropped_zero, 1);
    }

    #[test]
    fn tree_paths_and_work() {
        let mut t = BlockTree::new();
        let a = t.push(BlockId::GENESIS, NodeId(0), 1.0, true, None, BTreeMap::new()).unwrap();
        let b = t.push(a, NodeId(1), 1.0, true, None, BTreeMap::new()).unwrap();
        let c = t.push(a, NodeId(2), 2.5, false, None, BTreeMap::new()).unwrap();
        assert_eq!(t.block(b).height, 2);
        assert_eq!(t.chain_work(c), 4.5);
        assert_eq!(t.recompute_chain_work(c), 4.5);
        assert!(t.is_ancestor_or_equal(a, b));
        assert!(!t.is_ancestor_or_equal(b, c));
        assert!(!t.chain_is_valid(c));
        assert_eq!(t.path(b), vec![BlockId::GENESIS, a, b]);
        assert_eq!(t.children(a).collect::<Vec<_>>(), vec![b, c]);
        assert!(t.push(BlockId(99), NodeId(0), 1.0, true, None, BTreeMap::new()).is_err());
    }

    #[test]
    fn race_sim_tracks_formula() {
        let out = simulate_races(0.2, 3, 200_000, 5).unwrap();
        let exact = reorg_probability_bound(0.2, 3).unwrap();
        assert!((out.frequency() - exact).abs() < 4.0 * out.std_error());
    }
}
