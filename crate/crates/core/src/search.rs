//! Exact constrained selection of one (subnet, bitwidth) per block.
//!
//! The objective is the sum of the chosen per-block losses, accumulated left
//! to right in block order; size and latency totals are additive budgets.
//! Candidates of each block are ordered by (loss, size, latency, bitwidth,
//! subnet id) and selections are compared lexicographically by candidate
//! position, so among selections with equal objective the first one in
//! that order wins. Branch-and-bound and brute force share this rule and
//! therefore return identical selections.

use std::cmp::Ordering;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lut::{BlockLut, LutEntry};
use crate::pareto::{Metric, MetricSet, ParetoFront};

/// Default refusal threshold for exhaustive enumeration.
pub const DEFAULT_BRUTE_FORCE_CAP: u128 = 200_000_000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchConstraints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_total_size_bits: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_total_latency_us: Option<f64>,
    /// Admitted bitwidths; `None` admits all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bitwidths: Option<Vec<u8>>,
}

impl SearchConstraints {
    pub fn unconstrained() -> Self {
        Self::default()
    }

    pub fn with_size(mut self, bits: u64) -> Self {
        self.max_total_size_bits = Some(bits);
        self
    }

    pub fn with_latency(mut self, us: f64) -> Self {
        self.max_total_latency_us = Some(us);
        self
    }

    pub fn with_bitwidths(mut self, bits: Vec<u8>) -> Self {
        self.bitwidths = Some(bits);
        self
    }

    pub fn active_metrics(&self) -> MetricSet {
        let mut m = Vec::new();
        if self.max_total_size_bits.is_some() {
            m.push(Metric::Size);
        }
        if self.max_total_latency_us.is_some() {
            m.push(Metric::Latency);
        }
        MetricSet::new(m)
    }
}

fn candidate_order(a: &LutEntry, b: &LutEntry) -> Ordering {
    a.loss
        .total_cmp(&b.loss)
        .then(a.size_bits.cmp(&b.size_bits))
        .then(match (a.latency_us, b.latency_us) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (x, y) => x.is_none().cmp(&y.is_none()),
        })
        .then(a.bitwidth.cmp(&b.bitwidth))
        .then(a.subnet_id.cmp(&b.subnet_id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCandidates {
    pub block_index: usize,
    /// Canonical candidate order.
    pub entries: Vec<LutEntry>,
}

/// Per-block candidate lists ready for search.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub blocks: Vec<BlockCandidates>,
    /// Metrics the lists were Pareto-pruned on; `None` for full LUTs.
    pub pruned_on: Option<MetricSet>,
    /// Lists were also pruned across bitwidths; bitwidth filters are unsafe.
    pub cross_bitwidth: bool,
    /// Fixed size of the non-searchable part, added to every size total.
    pub base_size_bits: u64,
    /// Manifest hashes of the artifacts the lists came from.
    pub provenance: Vec<String>,
}

fn assemble(
    mut per_block: Vec<(usize, Vec<LutEntry>)>,
    filter: Option<&[u8]>,
) -> Result<Vec<BlockCandidates>> {
    per_block.sort_by_key(|(b, _)| *b);
    for (i, (b, _)) in per_block.iter().enumerate() {
        if *b != i {
            return Err(Error::Validation(format!("candidate tables do not cover block {i}")));
        }
    }
    per_block
        .into_iter()
        .map(|(block_index, mut entries)| {
            if let Some(bits) = filter {
                entries.retain(|e| bits.contains(&e.bitwidth));
            }
            if entries.is_empty() {
                return Err(Error::EmptyBlock { block: block_index });
            }
            entries.sort_by(candidate_order);
            Ok(BlockCandidates { block_index, entries })
        })
        .collect()
}

fn group_by_block<'a, I>(tables: I) -> Vec<(usize, Vec<LutEntry>)>
where
    I: IntoIterator<Item = (usize, &'a [LutEntry])>,
{
    let mut groups: Vec<(usize, Vec<LutEntry>)> = Vec::new();
    for (block, entries) in tables {
        match groups.iter_mut().find(|(b, _)| *b == block) {
            Some((_, v)) => v.extend_from_slice(entries),
            None => groups.push((block, entries.to_vec())),
        }
    }
    groups
}

/// Unions each block's fronts over the admitted bitwidths.
pub fn concat_block_candidates(fronts: &[ParetoFront], filter: Option<&[u8]>) -> Result<CandidateSet> {
    let first = fronts.first().ok_or_else(|| Error::Validation("no fronts given".into()))?;
    if fronts.iter().any(|f| f.metrics != first.metrics) {
        return Err(Error::Validation("fronts were pruned on different metrics".into()));
    }
    let cross_bitwidth = fronts.iter().any(|f| f.cross_bitwidth);
    let groups = group_by_block(fronts.iter().map(|f| (f.block_index, f.entries.as_slice())));
    let set = CandidateSet {
        blocks: assemble(groups, None)?,
        pruned_on: Some(first.metrics.clone()),
        cross_bitwidth,
        base_size_bits: 0,
        provenance: Vec::new(),
    };
    match filter {
        Some(bits) => set.filtered(bits),
        None => Ok(set),
    }
}

/// Unpruned candidates straight from the LUTs.
pub fn candidates_from_luts(luts: &[BlockLut], filter: Option<&[u8]>) -> Result<CandidateSet> {
    let groups = group_by_block(luts.iter().map(|l| (l.block_index, l.entries.as_slice())));
    Ok(CandidateSet {
        blocks: assemble(groups, filter)?,
        pruned_on: None,
        cross_bitwidth: false,
        base_size_bits: 0,
        provenance: Vec::new(),
    })
}

impl CandidateSet {
    pub fn with_base_size_bits(mut self, bits: u64) -> Self {
        self.base_size_bits = bits;
        self
    }

    pub fn with_provenance(mut self, hashes: Vec<String>) -> Self {
        self.provenance = hashes;
        self
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Product of the per-block list lengths.
    pub fn combinations(&self) -> u128 {
        self.blocks.iter().fold(1u128, |acc, b| acc.saturating_mul(b.entries.len() as u128))
    }

    /// Keeps only candidates at the admitted bitwidths.
    pub fn filtered(&self, bits: &[u8]) -> Result<Self> {
        if self.cross_bitwidth {
            let present = self.blocks.iter().flat_map(|b| b.entries.iter().map(|e| e.bitwidth));
            if present.into_iter().any(|b| !bits.contains(&b)) {
                return Err(Error::Incompatible(
                    "fronts were pruned across bitwidths; restricting bitwidths could lose the optimum".into(),
                ));
            }
        }
        let groups = self.blocks.iter().map(|b| (b.block_index, b.entries.clone())).collect();
        Ok(Self { blocks: assemble(groups, Some(bits))?, ..self.clone() })
    }

    fn prepared(&self, constraints: &SearchConstraints) -> Result<Problem> {
        let active = constraints.active_metrics();
        if let Some(pruned) = &self.pruned_on {
            if !pruned.covers(&active) {
                return Err(Error::Incompatible(format!(
                    "candidates were pruned on {{{pruned}}} but the query constrains {{{active}}}"
                )));
            }
        }
        let filtered;
        let set = match &constraints.bitwidths {
            Some(bits) => {
                filtered = self.filtered(bits)?;
                &filtered
            }
            None => self,
        };
        Problem::new(set, constraints)
    }
}

/// One block's pick in a search result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub block: usize,
    pub subnet_id: u64,
    pub bitwidth: u8,
    pub loss: f64,
    pub size_bits: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub choices: Vec<Choice>,
    pub objective_loss: f64,
    /// Includes the base size of the non-searchable part.
    pub total_size_bits: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_latency_us: Option<f64>,
    pub constraints: SearchConstraints,
    #[serde(default)]
    pub provenance: Vec<String>,
}

impl SearchResult {
    /// `b<i>=<subnet>@w<bits>` per block, separated by `;`.
    pub fn selection_label(&self) -> String {
        self.choices
            .iter()
            .map(|c| format!("b{}={}@w{}", c.block, c.subnet_id, c.bitwidth))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn same_selection(&self, other: &SearchResult) -> bool {
        self.choices.len() == other.choices.len()
            && self
                .choices
                .iter()
                .zip(&other.choices)
                .all(|(a, b)| (a.block, a.subnet_id, a.bitwidth) == (b.block, b.subnet_id, b.bitwidth))
    }
}

/// Flattened search instance.
struct Problem {
    set: CandidateSet,
    loss: Vec<Vec<f64>>,
    size: Vec<Vec<u64>>,
    latency: Vec<Vec<f64>>,
    /// Budget left for the searchable blocks after the base size.
    size_budget: Option<u64>,
    latency_budget: Option<f64>,
    min_loss_after: Vec<f64>,
    min_size_after: Vec<u64>,
    min_latency_after: Vec<f64>,
    constraints: SearchConstraints,
}

/// Relative allowance covering rounding differences between a bound and
/// the left-to-right sum it bounds.
fn slack(n: usize, value: f64) -> f64 {
    4.0 * (n as f64 + 1.0) * f64::EPSILON * value.abs()
}

fn suffix<T: Copy>(per_block: &[T], zero: T, add: impl Fn(T, T) -> T) -> Vec<T> {
    let mut out = vec![zero; per_block.len() + 1];
    for k in (0..per_block.len()).rev() {
        out[k] = add(per_block[k], out[k + 1]);
    }
    out
}

impl Problem {
    fn new(set: &CandidateSet, constraints: &SearchConstraints) -> Result<Problem> {
        let set = set.clone();
        if set.blocks.is_empty() {
            return Err(Error::Validation("search needs at least one block".into()));
        }
        if let Some(b) = set.blocks.iter().find(|b| b.entries.is_empty()) {
            return Err(Error::EmptyBlock { block: b.block_index });
        }
        let use_latency = constraints.max_total_latency_us.is_some();
        if use_latency {
            if let Some((b, e)) = set
                .blocks
                .iter()
                .flat_map(|b| b.entries.iter().map(move |e| (b.block_index, e)))
                .find(|(_, e)| e.latency_us.is_none())
            {
                return Err(Error::Validation(format!(
                    "latency constraint given but block {b} subnet {} (w{}) has no latency",
                    e.subnet_id, e.bitwidth
                )));
            }
        }
        let loss: Vec<Vec<f64>> = set.blocks.iter().map(|b| b.entries.iter().map(|e| e.loss).collect()).collect();
        let size: Vec<Vec<u64>> = set.blocks.iter().map(|b| b.entries.iter().map(|e| e.size_bits).collect()).collect();
        let latency: Vec<Vec<f64>> = set
            .blocks
            .iter()
            .map(|b| b.entries.iter().map(|e| e.latency_us.unwrap_or(0.0)).collect())
            .collect();

        let min_loss: Vec<f64> = loss.iter().map(|v| v.iter().copied().fold(f64::INFINITY, f64::min)).collect();
        let min_size: Vec<u64> = size.iter().map(|v| *v.iter().min().expect("non-empty")).collect();
        let min_latency: Vec<f64> = latency.iter().map(|v| v.iter().copied().fold(f64::INFINITY, f64::min)).collect();

        if let Some(budget) = constraints.max_total_size_bits {
            let total = set.base_size_bits + min_size.iter().sum::<u64>();
            if total > budget {
                return Err(Error::Infeasible {
                    metric: "size_bits".into(),
                    budget: budget as f64,
                    total: total as f64,
                    per_block: min_size.iter().map(|&s| s as f64).collect(),
                });
            }
        }
        if let Some(budget) = constraints.max_total_latency_us {
            let total: f64 = min_latency.iter().sum();
            if total - slack(min_latency.len(), total) > budget {
                return Err(Error::Infeasible {
                    metric: "latency_us".into(),
                    budget,
                    total,
                    per_block: min_latency.clone(),
                });
            }
        }
        Ok(Problem {
            size_budget: constraints.max_total_size_bits.map(|b| b - set.base_size_bits),
            latency_budget: constraints.max_total_latency_us,
            min_loss_after: suffix(&min_loss, 0.0, |a, b| a + b),
            min_size_after: suffix(&min_size, 0, |a, b| a + b),
            min_latency_after: suffix(&min_latency, 0.0, |a, b| a + b),
            loss,
            size,
            latency,
            constraints: constraints.clone(),
            set,
        })
    }

    fn n(&self) -> usize {
        self.loss.len()
    }

    #[inline]
    fn feasible(&self, size: u64, latency: f64) -> bool {
        self.size_budget.is_none_or(|b| size <= b) && self.latency_budget.is_none_or(|b| latency <= b)
    }

    fn result(&self, selection: &[usize]) -> SearchResult {
        let mut objective = 0.0;
        let mut size = self.set.base_size_bits;
        let mut latency = Some(0.0);
        let choices = selection
            .iter()
            .zip(&self.set.blocks)
            .map(|(&i, b)| {
                let e = &b.entries[i];
                objective += e.loss;
                size += e.size_bits;
                latency = latency.zip(e.latency_us).map(|(a, x)| a + x);
                Choice {
                    block: b.block_index,
                    subnet_id: e.subnet_id,
                    bitwidth: e.bitwidth,
                    loss: e.loss,
                    size_bits: e.size_bits,
                    latency_us: e.latency_us,
                }
            })
            .collect();
        SearchResult {
            choices,
            objective_loss: objective,
            total_size_bits: size,
            total_latency_us: latency,
            constraints: self.constraints.clone(),
            provenance: self.set.provenance.clone(),
        }
    }

    fn finish(&self, best: Incumbent) -> Result<SearchResult> {
        match best.selection {
            Some(sel) => Ok(self.result(&sel)),
            None => Err(Error::InfeasibleJoint),
        }
    }
}

#[derive(Debug, Clone)]
struct Incumbent {
    objective: f64,
    selection: Option<Vec<usize>>,
}

impl Incumbent {
    fn empty() -> Self {
        Self { objective: f64::INFINITY, selection: None }
    }
}

struct BranchAndBound<'p> {
    p: &'p Problem,
    /// Best objective found by any worker (f64 bits; objectives are >= 0).
    shared: Option<&'p AtomicU64>,
}

impl BranchAndBound<'_> {
    fn visit(&self, k: usize, loss: f64, size: u64, latency: f64, sel: &mut Vec<usize>, best: &mut Incumbent) {
        let p = self.p;
        let n = p.n();
        if k == n {
            if p.feasible(size, latency) && loss < best.objective {
                best.objective = loss;
                best.selection = Some(sel.clone());
                if let Some(shared) = self.shared {
                    shared.fetch_min(loss.to_bits(), AtomicOrdering::Relaxed);
                }
            }
            return;
        }
        let rest_loss = p.min_loss_after[k + 1];
        let rest_size = p.min_size_after[k + 1];
        let rest_latency = p.min_latency_after[k + 1];
        for i in 0..p.loss[k].len() {
            let l = loss + p.loss[k][i];
            let bound = l + rest_loss;
            let bound = bound - slack(n, bound);
            // candidates are sorted by loss, so every later one is bounded too
            if bound >= best.objective {
                break;
            }
            if let Some(shared) = self.shared {
                if bound > f64::from_bits(shared.load(AtomicOrdering::Relaxed)) {
                    break;
                }
            }
            let s = size + p.size[k][i];
            if p.size_budget.is_some_and(|b| s + rest_size > b) {
                continue;
            }
            let t = latency + p.latency[k][i];
            if let Some(b) = p.latency_budget {
                let lower = t + rest_latency;
                if lower - slack(n, lower) > b {
                    continue;
                }
            }
            sel.push(i);
            self.visit(k + 1, l, s, t, sel, best);
            sel.pop();
        }
    }
}

/// Minimum-loss candidate of every block.
pub fn unconstrained_best(candidates: &CandidateSet) -> Result<SearchResult> {
    let p = Problem::new(candidates, &SearchConstraints::unconstrained())?;
    Ok(p.result(&vec![0; p.n()]))
}

/// Exact depth-first branch-and-bound over blocks in index order.
pub fn branch_and_bound_search(candidates: &CandidateSet, constraints: &SearchConstraints) -> Result<SearchResult> {
    let p = candidates.prepared(constraints)?;
    let mut best = Incumbent::empty();
    let mut sel = Vec::with_capacity(p.n());
    BranchAndBound { p: &p, shared: None }.visit(0, 0.0, 0, 0.0, &mut sel, &mut best);
    p.finish(best)
}

/// Branch-and-bound with the first block's candidates spread over the rayon
/// pool; returns exactly what [`branch_and_bound_search`] returns.
pub fn parallel_branch_and_bound_search(
    candidates: &CandidateSet,
    constraints: &SearchConstraints,
) -> Result<SearchResult> {
    let p = candidates.prepared(constraints)?;
    let shared = AtomicU64::new(f64::INFINITY.to_bits());
    let n = p.n();
    let per_root: Vec<Incumbent> = (0..p.loss[0].len())
        .into_par_iter()
        .map(|i| {
            let mut best = Incumbent::empty();
            let bound = p.loss[0][i] + p.min_loss_after[1];
            if bound - slack(n, bound) > f64::from_bits(shared.load(AtomicOrdering::Relaxed)) {
                return best;
            }
            let s = p.size[0][i];
            let t = p.latency[0][i];
            if p.size_budget.is_some_and(|b| s + p.min_size_after[1] > b) {
                return best;
            }
            let mut sel = vec![i];
            let bb = BranchAndBound { p: &p, shared: Some(&shared) };
            bb.visit(1, p.loss[0][i], s, t, &mut sel, &mut best);
            best
        })
        .collect();
    // earliest root wins ties, matching the serial visiting order
    let best = per_root
        .into_iter()
        .fold(Incumbent::empty(), |acc, r| if r.objective < acc.objective { r } else { acc });
    p.finish(best)
}

/// Exhaustive enumeration in canonical order; refuses instances with more
/// than `cap` combinations.
pub fn brute_force_search_capped(
    candidates: &CandidateSet,
    constraints: &SearchConstraints,
    cap: u128,
) -> Result<SearchResult> {
    let combinations = candidates.combinations();
    if combinations > cap {
        return Err(Error::CapExceeded { combinations, cap });
    }
    let p = candidates.prepared(constraints)?;
    let mut best = Incumbent::empty();
    let mut sel = Vec::with_capacity(p.n());
    enumerate(&p, 0, 0.0, 0, 0.0, &mut sel, &mut best);
    p.finish(best)
}

pub fn brute_force_search(candidates: &CandidateSet, constraints: &SearchConstraints) -> Result<SearchResult> {
    brute_force_search_capped(candidates, constraints, DEFAULT_BRUTE_FORCE_CAP)
}

fn enumerate(p: &Problem, k: usize, loss: f64, size: u64, latency: f64, sel: &mut Vec<usize>, best: &mut Incumbent) {
    let last = k + 1 == p.n();
    let (ls, ss, ts) = (&p.loss[k], &p.size[k], &p.latency[k]);
    for i in 0..ls.len() {
        let l = loss + ls[i];
        let s = size + ss[i];
        let t = latency + ts[i];
        if last {
            if p.feasible(s, t) && l < best.objective {
                sel.push(i);
                best.objective = l;
                best.selection = Some(sel.clone());
                sel.pop();
            }
        } else {
            sel.push(i);
            enumerate(p, k + 1, l, s, t, sel, best);
            sel.pop();
        }
    }
}

/// Budgets of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub max_size_bits: Option<u64>,
    pub max_latency_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepOutcome {
    Found(SearchResult),
    Infeasible(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub budget: Budget,
    pub outcome: SweepOutcome,
}

impl SweepPoint {
    pub fn result(&self) -> Option<&SearchResult> {
        match &self.outcome {
            SweepOutcome::Found(r) => Some(r),
            SweepOutcome::Infeasible(_) => None,
        }
    }
}

/// `lo:hi:steps` as `steps` evenly spaced values from `lo` to `hi`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Validation(format!("grid {spec:?} must look like lo:hi:steps"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let steps: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if steps == 0 || !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(bad());
    }
    if steps == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect())
}

/// One exact search per grid point (the cartesian product of the given
/// grids), ordered by ascending budget. Infeasible points are recorded.
pub fn sweep(
    candidates: &CandidateSet,
    size_grid: &[u64],
    latency_grid: &[f64],
    bitwidths: Option<&[u8]>,
) -> Result<Vec<SweepPoint>> {
    if size_grid.is_empty() && latency_grid.is_empty() {
        return Err(Error::Validation("sweep needs a non-empty budget grid".into()));
    }
    let sizes: Vec<Option<u64>> = if size_grid.is_empty() { vec![None] } else { size_grid.iter().copied().map(Some).collect() };
    let lats: Vec<Option<f64>> = if latency_grid.is_empty() { vec![None] } else { latency_grid.iter().copied().map(Some).collect() };
    let mut budgets: Vec<Budget> = sizes
        .iter()
        .flat_map(|&s| lats.iter().map(move |&l| Budget { max_size_bits: s, max_latency_us: l }))
        .collect();
    budgets.sort_by(|a, b| {
        a.max_size_bits
            .cmp(&b.max_size_bits)
            .then(a.max_latency_us.unwrap_or(0.0).total_cmp(&b.max_latency_us.unwrap_or(0.0)))
    });
    budgets
        .into_par_iter()
        .map(|budget| {
            let constraints = SearchConstraints {
                max_total_size_bits: budget.max_size_bits,
                max_total_latency_us: budget.max_latency_us,
                bitwidths: bitwidths.map(<[u8]>::to_vec),
            };
            let outcome = match branch_and_bound_search(candidates, &constraints) {
                Ok(r) => SweepOutcome::Found(r),
                Err(e) if e.is_infeasible() => SweepOutcome::Infeasible(e.to_string()),
                Err(e) => return Err(e),
            };
            Ok(SweepPoint { budget, outcome })
        })
        .collect()
}

/// Feasible sweep results not dominated in (objective, size, latency);
/// repeated selections are reported once, at their smallest budget.
pub fn non_dominated_results(points: &[SweepPoint]) -> Vec<&SweepPoint> {
    let found: Vec<&SweepPoint> = points.iter().filter(|p| p.result().is_some()).collect();
    let key = |r: &SearchResult| (r.objective_loss, r.total_size_bits as f64, r.total_latency_us.unwrap_or(0.0));
    let dominated = |a: &SearchResult, b: &SearchResult| {
        let (x, y) = (key(a), key(b));
        x.0 <= y.0 && x.1 <= y.1 && x.2 <= y.2 && (x.0 < y.0 || x.1 < y.1 || x.2 < y.2)
    };
    let mut out: Vec<&SweepPoint> = Vec::new();
    for p in &found {
        let r = p.result().expect("feasible");
        if found.iter().any(|q| dominated(q.result().expect("feasible"), r)) {
            continue;
        }
        if out.iter().any(|q| q.result().expect("feasible").same_selection(r)) {
            continue;
        }
        out.push(p);
    }
    out
}
