//! Randomized self-checks of the search: branch-and-bound against the
//! brute-force oracle, and pruned fronts against full LUTs.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lut::{BlockLut, LutEntry};
use crate::pareto::{merge_prune, prune_luts, Metric, MetricSet};
use crate::search::{
    branch_and_bound_search, brute_force_search_capped, candidates_from_luts, concat_block_candidates,
    parallel_branch_and_bound_search, SearchConstraints, SearchResult,
};

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub trials: usize,
    pub seed: u64,
    pub max_blocks: usize,
    /// Per block, after concatenating bitwidths.
    pub max_candidates: usize,
    /// Keeps each brute-force run tractable.
    pub max_combinations: u128,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { trials: 20, seed: 1, max_blocks: 4, max_candidates: 200, max_combinations: 5_000_000 }
    }
}

/// A random search problem: LUT tables for blocks `0..n` and a query.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub luts: Vec<BlockLut>,
    pub constraints: SearchConstraints,
}

fn per_block_limit(opts: &VerifyOptions, blocks: usize) -> usize {
    let root = (opts.max_combinations as f64).powf(1.0 / blocks as f64).floor() as usize;
    root.clamp(1, opts.max_candidates)
}

fn regroup(block: usize, entries: Vec<LutEntry>) -> Vec<BlockLut> {
    let mut bits: Vec<u8> = entries.iter().map(|e| e.bitwidth).collect();
    bits.sort_unstable();
    bits.dedup();
    bits.into_iter()
        .map(|b| {
            let mut es: Vec<LutEntry> = entries.iter().filter(|e| e.bitwidth == b).cloned().collect();
            es.sort_by_key(|e| e.subnet_id);
            BlockLut { block_index: block, bitwidth: b, entries: es }
        })
        .collect()
}

fn metric_range(luts: &[BlockLut], blocks: usize, value: impl Fn(&LutEntry) -> f64) -> (f64, f64) {
    (0..blocks).fold((0.0, 0.0), |(lo, hi), b| {
        let vals = luts.iter().filter(|l| l.block_index == b).flat_map(|l| l.entries.iter().map(&value));
        let (mn, mx) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, z), v| (a.min(v), z.max(v)));
        (lo + mn, hi + mx)
    })
}

/// A budget somewhere between slightly below the cheapest and slightly above
/// the most expensive total, so some draws are infeasible.
fn draw_budget(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random_range(-0.05..1.05);
    lo + u * (hi - lo)
}

fn draw_constraints(rng: &mut ChaCha8Rng, luts: &[BlockLut], blocks: usize) -> SearchConstraints {
    let has_latency = luts.iter().all(|l| l.entries.iter().all(|e| e.latency_us.is_some()));
    let mut c = SearchConstraints::unconstrained();
    let kind = rng.random_range(0..4);
    if kind & 1 == 1 || (kind == 2 && !has_latency) {
        let (lo, hi) = metric_range(luts, blocks, |e| e.size_bits as f64);
        c.max_total_size_bits = Some(draw_budget(rng, lo, hi).max(0.0).round() as u64);
    }
    if kind & 2 == 2 && has_latency {
        let (lo, hi) = metric_range(luts, blocks, |e| e.latency_us.unwrap_or(0.0));
        c.max_total_latency_us = Some(draw_budget(rng, lo, hi).max(0.0));
    }
    if rng.random_range(0..4) == 0 {
        let mut bits: Vec<u8> = luts.iter().map(|l| l.bitwidth).collect();
        bits.sort_unstable();
        bits.dedup();
        let keep = rng.random_range(1..=bits.len());
        bits.shuffle(rng);
        bits.truncate(keep);
        bits.sort_unstable();
        c.bitwidths = Some(bits);
    }
    c
}

/// Draws an instance whose blocks and candidates are random subsets of
/// `source` tables.
pub fn sample_instance(source: &[BlockLut], rng: &mut ChaCha8Rng, opts: &VerifyOptions) -> Result<Instance> {
    let mut available: Vec<usize> = source.iter().map(|l| l.block_index).collect();
    available.sort_unstable();
    available.dedup();
    if available.is_empty() {
        return Err(Error::Validation("no LUTs to sample from".into()));
    }
    let n = rng.random_range(1..=available.len().min(opts.max_blocks.max(1)));
    let picked: Vec<usize> = index::sample(rng, available.len(), n).into_iter().map(|i| available[i]).collect();
    let limit = per_block_limit(opts, n);
    let mut luts = Vec::new();
    for (new_index, &src) in picked.iter().enumerate() {
        let pool: Vec<&LutEntry> = source.iter().filter(|l| l.block_index == src).flat_map(|l| &l.entries).collect();
        if pool.is_empty() {
            return Err(Error::EmptyBlock { block: src });
        }
        let k = rng.random_range(1..=limit.min(pool.len()));
        let chosen: Vec<LutEntry> = index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i].clone()).collect();
        luts.extend(regroup(new_index, chosen));
    }
    let constraints = draw_constraints(rng, &luts, n);
    Ok(Instance { luts, constraints })
}

/// Fully synthetic instance with coarse values, so exact ties in loss, size
/// and latency are common.
pub fn random_instance(rng: &mut ChaCha8Rng, opts: &VerifyOptions) -> Instance {
    let n = rng.random_range(1..=opts.max_blocks.max(1));
    let limit = per_block_limit(opts, n);
    let bitwidths = [4u8, 6, 8];
    let mut luts = Vec::new();
    for b in 0..n {
        let k = rng.random_range(1..=limit);
        let entries: Vec<LutEntry> = (0..k)
            .map(|i| {
                let bits = bitwidths[rng.random_range(0..bitwidths.len())];
                let params: u64 = rng.random_range(1..=40);
                LutEntry {
                    subnet_id: i as u64,
                    bitwidth: bits,
                    loss: rng.random_range(0..64) as f64 / 16.0 + (8 - bits) as f64 / 8.0,
                    size_bits: params * bits as u64,
                    latency_us: Some(rng.random_range(1..=24) as f64 * 0.25),
                }
            })
            .collect();
        luts.extend(regroup(b, entries));
    }
    let constraints = draw_constraints(rng, &luts, n);
    Instance { luts, constraints }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub index: usize,
    pub candidates: Vec<usize>,
    pub pruned_candidates: Vec<usize>,
    pub constraints: SearchConstraints,
    /// Branch-and-bound (serial and parallel) equals brute force exactly.
    pub oracle_match: bool,
    /// Searching fronts gives the same optimal objective as full LUTs.
    pub pruning_match: bool,
    pub outcome: String,
    pub brute_force: Duration,
    pub branch_and_bound: Duration,
    pub pruned_branch_and_bound: Duration,
    pub detail: Option<String>,
}

impl TrialReport {
    pub fn passed(&self) -> bool {
        self.oracle_match && self.pruning_match
    }
}

fn same(a: &Result<SearchResult>, b: &Result<SearchResult>) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) => x == y,
        (Err(x), Err(y)) => x.to_string() == y.to_string(),
        _ => false,
    }
}

fn same_objective(a: &Result<SearchResult>, b: &Result<SearchResult>) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) => x.objective_loss == y.objective_loss,
        (Err(x), Err(y)) => x.kind() == y.kind(),
        _ => false,
    }
}

fn describe(r: &Result<SearchResult>) -> String {
    match r {
        Ok(r) => format!("loss={} size={} {}", r.objective_loss, r.total_size_bits, r.selection_label()),
        Err(e) => e.to_string(),
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

/// Runs every check on one instance.
pub fn run_trial(index: usize, inst: &Instance, opts: &VerifyOptions) -> Result<TrialReport> {
    let c = &inst.constraints;
    let full = candidates_from_luts(&inst.luts, None)?;
    let (bf, brute_force) = timed(|| brute_force_search_capped(&full, c, opts.max_combinations.max(full.combinations())));
    let (bb, branch_and_bound) = timed(|| branch_and_bound_search(&full, c));
    let par = parallel_branch_and_bound_search(&full, c);

    let mut metrics: Vec<Metric> = c.active_metrics().iter().collect();
    metrics.push(Metric::Size);
    let metrics = MetricSet::new(metrics);
    let fronts = prune_luts(&inst.luts, &metrics)?;
    let pruned = concat_block_candidates(&fronts, None)?;
    let (pb, pruned_branch_and_bound) = timed(|| branch_and_bound_search(&pruned, c));

    let mut detail = Vec::new();
    let oracle_match = same(&bf, &bb) && same(&bf, &par);
    if !oracle_match {
        detail.push(format!("oracle {} / bnb {} / parallel {}", describe(&bf), describe(&bb), describe(&par)));
    }
    let mut pruning_match = same_objective(&bf, &pb);
    if !pruning_match {
        detail.push(format!("full {} / fronts {}", describe(&bf), describe(&pb)));
    }
    if c.bitwidths.is_none() {
        let merged = concat_block_candidates(&merge_prune(&fronts)?, None)?;
        let mb = branch_and_bound_search(&merged, c);
        if !same_objective(&bf, &mb) {
            pruning_match = false;
            detail.push(format!("full {} / merged fronts {}", describe(&bf), describe(&mb)));
        }
    }
    Ok(TrialReport {
        index,
        candidates: full.blocks.iter().map(|b| b.entries.len()).collect(),
        pruned_candidates: pruned.blocks.iter().map(|b| b.entries.len()).collect(),
        constraints: c.clone(),
        oracle_match,
        pruning_match,
        outcome: describe(&bf),
        brute_force,
        branch_and_bound,
        pruned_branch_and_bound,
        detail: (!detail.is_empty()).then(|| detail.join("; ")),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub trials: Vec<TrialReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.trials.iter().all(TrialReport::passed)
    }

    pub fn total(&self, f: impl Fn(&TrialReport) -> Duration) -> Duration {
        self.trials.iter().map(f).sum()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for t in &self.trials {
            let _ = writeln!(
                s,
                "trial {:>3} {} candidates={:?} pruned={:?} size<={} latency<={} bits={} -> {}",
                t.index,
                if t.passed() { "PASS" } else { "FAIL" },
                t.candidates,
                t.pruned_candidates,
                t.constraints.max_total_size_bits.map_or("-".into(), |b| b.to_string()),
                t.constraints.max_total_latency_us.map_or("-".into(), |b| format!("{b:.3}")),
                t.constraints.bitwidths.as_ref().map_or("all".into(), |b| format!("{b:?}")),
                t.outcome
            );
            if let Some(d) = &t.detail {
                let _ = writeln!(s, "          {d}");
            }
        }
        let bf = self.total(|t| t.brute_force);
        let bb = self.total(|t| t.branch_and_bound);
        let pb = self.total(|t| t.pruned_branch_and_bound);
        let ratio = |a: Duration, b: Duration| a.as_secs_f64() / b.as_secs_f64().max(1e-9);
        let oracle = self.trials.iter().filter(|t| t.oracle_match).count();
        let pruning = self.trials.iter().filter(|t| t.pruning_match).count();
        let n = self.trials.len();
        let _ = writeln!(s, "oracle equivalence: {oracle}/{n} {}", if oracle == n { "PASS" } else { "FAIL" });
        let _ = writeln!(s, "pruning safety:     {pruning}/{n} {}", if pruning == n { "PASS" } else { "FAIL" });
        let _ = writeln!(
            s,
            "time: brute force {:.3?}, branch-and-bound {:.3?} ({:.1}x), on fronts {:.3?} ({:.1}x)",
            bf,
            bb,
            ratio(bf, bb),
            pb,
            ratio(bf, pb)
        );
        s
    }
}

/// Trials sampled from `source` tables.
pub fn verify_luts(source: &[BlockLut], opts: &VerifyOptions) -> Result<VerifyReport> {
    if opts.trials == 0 {
        return Err(Error::Validation("trials must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let trials = (0..opts.trials)
        .map(|i| run_trial(i, &sample_instance(source, &mut rng, opts)?, opts))
        .collect::<Result<_>>()?;
    Ok(VerifyReport { trials })
}

/// Trials on fully synthetic instances.
pub fn verify_random(opts: &VerifyOptions) -> Result<VerifyReport> {
    if opts.trials == 0 {
        return Err(Error::Validation("trials must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let trials = (0..opts.trials)
        .map(|i| run_trial(i, &random_instance(&mut rng, opts), opts))
        .collect::<Result<_>>()?;
    Ok(VerifyReport { trials })
}
