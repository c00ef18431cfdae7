//! Non-dominated filtering of LUT entries.
//!
//! Entry `a` dominates `b` when `a.loss <= b.loss` and `a.m <= b.m` for every
//! active metric `m`, with at least one strict inequality. Entries with equal
//! values do not dominate each other and are all kept.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lut::{read_tables, write_tables, ArtifactKind, BlockLut, LutEntry, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Size,
    Latency,
}

impl Metric {
    fn value(self, e: &LutEntry) -> Option<f64> {
        match self {
            Metric::Size => Some(e.size_bits as f64),
            Metric::Latency => e.latency_us,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Size => "size",
            Metric::Latency => "latency",
        })
    }
}

/// Sorted, duplicate-free set of hardware metrics.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<Metric>", into = "Vec<Metric>")]
pub struct MetricSet(Vec<Metric>);

impl MetricSet {
    pub fn new(mut metrics: Vec<Metric>) -> Self {
        metrics.sort();
        metrics.dedup();
        Self(metrics)
    }

    pub fn size() -> Self {
        Self(vec![Metric::Size])
    }

    pub fn size_and_latency() -> Self {
        Self(vec![Metric::Size, Metric::Latency])
    }

    pub fn contains(&self, m: Metric) -> bool {
        self.0.contains(&m)
    }

    pub fn covers(&self, other: &MetricSet) -> bool {
        other.0.iter().all(|m| self.contains(*m))
    }

    pub fn iter(&self) -> impl Iterator<Item = Metric> + '_ {
        self.0.iter().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<Metric>> for MetricSet {
    fn from(v: Vec<Metric>) -> Self {
        Self::new(v)
    }
}

impl From<MetricSet> for Vec<Metric> {
    fn from(m: MetricSet) -> Self {
        m.0
    }
}

impl fmt::Display for MetricSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.0.iter().map(Metric::to_string).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for MetricSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let metrics = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| match t {
                "size" => Ok(Metric::Size),
                "latency" => Ok(Metric::Latency),
                other => Err(Error::Validation(format!("unknown metric {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if metrics.is_empty() {
            return Err(Error::Validation("metric set is empty".into()));
        }
        Ok(Self::new(metrics))
    }
}

/// Pareto-optimal entries of one LUT.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoFront {
    pub block_index: usize,
    pub bitwidth: u8,
    pub metrics: MetricSet,
    /// Set when dominance was also applied across the block's bitwidths.
    pub cross_bitwidth: bool,
    /// Ascending loss, then size, then subnet id.
    pub entries: Vec<LutEntry>,
}

pub fn dominates(a: &LutEntry, b: &LutEntry, metrics: &MetricSet) -> bool {
    if a.loss > b.loss {
        return false;
    }
    let mut strict = a.loss < b.loss;
    for m in metrics.iter() {
        let (x, y) = (m.value(a).unwrap_or(f64::INFINITY), m.value(b).unwrap_or(f64::INFINITY));
        if x > y {
            return false;
        }
        strict |= x < y;
    }
    strict
}

fn check_metrics(entries: &[LutEntry], metrics: &MetricSet) -> Result<()> {
    for m in metrics.iter() {
        if let Some(e) = entries.iter().find(|e| m.value(e).is_none()) {
            return Err(Error::Validation(format!(
                "subnet {} (w{}) has no {m} value",
                e.subnet_id, e.bitwidth
            )));
        }
    }
    Ok(())
}

fn front_order(a: &LutEntry, b: &LutEntry) -> Ordering {
    a.loss
        .total_cmp(&b.loss)
        .then(a.size_bits.cmp(&b.size_bits))
        .then(a.bitwidth.cmp(&b.bitwidth))
        .then(a.subnet_id.cmp(&b.subnet_id))
}

/// The non-dominated subset of `entries`, in front order.
pub fn non_dominated(entries: &[LutEntry], metrics: &MetricSet) -> Result<Vec<LutEntry>> {
    check_metrics(entries, metrics)?;
    // Any dominator precedes what it dominates in this order, so checking
    // against the entries kept so far is enough.
    let key = |e: &LutEntry| -> Vec<f64> {
        std::iter::once(e.loss).chain(metrics.iter().filter_map(|m| m.value(e))).collect()
    };
    let mut order: Vec<(Vec<f64>, &LutEntry)> = entries.iter().map(|e| (key(e), e)).collect();
    order.sort_by(|(ka, a), (kb, b)| {
        ka.iter()
            .zip(kb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
            .then_with(|| front_order(a, b))
    });
    let mut kept: Vec<LutEntry> = Vec::new();
    for (_, e) in order {
        if !kept.iter().any(|k| dominates(k, e, metrics)) {
            kept.push(e.clone());
        }
    }
    kept.sort_by(front_order);
    Ok(kept)
}

pub fn pareto_front(lut: &BlockLut, metrics: &MetricSet) -> Result<ParetoFront> {
    if metrics.is_empty() {
        return Err(Error::Validation("pruning needs at least one hardware metric".into()));
    }
    Ok(ParetoFront {
        block_index: lut.block_index,
        bitwidth: lut.bitwidth,
        metrics: metrics.clone(),
        cross_bitwidth: false,
        entries: non_dominated(&lut.entries, metrics)?,
    })
}

/// One front per LUT, in input order.
pub fn prune_luts(luts: &[BlockLut], metrics: &MetricSet) -> Result<Vec<ParetoFront>> {
    luts.iter().map(|l| pareto_front(l, metrics)).collect()
}

/// Further removes entries dominated by an entry of the same block at a
/// different bitwidth. Valid only for searches that admit every bitwidth.
pub fn merge_prune(fronts: &[ParetoFront]) -> Result<Vec<ParetoFront>> {
    let mut out = Vec::with_capacity(fronts.len());
    let mut i = 0;
    while i < fronts.len() {
        let block = fronts[i].block_index;
        let metrics = fronts[i].metrics.clone();
        let group: Vec<&ParetoFront> = fronts[i..].iter().take_while(|f| f.block_index == block).collect();
        if group.iter().any(|f| f.metrics != metrics) {
            return Err(Error::Validation(format!("block {block}: fronts pruned on different metrics")));
        }
        let all: Vec<LutEntry> = group.iter().flat_map(|f| f.entries.iter().cloned()).collect();
        let kept = non_dominated(&all, &metrics)?;
        for f in &group {
            out.push(ParetoFront {
                block_index: block,
                bitwidth: f.bitwidth,
                metrics: metrics.clone(),
                cross_bitwidth: true,
                entries: kept.iter().filter(|e| e.bitwidth == f.bitwidth).cloned().collect(),
            });
        }
        i += group.len();
    }
    Ok(out)
}

impl ParetoFront {
    fn as_table(&self) -> BlockLut {
        BlockLut { block_index: self.block_index, bitwidth: self.bitwidth, entries: self.entries.clone() }
    }
}

/// Manifest for fronts pruned from the LUTs described by `source`.
pub fn front_manifest(source: &Manifest, fronts: &[ParetoFront]) -> Result<Manifest> {
    let first = fronts.first().ok_or_else(|| Error::Validation("no fronts".into()))?;
    if fronts.iter().any(|f| f.metrics != first.metrics || f.cross_bitwidth != first.cross_bitwidth) {
        return Err(Error::Validation("fronts disagree on pruning metrics".into()));
    }
    let mut bitwidths: Vec<u8> = fronts.iter().map(|f| f.bitwidth).collect();
    bitwidths.sort_unstable();
    bitwidths.dedup();
    if bitwidths.iter().any(|b| !source.bitwidths.contains(b)) {
        return Err(Error::Validation("fronts use bitwidths absent from the source LUTs".into()));
    }
    Ok(Manifest {
        kind: ArtifactKind::Fronts,
        bitwidths,
        metrics: Some(first.metrics.clone()),
        merged_across_bitwidths: first.cross_bitwidth,
        source_manifest_hash: Some(source.hash()),
        ..source.clone()
    })
}

pub fn write_fronts(fronts: &[ParetoFront], manifest: &Manifest, dir: &Path) -> Result<()> {
    if manifest.kind != ArtifactKind::Fronts || manifest.metrics.is_none() {
        return Err(Error::Validation("manifest does not describe fronts".into()));
    }
    let tables: Vec<BlockLut> = fronts.iter().map(ParetoFront::as_table).collect();
    write_tables(&tables, manifest, dir)
}

pub fn read_fronts(dir: &Path) -> Result<(Manifest, Vec<ParetoFront>)> {
    let (manifest, tables) = read_tables(dir)?;
    let metrics = match (manifest.kind, &manifest.metrics) {
        (ArtifactKind::Fronts, Some(m)) => m.clone(),
        _ => return Err(Error::Incompatible(format!("{} holds LUTs, not fronts", dir.display()))),
    };
    let fronts = tables
        .into_iter()
        .map(|t| {
            let mut entries = t.entries;
            entries.sort_by(front_order);
            ParetoFront {
                block_index: t.block_index,
                bitwidth: t.bitwidth,
                metrics: metrics.clone(),
                cross_bitwidth: manifest.merged_across_bitwidths,
                entries,
            }
        })
        .collect();
    Ok((manifest, fronts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(id: u64, loss: f64, size: u64) -> LutEntry {
        LutEntry { subnet_id: id, bitwidth: 8, loss, size_bits: size, latency_us: None }
    }

    fn lut(entries: Vec<LutEntry>) -> BlockLut {
        BlockLut { block_index: 0, bitwidth: 8, entries }
    }

    /// O(n^2) reference: keep everything no other entry dominates.
    fn exhaustive(entries: &[LutEntry], m: &MetricSet) -> Vec<u64> {
        let mut ids: Vec<u64> = entries
            .iter()
            .filter(|b| !entries.iter().any(|a| dominates(a, b, m)))
            .map(|b| b.subnet_id)
            .collect();
        ids.sort();
        ids
    }

    #[test]
    fn examples() {
        let m = MetricSet::size();
        let single = pareto_front(&lut(vec![e(0, 1.0, 1)]), &m).unwrap();
        assert_eq!(single.entries.len(), 1);

        let f = pareto_front(&lut(vec![e(0, 1.0, 10), e(1, 2.0, 5), e(2, 3.0, 7)]), &m).unwrap();
        let kept: Vec<_> = f.entries.iter().map(|x| (x.loss, x.size_bits)).collect();
        assert_eq!(kept, vec![(1.0, 10), (2.0, 5)]);

        let f = pareto_front(&lut(vec![e(0, 1.0, 3), e(1, 1.0, 3)]), &m).unwrap();
        assert_eq!(f.entries.len(), 2);
    }

    #[test]
    fn missing_metric_is_an_error() {
        let m: MetricSet = "size,latency".parse().unwrap();
        assert!(matches!(pareto_front(&lut(vec![e(0, 1.0, 3)]), &m), Err(Error::Validation(_))));
        assert!("".parse::<MetricSet>().is_err());
        assert!("size,energy".parse::<MetricSet>().is_err());
        assert_eq!("latency,size,size".parse::<MetricSet>().unwrap(), MetricSet::size_and_latency());
    }

    fn random_entries(rng: &mut ChaCha8Rng, n: usize, latency: bool) -> Vec<LutEntry> {
        (0..n as u64)
            .map(|id| LutEntry {
                subnet_id: id,
                bitwidth: 8,
                // coarse grids force plenty of ties
                loss: rng.random_range(0..400) as f64 / 16.0,
                size_bits: rng.random_range(0..300),
                latency_us: latency.then(|| rng.random_range(0..200) as f64 * 0.5),
            })
            .collect()
    }

    #[test]
    fn sound_and_complete_against_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (n, m) in [(50, MetricSet::size()), (2000, MetricSet::size()), (2000, MetricSet::size_and_latency()), (10_000, MetricSet::size())] {
            let entries = random_entries(&mut rng, n, m.contains(Metric::Latency));
            let front = non_dominated(&entries, &m).unwrap();
            let mut got: Vec<u64> = front.iter().map(|x| x.subnet_id).collect();
            got.sort();
            assert_eq!(got, exhaustive(&entries, &m));
            assert!(front.len() < entries.len());
            // every pruned entry has a dominator on the front
            for x in &entries {
                if !got.contains(&x.subnet_id) {
                    assert!(front.iter().any(|k| dominates(k, x, &m)));
                }
            }
            // idempotent
            assert_eq!(non_dominated(&front, &m).unwrap(), front);
        }
    }

    #[test]
    fn latency_only_metric_ordering() {
        // equal loss; size is not active, so only latency decides
        let mk = |id, size, lat| LutEntry { subnet_id: id, bitwidth: 8, loss: 1.0, size_bits: size, latency_us: Some(lat) };
        let entries = vec![mk(0, 1, 5.0), mk(1, 9, 2.0)];
        let m: MetricSet = "latency".parse().unwrap();
        let f = non_dominated(&entries, &m).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].subnet_id, 1);
    }

    #[test]
    fn merge_prune_across_bitwidths() {
        let m = MetricSet::size();
        let mk = |id, bits, loss, size| LutEntry { subnet_id: id, bitwidth: bits, loss, size_bits: size, latency_us: None };
        let fronts = prune_luts(
            &[
                BlockLut { block_index: 0, bitwidth: 4, entries: vec![mk(0, 4, 2.0, 4), mk(1, 4, 5.0, 3)] },
                BlockLut { block_index: 0, bitwidth: 8, entries: vec![mk(0, 8, 1.0, 8), mk(1, 8, 6.0, 6)] },
            ],
            &m,
        )
        .unwrap();
        assert_eq!(fronts[1].entries.len(), 2);
        let merged = merge_prune(&fronts).unwrap();
        assert!(merged.iter().all(|f| f.cross_bitwidth));
        assert_eq!(merged[0].entries.len(), 2);
        // (6.0, 6) at w8 is dominated by (2.0, 4) at w4
        assert_eq!(merged[1].entries.len(), 1);
    }

    #[test]
    fn random_fronts_shrink() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = MetricSet::size();
        let mut total_in = 0;
        let mut total_out = 0;
        for _ in 0..20 {
            let entries: Vec<LutEntry> = (0..200)
                .map(|id| LutEntry { subnet_id: id, bitwidth: 6, loss: rng.random(), size_bits: rng.random_range(1..1_000_000), latency_us: None })
                .collect();
            let f = non_dominated(&entries, &m).unwrap();
            assert!(f.len() < entries.len());
            total_in += entries.len();
            total_out += f.len();
        }
        assert!(total_out * 5 < total_in);
    }
}
