//! End-to-end orchestration: space, teacher, calibration, LUTs, fronts and
//! a summary, all driven by one seeded configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lut::{build_luts, read_luts, write_luts, BlockLut, BuildOptions, LatencyModel, Manifest, Seeds};
use crate::pareto::{front_manifest, merge_prune, prune_luts, read_fronts, write_fronts, MetricSet, ParetoFront};
use crate::quant::QuantMenu;
use crate::search::{concat_block_candidates, unconstrained_best, CandidateSet};
use crate::space::{SearchSpace, SpaceConfig};
use crate::synthnet::{make_calibration_set, make_teacher, DEFAULT_LENGTH, DEFAULT_RIDGE, DEFAULT_SAMPLES};
use crate::verify::VerifyOptions;

pub const LUT_DIR: &str = "luts";
pub const FRONT_DIR: &str = "fronts";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Pipeline configuration, read from TOML. Every field has a default, so an
/// empty file describes the default run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub space: SpaceConfig,
    /// Base seed, expanded into distinct teacher/student/calibration seeds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Explicit seeds; mutually exclusive with `seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Seeds>,
    pub samples: usize,
    pub length: usize,
    pub bits: Vec<u8>,
    pub fit: bool,
    pub ridge: f64,
    /// `synthetic`, `none`, or the path of a `block,subnet_id,latency_us` CSV.
    pub latency: String,
    pub latency_all_bitwidths: bool,
    pub base_size_bits: u64,
    /// Pruning metrics, e.g. `size` or `size,latency`.
    pub metrics: String,
    /// Also prune across the bitwidths of each block.
    pub merge_bitwidths: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub out: PathBuf,
    pub search: SearchSettings,
    pub verify: VerifySettings,
}

/// Query defaults for `search` and `sweep`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSettings {
    /// Defaults to `<out>/fronts`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fronts: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_size_bits: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_latency_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bits: Option<Vec<u8>>,
    /// `lo:hi:steps`
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size_grid: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_grid: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySettings {
    pub trials: usize,
    pub seed: u64,
    pub max_combinations: u64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        let d = VerifyOptions::default();
        Self { trials: d.trials, seed: d.seed, max_combinations: d.max_combinations as u64 }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            space: SpaceConfig::default(),
            seed: None,
            seeds: None,
            samples: DEFAULT_SAMPLES,
            length: DEFAULT_LENGTH,
            bits: QuantMenu::default().bitwidths().to_vec(),
            fit: false,
            ridge: DEFAULT_RIDGE,
            latency: "synthetic".into(),
            latency_all_bitwidths: false,
            base_size_bits: 0,
            metrics: "size".into(),
            merge_bitwidths: false,
            workers: None,
            out: PathBuf::from("qnas-out"),
            search: SearchSettings::default(),
            verify: VerifySettings::default(),
        }
    }
}

const DEFAULT_SEED: u64 = 1;

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(format!("pipeline config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn seeds(&self) -> Result<Seeds> {
        let seeds = match (self.seed, self.seeds) {
            (Some(_), Some(_)) => return Err(Error::Validation("give either `seed` or `seeds`, not both".into())),
            (None, Some(s)) => s,
            (Some(b), None) => Seeds::from_base(b),
            (None, None) => Seeds::from_base(DEFAULT_SEED),
        };
        if seeds.teacher == 0 || seeds.student == 0 || seeds.calibration == 0 {
            return Err(Error::Validation("seeds must be positive".into()));
        }
        Ok(seeds)
    }

    pub fn fronts_dir(&self) -> PathBuf {
        self.search.fronts.clone().unwrap_or_else(|| self.out.join(FRONT_DIR))
    }

    pub fn space(&self) -> Result<SearchSpace> {
        self.space.build()
    }

    pub fn menu(&self) -> Result<QuantMenu> {
        QuantMenu::new(self.bits.clone())
    }

    pub fn metric_set(&self) -> Result<MetricSet> {
        self.metrics.parse()
    }

    pub fn latency_model(&self) -> Result<Option<LatencyModel>> {
        match self.latency.as_str() {
            "none" | "" => Ok(None),
            "synthetic" => Ok(Some(LatencyModel::synthetic())),
            path => LatencyModel::from_csv(Path::new(path)).map(Some),
        }
    }

    pub fn build_options(&self) -> Result<BuildOptions> {
        let seeds = self.seeds()?;
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::Validation(format!("ridge {} must be finite and non-negative", self.ridge)));
        }
        if self.workers == Some(0) {
            return Err(Error::Validation("workers must be positive".into()));
        }
        Ok(BuildOptions {
            fit: self.fit,
            ridge: self.ridge,
            student_seed: seeds.student,
            latency: self.latency_model()?,
            latency_all_bitwidths: self.latency_all_bitwidths,
            workers: self.workers,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.space()?;
        self.menu()?;
        self.metric_set()?;
        self.build_options()?;
        if self.samples == 0 || self.length == 0 {
            return Err(Error::Validation("samples and length must be positive".into()));
        }
        Ok(())
    }
}

/// Builds every LUT for the configured space.
pub fn build_stage(cfg: &PipelineConfig) -> Result<(Manifest, Vec<BlockLut>)> {
    cfg.validate()?;
    let space = cfg.space()?;
    let seeds = cfg.seeds()?;
    let menu = cfg.menu()?;
    let opts = cfg.build_options()?;
    let teacher = make_teacher(&space, seeds.teacher);
    let calib = make_calibration_set(&space, &teacher, seeds.calibration, cfg.samples, cfg.length)?;
    let luts = build_luts(&space, &teacher, &menu, &calib, &opts)?;
    let mut manifest = Manifest::for_luts(&space, &menu, seeds, cfg.samples, cfg.length, &opts);
    manifest.base_size_bits = cfg.base_size_bits;
    Ok((manifest, luts))
}

/// Prunes the LUTs at the selected bitwidths (all when `bits` is `None`).
pub fn prune_stage(
    manifest: &Manifest,
    luts: &[BlockLut],
    metrics: &MetricSet,
    bits: Option<&[u8]>,
    merge: bool,
) -> Result<(Manifest, Vec<ParetoFront>)> {
    if let Some(b) = bits.and_then(|bits| bits.iter().find(|b| !manifest.bitwidths.contains(b))) {
        return Err(Error::Validation(format!("LUTs have no {b}-bit tables")));
    }
    let selected: Vec<BlockLut> =
        luts.iter().filter(|l| bits.is_none_or(|b| b.contains(&l.bitwidth))).cloned().collect();
    let mut fronts = prune_luts(&selected, metrics)?;
    if merge {
        fronts = merge_prune(&fronts)?;
    }
    let fm = front_manifest(manifest, &fronts)?;
    Ok((fm, fronts))
}

/// Reads a front directory into search candidates, carrying the base size
/// and provenance hashes. When `space` is given, fronts built for another
/// space are rejected.
pub fn load_candidates(dir: &Path, bits: Option<&[u8]>, space: Option<&SearchSpace>) -> Result<CandidateSet> {
    let (manifest, fronts) = read_fronts(dir)?;
    if let Some(space) = space {
        manifest.ensure_space(space)?;
    }
    let mut provenance = vec![manifest.hash()];
    provenance.extend(manifest.source_manifest_hash.clone());
    Ok(concat_block_candidates(&fronts, bits)?
        .with_base_size_bits(manifest.base_size_bits)
        .with_provenance(provenance))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineArtifacts {
    pub lut_dir: PathBuf,
    pub front_dir: PathBuf,
    pub summary: PathBuf,
    pub lut_manifest: Manifest,
    pub front_manifest: Manifest,
    pub luts: Vec<BlockLut>,
    pub fronts: Vec<ParetoFront>,
}

/// Runs build, prune and an unconstrained search, writing `luts/`,
/// `fronts/` and `summary.txt` under the configured output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineArtifacts> {
    let out = cfg.out.clone();
    let (lut_manifest, luts) = build_stage(cfg).map_err(|e| e.in_stage("build"))?;
    let lut_dir = out.join(LUT_DIR);
    write_luts(&luts, &lut_manifest, &lut_dir).map_err(|e| e.in_stage("write luts"))?;

    let metrics = cfg.metric_set()?;
    let (front_manifest, fronts) =
        prune_stage(&lut_manifest, &luts, &metrics, None, cfg.merge_bitwidths).map_err(|e| e.in_stage("prune"))?;
    let front_dir = out.join(FRONT_DIR);
    write_fronts(&fronts, &front_manifest, &front_dir).map_err(|e| e.in_stage("write fronts"))?;

    let candidates = concat_block_candidates(&fronts, None)
        .map(|c| c.with_base_size_bits(cfg.base_size_bits))
        .map_err(|e| e.in_stage("search"))?;
    let summary_text = summary(&lut_manifest, &luts, &fronts, &candidates).map_err(|e| e.in_stage("search"))?;
    let summary_path = out.join(SUMMARY_FILE);
    fs::write(&summary_path, summary_text).map_err(|e| Error::io(&summary_path, e).in_stage("summary"))?;

    // confirm the written artifacts load back as one consistent set
    read_luts(&lut_dir).map_err(|e| e.in_stage("reload"))?;
    Ok(PipelineArtifacts { lut_dir, front_dir, summary: summary_path, lut_manifest, front_manifest, luts, fronts })
}

fn summary(manifest: &Manifest, luts: &[BlockLut], fronts: &[ParetoFront], candidates: &CandidateSet) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "space hash      {}", manifest.space_hash);
    let _ = writeln!(s, "LUT manifest    {}", manifest.hash());
    let _ = writeln!(
        s,
        "seeds           teacher={} student={} calibration={}",
        manifest.seeds.teacher, manifest.seeds.student, manifest.seeds.calibration
    );
    let _ = writeln!(s, "calibration     {} samples x {} positions", manifest.samples, manifest.length);
    let _ = writeln!(s, "fit             {}", manifest.fit);
    let _ = writeln!(s, "latency model   {}", manifest.latency_model.as_deref().unwrap_or("none"));
    let _ = writeln!(s, "tables          {}", luts.len());
    let _ = writeln!(s);

    let bits = &manifest.bitwidths;
    let mut header = format!("{:>5} {:>8}", "block", "subnets");
    for b in bits {
        let _ = write!(header, " {:>8}", format!("front w{b}"));
    }
    let _ = writeln!(s, "{header}");
    for block in manifest.space.blocks() {
        let _ = write!(s, "{:>5} {:>8}", block.index(), block.subnet_count());
        for &b in bits {
            let n = fronts
                .iter()
                .find(|f| f.block_index == block.index() && f.bitwidth == b)
                .map_or(0, |f| f.entries.len());
            let _ = write!(s, " {n:>8}");
        }
        let _ = writeln!(s);
    }
    let full: u128 = manifest
        .space
        .blocks()
        .iter()
        .map(|b| b.subnet_count() as u128 * bits.len() as u128)
        .product();
    let _ = writeln!(s);
    let _ = writeln!(s, "combinations    {full} unpruned, {} pruned", candidates.combinations());

    let best = unconstrained_best(candidates)?;
    let _ = writeln!(s, "unconstrained   loss={} size_bits={} {}", best.objective_loss, best.total_size_bits, best.selection_label());
    Ok(s)
}
