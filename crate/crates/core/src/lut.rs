//! Per-(block, bitwidth) lookup tables of quantized distillation loss and
//! hardware cost, and their on-disk form.
//!
//! Directory layout: `manifest.json` plus one CSV per (block, bitwidth),
//! named `lut_b<block>_w<bits>.csv` (or `front_b<block>_w<bits>.csv` for
//! pruned fronts), with header `subnet_id,loss,size_bits,latency_us` and
//! rows ascending by `subnet_id`. Floats are written with 17 significant
//! digits so they read back bit-exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nsr::{nsr_matrix, ChannelVariances};
use crate::pareto::MetricSet;
use crate::quant::{fake_quantize, QuantMenu, QuantScheme};
use crate::space::{BlockSpec, SearchSpace, SubnetId};
use crate::synthnet::{
    fit_from_hidden, mat_to_tensor, student_layer, to_mat, Activation, CalibrationSet, LayerMats,
    Stages, TeacherNet, DEFAULT_RIDGE,
};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const CSV_HEADER: &str = "subnet_id,loss,size_bits,latency_us";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LutEntry {
    pub subnet_id: u64,
    pub bitwidth: u8,
    pub loss: f64,
    pub size_bits: u64,
    pub latency_us: Option<f64>,
}

/// Every subnet of one block evaluated at one bitwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLut {
    pub block_index: usize,
    pub bitwidth: u8,
    pub entries: Vec<LutEntry>,
}

/// Weight elements of one layer: expand, depthwise and project matrices.
fn layer_params(block: &BlockSpec, layer: usize, op_index: usize) -> u64 {
    let op = block.op_menu()[op_index];
    let c_in = block.layer_in_channels(layer) as u64;
    let hidden = op.expansion as u64 * c_in;
    hidden * c_in + hidden * op.kernel_size as u64 + block.out_channels() as u64 * hidden
}

/// Multiply-accumulates per output position of one layer. Every weight is
/// used exactly once per position.
pub fn layer_macs(block: &BlockSpec, layer: usize, op_index: usize) -> u64 {
    layer_params(block, layer, op_index)
}

pub fn subnet_macs(block: &BlockSpec, id: SubnetId) -> Result<u64> {
    let digits = block.decode_digits(id)?;
    Ok(digits.iter().enumerate().map(|(l, &d)| layer_macs(block, l, d)).sum())
}

/// Weight-only model size: element count times bitwidth (no biases or
/// normalisation parameters).
pub fn model_size_bits(block: &BlockSpec, id: SubnetId, bits: u8) -> Result<u64> {
    let digits = block.decode_digits(id)?;
    let params: u64 = digits.iter().enumerate().map(|(l, &d)| layer_params(block, l, d)).sum();
    Ok(params * bits as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LatencyModel {
    /// `alpha * MACs + beta` per layer, summed over layers.
    Affine { alpha_us_per_mac: f64, beta_us_per_layer: f64 },
    /// Measured latency per (block, subnet id).
    Table { source: String, rows: BTreeMap<(usize, u64), f64> },
}

impl LatencyModel {
    pub fn synthetic() -> Self {
        LatencyModel::Affine { alpha_us_per_mac: 1e-3, beta_us_per_layer: 5.0 }
    }

    pub fn affine(alpha_us_per_mac: f64, beta_us_per_layer: f64) -> Result<Self> {
        if !(alpha_us_per_mac >= 0.0 && beta_us_per_layer >= 0.0) {
            return Err(Error::Validation("latency model coefficients must be non-negative".into()));
        }
        Ok(LatencyModel::Affine { alpha_us_per_mac, beta_us_per_layer })
    }

    /// Reads `block,subnet_id,latency_us` rows.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, msg: String| Error::Parse { file: path.to_path_buf(), line, msg };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "block,subnet_id,latency_us" => {}
            _ => return Err(parse_err(1, "expected header block,subnet_id,latency_us".into())),
        }
        let mut rows = BTreeMap::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(parse_err(i + 1, format!("expected 3 fields, got {}", fields.len())));
            }
            let block = fields[0].parse().map_err(|e| parse_err(i + 1, format!("block: {e}")))?;
            let subnet = fields[1].parse().map_err(|e| parse_err(i + 1, format!("subnet_id: {e}")))?;
            let lat: f64 = fields[2].parse().map_err(|e| parse_err(i + 1, format!("latency_us: {e}")))?;
            if !(lat >= 0.0 && lat.is_finite()) {
                return Err(parse_err(i + 1, format!("latency {lat} must be finite and non-negative")));
            }
            rows.insert((block, subnet), lat);
        }
        Ok(LatencyModel::Table { source: path.display().to_string(), rows })
    }

    pub fn describe(&self) -> String {
        match self {
            LatencyModel::Affine { alpha_us_per_mac, beta_us_per_layer } => {
                format!("affine(alpha_us_per_mac={alpha_us_per_mac:e}, beta_us_per_layer={beta_us_per_layer:e})")
            }
            LatencyModel::Table { source, rows } => format!("table({source}, {} rows)", rows.len()),
        }
    }
}

pub fn latency_estimate(block: &BlockSpec, id: SubnetId, model: &LatencyModel) -> Result<f64> {
    match model {
        LatencyModel::Affine { alpha_us_per_mac, beta_us_per_layer } => {
            let digits = block.decode_digits(id)?;
            Ok(digits
                .iter()
                .enumerate()
                .map(|(l, &d)| alpha_us_per_mac * layer_macs(block, l, d) as f64 + beta_us_per_layer)
                .sum())
        }
        LatencyModel::Table { rows, .. } => {
            block.decode_digits(id)?;
            rows.get(&(block.index(), id.value))
                .copied()
                .ok_or(Error::MissingMeasurement { block: block.index(), subnet: id.value })
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub fit: bool,
    pub ridge: f64,
    pub student_seed: u64,
    pub latency: Option<LatencyModel>,
    /// Attach latency to every bitwidth rather than only the 8-bit tables.
    pub latency_all_bitwidths: bool,
    /// Rayon worker count; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            fit: false,
            ridge: DEFAULT_RIDGE,
            student_seed: 0,
            latency: None,
            latency_all_bitwidths: false,
            workers: None,
        }
    }
}

/// Evaluates every subnet of one block at every bitwidth, sharing the
/// outputs of common layer prefixes between subnets.
struct BlockEvaluator<'a> {
    block: &'a BlockSpec,
    schemes: Vec<QuantScheme>,
    float_stages: Stages,
    quant_stages: Stages,
    /// `[layer][op]`
    float_mats: Vec<Vec<LayerMats>>,
    /// `[layer][op][bitwidth]`
    quant_mats: Vec<Vec<Vec<LayerMats>>>,
    input: DMatrix<f64>,
    target: DMatrix<f64>,
    vars: ChannelVariances,
    fit: bool,
    ridge: f64,
}

impl<'a> BlockEvaluator<'a> {
    fn new(
        block: &'a BlockSpec,
        schemes: Vec<QuantScheme>,
        calib: &crate::synthnet::BlockCalibration,
        opts: &BuildOptions,
    ) -> Result<Self> {
        let length = calib.input.length();
        let float_stages = Stages { length, activation: Activation::Tanh, activation_quant: None };
        let quant_stages = Stages { activation_quant: Some(QuantScheme::activations()), ..float_stages };
        let mut float_mats = Vec::with_capacity(block.num_layers());
        let mut quant_mats = Vec::with_capacity(block.num_layers());
        for layer in 0..block.num_layers() {
            let mut f = Vec::new();
            let mut q = Vec::new();
            for op in 0..block.op_menu().len() {
                let w = student_layer(block, layer, op, opts.student_seed);
                q.push(
                    schemes
                        .iter()
                        .map(|&s| Ok(LayerMats::of(&w.quantized(s)?)))
                        .collect::<Result<Vec<_>>>()?,
                );
                f.push(LayerMats::of(&w));
            }
            float_mats.push(f);
            quant_mats.push(q);
        }
        let target = calib.target.to_matrix();
        let vars = ChannelVariances::of_matrix(&target);
        vars.ensure_nondegenerate()?;
        Ok(Self {
            block,
            schemes,
            float_stages,
            quant_stages,
            float_mats,
            quant_mats,
            input: calib.input.to_matrix(),
            target,
            vars,
            fit: opts.fit,
            ridge: opts.ridge,
        })
    }

    /// Losses (one per bitwidth) for every subnet whose layer-0 op is `first`.
    fn evaluate_subtree(&self, first: usize) -> Result<Vec<(u64, Vec<f64>)>> {
        let mut out = Vec::new();
        let mut digits = vec![first];
        let quant_in = vec![self.input.clone(); self.schemes.len()];
        let float_in = self.fit.then(|| self.input.clone());
        self.descend(&mut digits, float_in.as_ref(), &quant_in, &mut out)?;
        Ok(out)
    }

    fn descend(
        &self,
        digits: &mut Vec<usize>,
        float_in: Option<&DMatrix<f64>>,
        quant_in: &[DMatrix<f64>],
        out: &mut Vec<(u64, Vec<f64>)>,
    ) -> Result<()> {
        let layer = digits.len() - 1;
        let op = digits[layer];
        if layer + 1 < self.block.num_layers() {
            let float_out = float_in.map(|x| self.float_stages.layer(x, &self.float_mats[layer][op]));
            let quant_out: Vec<_> = quant_in
                .iter()
                .zip(&self.quant_mats[layer][op])
                .map(|(x, m)| self.quant_stages.layer(x, m))
                .collect();
            for next in 0..self.block.op_menu().len() {
                digits.push(next);
                self.descend(digits, float_out.as_ref(), &quant_out, out)?;
                digits.pop();
            }
            return Ok(());
        }

        let id = self.block.encode_digits(digits)?.value;
        let quant_mats = &self.quant_mats[layer][op];
        let mut losses = Vec::with_capacity(self.schemes.len());
        if let Some(x) = float_in {
            let float_mats = &self.float_mats[layer][op];
            let h = self.float_stages.hidden(x, float_mats);
            let p = fit_from_hidden(&self.float_stages, &h, &self.target, &self.vars, &float_mats.project, self.ridge)?;
            let p = mat_to_tensor(&p);
            for ((xq, m), &s) in quant_in.iter().zip(quant_mats).zip(&self.schemes) {
                let pq = to_mat(&fake_quantize(&p, s)?);
                let hq = self.quant_stages.hidden(xq, m);
                losses.push(nsr_matrix(&self.target, &self.vars, &self.quant_stages.project(&hq, &pq)));
            }
        } else {
            for (xq, m) in quant_in.iter().zip(quant_mats) {
                let y = self.quant_stages.layer(xq, m);
                losses.push(nsr_matrix(&self.target, &self.vars, &y));
            }
        }
        if let Some(bad) = losses.iter().find(|l| !l.is_finite()) {
            return Err(Error::Numerical(format!(
                "block {} subnet {id}: non-finite loss {bad}",
                self.block.index()
            )));
        }
        out.push((id, losses));
        Ok(())
    }
}

/// Populates the `N x B` tables: for every block, subnet and bitwidth the
/// subnet is instantiated (optionally fitted), fake-quantized and evaluated
/// on the block's calibration data. Output is ordered by (block, bitwidth)
/// and is bit-identical for any worker count.
pub fn build_luts(
    space: &SearchSpace,
    teacher: &TeacherNet,
    menu: &QuantMenu,
    calib: &CalibrationSet,
    opts: &BuildOptions,
) -> Result<Vec<BlockLut>> {
    if teacher.blocks().len() != space.num_blocks() || calib.blocks.len() != space.num_blocks() {
        return Err(Error::Incompatible("teacher/calibration do not match the search space".into()));
    }
    for (b, (t, c)) in space.blocks().iter().zip(teacher.blocks().iter().zip(&calib.blocks)) {
        if t.in_channels() != b.in_channels()
            || t.out_channels() != b.out_channels()
            || c.input.channels() != b.in_channels()
            || c.target.channels() != b.out_channels()
        {
            return Err(Error::Incompatible(format!("block {} geometry mismatch", b.index())));
        }
    }
    if !(opts.ridge >= 0.0) {
        return Err(Error::Validation(format!("ridge must be non-negative, got {}", opts.ridge)));
    }
    match opts.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?
            .install(|| build_luts_inner(space, menu, calib, opts)),
        None => build_luts_inner(space, menu, calib, opts),
    }
}

fn build_luts_inner(
    space: &SearchSpace,
    menu: &QuantMenu,
    calib: &CalibrationSet,
    opts: &BuildOptions,
) -> Result<Vec<BlockLut>> {
    let schemes: Vec<QuantScheme> = menu.schemes().collect();
    let evaluators = space
        .blocks()
        .iter()
        .zip(&calib.blocks)
        .map(|(b, c)| BlockEvaluator::new(b, schemes.clone(), c, opts))
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, usize)> = space
        .blocks()
        .iter()
        .flat_map(|b| (0..b.op_menu().len()).map(move |op| (b.index(), op)))
        .collect();
    let results = tasks
        .par_iter()
        .map(|&(b, op)| evaluators[b].evaluate_subtree(op).map(|r| (b, r)))
        .collect::<Result<Vec<_>>>()?;

    let mut per_block: Vec<Vec<(u64, Vec<f64>)>> = vec![Vec::new(); space.num_blocks()];
    for (b, rows) in results {
        per_block[b].extend(rows);
    }

    let mut luts = Vec::with_capacity(space.num_blocks() * menu.len());
    for (block, mut rows) in space.blocks().iter().zip(per_block) {
        rows.sort_by_key(|r| r.0);
        debug_assert_eq!(rows.len() as u64, block.subnet_count());
        for (bi, &bits) in menu.bitwidths().iter().enumerate() {
            let with_latency = opts.latency.as_ref().filter(|_| opts.latency_all_bitwidths || bits == 8);
            let entries = rows
                .iter()
                .map(|(value, losses)| {
                    let id = SubnetId { block_index: block.index(), value: *value };
                    Ok(LutEntry {
                        subnet_id: *value,
                        bitwidth: bits,
                        loss: losses[bi],
                        size_bits: model_size_bits(block, id, bits)?,
                        latency_us: with_latency.map(|m| latency_estimate(block, id, m)).transpose()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            luts.push(BlockLut { block_index: block.index(), bitwidth: bits, entries });
        }
    }
    Ok(luts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    Luts,
    Fronts,
}

impl ArtifactKind {
    fn file_prefix(self) -> &'static str {
        match self {
            ArtifactKind::Luts => "lut",
            ArtifactKind::Fronts => "front",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub teacher: u64,
    pub student: u64,
    pub calibration: u64,
}

impl Seeds {
    /// Three distinct seeds derived from one base seed.
    pub fn from_base(seed: u64) -> Self {
        Self { teacher: seed, student: seed.wrapping_add(1), calibration: seed.wrapping_add(2) }
    }
}

/// Provenance of a LUT or front directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: ArtifactKind,
    pub space_hash: String,
    pub space: SearchSpace,
    pub seeds: Seeds,
    pub samples: usize,
    pub length: usize,
    pub bitwidths: Vec<u8>,
    pub fit: bool,
    pub ridge: f64,
    pub latency_model: Option<String>,
    pub latency_all_bitwidths: bool,
    pub base_size_bits: u64,
    /// Dominance metrics used to prune (fronts only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricSet>,
    #[serde(default)]
    pub merged_across_bitwidths: bool,
    /// Hash of the LUT manifest the fronts were pruned from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_manifest_hash: Option<String>,
}

impl Manifest {
    pub fn for_luts(space: &SearchSpace, menu: &QuantMenu, seeds: Seeds, samples: usize, length: usize, opts: &BuildOptions) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: ArtifactKind::Luts,
            space_hash: space.content_hash(),
            space: space.clone(),
            seeds,
            samples,
            length,
            bitwidths: menu.bitwidths().to_vec(),
            fit: opts.fit,
            ridge: opts.ridge,
            latency_model: opts.latency.as_ref().map(LatencyModel::describe),
            latency_all_bitwidths: opts.latency_all_bitwidths,
            base_size_bits: 0,
            metrics: None,
            merged_across_bitwidths: false,
            source_manifest_hash: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Hex SHA-256 of the manifest as written to disk.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn ensure_space(&self, space: &SearchSpace) -> Result<()> {
        let want = space.content_hash();
        if self.space_hash != want {
            return Err(Error::Incompatible(format!(
                "artifacts were built for space {} but the configured space hashes to {want}",
                self.space_hash
            )));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Incompatible(format!(
                "format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.space.content_hash() != self.space_hash {
            return Err(Error::Incompatible("manifest space does not match its recorded hash".into()));
        }
        QuantMenu::new(self.bitwidths.clone())?;
        Ok(())
    }

    fn file_name(&self, block: usize, bits: u8) -> String {
        format!("{}_b{block}_w{bits}.csv", self.kind.file_prefix())
    }
}

fn format_entry(out: &mut String, e: &LutEntry) {
    let _ = write!(out, "{},{:.16e},{},", e.subnet_id, e.loss, e.size_bits);
    if let Some(l) = e.latency_us {
        let _ = write!(out, "{l:.16e}");
    }
    out.push('\n');
}

fn parse_table(path: &Path, text: &str, bits: u8) -> Result<Vec<LutEntry>> {
    let err = |line: usize, msg: String| Error::Parse { file: path.to_path_buf(), line, msg };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => return Err(err(1, format!("expected header {CSV_HEADER}"))),
    }
    let mut entries: Vec<LutEntry> = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(err(n, format!("expected 4 fields, got {}", f.len())));
        }
        let subnet_id: u64 = f[0].parse().map_err(|e| err(n, format!("subnet_id: {e}")))?;
        let loss: f64 = f[1].parse().map_err(|e| err(n, format!("loss: {e}")))?;
        let size_bits: u64 = f[2].parse().map_err(|e| err(n, format!("size_bits: {e}")))?;
        let latency_us = match f[3] {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|e| err(n, format!("latency_us: {e}")))?),
        };
        if !(loss.is_finite() && loss >= 0.0) {
            return Err(err(n, format!("loss {loss} must be finite and non-negative")));
        }
        if latency_us.is_some_and(|l| !(l.is_finite() && l >= 0.0)) {
            return Err(err(n, "latency must be finite and non-negative".into()));
        }
        if entries.last().is_some_and(|prev| prev.subnet_id >= subnet_id) {
            return Err(err(n, "subnet ids must be strictly ascending".into()));
        }
        entries.push(LutEntry { subnet_id, bitwidth: bits, loss, size_bits, latency_us });
    }
    Ok(entries)
}

/// Writes `tables` (ordered by block, then bitwidth) and the manifest.
pub fn write_tables(tables: &[BlockLut], manifest: &Manifest, dir: &Path) -> Result<()> {
    check_tables(tables, manifest)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in tables {
        let mut text = String::with_capacity(48 * (t.entries.len() + 1));
        text.push_str(CSV_HEADER);
        text.push('\n');
        let mut sorted: Vec<&LutEntry> = t.entries.iter().collect();
        sorted.sort_by_key(|e| e.subnet_id);
        for e in sorted {
            format_entry(&mut text, e);
        }
        let path = dir.join(manifest.file_name(t.block_index, t.bitwidth));
        fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(|e| Error::io(path, e))
}

fn check_tables(tables: &[BlockLut], manifest: &Manifest) -> Result<()> {
    let n = manifest.space.num_blocks();
    if tables.len() != n * manifest.bitwidths.len() {
        return Err(Error::Validation(format!(
            "expected {} tables ({n} blocks x {} bitwidths), got {}",
            n * manifest.bitwidths.len(),
            manifest.bitwidths.len(),
            tables.len()
        )));
    }
    for (i, t) in tables.iter().enumerate() {
        let want = (i / manifest.bitwidths.len(), manifest.bitwidths[i % manifest.bitwidths.len()]);
        if (t.block_index, t.bitwidth) != want {
            return Err(Error::Validation(format!(
                "table {i} is (block {}, w{}), expected (block {}, w{})",
                t.block_index, t.bitwidth, want.0, want.1
            )));
        }
        if t.entries.iter().any(|e| e.bitwidth != t.bitwidth) {
            return Err(Error::Validation(format!("table {i} mixes bitwidths")));
        }
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::MissingManifest(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn read_tables(dir: &Path) -> Result<(Manifest, Vec<BlockLut>)> {
    let manifest = read_manifest(dir)?;
    let mut tables = Vec::new();
    for block in manifest.space.blocks() {
        for &bits in &manifest.bitwidths {
            let path: PathBuf = dir.join(manifest.file_name(block.index(), bits));
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let entries = parse_table(&path, &text, bits)?;
            if let Some(e) = entries.iter().find(|e| e.subnet_id >= block.subnet_count()) {
                return Err(Error::Incompatible(format!(
                    "{}: subnet {} out of range for block {}",
                    path.display(),
                    e.subnet_id,
                    block.index()
                )));
            }
            if manifest.kind == ArtifactKind::Luts && entries.len() as u64 != block.subnet_count() {
                return Err(Error::Incompatible(format!(
                    "{}: {} rows, block has {} subnets",
                    path.display(),
                    entries.len(),
                    block.subnet_count()
                )));
            }
            tables.push(BlockLut { block_index: block.index(), bitwidth: bits, entries });
        }
    }
    Ok((manifest, tables))
}

pub fn write_luts(luts: &[BlockLut], manifest: &Manifest, dir: &Path) -> Result<()> {
    if manifest.kind != ArtifactKind::Luts {
        return Err(Error::Validation("manifest does not describe LUTs".into()));
    }
    write_tables(luts, manifest, dir)
}

pub fn read_luts(dir: &Path) -> Result<(Manifest, Vec<BlockLut>)> {
    let (m, t) = read_tables(dir)?;
    if m.kind != ArtifactKind::Luts {
        return Err(Error::Incompatible(format!("{} holds fronts, not LUTs", dir.display())));
    }
    Ok((m, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{enumerate_block_subnets, OpChoice, SpaceConfig};
    use crate::synthnet::{
        fit_projection, forward_block, make_calibration_set, make_student_block, make_teacher,
        quantize_net,
    };

    fn tiny_space() -> SearchSpace {
        SpaceConfig::from_toml(
            "input_channels = 3\nop_menu = [{ kernel = 3, expansion = 3 }, { kernel = 3, expansion = 6 }, { kernel = 5, expansion = 3 }]\n\
             [[blocks]]\nlayers = 2\nchannels = 4\n[[blocks]]\nlayers = 1\nchannels = 6\n",
        )
        .unwrap()
        .build()
        .unwrap()
    }

    #[test]
    fn toy_size_count() {
        let b = BlockSpec::new(0, 1, 1, 1, vec![OpChoice::new(1, 1)]).unwrap();
        assert_eq!(model_size_bits(&b, b.subnet(0).unwrap(), 8).unwrap(), 24);
    }

    #[test]
    fn size_matches_instantiated_shapes() {
        let space = SearchSpace::default();
        for b in space.blocks() {
            for v in [0, b.subnet_count() / 2, b.subnet_count() - 1] {
                let id = b.subnet(v).unwrap();
                let net = make_student_block(b, id, 0).unwrap();
                let walked: u64 = net.tensors().map(|t| t.shape().iter().product::<usize>() as u64).sum();
                assert_eq!(model_size_bits(b, id, 6).unwrap(), walked * 6);
                assert_eq!(model_size_bits(b, id, 4).unwrap() * 2, model_size_bits(b, id, 8).unwrap());
            }
        }
    }

    #[test]
    fn latency_models() {
        let space = SearchSpace::default();
        let b = &space.blocks()[2];
        let flat = LatencyModel::affine(0.0, 2.5).unwrap();
        assert_eq!(latency_estimate(b, b.subnet(17).unwrap(), &flat).unwrap(), 2.5 * 4.0);

        let m = LatencyModel::synthetic();
        let e3 = b.encode_digits(&[0, 0, 0, 0]).unwrap();
        let e6 = b.encode_digits(&[1, 0, 0, 0]).unwrap();
        assert!(latency_estimate(b, e6, &m).unwrap() > latency_estimate(b, e3, &m).unwrap());

        let mut rows = BTreeMap::new();
        rows.insert((2, 5), 123.25);
        let table = LatencyModel::Table { source: "mem".into(), rows };
        assert_eq!(latency_estimate(b, b.subnet(5).unwrap(), &table).unwrap(), 123.25);
        assert!(matches!(
            latency_estimate(b, b.subnet(6).unwrap(), &table),
            Err(Error::MissingMeasurement { block: 2, subnet: 6 })
        ));
        assert!(LatencyModel::affine(-1.0, 0.0).is_err());
    }

    #[test]
    fn latency_csv_import() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lat.csv");
        fs::write(&p, "block,subnet_id,latency_us\n0,3,17.5\n1,0,2\n").unwrap();
        let m = LatencyModel::from_csv(&p).unwrap();
        let b = BlockSpec::new(0, 2, 4, 4, OpChoice::default_menu()).unwrap();
        assert_eq!(latency_estimate(&b, b.subnet(3).unwrap(), &m).unwrap(), 17.5);
        fs::write(&p, "block,subnet_id,latency_us\n0,x,1\n").unwrap();
        match LatencyModel::from_csv(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    /// Route 1: instantiate, fit, quantize and forward each subnet on its own.
    fn naive_losses(space: &SearchSpace, calib: &CalibrationSet, menu: &QuantMenu, opts: &BuildOptions) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for (b, bc) in space.blocks().iter().zip(&calib.blocks) {
            for s in menu.schemes() {
                let mut losses = Vec::new();
                for id in enumerate_block_subnets(b) {
                    let mut net = make_student_block(b, id, opts.student_seed).unwrap();
                    if opts.fit {
                        net = fit_projection(&net, &bc.input, &bc.target, opts.ridge).unwrap();
                    }
                    let q = quantize_net(&net, s).unwrap();
                    let y = forward_block(&q, &bc.input).unwrap();
                    losses.push(crate::nsr::nsr_loss(&bc.target, &y).unwrap());
                }
                out.push(losses);
            }
        }
        out
    }

    #[test]
    fn prefix_sharing_matches_per_subnet_evaluation() {
        let space = tiny_space();
        let teacher = make_teacher(&space, 1);
        let calib = make_calibration_set(&space, &teacher, 2, 5, 6).unwrap();
        let menu = QuantMenu::default();
        for fit in [false, true] {
            let opts = BuildOptions { fit, student_seed: 3, ..Default::default() };
            let luts = build_luts(&space, &teacher, &menu, &calib, &opts).unwrap();
            let naive = naive_losses(&space, &calib, &menu, &opts);
            assert_eq!(luts.len(), naive.len());
            for (lut, losses) in luts.iter().zip(&naive) {
                let got: Vec<f64> = lut.entries.iter().map(|e| e.loss).collect();
                assert_eq!(&got, losses, "fit={fit} block {} w{}", lut.block_index, lut.bitwidth);
            }
        }
    }

    #[test]
    fn latency_only_on_int8_by_default() {
        let space = tiny_space();
        let teacher = make_teacher(&space, 1);
        let calib = make_calibration_set(&space, &teacher, 2, 3, 4).unwrap();
        let mut opts = BuildOptions { latency: Some(LatencyModel::synthetic()), ..Default::default() };
        let luts = build_luts(&space, &teacher, &QuantMenu::default(), &calib, &opts).unwrap();
        for l in &luts {
            assert_eq!(l.entries.iter().all(|e| e.latency_us.is_some()), l.bitwidth == 8);
            assert_eq!(l.entries.iter().all(|e| e.latency_us.is_none()), l.bitwidth != 8);
        }
        opts.latency_all_bitwidths = true;
        let luts = build_luts(&space, &teacher, &QuantMenu::default(), &calib, &opts).unwrap();
        assert!(luts.iter().flat_map(|l| &l.entries).all(|e| e.latency_us.is_some()));
    }

    #[test]
    fn persistence_round_trip_and_errors() {
        let space = tiny_space();
        let teacher = make_teacher(&space, 1);
        let calib = make_calibration_set(&space, &teacher, 2, 3, 4).unwrap();
        let menu = QuantMenu::default();
        let opts = BuildOptions { latency: Some(LatencyModel::synthetic()), ..Default::default() };
        let luts = build_luts(&space, &teacher, &menu, &calib, &opts).unwrap();
        let manifest = Manifest::for_luts(&space, &menu, Seeds::from_base(1), 3, 4, &opts);
        let dir = tempfile::tempdir().unwrap();
        write_luts(&luts, &manifest, dir.path()).unwrap();
        let (m2, back) = read_luts(dir.path()).unwrap();
        assert_eq!(m2, manifest);
        assert_eq!(back, luts);
        for (a, b) in luts.iter().flat_map(|l| &l.entries).zip(back.iter().flat_map(|l| &l.entries)) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        }

        // corrupt a row
        let f = dir.path().join("lut_b1_w6.csv");
        let text = fs::read_to_string(&f).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[2] = "1,abc,10,";
        fs::write(&f, lines.join("\n")).unwrap();
        match read_luts(dir.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }

        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(read_luts(empty.path()), Err(Error::MissingManifest(_))));
    }

    #[test]
    fn tampered_manifest_rejected() {
        let space = tiny_space();
        let menu = QuantMenu::default();
        let mut manifest = Manifest::for_luts(&space, &menu, Seeds::from_base(1), 3, 4, &BuildOptions::default());
        assert!(manifest.ensure_space(&space).is_ok());
        assert!(manifest.ensure_space(&SearchSpace::default()).is_err());
        let dir = tempfile::tempdir().unwrap();
        manifest.space_hash = SearchSpace::default().content_hash();
        fs::write(dir.path().join(MANIFEST_FILE), manifest.to_json()).unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(Error::Incompatible(_))));
    }
}
