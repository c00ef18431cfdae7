//! Deterministic synthetic teacher/student pipeline.
//!
//! Each layer is a 1-D MBConv analogue: a pointwise expansion to
//! `e * c_in` channels, tanh, a depthwise 1-D convolution of width `k` with
//! same-padding, tanh, and a linear pointwise projection to `c_out`.
//! Feature maps are `[sample][channel][position]`; internally they are held
//! as channel-major matrices whose columns are `(sample, position)` pairs.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nsr::{nsr_matrix, ChannelVariances};
use crate::quant::{quantize_block_weights, QuantScheme, WeightTensor};
use crate::space::{BlockSpec, OpChoice, SearchSpace, SubnetId};

pub const DEFAULT_SAMPLES: usize = 20;
pub const DEFAULT_LENGTH: usize = 8;
pub const DEFAULT_RIDGE: f64 = 1e-6;

const TEACHER_STREAM: u64 = 0x7465_6163;
const STUDENT_STREAM: u64 = 0x7374_7564;
const CALIB_STREAM: u64 = 0x6361_6c69;

/// Op used for every teacher layer (the MobileNetV2 inverted residual).
pub const TEACHER_OP: OpChoice = OpChoice::new(3, 6);

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapBatch {
    samples: usize,
    channels: usize,
    length: usize,
    data: Vec<f64>,
}

impl FeatureMapBatch {
    pub fn new(samples: usize, channels: usize, length: usize, data: Vec<f64>) -> Result<Self> {
        if samples == 0 || channels == 0 || length == 0 {
            return Err(Error::Shape("feature map dimensions must be >= 1".into()));
        }
        if data.len() != samples * channels * length {
            return Err(Error::Shape(format!(
                "{samples}x{channels}x{length} feature map needs {} values, got {}",
                samples * channels * length,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("feature map contains non-finite values".into()));
        }
        Ok(Self { samples, channels, length, data })
    }

    pub fn zeros(samples: usize, channels: usize, length: usize) -> Result<Self> {
        Self::new(samples, channels, length, vec![0.0; samples * channels * length])
    }

    /// `(samples, channels, length)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.samples, self.channels, self.length)
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, sample: usize, channel: usize, position: usize) -> f64 {
        self.data[(sample * self.channels + channel) * self.length + position]
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { data: self.data.iter().map(|x| x * k).collect(), ..self.clone() }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let (m, c, l) = self.dims();
        DMatrix::from_fn(c, m * l, |ch, col| self.get(col / l, ch, col % l))
    }

    pub(crate) fn from_matrix(mat: &DMatrix<f64>, samples: usize, length: usize) -> Self {
        let channels = mat.nrows();
        let mut data = Vec::with_capacity(mat.len());
        for s in 0..samples {
            for c in 0..channels {
                for p in 0..length {
                    data.push(mat[(c, s * length + p)]);
                }
            }
        }
        Self { samples, channels, length, data }
    }

    /// Writes the batch as a flat little-endian file: the 8-byte magic
    /// `QNASFMAP`, three `u64` dims (samples, channels, length), then every
    /// value as an `f64` in `[sample][channel][position]` order.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + 8 * self.data.len());
        buf.extend_from_slice(BATCH_MAGIC);
        for d in [self.samples, self.channels, self.length] {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::Parse { file: path.to_path_buf(), line: 0, msg: msg.into() };
        if buf.len() < 32 || &buf[..8] != BATCH_MAGIC {
            return Err(bad("not a feature map file"));
        }
        let word = |i: usize| u64::from_le_bytes(buf[i..i + 8].try_into().unwrap());
        let (m, c, l) = (word(8) as usize, word(16) as usize, word(24) as usize);
        let body = &buf[32..];
        if body.len() != 8 * m * c * l {
            return Err(bad("payload size does not match header"));
        }
        let data = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(m, c, l, data)
    }
}

const BATCH_MAGIC: &[u8; 8] = b"QNASFMAP";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// Disables the nonlinearity; only useful for testing linear structure.
    Identity,
}

/// Weights of one layer, all with the output channel on axis 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub op: OpChoice,
    /// `[e * c_in, c_in]`
    pub expand: WeightTensor,
    /// `[e * c_in, k]`
    pub depthwise: WeightTensor,
    /// `[c_out, e * c_in]`
    pub project: WeightTensor,
}

impl LayerWeights {
    /// Standard-normal entries scaled by `1/sqrt(fan_in)`.
    fn random(rng: &mut ChaCha8Rng, op: OpChoice, c_in: usize, c_out: usize) -> Self {
        let hidden = op.expansion * c_in;
        let mut draw = |rows: usize, cols: usize| {
            let gain = 1.0 / (cols as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| gain * rng.sample::<f64, _>(StandardNormal))
                .collect();
            WeightTensor::new(vec![rows, cols], 0, data).expect("consistent shape")
        };
        let expand = draw(hidden, c_in);
        let depthwise = draw(hidden, op.kernel_size);
        let project = draw(c_out, hidden);
        Self { op, expand, depthwise, project }
    }

    pub fn tensors(&self) -> [&WeightTensor; 3] {
        [&self.expand, &self.depthwise, &self.project]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub(crate) fn quantized(&self, s: QuantScheme) -> Result<Self> {
        let q = quantize_block_weights(&[self.expand.clone(), self.depthwise.clone(), self.project.clone()], s)?;
        let [expand, depthwise, project]: [WeightTensor; 3] = q.try_into().expect("three tensors");
        Ok(Self { op: self.op, expand, depthwise, project })
    }
}

/// Weights of one block subnet.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockNet {
    in_channels: usize,
    out_channels: usize,
    layers: Vec<LayerWeights>,
    activation: Activation,
    activation_quant: Option<QuantScheme>,
}

impl BlockNet {
    pub fn new(in_channels: usize, out_channels: usize, layers: Vec<LayerWeights>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("block net needs at least one layer".into()));
        }
        let mut c_in = in_channels;
        for (i, l) in layers.iter().enumerate() {
            let hidden = l.op.expansion * c_in;
            let c_out = if i + 1 == layers.len() { out_channels } else { l.project.shape()[0] };
            let ok = l.expand.shape() == [hidden, c_in]
                && l.depthwise.shape() == [hidden, l.op.kernel_size]
                && l.project.shape() == [c_out, hidden]
                && l.op.kernel_size % 2 == 1;
            if !ok {
                return Err(Error::Shape(format!("layer {i} tensors do not match op {}", l.op)));
            }
            c_in = c_out;
        }
        Ok(Self {
            in_channels,
            out_channels,
            layers,
            activation: Activation::Tanh,
            activation_quant: None,
        })
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn activation_quant(&self) -> Option<QuantScheme> {
        self.activation_quant
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerWeights::param_count).sum()
    }

    /// Every weight tensor, layer by layer (expand, depthwise, project).
    pub fn tensors(&self) -> impl Iterator<Item = &WeightTensor> {
        self.layers.iter().flat_map(|l| l.tensors())
    }

    pub(crate) fn stages(&self, length: usize) -> Stages {
        Stages { length, activation: self.activation, activation_quant: self.activation_quant }
    }
}

/// Fake-quantizes every weight tensor of `net` with `s` and turns on 8-bit
/// per-tensor activation quantization.
pub fn quantize_net(net: &BlockNet, s: QuantScheme) -> Result<BlockNet> {
    let layers = net.layers.iter().map(|l| l.quantized(s)).collect::<Result<Vec<_>>>()?;
    Ok(BlockNet { layers, activation_quant: Some(QuantScheme::activations()), ..net.clone() })
}

pub(crate) fn derive_seed(parts: &[u64]) -> u64 {
    // splitmix64 finaliser folded over the parts
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Shared weights of `(block, layer, op)` for a student supernet.
pub(crate) fn student_layer(block: &BlockSpec, layer: usize, op_index: usize, seed: u64) -> LayerWeights {
    let op = block.op_menu()[op_index];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
        STUDENT_STREAM,
        seed,
        block.index() as u64,
        layer as u64,
        op_index as u64,
    ]));
    LayerWeights::random(&mut rng, op, block.layer_in_channels(layer), block.out_channels())
}

/// Instantiates subnet `id`; layers that share an op with another subnet
/// share its weights.
pub fn make_student_block(block: &BlockSpec, id: SubnetId, seed: u64) -> Result<BlockNet> {
    let digits = block.decode_digits(id)?;
    let layers = digits
        .iter()
        .enumerate()
        .map(|(layer, &d)| student_layer(block, layer, d, seed))
        .collect();
    BlockNet::new(block.in_channels(), block.out_channels(), layers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherNet {
    seed: u64,
    blocks: Vec<BlockNet>,
}

impl TeacherNet {
    pub fn blocks(&self) -> &[BlockNet] {
        &self.blocks
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// The op a teacher block uses: [`TEACHER_OP`] when the block offers it,
/// otherwise the last op of the block's menu.
pub fn teacher_op(block: &BlockSpec) -> OpChoice {
    if block.op_index(TEACHER_OP).is_some() {
        TEACHER_OP
    } else {
        *block.op_menu().last().expect("menu is non-empty")
    }
}

pub fn make_teacher(space: &SearchSpace, seed: u64) -> TeacherNet {
    let blocks = space
        .blocks()
        .iter()
        .map(|b| {
            let op = teacher_op(b);
            let layers = (0..b.num_layers())
                .map(|l| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
                        TEACHER_STREAM,
                        seed,
                        b.index() as u64,
                        l as u64,
                    ]));
                    LayerWeights::random(&mut rng, op, b.layer_in_channels(l), b.out_channels())
                })
                .collect();
            BlockNet::new(b.in_channels(), b.out_channels(), layers).expect("teacher geometry")
        })
        .collect();
    TeacherNet { seed, blocks }
}

/// Layer weights as matrices.
pub(crate) struct LayerMats {
    pub expand: DMatrix<f64>,
    pub depthwise: DMatrix<f64>,
    pub project: DMatrix<f64>,
}

pub(crate) fn to_mat(t: &WeightTensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.shape()[0], t.shape()[1], t.data())
}

impl LayerMats {
    pub fn of(l: &LayerWeights) -> Self {
        Self { expand: to_mat(&l.expand), depthwise: to_mat(&l.depthwise), project: to_mat(&l.project) }
    }
}

/// Stage arithmetic shared by every forward path.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stages {
    pub length: usize,
    pub activation: Activation,
    pub activation_quant: Option<QuantScheme>,
}

impl Stages {
    fn quantize_activation(&self, m: &mut DMatrix<f64>) {
        if let Some(s) = self.activation_quant {
            let absmax = m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
            let scale = absmax / s.qmax();
            if scale == 0.0 {
                m.fill(0.0);
            } else {
                let q = s.qmax();
                m.apply(|x| *x = scale * (*x / scale).round().clamp(-q, q));
            }
        }
    }

    fn activate(&self, m: &mut DMatrix<f64>) {
        if self.activation == Activation::Tanh {
            m.apply(|x| *x = x.tanh());
        }
        self.quantize_activation(m);
    }

    fn depthwise(&self, z: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
        let rows = z.nrows();
        let len = self.length;
        let k = w.ncols();
        let half = (k / 2) as isize;
        let samples = z.ncols() / len;
        let mut out = DMatrix::zeros(rows, z.ncols());
        let zs = z.as_slice();
        let os = out.as_mut_slice();
        for j in 0..k {
            let wj = w.column(j);
            let wj = wj.as_slice();
            for s in 0..samples {
                for p in 0..len {
                    let q = p as isize + j as isize - half;
                    if q < 0 || q >= len as isize {
                        continue;
                    }
                    let dst = (s * len + p) * rows;
                    let src = (s * len + q as usize) * rows;
                    for r in 0..rows {
                        os[dst + r] += wj[r] * zs[src + r];
                    }
                }
            }
        }
        out
    }

    /// Expand, activate, depthwise, activate.
    pub fn hidden(&self, x: &DMatrix<f64>, m: &LayerMats) -> DMatrix<f64> {
        let mut z = &m.expand * x;
        self.activate(&mut z);
        let mut h = self.depthwise(&z, &m.depthwise);
        self.activate(&mut h);
        h
    }

    pub fn project(&self, h: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = p * h;
        self.quantize_activation(&mut y);
        y
    }

    pub fn layer(&self, x: &DMatrix<f64>, m: &LayerMats) -> DMatrix<f64> {
        self.project(&self.hidden(x, m), &m.project)
    }
}

fn check_input(net: &BlockNet, x: &FeatureMapBatch) -> Result<()> {
    if x.channels() != net.in_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, block expects {}",
            x.channels(),
            net.in_channels
        )));
    }
    Ok(())
}

/// Output of every layer but the last, followed by the last layer's hidden
/// features (the input of the final projection).
fn final_hidden(net: &BlockNet, x: &DMatrix<f64>, stages: &Stages) -> DMatrix<f64> {
    let (last, prefix) = net.layers.split_last().expect("non-empty");
    let mut cur = x.clone();
    for l in prefix {
        cur = stages.layer(&cur, &LayerMats::of(l));
    }
    stages.hidden(&cur, &LayerMats::of(last))
}

pub fn forward_block(net: &BlockNet, x: &FeatureMapBatch) -> Result<FeatureMapBatch> {
    check_input(net, x)?;
    let stages = net.stages(x.length());
    let h = final_hidden(net, &x.to_matrix(), &stages);
    let last = net.layers.last().expect("non-empty");
    let y = stages.project(&h, &to_mat(&last.project));
    Ok(FeatureMapBatch::from_matrix(&y, x.samples(), x.length()))
}

/// Proximal ridge solve for the projection: minimises
/// `||Y - P H||^2 + ridge * ||P - P0||^2` row by row. The per-channel
/// variance weights scale each row's objective uniformly and drop out.
pub(crate) fn solve_projection(
    h: &DMatrix<f64>,
    y: &DMatrix<f64>,
    p0: &DMatrix<f64>,
    ridge: f64,
) -> Result<DMatrix<f64>> {
    let residual = y - p0 * h;
    let (d, n) = h.shape();
    let singular = || Error::Numerical(format!("normal matrix is singular (ridge {ridge:e})"));
    let delta = if d <= n {
        let mut g = h * h.transpose();
        for i in 0..d {
            g[(i, i)] += ridge;
        }
        let rhs = h * residual.transpose();
        g.cholesky().ok_or_else(singular)?.solve(&rhs).transpose()
    } else {
        let mut k = h.transpose() * h;
        for i in 0..n {
            k[(i, i)] += ridge;
        }
        let a = k.cholesky().ok_or_else(singular)?.solve(&residual.transpose());
        (h * a).transpose()
    };
    let p = p0 + delta;
    if p.iter().any(|x| !x.is_finite()) {
        return Err(singular());
    }
    Ok(p)
}

/// Fitted projection given the final hidden features; falls back to `p0`
/// whenever the solve would not lower the calibration loss.
pub(crate) fn fit_from_hidden(
    stages: &Stages,
    h: &DMatrix<f64>,
    target: &DMatrix<f64>,
    vars: &ChannelVariances,
    p0: &DMatrix<f64>,
    ridge: f64,
) -> Result<DMatrix<f64>> {
    let fitted = solve_projection(h, target, p0, ridge)?;
    let before = nsr_matrix(target, vars, &stages.project(h, p0));
    let after = nsr_matrix(target, vars, &stages.project(h, &fitted));
    Ok(if after <= before { fitted } else { p0.clone() })
}

pub(crate) fn mat_to_tensor(m: &DMatrix<f64>) -> WeightTensor {
    let (r, c) = m.shape();
    let data = (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|ij| m[ij]).collect();
    WeightTensor::new(vec![r, c], 0, data).expect("consistent shape")
}

/// Refits the final layer's projection to `target` on `input`; every other
/// tensor is left untouched and the calibration loss never increases.
pub fn fit_projection(
    net: &BlockNet,
    input: &FeatureMapBatch,
    target: &FeatureMapBatch,
    ridge: f64,
) -> Result<BlockNet> {
    check_input(net, input)?;
    if !(ridge >= 0.0) {
        return Err(Error::Validation(format!("ridge must be non-negative, got {ridge}")));
    }
    if target.dims() != (input.samples(), net.out_channels, input.length()) {
        return Err(Error::Shape(format!(
            "target dims {:?} do not match block output",
            target.dims()
        )));
    }
    let stages = net.stages(input.length());
    let y = target.to_matrix();
    let vars = ChannelVariances::of_matrix(&y);
    vars.ensure_nondegenerate()?;
    let h = final_hidden(net, &input.to_matrix(), &stages);
    let p0 = to_mat(&net.layers.last().expect("non-empty").project);
    let p = fit_from_hidden(&stages, &h, &y, &vars, &p0, ridge)?;
    let mut out = net.clone();
    out.layers.last_mut().expect("non-empty").project = mat_to_tensor(&p);
    Ok(out)
}

/// Input and distillation target of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCalibration {
    pub input: FeatureMapBatch,
    pub target: FeatureMapBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub seed: u64,
    pub blocks: Vec<BlockCalibration>,
}

impl CalibrationSet {
    pub fn samples(&self) -> usize {
        self.blocks[0].input.samples()
    }

    pub fn length(&self) -> usize {
        self.blocks[0].input.length()
    }
}

/// Block 0 sees seeded standard-normal input; block `i > 0` sees the
/// teacher's block `i - 1` output, and block `i` is supervised by the
/// teacher's block `i` output.
pub fn make_calibration_set(
    space: &SearchSpace,
    teacher: &TeacherNet,
    seed: u64,
    samples: usize,
    length: usize,
) -> Result<CalibrationSet> {
    if samples == 0 || length == 0 {
        return Err(Error::Validation("calibration needs at least one sample and position".into()));
    }
    if teacher.blocks.len() != space.num_blocks() {
        return Err(Error::Incompatible("teacher does not match the search space".into()));
    }
    let c0 = space.blocks()[0].in_channels();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[CALIB_STREAM, seed]));
    let data = (0..samples * c0 * length).map(|_| rng.sample(StandardNormal)).collect();
    let mut input = FeatureMapBatch::new(samples, c0, length, data)?;
    let mut blocks = Vec::with_capacity(space.num_blocks());
    for net in &teacher.blocks {
        let target = forward_block(net, &input)?;
        blocks.push(BlockCalibration { input, target: target.clone() });
        input = target;
    }
    Ok(CalibrationSet { seed, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nsr::nsr_loss;
    use crate::space::{enumerate_block_subnets, SpaceConfig};

    fn small_space() -> SearchSpace {
        SpaceConfig::from_toml(
            "input_channels = 3\n[[blocks]]\nlayers = 2\nchannels = 4\n[[blocks]]\nlayers = 1\nchannels = 5\n",
        )
        .unwrap()
        .build()
        .unwrap()
    }

    fn scalar_layer(e: f64, d: f64, p: f64) -> LayerWeights {
        let t = |v| WeightTensor::new(vec![1, 1], 0, vec![v]).unwrap();
        LayerWeights { op: OpChoice::new(1, 1), expand: t(e), depthwise: t(d), project: t(p) }
    }

    #[test]
    fn teacher_is_deterministic_and_seeded() {
        let space = small_space();
        assert_eq!(make_teacher(&space, 7), make_teacher(&space, 7));
        assert_ne!(make_teacher(&space, 7), make_teacher(&space, 8));
    }

    #[test]
    fn fan_in_scaling() {
        // 96 input channels, e = 6: 576 * 96 = 55296 expand entries per layer
        let cfg = SpaceConfig::from_toml("input_channels = 96\n[[blocks]]\nlayers = 1\nchannels = 96\n").unwrap();
        let teacher = make_teacher(&cfg.build().unwrap(), 1);
        let e = &teacher.blocks()[0].layers()[0].expand;
        assert!(e.len() >= 10_000);
        let n = e.len() as f64;
        let mean = e.data().iter().sum::<f64>() / n;
        let var = e.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let want = 1.0 / 96.0;
        assert!((var - want).abs() < 0.2 * want, "variance {var} vs {want}");
    }

    #[test]
    fn student_weight_sharing_and_shapes() {
        let space = SearchSpace::default();
        let b = &space.blocks()[0];
        // digits (0,1,2) and (0,5,5): same layer-0 op
        let a = make_student_block(b, b.encode_digits(&[0, 1, 2]).unwrap(), 3).unwrap();
        let c = make_student_block(b, b.encode_digits(&[0, 5, 5]).unwrap(), 3).unwrap();
        assert_eq!(a.layers()[0], c.layers()[0]);
        assert_ne!(a.layers()[1], c.layers()[1]);
        // e=6 vs e=3 at layer 0
        let e6 = make_student_block(b, b.encode_digits(&[1, 0, 0]).unwrap(), 3).unwrap();
        let e3 = make_student_block(b, b.encode_digits(&[0, 0, 0]).unwrap(), 3).unwrap();
        assert_eq!(e6.layers()[0].expand.shape()[0], 2 * e3.layers()[0].expand.shape()[0]);
        assert_eq!(e6.layers()[0].expand.shape()[1], e3.layers()[0].expand.shape()[1]);
        assert_eq!(make_student_block(b, b.subnet(9).unwrap(), 3).unwrap(), make_student_block(b, b.subnet(9).unwrap(), 3).unwrap());
        assert!(make_student_block(b, SubnetId { block_index: 0, value: 216 }, 3).is_err());
    }

    #[test]
    fn hand_evaluated_scalar_net() {
        let net = BlockNet::new(1, 1, vec![scalar_layer(2.0, 1.0, 1.0)]).unwrap();
        let x = FeatureMapBatch::new(1, 1, 1, vec![0.5]).unwrap();
        let y = forward_block(&net, &x).unwrap();
        assert!((y.data()[0] - 0.642_015_0).abs() < 1e-6);
        assert_eq!(y.data()[0], (1.0f64).tanh().tanh());

        let zero = BlockNet::new(1, 1, vec![scalar_layer(0.0, 0.0, 0.0)]).unwrap();
        let x0 = FeatureMapBatch::zeros(1, 1, 1).unwrap();
        assert_eq!(forward_block(&zero, &x0).unwrap(), x0);
    }

    #[test]
    fn linear_without_nonlinearity() {
        let space = small_space();
        let b = &space.blocks()[0];
        let net = make_student_block(b, b.subnet(5).unwrap(), 1).unwrap().with_activation(Activation::Identity);
        let teacher = make_teacher(&space, 1);
        let calib = make_calibration_set(&space, &teacher, 2, 3, 6).unwrap();
        let x = &calib.blocks[0].input;
        let y1 = forward_block(&net, x).unwrap();
        let y2 = forward_block(&net, &x.scaled(2.0)).unwrap();
        for (a, b) in y1.data().iter().zip(y2.data()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn depthwise_same_padding() {
        // k = 3 identity-ish kernel [1, 0, 0] shifts the sequence right
        let t = |shape: Vec<usize>, v: Vec<f64>| WeightTensor::new(shape, 0, v).unwrap();
        let layer = LayerWeights {
            op: OpChoice::new(3, 1),
            expand: t(vec![1, 1], vec![1.0]),
            depthwise: t(vec![1, 3], vec![1.0, 0.0, 0.0]),
            project: t(vec![1, 1], vec![1.0]),
        };
        let net = BlockNet::new(1, 1, vec![layer]).unwrap().with_activation(Activation::Identity);
        let x = FeatureMapBatch::new(2, 1, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = forward_block(&net, &x).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0, 2.0, 0.0, 4.0, 5.0]);
    }

    #[test]
    fn channel_mismatch() {
        let net = BlockNet::new(1, 1, vec![scalar_layer(1.0, 1.0, 1.0)]).unwrap();
        let x = FeatureMapBatch::zeros(1, 2, 1).unwrap();
        assert!(matches!(forward_block(&net, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn calibration_chaining() {
        let space = small_space();
        let teacher = make_teacher(&space, 1);
        let calib = make_calibration_set(&space, &teacher, 9, DEFAULT_SAMPLES, 5).unwrap();
        assert_eq!(calib.samples(), 20);
        assert_eq!(calib.blocks[0].target, calib.blocks[1].input);
        for (net, bc) in teacher.blocks().iter().zip(&calib.blocks) {
            let y = forward_block(net, &bc.input).unwrap();
            assert!(nsr_loss(&bc.target, &y).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn fit_never_hurts() {
        let space = small_space();
        let teacher = make_teacher(&space, 1);
        let calib = make_calibration_set(&space, &teacher, 2, 4, 6).unwrap();
        for (b, bc) in space.blocks().iter().zip(&calib.blocks) {
            for id in enumerate_block_subnets(b).into_iter().step_by(5) {
                let net = make_student_block(b, id, 4).unwrap();
                let before = nsr_loss(&bc.target, &forward_block(&net, &bc.input).unwrap()).unwrap();
                let fitted = fit_projection(&net, &bc.input, &bc.target, DEFAULT_RIDGE).unwrap();
                let after = nsr_loss(&bc.target, &forward_block(&fitted, &bc.input).unwrap()).unwrap();
                assert!(after <= before, "{after} > {before}");
                for (l0, l1) in net.layers()[..net.layers().len() - 1].iter().zip(fitted.layers()) {
                    assert_eq!(l0, l1);
                }
            }
        }
        // self-supervised: the teacher block is already optimal
        let bc = &calib.blocks[0];
        let own = fit_projection(&teacher.blocks()[0], &bc.input, &bc.target, DEFAULT_RIDGE).unwrap();
        assert!(nsr_loss(&bc.target, &forward_block(&own, &bc.input).unwrap()).unwrap() <= 1e-12);
    }

    #[test]
    fn fit_rejects_bad_ridge() {
        let space = small_space();
        let teacher = make_teacher(&space, 1);
        let calib = make_calibration_set(&space, &teacher, 2, 4, 6).unwrap();
        let bc = &calib.blocks[0];
        assert!(fit_projection(&teacher.blocks()[0], &bc.input, &bc.target, -1.0).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        let x = FeatureMapBatch::new(2, 3, 2, (0..12).map(|i| i as f64 * 0.1 - 0.3).collect()).unwrap();
        x.write_binary(&path).unwrap();
        assert_eq!(FeatureMapBatch::read_binary(&path).unwrap(), x);
        std::fs::write(&path, b"junk").unwrap();
        assert!(FeatureMapBatch::read_binary(&path).is_err());
    }

    #[test]
    fn quantized_net_quantizes_everything() {
        let space = small_space();
        let b = &space.blocks()[0];
        let net = make_student_block(b, b.subnet(3).unwrap(), 1).unwrap();
        let s = QuantScheme::weights(4).unwrap();
        let q = quantize_net(&net, s).unwrap();
        assert_eq!(q.activation_quant(), Some(QuantScheme::activations()));
        for (t, tq) in net.tensors().zip(q.tensors()) {
            assert_eq!(&crate::quant::fake_quantize(t, s).unwrap(), tq);
        }
    }
}
