//! Min-max fake quantization of weight tensors.
//!
//! Symmetric signed grid: for a slice with extrema `(lo, hi)` the scale is
//! `max(|lo|, |hi|) / (2^(bits-1) - 1)` and every element maps to
//! `scale * clamp(round(x / scale), -qmax, qmax)`, rounding half away from
//! zero. A slice whose scale is zero maps to zeros.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 8;

/// Dense row-major tensor whose `channel_axis` indexes output channels.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    shape: Vec<usize>,
    channel_axis: usize,
    data: Vec<f64>,
}

impl WeightTensor {
    pub fn new(shape: Vec<usize>, channel_axis: usize, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("tensor shape {shape:?} must be non-empty and positive")));
        }
        if channel_axis >= shape.len() {
            return Err(Error::Shape(format!(
                "channel axis {channel_axis} out of range for rank {}",
                shape.len()
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {len} elements but data has {}",
                data.len()
            )));
        }
        Ok(Self { shape, channel_axis, data })
    }

    pub fn zeros(shape: Vec<usize>, channel_axis: usize) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, channel_axis, vec![0.0; len])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn channel_axis(&self) -> usize {
        self.channel_axis
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.shape[self.channel_axis]
    }

    /// Elements per step along the channel axis.
    fn channel_stride(&self) -> usize {
        self.shape[self.channel_axis + 1..].iter().product()
    }

    /// Channel that the flat element `index` belongs to.
    #[inline]
    pub fn channel_of(&self, index: usize) -> usize {
        (index / self.channel_stride()) % self.channels()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            channel_axis: self.channel_axis,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    PerChannel,
    PerTensor,
}

/// Symmetric signed quantizer at a fixed bitwidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantScheme {
    bits: u8,
    granularity: Granularity,
}

impl QuantScheme {
    pub fn new(bits: u8, granularity: Granularity) -> Result<Self> {
        if !(MIN_BITS..=MAX_BITS).contains(&bits) {
            return Err(Error::Validation(format!(
                "bitwidth {bits} outside [{MIN_BITS}, {MAX_BITS}]"
            )));
        }
        Ok(Self { bits, granularity })
    }

    /// Per-channel weight quantizer.
    pub fn weights(bits: u8) -> Result<Self> {
        Self::new(bits, Granularity::PerChannel)
    }

    /// Per-tensor 8-bit quantizer used for activations.
    pub fn activations() -> Self {
        Self { bits: 8, granularity: Granularity::PerTensor }
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    /// Largest representable integer level, `2^(bits-1) - 1`.
    pub fn qmax(&self) -> f64 {
        ((1u32 << (self.bits - 1)) - 1) as f64
    }
}

impl fmt::Display for QuantScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.granularity {
            Granularity::PerChannel => write!(f, "w{}", self.bits),
            Granularity::PerTensor => write!(f, "a{}", self.bits),
        }
    }
}

impl FromStr for QuantScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (granularity, digits) = match s.split_at_checked(1) {
            Some(("w", d)) => (Granularity::PerChannel, d),
            Some(("a", d)) => (Granularity::PerTensor, d),
            _ => return Err(Error::Validation(format!("unknown scheme {s:?}, expected e.g. w4"))),
        };
        let bits = digits
            .parse()
            .map_err(|_| Error::Validation(format!("bad bitwidth in scheme {s:?}")))?;
        Self::new(bits, granularity)
    }
}

/// Ordered set of searchable weight bitwidths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct QuantMenu {
    bitwidths: Vec<u8>,
}

impl QuantMenu {
    pub fn new(bitwidths: Vec<u8>) -> Result<Self> {
        if bitwidths.is_empty() {
            return Err(Error::Validation("bitwidth menu is empty".into()));
        }
        if bitwidths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "bitwidth menu {bitwidths:?} must be strictly ascending"
            )));
        }
        for &b in &bitwidths {
            QuantScheme::weights(b)?;
        }
        Ok(Self { bitwidths })
    }

    pub fn bitwidths(&self) -> &[u8] {
        &self.bitwidths
    }

    pub fn len(&self) -> usize {
        self.bitwidths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bitwidths.is_empty()
    }

    pub fn schemes(&self) -> impl Iterator<Item = QuantScheme> + '_ {
        self.bitwidths.iter().map(|&b| QuantScheme { bits: b, granularity: Granularity::PerChannel })
    }
}

impl Default for QuantMenu {
    fn default() -> Self {
        Self { bitwidths: vec![4, 6, 8] }
    }
}

impl TryFrom<Vec<u8>> for QuantMenu {
    type Error = Error;

    fn try_from(v: Vec<u8>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<QuantMenu> for Vec<u8> {
    fn from(m: QuantMenu) -> Self {
        m.bitwidths
    }
}

/// Exact per-channel extrema.
pub fn channel_minmax(t: &WeightTensor) -> Result<Vec<(f64, f64)>> {
    let channels = t.channels();
    let stride = t.channel_stride();
    if t.len() / channels == 0 {
        return Err(Error::Shape("tensor has empty channels".into()));
    }
    let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); channels];
    for (chunk_idx, chunk) in t.data.chunks(stride).enumerate() {
        let slot = &mut out[chunk_idx % channels];
        for &x in chunk {
            slot.0 = slot.0.min(x);
            slot.1 = slot.1.max(x);
        }
    }
    Ok(out)
}

/// Quantization step per channel (a single shared step for per-tensor schemes).
pub fn channel_scales(t: &WeightTensor, s: QuantScheme) -> Result<Vec<f64>> {
    let extrema = channel_minmax(t)?;
    let qmax = s.qmax();
    let absmax = |(lo, hi): (f64, f64)| lo.abs().max(hi.abs());
    Ok(match s.granularity {
        Granularity::PerChannel => extrema.into_iter().map(|e| absmax(e) / qmax).collect(),
        Granularity::PerTensor => {
            let m = extrema.into_iter().map(absmax).fold(0.0, f64::max);
            vec![m / qmax; t.channels()]
        }
    })
}

#[inline]
fn quantize_value(x: f64, scale: f64, qmax: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    // f64::round rounds half away from zero
    scale * (x / scale).round().clamp(-qmax, qmax)
}

pub fn fake_quantize(t: &WeightTensor, s: QuantScheme) -> Result<WeightTensor> {
    let s = QuantScheme::new(s.bits, s.granularity)?;
    let scales = channel_scales(t, s)?;
    let qmax = s.qmax();
    let stride = t.channel_stride();
    let channels = t.channels();
    let mut out = t.clone();
    for (chunk_idx, chunk) in out.data.chunks_mut(stride).enumerate() {
        let scale = scales[chunk_idx % channels];
        for x in chunk {
            *x = quantize_value(*x, scale, qmax);
        }
    }
    Ok(out)
}

pub fn quantize_block_weights(weights: &[WeightTensor], s: QuantScheme) -> Result<Vec<WeightTensor>> {
    weights.iter().map(|t| fake_quantize(t, s)).collect()
}

/// Root-mean-square difference between two equally shaped tensors.
pub fn rmse(a: &WeightTensor, b: &WeightTensor) -> f64 {
    assert_eq!(a.shape, b.shape);
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    (sum / a.len() as f64).sqrt()
}
