//! Browser bindings for a tiny in-memory run of the search pipeline.
//!
//! Every exported call returns a JSON string that `www/index.html` plots on a
//! canvas. The pure-Rust functions underneath are tested natively.

use qnas::lut::BlockLut;
use qnas::pareto::{prune_luts, MetricSet};
use qnas::pipeline::{build_stage, PipelineConfig};
use qnas::quant::{channel_scales, fake_quantize, rmse, QuantScheme, WeightTensor};
use qnas::search::{candidates_from_luts, sweep, SweepOutcome};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const DEMO_SPACE: &str = r#"
samples = 8
length = 6
bits = [2, 4, 6, 8]
fit = true
workers = 1

[space]
input_channels = 4
op_menu = [{ kernel = 3, expansion = 3 }, { kernel = 5, expansion = 3 }, { kernel = 3, expansion = 6 }]

[[space.blocks]]
layers = 2
channels = 6

[[space.blocks]]
layers = 2
channels = 8

[[space.blocks]]
layers = 1
channels = 10
"#;

#[derive(Debug, Serialize)]
pub struct TransferCurve {
    pub bits: u8,
    pub scale: f64,
    pub levels: u32,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub rmse: f64,
}

/// Fake-quantizes an evenly spaced ramp over `[-range, range]`.
pub fn transfer_curve(bits: u8, range: f64, points: usize) -> qnas::Result<TransferCurve> {
    if !(range > 0.0 && range.is_finite()) || points < 2 {
        return Err(qnas::Error::Validation("need a positive range and at least two points".into()));
    }
    let x: Vec<f64> = (0..points).map(|i| -range + 2.0 * range * i as f64 / (points - 1) as f64).collect();
    let ramp = WeightTensor::new(vec![1, points], 0, x.clone())?;
    let scheme = QuantScheme::weights(bits)?;
    let q = fake_quantize(&ramp, scheme)?;
    Ok(TransferCurve {
        bits,
        scale: channel_scales(&ramp, scheme)?[0],
        levels: 2 * scheme.qmax() as u32 + 1,
        y: q.data().to_vec(),
        rmse: rmse(&ramp, &q),
        x,
    })
}

#[derive(Debug, Serialize)]
pub struct ScatterPoint {
    pub subnet_id: u64,
    pub bitwidth: u8,
    pub loss: f64,
    pub size_bits: u64,
    pub on_front: bool,
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub budget: u64,
    pub mixed: Option<f64>,
    pub int8: Option<f64>,
    pub mixed_size: Option<u64>,
    pub selection: Option<String>,
}

/// LUTs of the demo space, built once per seed.
pub struct DemoState {
    luts: Vec<BlockLut>,
    blocks: usize,
}

impl DemoState {
    pub fn build(seed: u64) -> qnas::Result<Self> {
        let mut cfg = PipelineConfig::from_toml(DEMO_SPACE)?;
        cfg.seed = Some(seed);
        let (_, luts) = build_stage(&cfg)?;
        let blocks = cfg.space()?.num_blocks();
        Ok(Self { luts, blocks })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks
    }

    /// Every entry of one block with its size-front membership.
    pub fn scatter(&self, block: usize) -> qnas::Result<Vec<ScatterPoint>> {
        if block >= self.blocks {
            return Err(qnas::Error::Validation(format!("block {block} out of range")));
        }
        let tables: Vec<BlockLut> = self.luts.iter().filter(|l| l.block_index == block).cloned().collect();
        let fronts = prune_luts(&tables, &MetricSet::size())?;
        let mut points = Vec::new();
        for (lut, front) in tables.iter().zip(&fronts) {
            for e in &lut.entries {
                points.push(ScatterPoint {
                    subnet_id: e.subnet_id,
                    bitwidth: e.bitwidth,
                    loss: e.loss,
                    size_bits: e.size_bits,
                    on_front: front.entries.iter().any(|f| f.subnet_id == e.subnet_id),
                });
            }
        }
        Ok(points)
    }

    /// Mixed-precision and 8-bit-only optima over `steps` size budgets that
    /// span the 8-bit size range.
    pub fn budget_sweep(&self, steps: usize) -> qnas::Result<Vec<SweepRow>> {
        let all = candidates_from_luts(&self.luts, None)?;
        let int8 = all.filtered(&[8])?;
        let sum = |pick: fn(&[u64]) -> u64| -> u64 {
            int8.blocks.iter().map(|b| pick(&b.entries.iter().map(|e| e.size_bits).collect::<Vec<_>>())).sum()
        };
        let lo = sum(|v| *v.iter().min().unwrap());
        let hi = sum(|v| *v.iter().max().unwrap());
        let steps = steps.max(2);
        let grid: Vec<u64> = (0..steps).map(|i| lo + (hi - lo) * i as u64 / (steps - 1) as u64).collect();
        let mixed = sweep(&all, &grid, &[], None)?;
        let only8 = sweep(&all, &grid, &[], Some(&[8]))?;
        Ok(mixed
            .iter()
            .zip(&only8)
            .map(|(m, e)| SweepRow {
                budget: m.budget.max_size_bits.unwrap_or(0),
                mixed: m.result().map(|r| r.objective_loss),
                int8: e.result().map(|r| r.objective_loss),
                mixed_size: m.result().map(|r| r.total_size_bits),
                selection: match &m.outcome {
                    SweepOutcome::Found(r) => Some(r.selection_label()),
                    SweepOutcome::Infeasible(_) => None,
                },
            })
            .collect())
    }
}

fn js<T: Serialize>(r: qnas::Result<T>) -> Result<String, JsValue> {
    let v = r.map_err(|e| JsValue::from_str(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = transferCurve)]
pub fn transfer_curve_json(bits: u8, range: f64, points: usize) -> Result<String, JsValue> {
    js(transfer_curve(bits, range, points))
}

#[wasm_bindgen]
pub struct Demo(DemoState);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Demo, JsValue> {
        DemoState::build(seed.max(1) as u64).map(Demo).map_err(|e| JsValue::from_str(&e.to_string()))
    }

    #[wasm_bindgen(js_name = numBlocks)]
    pub fn num_blocks(&self) -> usize {
        self.0.num_blocks()
    }

    pub fn scatter(&self, block: usize) -> Result<String, JsValue> {
        js(self.0.scatter(block))
    }

    #[wasm_bindgen(js_name = budgetSweep)]
    pub fn budget_sweep(&self, steps: usize) -> Result<String, JsValue> {
        js(self.0.budget_sweep(steps))
    }
}
