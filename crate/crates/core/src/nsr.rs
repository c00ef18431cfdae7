//! Per-channel noise-to-signal-power ratio between a target feature map and
//! a prediction: `(1/C) * sum_c ||target_c - pred_c||^2 / var_c`, where the
//! norm runs over every sample and position of channel `c` and `var_c` is the
//! population variance of the target channel over the same elements.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::synthnet::FeatureMapBatch;

/// Target channels with a variance below this are rejected.
pub const VARIANCE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVariances(Vec<f64>);

impl ChannelVariances {
    pub fn of(batch: &FeatureMapBatch) -> Self {
        Self::of_matrix(&batch.to_matrix())
    }

    /// Rows are channels, columns are (sample, position) pairs.
    pub(crate) fn of_matrix(m: &DMatrix<f64>) -> Self {
        let n = m.ncols() as f64;
        let vars = m
            .row_iter()
            .map(|row| {
                let mean = row.iter().sum::<f64>() / n;
                row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
            })
            .collect();
        Self(vars)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Fails on the first channel whose variance is below [`VARIANCE_EPSILON`].
    pub fn ensure_nondegenerate(&self) -> Result<()> {
        match self.0.iter().position(|v| !(*v >= VARIANCE_EPSILON)) {
            Some(channel) => Err(Error::DegenerateTarget {
                channel,
                variance: self.0[channel],
                epsilon: VARIANCE_EPSILON,
            }),
            None => Ok(()),
        }
    }
}

pub fn nsr_loss(target: &FeatureMapBatch, pred: &FeatureMapBatch) -> Result<f64> {
    if target.dims() != pred.dims() {
        return Err(Error::Shape(format!(
            "target dims {:?} differ from prediction dims {:?}",
            target.dims(),
            pred.dims()
        )));
    }
    let t = target.to_matrix();
    let vars = ChannelVariances::of_matrix(&t);
    vars.ensure_nondegenerate()?;
    Ok(nsr_matrix(&t, &vars, &pred.to_matrix()))
}

/// Loss over channel-major matrices with precomputed, already validated
/// target variances.
pub(crate) fn nsr_matrix(target: &DMatrix<f64>, vars: &ChannelVariances, pred: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(target.shape(), pred.shape());
    let channels = target.nrows();
    let mut err = vec![0.0; channels];
    for (t_col, p_col) in target.column_iter().zip(pred.column_iter()) {
        for ((acc, t), p) in err.iter_mut().zip(t_col.iter()).zip(p_col.iter()) {
            let d = t - p;
            *acc += d * d;
        }
    }
    let total: f64 = err.iter().zip(vars.as_slice()).map(|(e, v)| e / v).sum();
    total / channels as f64
}
