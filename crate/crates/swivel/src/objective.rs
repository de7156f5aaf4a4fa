//! PMI targets, confidence weights, and the piecewise loss.
//!
//! Observed cells (count > 0) pay a confidence-weighted squared error
//! against their PMI. Unobserved cells pay a soft hinge against the
//! smoothed PMI (the value the cell would have with a single observed
//! co-occurrence), which penalizes over-estimation but forgives
//! under-estimation. Cells whose row or column marginal is zero — padding —
//! contribute nothing.
//!
//! All loss math is double precision, whatever the storage precision of the
//! embeddings.

use crate::error::{Result, SwivelError};
use crate::matrix::Shard;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Confidence weight parameters: f(x) = b0 + b * x^alpha.
#[derive(Debug, Clone, Copy)]
pub struct WeightParams {
    pub alpha: f64,
    pub b0: f64,
    pub b: f64,
}

impl Default for WeightParams {
    fn default() -> Self {
        WeightParams {
            alpha: 0.5,
            b0: 0.1,
            b: 0.25,
        }
    }
}

impl WeightParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(SwivelError::Config(format!(
                "alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.b0 >= 0.0) {
            return Err(SwivelError::Config(format!("b0 must be >= 0, got {}", self.b0)));
        }
        if !(self.b > 0.0) {
            return Err(SwivelError::Config(format!("b must be > 0, got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ObjectiveConfig {
    pub weights: WeightParams,
    /// Subtracted from every PMI target; log(negative samples) emulates the
    /// shifted objective that negative-sampling methods factorize.
    pub shift: f64,
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !self.shift.is_finite() {
            return Err(SwivelError::Config(format!("shift must be finite, got {}", self.shift)));
        }
        Ok(())
    }
}

/// Loss and per-cell gradient of one shard's predictions.
#[derive(Debug, Clone)]
pub struct ShardGradient {
    /// Sum of per-cell losses over the shard.
    pub loss: f64,
    /// Row-major d(loss)/d(prediction), length k*k.
    pub grad: Vec<f64>,
}

/// Point-wise mutual information from counts:
/// log x_ij + log total - log x_row - log x_col.
pub fn pmi(x_ij: f64, x_row: f64, x_col: f64, total: f64) -> Result<f64> {
    for (name, v) in [("x_ij", x_ij), ("x_row", x_row), ("x_col", x_col), ("total", total)] {
        if !(v > 0.0) {
            return Err(SwivelError::Config(format!(
                "pmi requires strictly positive arguments, got {name} = {v}"
            )));
        }
    }
    Ok(pmi_unchecked(x_ij, x_row, x_col, total))
}

#[inline]
fn pmi_unchecked(x_ij: f64, x_row: f64, x_col: f64, total: f64) -> f64 {
    x_ij.ln() + total.ln() - x_row.ln() - x_col.ln()
}

/// PMI computed as if the unobserved cell held a single co-occurrence.
pub fn smoothed_pmi(x_row: f64, x_col: f64, total: f64) -> Result<f64> {
    pmi(1.0, x_row, x_col, total)
}

#[inline]
fn smoothed_pmi_unchecked(x_row: f64, x_col: f64, total: f64) -> f64 {
    total.ln() - x_row.ln() - x_col.ln()
}

/// Confidence in an observed count: b0 + b * x^alpha, strictly increasing.
#[inline]
pub fn confidence(x_ij: f64, w: &WeightParams) -> f64 {
    debug_assert!(x_ij > 0.0);
    w.b0 + w.b * x_ij.powf(w.alpha)
}

/// Stable log(1 + e^z).
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Stable logistic sigmoid.
#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Squared-error branch for an observed cell. Returns (loss, dloss/dp).
#[inline]
pub fn loss_observed(
    p: f64,
    x_ij: f64,
    x_row: f64,
    x_col: f64,
    total: f64,
    cfg: &ObjectiveConfig,
) -> (f64, f64) {
    debug_assert!(x_ij > 0.0 && x_row > 0.0 && x_col > 0.0 && total > 0.0);
    let target = pmi_unchecked(x_ij, x_row, x_col, total) - cfg.shift;
    let f = confidence(x_ij, &cfg.weights);
    let err = p - target;
    (0.5 * f * err * err, f * err)
}

/// Soft-hinge branch for an unobserved cell. Returns (loss, dloss/dp).
#[inline]
pub fn loss_unobserved(
    p: f64,
    x_row: f64,
    x_col: f64,
    total: f64,
    cfg: &ObjectiveConfig,
) -> (f64, f64) {
    debug_assert!(x_row > 0.0 && x_col > 0.0 && total > 0.0);
    let target = smoothed_pmi_unchecked(x_row, x_col, total) - cfg.shift;
    let z = p - target;
    (softplus(z), sigmoid(z))
}

/// Loss and gradient for a whole shard of predictions.
///
/// Per cell: observed branch if the count is positive, soft hinge if it is
/// zero, and exactly (0, 0) when the row or column marginal is zero.
pub fn shard_objective(predictions: &[f64], shard: &Shard, cfg: &ObjectiveConfig) -> Result<ShardGradient> {
    let k = shard.k;
    if predictions.len() != k * k {
        return Err(SwivelError::Config(format!(
            "prediction shape mismatch: got {} values for a {k}x{k} shard",
            predictions.len()
        )));
    }
    let mut grad = vec![0.0; k * k];
    let loss = shard_objective_into(predictions, shard, cfg, &mut grad);
    Ok(ShardGradient { loss, grad })
}

/// In-place core of [`shard_objective`]; dispatches on the `parallel`
/// feature. `grad` must have length k*k.
pub fn shard_objective_into(predictions: &[f64], shard: &Shard, cfg: &ObjectiveConfig, grad: &mut [f64]) -> f64 {
    #[cfg(feature = "parallel")]
    {
        shard_objective_into_par(predictions, shard, cfg, grad)
    }
    #[cfg(not(feature = "parallel"))]
    {
        shard_objective_into_seq(predictions, shard, cfg, grad)
    }
}

pub fn shard_objective_into_seq(
    predictions: &[f64],
    shard: &Shard,
    cfg: &ObjectiveConfig,
    grad: &mut [f64],
) -> f64 {
    let k = shard.k;
    assert_eq!(predictions.len(), k * k);
    assert_eq!(grad.len(), k * k);
    let mut loss = 0.0;
    for t in 0..k {
        loss += objective_row(
            &predictions[t * k..(t + 1) * k],
            &shard.counts[t * k..(t + 1) * k],
            shard.row_marginals[t],
            &shard.col_marginals,
            shard.total,
            cfg,
            &mut grad[t * k..(t + 1) * k],
        );
    }
    loss
}

/// Row-parallel variant. Per-row losses are reduced in row order, so the
/// result is bit-identical to the sequential kernel.
#[cfg(feature = "parallel")]
pub fn shard_objective_into_par(
    predictions: &[f64],
    shard: &Shard,
    cfg: &ObjectiveConfig,
    grad: &mut [f64],
) -> f64 {
    let k = shard.k;
    assert_eq!(predictions.len(), k * k);
    assert_eq!(grad.len(), k * k);
    let row_losses: Vec<f64> = grad
        .par_chunks_mut(k)
        .with_min_len(8)
        .enumerate()
        .map(|(t, grad_row)| {
            objective_row(
                &predictions[t * k..(t + 1) * k],
                &shard.counts[t * k..(t + 1) * k],
                shard.row_marginals[t],
                &shard.col_marginals,
                shard.total,
                cfg,
                grad_row,
            )
        })
        .collect();
    row_losses.iter().sum()
}

#[inline]
fn objective_row(
    predictions: &[f64],
    counts: &[f32],
    row_marginal: f64,
    col_marginals: &[f64],
    total: f64,
    cfg: &ObjectiveConfig,
    grad: &mut [f64],
) -> f64 {
    if row_marginal == 0.0 {
        grad.fill(0.0);
        return 0.0;
    }
    let mut loss = 0.0;
    for u in 0..predictions.len() {
        let col_marginal = col_marginals[u];
        if col_marginal == 0.0 {
            grad[u] = 0.0;
            continue;
        }
        let x = counts[u] as f64;
        let (l, g) = if x > 0.0 {
            loss_observed(predictions[u], x, row_marginal, col_marginal, total, cfg)
        } else {
            loss_unobserved(predictions[u], row_marginal, col_marginal, total, cfg)
        };
        loss += l;
        grad[u] = g;
    }
    loss
}
