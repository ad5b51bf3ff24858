//! Gradient-based dynamic weighting of the three structural losses.
//!
//! Each step measures how strongly every loss pulls on the output layer
//! (the L2 norm of its gradient there) and rescales the losses so those
//! pulls match their average. The mean-loss weight is further damped by
//! `c` (correlation agreement) and `v` (spread agreement), both in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor};
use crate::error::{Error, Result};

/// Denominator guard for the weight and scale-factor formulas.
pub const GDW_EPS: f64 = 1e-12;

/// Snapshot of one weighting step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightState {
    pub step: u64,
    pub g_corr: f64,
    pub g_var: f64,
    pub g_mean: f64,
    pub g_bar: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub c: f64,
    pub v: f64,
}

/// Settings for the combined objective `mse + λ·ps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TotalLossConfig {
    pub lambda: f64,
    pub gdw_enabled: bool,
    /// Used when weighting is disabled.
    pub fixed_weights: (f64, f64, f64),
}

impl Default for TotalLossConfig {
    fn default() -> Self {
        TotalLossConfig {
            lambda: 1.0,
            gdw_enabled: true,
            fixed_weights: (1.0, 1.0, 1.0),
        }
    }
}

/// How the statistics behind `c` and `v` are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleScope {
    /// One covariance / std pair over the whole flattened batch.
    #[default]
    Global,
    /// Per-channel factors over `(B, T)`, then averaged across channels.
    PerChannel,
}

/// L2 norm of the gradient of each loss with respect to `params`, each from
/// its own backward pass over the shared forward graph.
pub fn grad_norms(tape: &Tape, losses: [&Tensor; 3], params: &[&Tensor]) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for (slot, loss) in out.iter_mut().zip(losses) {
        *slot = grad_norm(tape, loss, params)?;
    }
    Ok(out)
}

/// L2 norm of `∂loss/∂params`, all parameters flattened together.
pub fn grad_norm(tape: &Tape, loss: &Tensor, params: &[&Tensor]) -> Result<f64> {
    let grads = tape.backward(loss, params)?;
    let mut sq = 0.0;
    for p in params {
        let g = grads
            .get(p)
            .ok_or_else(|| Error::Tape("missing gradient for output-layer parameter".into()))?;
        sq += g.values().iter().map(|x| x * x).sum::<f64>();
    }
    Ok(sq.sqrt())
}

/// `α = Ḡ/(G_corr+ε)`, `β = Ḡ/(G_var+ε)`, `γ = c·v·Ḡ/(G_mean+ε)`.
///
/// When every norm is below `eps` the step is degenerate and `(1, 1, c·v)`
/// is returned.
pub fn compute_weights(norms: [f64; 3], c: f64, v: f64, eps: f64) -> (f64, f64, f64) {
    let w = compute_weights_active(norms.map(Some), c, v, eps);
    (w[0], w[1], w[2])
}

/// Like [`compute_weights`] but over the enabled losses only. Disabled
/// entries (`None`) get weight 0 and do not enter the average `Ḡ`.
pub fn compute_weights_active(norms: [Option<f64>; 3], c: f64, v: f64, eps: f64) -> [f64; 3] {
    let active: Vec<f64> = norms.iter().flatten().copied().collect();
    if active.is_empty() {
        return [0.0; 3];
    }
    let g_bar = active.iter().sum::<f64>() / active.len() as f64;
    let degenerate = active.iter().all(|&g| g < eps);
    let mut w = [0.0; 3];
    for (i, n) in norms.iter().enumerate() {
        if let Some(g) = n {
            w[i] = if degenerate { 1.0 } else { g_bar / (g + eps) };
        }
    }
    w[2] *= c * v;
    w
}

/// Average of the enabled norms.
pub fn mean_norm(norms: [Option<f64>; 3]) -> f64 {
    let active: Vec<f64> = norms.iter().flatten().copied().collect();
    if active.is_empty() {
        0.0
    } else {
        active.iter().sum::<f64>() / active.len() as f64
    }
}

/// Correlation and spread agreement between truth and prediction:
/// `c = ½(1 + σ_yŷ/(σ_y σ_ŷ + ε))`, `v = 2σ_y σ_ŷ/(σ_y² + σ_ŷ² + ε)`.
///
/// Computed from values only; nothing here is recorded on a tape.
pub fn scale_factors(truth: &Tensor, pred: &Tensor, eps: f64) -> Result<(f64, f64)> {
    scale_factors_scoped(truth, pred, eps, ScaleScope::Global)
}

pub fn scale_factors_scoped(truth: &Tensor, pred: &Tensor, eps: f64, scope: ScaleScope) -> Result<(f64, f64)> {
    if truth.shape() != pred.shape() {
        return Err(Error::shape(format!(
            "truth {:?} and prediction {:?} differ in shape",
            truth.shape(),
            pred.shape()
        )));
    }
    match scope {
        ScaleScope::Global => Ok(factors(truth.values(), pred.values(), eps)),
        ScaleScope::PerChannel => {
            if truth.rank() != 3 {
                return Err(Error::shape("per-channel scale factors need (B, C, T) tensors"));
            }
            let (b, ch, t) = (truth.shape()[0], truth.shape()[1], truth.shape()[2]);
            let (mut cs, mut vs) = (0.0, 0.0);
            let mut ty = Vec::with_capacity(b * t);
            let mut py = Vec::with_capacity(b * t);
            for c in 0..ch {
                ty.clear();
                py.clear();
                for bi in 0..b {
                    let off = (bi * ch + c) * t;
                    ty.extend_from_slice(&truth.values()[off..off + t]);
                    py.extend_from_slice(&pred.values()[off..off + t]);
                }
                let (cf, vf) = factors(&ty, &py, eps);
                cs += cf;
                vs += vf;
            }
            Ok((cs / ch as f64, vs / ch as f64))
        }
    }
}

fn factors(y: &[f64], p: &[f64], eps: f64) -> (f64, f64) {
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mp = p.iter().sum::<f64>() / n;
    let (mut cov, mut vy, mut vp) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(p) {
        let (da, db) = (a - my, b - mp);
        cov += da * db;
        vy += da * da;
        vp += db * db;
    }
    let (cov, vy, vp) = (cov / n, vy / n, vp / n);
    let (sy, sp) = (vy.sqrt(), vp.sqrt());
    let c = 0.5 * (1.0 + cov / (sy * sp + eps));
    let v = 2.0 * sy * sp / (vy + vp + eps);
    (c, v)
}

/// `mse + λ·ps`.
pub fn total_loss(tape: &Tape, mse: &Tensor, ps: &Tensor, lambda: f64) -> Result<Tensor> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::config(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    tape.add(mse, &tape.scale(ps, lambda)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_arithmetic() {
        let (a, b, g) = compute_weights([1.0, 1.0, 1.0], 1.0, 1.0, GDW_EPS);
        assert!((a - 1.0).abs() < 1e-11 && (b - 1.0).abs() < 1e-11 && (g - 1.0).abs() < 1e-11);

        let (c, v) = (0.8, 0.5);
        let (a, b, g) = compute_weights([1.0, 2.0, 4.0], c, v, GDW_EPS);
        assert!((a - 7.0 / 3.0).abs() < 1e-11);
        assert!((b - 7.0 / 6.0).abs() < 1e-11);
        assert!((g - c * v * 7.0 / 12.0).abs() < 1e-11);

        assert_eq!(compute_weights([0.0, 0.0, 0.0], c, v, GDW_EPS), (1.0, 1.0, c * v));
    }

    #[test]
    fn disabled_losses_get_zero_weight() {
        let w = compute_weights_active([None, Some(1.0), Some(3.0)], 1.0, 1.0, GDW_EPS);
        assert_eq!(w[0], 0.0);
        assert!((w[1] - 2.0).abs() < 1e-11);
        assert!((w[2] - 2.0 / 3.0).abs() < 1e-11);
    }

    #[test]
    fn scale_factor_examples() {
        let y = Tensor::from_vec(vec![0.5, -1.0, 2.0, 0.3, -0.2, 1.1]);
        let (c, v) = scale_factors(&y, &y, GDW_EPS).unwrap();
        assert!((c - 1.0).abs() < 1e-9 && (v - 1.0).abs() < 1e-9);

        let neg = y.map(|x| -x);
        let (c, v) = scale_factors(&y, &neg, GDW_EPS).unwrap();
        assert!(c.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);

        let dbl = y.map(|x| 2.0 * x);
        let (c, v) = scale_factors(&y, &dbl, GDW_EPS).unwrap();
        assert!((c - 1.0).abs() < 1e-9 && (v - 0.8).abs() < 1e-9);

        assert!(scale_factors(&y, &Tensor::from_vec(vec![1.0]), GDW_EPS).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let tape = Tape::new();
        let mse = Tensor::scalar(0.2);
        let ps = Tensor::scalar(0.1);
        assert_eq!(total_loss(&tape, &mse, &ps, 0.0).unwrap().item().unwrap(), 0.2);
        assert_eq!(
            total_loss(&tape, &mse, &Tensor::scalar(0.0), 1.0)
                .unwrap()
                .item()
                .unwrap(),
            0.2
        );
        assert!((total_loss(&tape, &mse, &ps, 3.0).unwrap().item().unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(total_loss(&tape, &mse, &ps, -1.0), Err(Error::Config(_))));
    }
}
