//! Point-wise MSE and the patch-level structural losses.
//!
//! All patch losses take `(B, C, N, P)` patch tensors, reduce over the patch
//! axis and average uniformly over every `(b, c, i)` patch.

use crate::autograd::{Axis, Tape, Tensor};
use crate::error::{Error, Result};
use crate::patching::PatchSet;

/// Denominator guard of the patch correlation.
pub const CORR_EPS: f64 = 1e-8;

/// Truth-side probabilities below this are left out of the KL sum.
pub const KL_SKIP: f64 = 1e-300;

const PATCH_AXIS: usize = 3;

/// Scalar pieces of one structural-loss evaluation.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub mse: Tensor,
    pub corr: Tensor,
    pub var: Tensor,
    pub mean: Tensor,
    pub ps: Tensor,
}

/// Per-patch mean and population standard deviation, shape `(B, C, N, 1)`.
#[derive(Debug, Clone)]
pub struct PatchStats {
    pub mean: Tensor,
    pub std: Tensor,
    /// Deviations from the patch mean, shape `(B, C, N, P)`.
    pub centered: Tensor,
}

pub fn patch_stats(tape: &Tape, patches: &Tensor) -> Result<PatchStats> {
    let mean = tape.mean(patches, Axis::Dim(PATCH_AXIS), true)?;
    let centered = tape.sub(patches, &mean)?;
    let var = tape.mean(&tape.square(&centered)?, Axis::Dim(PATCH_AXIS), true)?;
    let std = tape.sqrt(&var)?;
    Ok(PatchStats { mean, std, centered })
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "truth {:?} and prediction {:?} differ in shape",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn same_plan(truth: &PatchSet, pred: &PatchSet) -> Result<()> {
    if truth.plan != pred.plan {
        return Err(Error::shape(format!(
            "patch plans differ: {:?} vs {:?}",
            truth.plan, pred.plan
        )));
    }
    same_shape(&truth.data, &pred.data)?;
    if truth.data.rank() != 4 {
        return Err(Error::shape(format!(
            "expected (B, C, N, P) patches, got {:?}",
            truth.data.shape()
        )));
    }
    Ok(())
}

/// Mean squared error over every element.
pub fn mse_loss(tape: &Tape, truth: &Tensor, pred: &Tensor) -> Result<Tensor> {
    same_shape(truth, pred)?;
    let diff = tape.sub(pred, truth)?;
    tape.mean_all(&tape.square(&diff)?)
}

/// Mean over patches of `1 − ρ`, with
/// `ρ = Σ (y − μ)(ŷ − μ̂) / (P·σ·σ̂ + ε)`.
///
/// A constant patch on either side gives `ρ = 0` and contributes 1.
pub fn corr_loss(tape: &Tape, truth: &PatchSet, pred: &PatchSet, eps: f64) -> Result<Tensor> {
    same_plan(truth, pred)?;
    let p = truth.plan.patch_length as f64;
    let ts = patch_stats(tape, &truth.data)?;
    let ps = patch_stats(tape, &pred.data)?;
    let cov = tape.sum(&tape.mul(&ts.centered, &ps.centered)?, Axis::Dim(PATCH_AXIS), true)?;
    let denom = tape.add_scalar(&tape.scale(&tape.mul(&ts.std, &ps.std)?, p)?, eps)?;
    let rho = tape.div(&cov, &denom)?;
    let mean_rho = tape.mean_all(&rho)?;
    tape.add_scalar(&tape.neg(&mean_rho)?, 1.0)
}

/// Mean over patches of `KL(softmax(y) ‖ softmax(ŷ))`, evaluated in log space.
pub fn var_loss(tape: &Tape, truth: &PatchSet, pred: &PatchSet) -> Result<Tensor> {
    same_plan(truth, pred)?;
    let log_t = tape.log_softmax(&truth.data, PATCH_AXIS)?;
    let log_s = tape.log_softmax(&pred.data, PATCH_AXIS)?;
    let probs = tape.exp(&log_t)?;
    let mask = probs.map(|t| if t < KL_SKIP { 0.0 } else { 1.0 });
    let weights = tape.mul(&probs, &mask)?;
    let terms = tape.mul(&weights, &tape.sub(&log_t, &log_s)?)?;
    let kl = tape.sum(&terms, Axis::Dim(PATCH_AXIS), false)?;
    tape.mean_all(&kl)
}

/// Mean over patches of `|μ − μ̂|`.
pub fn mean_loss(tape: &Tape, truth: &PatchSet, pred: &PatchSet) -> Result<Tensor> {
    same_plan(truth, pred)?;
    let mt = tape.mean(&truth.data, Axis::Dim(PATCH_AXIS), false)?;
    let mp = tape.mean(&pred.data, Axis::Dim(PATCH_AXIS), false)?;
    tape.mean_all(&tape.abs(&tape.sub(&mt, &mp)?)?)
}

/// `α·corr + β·var + γ·mean`. The weights are constants.
pub fn ps_loss(
    tape: &Tape,
    corr: &Tensor,
    var: &Tensor,
    mean: &Tensor,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Result<Tensor> {
    for (name, w) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::config(format!(
                "{name} must be a finite non-negative weight, got {w}"
            )));
        }
    }
    let a = tape.scale(corr, alpha)?;
    let b = tape.scale(var, beta)?;
    let c = tape.scale(mean, gamma)?;
    tape.add(&tape.add(&a, &b)?, &c)
}
