//! Point-wise and shape-aware evaluation metrics.
//!
//! DTW uses the squared Euclidean point distance over equal-length series
//! without a warping window. Among equal-cost paths the backtrack prefers
//! the diagonal step, then vertical (`i − 1`), then horizontal (`j − 1`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Denominator guard for [`pcc`].
pub const PCC_EPS: f64 = 1e-8;

/// 0-based `(i, j)` index pairs from `(0, 0)` to `(T − 1, T − 1)`.
pub type WarpingPath = Vec<(usize, usize)>;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub mae: f64,
    pub dtw_mean: f64,
    pub tdi_mean: f64,
    pub pcc_mean: f64,
}

/// Minimal cumulative squared distance over admissible warping paths, and
/// one path attaining it.
pub fn dtw(y: &[f64], y_hat: &[f64]) -> Result<(f64, WarpingPath)> {
    if y.is_empty() || y_hat.is_empty() {
        return Err(Error::domain("dtw of an empty series"));
    }
    if y.len() != y_hat.len() {
        return Err(Error::domain(format!(
            "dtw needs equal lengths, got {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    let n = y.len();
    let mut cost = vec![f64::INFINITY; n * n];
    let at = |i: usize, j: usize| i * n + j;
    for i in 0..n {
        for j in 0..n {
            let d = (y[i] - y_hat[j]).powi(2);
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 {
                    cost[at(i - 1, j - 1)]
                } else {
                    f64::INFINITY
                };
                let up = if i > 0 { cost[at(i - 1, j)] } else { f64::INFINITY };
                let left = if j > 0 { cost[at(i, j - 1)] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            cost[at(i, j)] = prev + d;
        }
    }

    let mut path = vec![(n - 1, n - 1)];
    let (mut i, mut j) = (n - 1, n - 1);
    while i > 0 || j > 0 {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = cost[at(i - 1, j - 1)];
            let up = cost[at(i - 1, j)];
            let left = cost[at(i, j - 1)];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        path.push((i, j));
    }
    path.reverse();
    Ok((cost[at(n - 1, n - 1)], path))
}

/// Checks boundary, monotonicity and unit-step conditions for length `len`.
pub fn validate_path(path: &[(usize, usize)], len: usize) -> Result<()> {
    if len == 0 || path.is_empty() {
        return Err(Error::domain("empty warping path"));
    }
    if path[0] != (0, 0) || *path.last().unwrap() != (len - 1, len - 1) {
        return Err(Error::domain(format!(
            "path must run from (0, 0) to ({0}, {0})",
            len - 1
        )));
    }
    for w in path.windows(2) {
        let (di, dj) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
        if !matches!((di, dj), (1, 0) | (0, 1) | (1, 1)) {
            return Err(Error::domain(format!("invalid step {:?} -> {:?}", w[0], w[1])));
        }
    }
    Ok(())
}

/// `Σ (i − j)² / T²` along a valid path.
pub fn tdi(path: &[(usize, usize)], len: usize) -> Result<f64> {
    validate_path(path, len)?;
    let t2 = (len * len) as f64;
    Ok(path
        .iter()
        .map(|&(i, j)| {
            let d = i as f64 - j as f64;
            d * d / t2
        })
        .sum())
}

/// Pearson correlation with an `eps`-guarded denominator. A constant series
/// on either side gives 0.
pub fn pcc(y: &[f64], y_hat: &[f64], eps: f64) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::domain(format!(
            "pcc needs equal lengths, got {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::domain(format!("pcc needs at least 2 points, got {}", y.len())));
    }
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mp = y_hat.iter().sum::<f64>() / n;
    let (mut cov, mut vy, mut vp) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(y_hat) {
        let (da, db) = (a - my, b - mp);
        cov += da * db;
        vy += da * da;
        vp += db * db;
    }
    if vy == 0.0 || vp == 0.0 {
        return Ok(0.0);
    }
    Ok((cov / (vy.sqrt() * vp.sqrt() + eps)).clamp(-1.0, 1.0))
}

/// MSE and MAE over all elements; DTW, TDI and PCC per `(b, c)` series,
/// averaged uniformly.
pub fn evaluate(truth: &Tensor, pred: &Tensor) -> Result<MetricsReport> {
    if truth.shape() != pred.shape() {
        return Err(Error::shape(format!(
            "truth {:?} and prediction {:?} differ in shape",
            truth.shape(),
            pred.shape()
        )));
    }
    let len = *truth
        .shape()
        .last()
        .ok_or_else(|| Error::shape("cannot evaluate scalars"))?;
    let n = truth.len() as f64;
    let (mut sq, mut ab) = (0.0, 0.0);
    for (a, b) in truth.values().iter().zip(pred.values()) {
        sq += (a - b) * (a - b);
        ab += (a - b).abs();
    }

    let per_series: Vec<(f64, f64, f64)> = truth
        .values()
        .par_chunks(len)
        .zip(pred.values().par_chunks(len))
        .map(|(y, p)| {
            let (d, path) = dtw(y, p)?;
            let t = tdi(&path, len)?;
            let r = if len >= 2 { pcc(y, p, PCC_EPS)? } else { 0.0 };
            Ok((d, t, r))
        })
        .collect::<Result<_>>()?;
    let k = per_series.len() as f64;
    let (mut d, mut t, mut r) = (0.0, 0.0, 0.0);
    for (a, b, c) in &per_series {
        d += a;
        t += b;
        r += c;
    }
    Ok(MetricsReport {
        mse: sq / n,
        mae: ab / n,
        dtw_mean: d / k,
        tdi_mean: t / k,
        pcc_mean: r / k,
    })
}
