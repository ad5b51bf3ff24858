//! Fourier-based adaptive patching.
//!
//! The amplitude spectrum of the ground truth picks a dominant frequency
//! `f`; its period `p = ⌊T/f⌋` bounds the patch length
//! `P = min(⌊p/2⌋, δ)` (never below 2), the stride is `S = ⌊P/2⌋` and
//! `N = ⌊(T−P)/S⌋ + 1` patches are cut from each series. Trailing points
//! that do not fill a patch are dropped.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor};
use crate::error::{Error, Result};

/// Amplitudes within this relative distance of the running maximum count as
/// a tie, which keeps the lower frequency.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Amplitudes at frequencies `1..=⌊T/2⌋` and the dominant one.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    /// `amplitudes[k - 1]` is the amplitude at frequency `k`.
    pub amplitudes: Vec<f64>,
    pub dominant_frequency: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchPlan {
    pub period: usize,
    pub patch_length: usize,
    pub stride: usize,
    pub patch_count: usize,
    pub threshold: usize,
}

impl PatchPlan {
    /// One patch covering the whole horizon (`P = S = T`, `N = 1`).
    pub fn whole_series(horizon: usize) -> Self {
        PatchPlan {
            period: horizon,
            patch_length: horizon,
            stride: horizon,
            patch_count: 1,
            threshold: horizon,
        }
    }

    /// Number of leading points actually covered by patches.
    pub fn covered_length(&self) -> usize {
        self.stride * (self.patch_count - 1) + self.patch_length
    }
}

/// Patches of a `(B, C, T)` block, laid out as `(B, C, N, P)`.
#[derive(Debug, Clone)]
pub struct PatchSet {
    pub data: Tensor,
    pub plan: PatchPlan,
}

/// Amplitude spectrum of every `(b, c)` series of a `(B, C, T)` tensor,
/// averaged over batch and channels.
///
/// The DC bin is excluded. Amplitudes that are pure FFT round-off (below a
/// bound scaled by the series' L1 norm) are reported as exactly zero so a
/// flat spectrum ties and resolves to frequency 1. Ties, up to [`TIE_TOLERANCE`], go to the
/// lowest frequency.
pub fn real_fft_amplitudes(series: &Tensor) -> Result<SpectrumResult> {
    if series.rank() != 3 {
        return Err(Error::shape(format!(
            "expected (B, C, T) series, got {:?}",
            series.shape()
        )));
    }
    let len = series.shape()[2];
    if len < 4 {
        return Err(Error::config(format!("spectrum needs at least 4 points, got {len}")));
    }
    let bins = len / 2;
    let rows = series.len() / len;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(len);
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut acc = vec![0.0; bins];
    let noise_scale = 64.0 * f64::EPSILON * (len as f64).log2().max(1.0);

    for row in series.values().chunks_exact(len) {
        for (b, &x) in buf.iter_mut().zip(row) {
            *b = Complex::new(x, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        let floor = noise_scale * row.iter().map(|x| x.abs()).sum::<f64>();
        for (k, a) in acc.iter_mut().enumerate() {
            let amp = buf[k + 1].norm();
            if amp > floor {
                *a += amp;
            }
        }
    }
    for a in &mut acc {
        *a /= rows as f64;
    }

    let mut best = 0;
    for k in 1..bins {
        if acc[k] > acc[best] * (1.0 + TIE_TOLERANCE) {
            best = k;
        }
    }
    Ok(SpectrumResult {
        amplitudes: acc,
        dominant_frequency: best + 1,
    })
}

/// Patch length, stride and count for a horizon of `len` points.
pub fn make_patch_plan(spectrum: &SpectrumResult, len: usize, threshold: usize) -> Result<PatchPlan> {
    if threshold < 2 {
        return Err(Error::config(format!(
            "patch length threshold must be at least 2, got {threshold}"
        )));
    }
    plan_for_frequency(spectrum.dominant_frequency, len, threshold)
}

pub fn plan_for_frequency(frequency: usize, len: usize, threshold: usize) -> Result<PatchPlan> {
    if threshold < 2 {
        return Err(Error::config(format!(
            "patch length threshold must be at least 2, got {threshold}"
        )));
    }
    if frequency == 0 || len < 2 {
        return Err(Error::config(format!(
            "cannot plan patches for frequency {frequency} over length {len}"
        )));
    }
    let period = len / frequency;
    // a Pearson coefficient needs at least two points per patch
    let patch_length = (period / 2).min(threshold).max(2).min(len);
    let stride = (patch_length / 2).max(1);
    let patch_count = (len - patch_length) / stride + 1;
    Ok(PatchPlan {
        period,
        patch_length,
        stride,
        patch_count,
        threshold,
    })
}

/// Cuts `(B, C, T)` into `(B, C, N, P)` patches. Differentiable: positions
/// covered by several patches receive the summed gradient.
pub fn segment(tape: &Tape, series: &Tensor, plan: &PatchPlan) -> Result<PatchSet> {
    let len = *series
        .shape()
        .last()
        .ok_or_else(|| Error::shape("cannot segment a scalar"))?;
    if series.rank() != 3 {
        return Err(Error::shape(format!(
            "expected (B, C, T) series, got {:?}",
            series.shape()
        )));
    }
    if plan.covered_length() > len
        || plan.stride == 0
        || (len - plan.patch_length) / plan.stride + 1 != plan.patch_count
    {
        return Err(Error::shape(format!(
            "patch plan {plan:?} does not match series length {len}"
        )));
    }
    let data = tape.unfold(series, plan.patch_length, plan.stride)?;
    Ok(PatchSet { data, plan: *plan })
}

/// Spectrum of `truth`, then the plan. Convenience for the training loop.
pub fn adaptive_plan(truth: &Tensor, threshold: usize) -> Result<PatchPlan> {
    let spectrum = real_fft_amplitudes(truth)?;
    make_patch_plan(&spectrum, truth.shape()[2], threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(f: usize, t: usize, d: usize) -> PatchPlan {
        plan_for_frequency(f, t, d).unwrap()
    }

    #[test]
    fn plan_arithmetic() {
        let p = plan(4, 96, 48);
        assert_eq!((p.period, p.patch_length, p.stride, p.patch_count), (24, 12, 6, 15));
        let p = plan(1, 96, 24);
        assert_eq!((p.period, p.patch_length, p.stride, p.patch_count), (96, 24, 12, 7));
        let p = plan(180, 720, 48);
        assert_eq!((p.period, p.patch_length, p.stride, p.patch_count), (4, 2, 1, 719));
    }

    #[test]
    fn plan_clamps_to_two_points() {
        // p = 2 gives ⌊p/2⌋ = 1, clamped up
        let p = plan(48, 96, 48);
        assert_eq!(p.patch_length, 2);
        assert_eq!(p.stride, 1);
        assert!(p.covered_length() <= 96);
    }

    #[test]
    fn threshold_below_two_is_rejected() {
        let s = SpectrumResult {
            amplitudes: vec![1.0; 48],
            dominant_frequency: 1,
        };
        assert!(matches!(make_patch_plan(&s, 96, 1), Err(Error::Config(_))));
    }

    #[test]
    fn short_series_is_rejected() {
        let x = Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(real_fft_amplitudes(&x), Err(Error::Config(_))));
    }

    #[test]
    fn constant_series_has_flat_spectrum() {
        let x = Tensor::full(vec![2, 3, 96], 3.7).unwrap();
        let s = real_fft_amplitudes(&x).unwrap();
        assert!(s.amplitudes.iter().all(|&a| a == 0.0));
        assert_eq!(s.dominant_frequency, 1);
    }

    #[test]
    fn segment_index_formula() {
        let tape = Tape::new();
        let x = Tensor::new(vec![1, 1, 10], (0..10).map(f64::from).collect()).unwrap();
        let p = PatchPlan {
            period: 8,
            patch_length: 4,
            stride: 2,
            patch_count: 4,
            threshold: 4,
        };
        let ps = segment(&tape, &x, &p).unwrap();
        assert_eq!(ps.data.shape(), &[1, 1, 4, 4]);
        assert_eq!(
            ps.data.values(),
            &[0., 1., 2., 3., 2., 3., 4., 5., 4., 5., 6., 7., 6., 7., 8., 9.]
        );

        let whole = segment(&tape, &x, &PatchPlan::whole_series(10)).unwrap();
        assert_eq!(whole.data.shape(), &[1, 1, 1, 10]);
        assert_eq!(whole.data.values(), x.values());
    }

    #[test]
    fn segment_rejects_foreign_plan() {
        let tape = Tape::new();
        let x = Tensor::zeros(vec![1, 1, 10]).unwrap();
        let p = plan(4, 96, 48);
        assert!(matches!(segment(&tape, &x, &p), Err(Error::Shape(_))));
    }
}
