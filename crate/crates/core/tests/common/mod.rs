#![allow(dead_code)]

use psloss::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Central finite differences of a scalar function of `x`.
pub fn finite_diff(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Vec<f64> {
    let base = x.to_vec();
    (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[i] += h;
            minus[i] -= h;
            let fp = f(&Tensor::new(x.shape().to_vec(), plus).unwrap());
            let fm = f(&Tensor::new(x.shape().to_vec(), minus).unwrap());
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise deviation, relative to the largest numeric entry.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Gradient of `build(tape, x)` with respect to `x` via the tape.
pub fn tape_grad(build: impl Fn(&Tape, &Tensor) -> Tensor, x: &Tensor) -> Vec<f64> {
    let tape = Tape::new();
    let xa = tape.leaf(x);
    let loss = build(&tape, &xa);
    let grads = tape.backward(&loss, &[&xa]).unwrap();
    grads.get(&xa).unwrap().to_vec()
}

/// Value of `build` on a detached input.
pub fn eval(build: impl Fn(&Tape, &Tensor) -> Tensor, x: &Tensor) -> f64 {
    let tape = Tape::new();
    build(&tape, x).item().unwrap()
}

pub fn check_grad(build: impl Fn(&Tape, &Tensor) -> Tensor + Copy, x: &Tensor) -> f64 {
    let analytic = tape_grad(build, x);
    let numeric = finite_diff(|t| eval(build, t), x, 1e-6);
    max_rel_err(&analytic, &numeric)
}
