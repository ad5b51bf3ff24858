//! Dense row-major matrix kernels. All of them accumulate into `out`.
//!
//! The reduction index is unrolled by four with left-to-right association,
//! so results are bitwise identical to the plain triple loop.

/// `row += Σ_q s[q] · src[q]` over up to four source rows, in order.
#[inline(always)]
fn axpy4(row: &mut [f64], s: [f64; 4], src: [&[f64]; 4]) {
    let [s0, s1, s2, s3] = s;
    let [r0, r1, r2, r3] = src;
    for ((((o, &x0), &x1), &x2), &x3) in row.iter_mut().zip(r0).zip(r1).zip(r2).zip(r3) {
        *o = *o + s0 * x0 + s1 * x1 + s2 * x2 + s3 * x3;
    }
}

#[inline(always)]
fn axpy(row: &mut [f64], s: f64, src: &[f64]) {
    for (o, &x) in row.iter_mut().zip(src) {
        *o += s * x;
    }
}

/// `out[m,n] += a[m,k] · b[k,n]`
pub(crate) fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let brow = |p: usize| &b[p * n..(p + 1) * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        let mut p = 0;
        while p + 4 <= k {
            axpy4(
                row,
                [arow[p], arow[p + 1], arow[p + 2], arow[p + 3]],
                [brow(p), brow(p + 1), brow(p + 2), brow(p + 3)],
            );
            p += 4;
        }
        for q in p..k {
            axpy(row, arow[q], brow(q));
        }
    }
}

/// `out[m,k] += g[m,n] · b[k,n]ᵀ`
pub(crate) fn gemm_a_bt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k,n] += a[m,k]ᵀ · g[m,n]`
pub(crate) fn gemm_at_b(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let grow = |i: usize| &g[i * n..(i + 1) * n];
    let mut i = 0;
    while i + 4 <= m {
        let rows = [grow(i), grow(i + 1), grow(i + 2), grow(i + 3)];
        for p in 0..k {
            let s = [a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]];
            axpy4(&mut out[p * n..(p + 1) * n], s, rows);
        }
        i += 4;
    }
    for q in i..m {
        for p in 0..k {
            axpy(&mut out[p * n..(p + 1) * n], a[q * k + p], grow(q));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                for j in 0..n {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    fn filled(len: usize, seed: f64) -> Vec<f64> {
        (0..len).map(|i| ((i as f64 + seed) * 0.731).sin()).collect()
    }

    #[test]
    fn unrolled_kernels_are_bitwise_naive() {
        for (m, k, n) in [(1, 1, 1), (3, 7, 5), (9, 4, 2), (6, 13, 11)] {
            let a = filled(m * k, 0.3);
            let b = filled(k * n, 1.7);
            let mut out = vec![0.0; m * n];
            gemm(&a, &b, &mut out, m, k, n);
            assert_eq!(out, naive(&a, &b, m, k, n));

            // aᵀ·g with a: [m,k], g: [m,n] equals naive(aᵀ, g)
            let g = filled(m * n, 2.9);
            let mut at = vec![0.0; k * m];
            for i in 0..m {
                for p in 0..k {
                    at[p * m + i] = a[i * k + p];
                }
            }
            let mut out = vec![0.0; k * n];
            gemm_at_b(&a, &g, &mut out, m, k, n);
            assert_eq!(out, naive(&at, &g, k, m, n));
        }
    }
}
