use crate::error::{Error, Result};

/// Broadcast shape of two operands.
///
/// The shorter shape is left-padded with 1s, then each dimension pair must
/// be equal or contain a 1. No other rank promotion happens.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = padded_dim(a, rank, i);
        let db = padded_dim(b, rank, i);
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::shape(format!(
                    "shapes {a:?} and {b:?} are not broadcast-compatible"
                )))
            }
        };
    }
    Ok(out)
}

fn padded_dim(shape: &[usize], rank: usize, i: usize) -> usize {
    let pad = rank - shape.len();
    if i < pad {
        1
    } else {
        shape[i - pad]
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For every flat index of `out_shape`, the flat index of the broadcast
/// source with shape `in_shape`.
pub(crate) fn broadcast_index(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let pad = rank - in_shape.len();
    let n: usize = out_shape.iter().product();
    let n_in: usize = in_shape.iter().product();
    // input matches a suffix of the output
    if out_shape[pad..] == *in_shape {
        return (0..n).map(|i| i % n_in.max(1)).collect();
    }
    // input matches the output except for a trailing size-1 axis
    if pad == 0 && rank > 0 && in_shape[rank - 1] == 1 && in_shape[..rank - 1] == out_shape[..rank - 1] {
        let last = out_shape[rank - 1].max(1);
        return (0..n).map(|i| i / last).collect();
    }
    strided_index(in_shape, out_shape)
}

fn strided_index(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let pad = rank - in_shape.len();
    let n: usize = out_shape.iter().product();
    let in_strides = strides(in_shape);
    // stride 0 along broadcast dimensions
    let eff: Vec<usize> = (0..rank)
        .map(|i| {
            if i < pad || in_shape[i - pad] == 1 {
                0
            } else {
                in_strides[i - pad]
            }
        })
        .collect();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        map.push(src);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += eff[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

/// Splits a shape around `axis` into (outer, axis length, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn check_axis(shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok(())
}
