//! Index arithmetic shared by tensor kernels.

use crate::error::{Error, Result};

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub fn offset(index: &[usize], strides: &[usize]) -> usize {
    index.iter().zip(strides).map(|(i, s)| i * s).sum()
}

/// Row-major increment of a multi-index; wraps to all zeros after the last.
pub fn advance(index: &mut [usize], shape: &[usize]) {
    for axis in (0..shape.len()).rev() {
        index[axis] += 1;
        if index[axis] < shape[axis] {
            return;
        }
        index[axis] = 0;
    }
}

/// Result shape of broadcasting two same-rank shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("rank mismatch {a:?} vs {b:?}")));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::shape(format!("{a:?} vs {b:?}"))),
        })
        .collect()
}

/// Offsets into a source of shape `src` for every element of `dst`, treating
/// singleton axes of `src` as stretched.
fn source_offsets(src: &[usize], dst: &[usize]) -> Vec<usize> {
    let src_strides = strides(src);
    let eff: Vec<usize> = src
        .iter()
        .zip(&src_strides)
        .map(|(&e, &s)| if e == 1 { 0 } else { s })
        .collect();
    let n: usize = dst.iter().product();
    let mut idx = vec![0; dst.len()];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(offset(&idx, &eff));
        advance(&mut idx, dst);
    }
    out
}

/// Copies `data` (shape `src`) out to shape `dst`.
pub fn expand(data: &[f64], src: &[usize], dst: &[usize]) -> Vec<f64> {
    if src == dst {
        return data.to_vec();
    }
    source_offsets(src, dst).into_iter().map(|o| data[o]).collect()
}

/// Sums `data` (shape `src`) down to the broadcast-compatible shape `dst`.
pub fn sum_to(data: &[f64], src: &[usize], dst: &[usize]) -> Vec<f64> {
    if src == dst {
        return data.to_vec();
    }
    let mut out = vec![0.0; dst.iter().product()];
    for (v, o) in data.iter().zip(source_offsets(dst, src)) {
        out[o] += v;
    }
    out
}

/// Shape with the given axes collapsed to extent 1.
pub fn reduced_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .map(|(i, &e)| if axes.contains(&i) { 1 } else { e })
        .collect()
}

pub fn check_axes(axes: &[usize], rank: usize) -> Result<Vec<usize>> {
    if axes.is_empty() {
        return Err(Error::EmptyAxes);
    }
    let mut sorted = axes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&axis) = sorted.iter().find(|&&a| a >= rank) {
        return Err(Error::AxisOutOfRange { axis, rank });
    }
    Ok(sorted)
}

pub fn permute(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides = strides(shape);
    let mapped: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let n = data.len();
    let mut idx = vec![0; shape.len()];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(data[offset(&idx, &mapped)]);
        advance(&mut idx, &out_shape);
    }
    (out, out_shape)
}

pub fn check_permutation(perm: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    if perm.len() != rank {
        return Err(Error::shape(format!("permutation {perm:?} for rank {rank}")));
    }
    for &p in perm {
        if p >= rank || seen[p] {
            return Err(Error::shape(format!("invalid permutation {perm:?}")));
        }
        seen[p] = true;
    }
    Ok(())
}
