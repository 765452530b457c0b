//! Value-level wrappers: each call builds a throwaway graph of constants and
//! runs the corresponding layer from [`super::ops`].

use super::affine::{ChannelAffine, ConditionalAffineBank};
use super::ops::{self, Condition};
use super::stats::BranchStats;
use super::NormEps;
use crate::error::Result;
use crate::tensor::{Graph, Tensor};

fn constants(x: &Tensor) -> (Graph, crate::tensor::Var) {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    (g, v)
}

/// Pre-affine normalized input using statistics of `branch`.
pub fn normalize_forward(
    x: &Tensor,
    stats: &mut BranchStats,
    branch: usize,
    eps: NormEps,
) -> Result<Tensor> {
    let (mut g, xv) = constants(x);
    let h = ops::normalize(&mut g, xv, stats, branch, eps)?;
    Ok(g.value(h).clone())
}

pub fn bn_forward(
    x: &Tensor,
    affine: &ChannelAffine,
    stats: &mut BranchStats,
    eps: NormEps,
) -> Result<Tensor> {
    let (mut g, xv) = constants(x);
    let a = affine.bind(&mut g);
    let h = ops::bn(&mut g, xv, a, stats, eps)?;
    Ok(g.value(h).clone())
}

pub fn ccbn_forward(
    x: &Tensor,
    class_idx: usize,
    bank: &ConditionalAffineBank,
    stats: &mut BranchStats,
    eps: NormEps,
) -> Result<Tensor> {
    let (mut g, xv) = constants(x);
    let b = bank.bind(&mut g)?;
    let h = ops::ccbn(&mut g, xv, Condition::Class(class_idx), b, stats, eps)?;
    Ok(g.value(h).clone())
}

pub fn sabn_forward(
    x: &Tensor,
    class_idx: usize,
    sandwich: &ChannelAffine,
    bank: &ConditionalAffineBank,
    stats: &mut BranchStats,
    eps: NormEps,
) -> Result<Tensor> {
    let (mut g, xv) = constants(x);
    let s = sandwich.bind(&mut g);
    let b = bank.bind(&mut g)?;
    let h = ops::sabn(&mut g, xv, Condition::Class(class_idx), s, b, stats, eps)?;
    Ok(g.value(h).clone())
}

pub fn auxbn_forward(
    x: &Tensor,
    branch: usize,
    stats: &mut BranchStats,
    affines: &ConditionalAffineBank,
    eps: NormEps,
) -> Result<Tensor> {
    let (mut g, xv) = constants(x);
    let b = affines.bind(&mut g)?;
    let h = ops::auxbn(&mut g, xv, branch, stats, b, eps)?;
    Ok(g.value(h).clone())
}

pub fn sa_auxbn_forward(
    x: &Tensor,
    branch: usize,
    stats: &mut BranchStats,
    sandwich: &ChannelAffine,
    bank: &ConditionalAffineBank,
    eps: NormEps,
) -> Result<Tensor> {
    let (mut g, xv) = constants(x);
    let s = sandwich.bind(&mut g);
    let b = bank.bind(&mut g)?;
    let h = ops::sa_auxbn(&mut g, xv, branch, stats, s, b, eps)?;
    Ok(g.value(h).clone())
}

/// Per-instance `(mu, sigma)`, each shaped `(N, C)`.
pub fn instance_moments(x: &Tensor, eps: NormEps) -> Result<(Tensor, Tensor)> {
    let (mut g, xv) = constants(x);
    let (mu, sigma) = ops::instance_moments(&mut g, xv, eps)?;
    let nc = vec![x.shape()[0], x.shape()[1]];
    Ok((g.value(mu).reshape(nc.clone())?, g.value(sigma).reshape(nc)?))
}

pub fn instance_normalize_forward(x: &Tensor, eps: NormEps) -> Result<Tensor> {
    let (mut g, xv) = constants(x);
    let h = ops::instance_normalize(&mut g, xv, eps)?;
    Ok(g.value(h).clone())
}

pub fn adain_forward(content: &Tensor, style: &Tensor, eps: NormEps) -> Result<Tensor> {
    let (mut g, c) = constants(content);
    let s = g.constant(style.clone());
    let h = ops::adain(&mut g, c, s, eps)?;
    Ok(g.value(h).clone())
}

pub fn saadain_forward(
    content: &Tensor,
    style: &Tensor,
    sandwich: &ChannelAffine,
    eps: NormEps,
) -> Result<Tensor> {
    let (mut g, c) = constants(content);
    let s = g.constant(style.clone());
    let a = sandwich.bind(&mut g);
    let h = ops::saadain(&mut g, c, s, a, eps)?;
    Ok(g.value(h).clone())
}
