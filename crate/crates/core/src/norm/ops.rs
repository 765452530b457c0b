//! Graph-level normalization layers.
//!
//! Inputs are `(N, C, ...)`; batch moments reduce every axis except the
//! channel axis, so `(N, C)` inputs behave as `(N, C, 1, 1)`.

use super::affine::{AffineVars, BankVars};
use super::stats::{BranchStats, StatsMode};
use super::NormEps;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Which conditional affine to apply.
#[derive(Clone, Copy, Debug)]
pub enum Condition<'a> {
    /// One index for the whole batch.
    Class(usize),
    /// One index per sample along axis 0.
    PerSample(&'a [usize]),
}

fn channel_shape(rank: usize, c: usize) -> Vec<usize> {
    let mut s = vec![1; rank];
    s[1] = c;
    s
}

fn channels_of(g: &Graph, x: Var) -> Result<usize> {
    let shape = g.shape(x);
    if shape.len() < 2 {
        return Err(Error::shape(format!(
            "normalization input needs (N, C, ...), got {shape:?}"
        )));
    }
    Ok(shape[1])
}

/// `(x - mu) / sqrt(var + eps)` with statistics of `branch`.
pub fn normalize(
    g: &mut Graph,
    x: Var,
    stats: &mut BranchStats,
    branch: usize,
    eps: NormEps,
) -> Result<Var> {
    let c = channels_of(g, x)?;
    if stats.channels() != c {
        return Err(Error::ChannelMismatch {
            expected: stats.channels(),
            got: c,
        });
    }
    stats.running_mean(branch)?;
    let rank = g.shape(x).len();
    let (mean, var) = if stats.uses_batch_moments() {
        let axes: Vec<usize> = (0..rank).filter(|&a| a != 1).collect();
        let (mean, var) = g.moments(x, &axes)?;
        if stats.mode() == StatsMode::Running {
            let (m, v) = (g.value(mean).data().to_vec(), g.value(var).data().to_vec());
            stats.update(branch, &m, &v)?;
        }
        (mean, var)
    } else {
        let m = stats.running_mean(branch)?.reshape(channel_shape(rank, c))?;
        let v = stats.running_var(branch)?.reshape(channel_shape(rank, c))?;
        (g.constant(m), g.constant(v))
    };
    let centered = g.sub(x, mean)?;
    let shifted = g.shift(var, eps.get())?;
    let denom = g.sqrt(shifted)?;
    g.div(centered, denom)
}

fn broadcast_affine(g: &mut Graph, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    let scaled = g.mul(x, gamma)?;
    g.add(scaled, beta)
}

/// `gamma * x + beta` with a shared per-channel affine.
pub fn apply_affine(g: &mut Graph, x: Var, affine: AffineVars) -> Result<Var> {
    let c = channels_of(g, x)?;
    let got = g.value(affine.gamma).numel();
    if got != c || g.value(affine.beta).numel() != c {
        return Err(Error::ChannelMismatch { expected: c, got });
    }
    let shape = channel_shape(g.shape(x).len(), c);
    let gamma = g.reshape(affine.gamma, shape.clone())?;
    let beta = g.reshape(affine.beta, shape)?;
    broadcast_affine(g, x, gamma, beta)
}

/// Applies the bank entry chosen by `cond`.
pub fn apply_conditional(g: &mut Graph, x: Var, cond: Condition<'_>, bank: BankVars) -> Result<Var> {
    let c = channels_of(g, x)?;
    let (k, bc) = match g.shape(bank.gamma) {
        &[k, bc] => (k, bc),
        s => return Err(Error::shape(format!("bank must be (K, C), got {s:?}"))),
    };
    if bc != c {
        return Err(Error::ChannelMismatch { expected: c, got: bc });
    }
    let rank = g.shape(x).len();
    let (gamma, beta) = match cond {
        Condition::Class(i) => {
            if i >= k {
                return Err(Error::IndexOutOfRange { index: i, len: k });
            }
            let shape = channel_shape(rank, c);
            let gr = g.narrow(bank.gamma, 0, i, 1)?;
            let br = g.narrow(bank.beta, 0, i, 1)?;
            (g.reshape(gr, shape.clone())?, g.reshape(br, shape)?)
        }
        Condition::PerSample(classes) => {
            let n = g.shape(x)[0];
            if classes.len() != n {
                return Err(Error::shape(format!(
                    "{} condition indices for batch of {n}",
                    classes.len()
                )));
            }
            let mut onehot = vec![0.0; n * k];
            for (row, &i) in classes.iter().enumerate() {
                if i >= k {
                    return Err(Error::IndexOutOfRange { index: i, len: k });
                }
                onehot[row * k + i] = 1.0;
            }
            let select = g.constant(Tensor::new(vec![n, k], onehot)?);
            let mut shape = channel_shape(rank, c);
            shape[0] = n;
            let gr = g.matmul(select, bank.gamma)?;
            let br = g.matmul(select, bank.beta)?;
            (g.reshape(gr, shape.clone())?, g.reshape(br, shape)?)
        }
    };
    broadcast_affine(g, x, gamma, beta)
}

pub fn bn(g: &mut Graph, x: Var, affine: AffineVars, stats: &mut BranchStats, eps: NormEps) -> Result<Var> {
    let xhat = normalize(g, x, stats, 0, eps)?;
    apply_affine(g, xhat, affine)
}

pub fn ccbn(
    g: &mut Graph,
    x: Var,
    cond: Condition<'_>,
    bank: BankVars,
    stats: &mut BranchStats,
    eps: NormEps,
) -> Result<Var> {
    let xhat = normalize(g, x, stats, 0, eps)?;
    apply_conditional(g, xhat, cond, bank)
}

pub fn sabn(
    g: &mut Graph,
    x: Var,
    cond: Condition<'_>,
    sandwich: AffineVars,
    bank: BankVars,
    stats: &mut BranchStats,
    eps: NormEps,
) -> Result<Var> {
    let xhat = normalize(g, x, stats, 0, eps)?;
    let shared = apply_affine(g, xhat, sandwich)?;
    apply_conditional(g, shared, cond, bank)
}

fn check_two_branch(g: &Graph, branch: usize, stats: &BranchStats, bank: BankVars) -> Result<()> {
    let k = bank.len(g);
    if stats.branches() != k {
        return Err(Error::InvalidArgument(format!(
            "{} statistic branches but {k} affines",
            stats.branches()
        )));
    }
    if branch >= k {
        return Err(Error::IndexOutOfRange { index: branch, len: k });
    }
    Ok(())
}

/// Auxiliary BN: branch-specific statistics and affine. Branch 0 is the
/// adversarial branch, branch 1 the clean one.
pub fn auxbn(
    g: &mut Graph,
    x: Var,
    branch: usize,
    stats: &mut BranchStats,
    bank: BankVars,
    eps: NormEps,
) -> Result<Var> {
    check_two_branch(g, branch, stats, bank)?;
    let xhat = normalize(g, x, stats, branch, eps)?;
    apply_conditional(g, xhat, Condition::Class(branch), bank)
}

pub fn sa_auxbn(
    g: &mut Graph,
    x: Var,
    branch: usize,
    stats: &mut BranchStats,
    sandwich: AffineVars,
    bank: BankVars,
    eps: NormEps,
) -> Result<Var> {
    check_two_branch(g, branch, stats, bank)?;
    let xhat = normalize(g, x, stats, branch, eps)?;
    let shared = apply_affine(g, xhat, sandwich)?;
    apply_conditional(g, shared, Condition::Class(branch), bank)
}

fn as_4d(g: &mut Graph, x: Var) -> Result<Var> {
    match *g.shape(x) {
        [_, _, _, _] => Ok(x),
        [n, c] => g.reshape(x, vec![n, c, 1, 1]),
        ref s => Err(Error::shape(format!(
            "instance statistics need (N, C, H, W) or (N, C), got {s:?}"
        ))),
    }
}

/// Per-(sample, channel) mean and `sqrt(var + eps)` over the spatial axes,
/// shaped `(N, C, 1, 1)`.
pub fn instance_moments(g: &mut Graph, x: Var, eps: NormEps) -> Result<(Var, Var)> {
    let x = as_4d(g, x)?;
    let (mean, var) = g.moments(x, &[2, 3])?;
    let shifted = g.shift(var, eps.get())?;
    let sigma = g.sqrt(shifted)?;
    Ok((mean, sigma))
}

fn instance_normalized(
    g: &mut Graph,
    content: Var,
    style: Var,
    eps: NormEps,
) -> Result<(Var, Var, Var)> {
    let (cs, ss) = (g.shape(content).to_vec(), g.shape(style).to_vec());
    let (cc, sc) = (channels_of(g, content)?, channels_of(g, style)?);
    if cc != sc {
        return Err(Error::ChannelMismatch { expected: cc, got: sc });
    }
    if ss[0] != 1 && ss[0] != cs[0] {
        return Err(Error::shape(format!(
            "style batch {} must be 1 or match content batch {}",
            ss[0], cs[0]
        )));
    }
    let x = as_4d(g, content)?;
    let (mu_x, sigma_x) = instance_moments(g, x, eps)?;
    let (mu_y, sigma_y) = instance_moments(g, style, eps)?;
    let centered = g.sub(x, mu_x)?;
    let xhat = g.div(centered, sigma_x)?;
    Ok((xhat, mu_y, sigma_y))
}

fn restore_shape(g: &mut Graph, h: Var, shape: &[usize]) -> Result<Var> {
    if g.shape(h) == shape {
        Ok(h)
    } else {
        g.reshape(h, shape.to_vec())
    }
}

/// Pre-affine instance normalization `(x - mu(x)) / sigma(x)`, in the
/// input's shape.
pub fn instance_normalize(g: &mut Graph, x: Var, eps: NormEps) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let x4 = as_4d(g, x)?;
    let (mu, sigma) = instance_moments(g, x4, eps)?;
    let centered = g.sub(x4, mu)?;
    let h = g.div(centered, sigma)?;
    restore_shape(g, h, &shape)
}

/// `sigma(y) * (x - mu(x)) / sigma(x) + mu(y)`.
pub fn adain(g: &mut Graph, content: Var, style: Var, eps: NormEps) -> Result<Var> {
    let shape = g.shape(content).to_vec();
    let (xhat, mu_y, sigma_y) = instance_normalized(g, content, style, eps)?;
    let h = broadcast_affine(g, xhat, sigma_y, mu_y)?;
    restore_shape(g, h, &shape)
}

/// `sigma(y) * (gamma_sa * xhat + beta_sa) + mu(y)`.
pub fn saadain(
    g: &mut Graph,
    content: Var,
    style: Var,
    sandwich: AffineVars,
    eps: NormEps,
) -> Result<Var> {
    let shape = g.shape(content).to_vec();
    let (xhat, mu_y, sigma_y) = instance_normalized(g, content, style, eps)?;
    let shared = apply_affine(g, xhat, sandwich)?;
    let h = broadcast_affine(g, shared, sigma_y, mu_y)?;
    restore_shape(g, h, &shape)
}
