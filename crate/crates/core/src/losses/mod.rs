//! Training objectives and the ℓ∞ PGD attacker.
//!
//! Graph-level functions take and return [`Var`]s so they compose with the
//! layers in [`crate::norm`]; the `*_loss` functions are value-level
//! conveniences over them.

mod pgd;

pub use pgd::{pgd_attack, pgd_attack_traced, PgdConfig};

use crate::error::{Error, Result};
use crate::norm::{ops as norm_ops, NormEps};
use crate::tensor::{Graph, Tensor, Var};

/// `mean(relu(1 - d_real)) + mean(relu(1 + d_fake))`, which equals
/// `-mean(min(0, -1 + d_real)) - mean(min(0, -1 - d_fake))`.
pub fn hinge_d(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var> {
    if g.shape(d_real) != g.shape(d_fake) {
        return Err(Error::shape(format!(
            "real scores {:?} vs fake scores {:?}",
            g.shape(d_real),
            g.shape(d_fake)
        )));
    }
    let r = g.neg(d_real)?;
    let r = g.shift(r, 1.0)?;
    let r = g.relu(r)?;
    let r = g.mean_all(r)?;
    let f = g.shift(d_fake, 1.0)?;
    let f = g.relu(f)?;
    let f = g.mean_all(f)?;
    g.add(r, f)
}

/// `-mean(d_fake)`.
pub fn hinge_g(g: &mut Graph, d_fake: Var) -> Result<Var> {
    let m = g.mean_all(d_fake)?;
    g.neg(m)
}

fn one_hot(labels: &[usize], n: usize, k: usize) -> Result<Tensor> {
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for batch of {n}", labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    Tensor::from_fn(vec![n, k], |i| if labels[i[0]] == i[1] { 1.0 } else { 0.0 })
}

/// Mean softmax cross-entropy of `(N, K)` logits against integer labels.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 {
        return Err(Error::shape(format!("logits must be (N, K), got {shape:?}")));
    }
    let target = g.constant(one_hot(labels, shape[0], shape[1])?);
    let ls = g.log_softmax(logits)?;
    let picked = g.mul(ls, target)?;
    let total = g.sum_all(picked)?;
    g.scale(total, -1.0 / shape[0] as f64)
}

/// Clean and adversarial cross-entropy terms and their sum.
#[derive(Clone, Copy, Debug)]
pub struct AdvPropTerms<T> {
    pub total: T,
    pub clean: T,
    pub adv: T,
}

pub fn advprop(
    g: &mut Graph,
    logits_clean: Var,
    logits_adv: Var,
    labels: &[usize],
) -> Result<AdvPropTerms<Var>> {
    let clean = cross_entropy(g, logits_clean, labels)?;
    let adv = cross_entropy(g, logits_adv, labels)?;
    let total = g.add(clean, adv)?;
    Ok(AdvPropTerms { total, clean, adv })
}

fn mse(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(format!("{:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    let d = g.sub(a, b)?;
    let sq = g.square(d)?;
    g.mean_all(sq)
}

/// Mean squared error between two feature maps.
pub fn content(g: &mut Graph, f_out: Var, f_target: Var) -> Result<Var> {
    mse(g, f_out, f_target)
}

/// Sum over layers of MSE between instance means plus MSE between instance
/// standard deviations.
pub fn style(g: &mut Graph, feats_out: &[Var], feats_style: &[Var], eps: NormEps) -> Result<Var> {
    if feats_out.len() != feats_style.len() || feats_out.is_empty() {
        return Err(Error::shape(format!(
            "{} output layers vs {} style layers",
            feats_out.len(),
            feats_style.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (&o, &s) in feats_out.iter().zip(feats_style) {
        if g.shape(o) != g.shape(s) {
            return Err(Error::shape(format!("{:?} vs {:?}", g.shape(o), g.shape(s))));
        }
        let (mo, so) = norm_ops::instance_moments(g, o, eps)?;
        let (ms, ss) = norm_ops::instance_moments(g, s, eps)?;
        let lm = mse(g, mo, ms)?;
        let ls = mse(g, so, ss)?;
        let layer = g.add(lm, ls)?;
        total = Some(match total {
            Some(t) => g.add(t, layer)?,
            None => layer,
        });
    }
    Ok(total.expect("at least one layer"))
}

fn scores(g: &mut Graph, values: &[f64]) -> Result<Var> {
    if values.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(g.constant(Tensor::vector(values.to_vec())?))
}

pub fn hinge_d_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let r = scores(&mut g, d_real)?;
    let f = scores(&mut g, d_fake)?;
    let l = hinge_d(&mut g, r, f)?;
    g.value(l).item()
}

pub fn hinge_g_loss(d_fake: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let f = scores(&mut g, d_fake)?;
    let l = hinge_g(&mut g, f)?;
    g.value(l).item()
}

pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let ce = cross_entropy(&mut g, l, labels)?;
    g.value(ce).item()
}

pub fn advprop_loss(
    logits_clean: &Tensor,
    logits_adv: &Tensor,
    labels: &[usize],
) -> Result<AdvPropTerms<f64>> {
    let mut g = Graph::new();
    let c = g.constant(logits_clean.clone());
    let a = g.constant(logits_adv.clone());
    let t = advprop(&mut g, c, a, labels)?;
    Ok(AdvPropTerms {
        total: g.value(t.total).item()?,
        clean: g.value(t.clean).item()?,
        adv: g.value(t.adv).item()?,
    })
}

pub fn content_loss(f_out: &Tensor, f_target: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant(f_out.clone());
    let b = g.constant(f_target.clone());
    let l = content(&mut g, a, b)?;
    g.value(l).item()
}

pub fn style_loss(feats_out: &[Tensor], feats_style: &[Tensor], eps: NormEps) -> Result<f64> {
    let mut g = Graph::new();
    let o: Vec<Var> = feats_out.iter().map(|t| g.constant(t.clone())).collect();
    let s: Vec<Var> = feats_style.iter().map(|t| g.constant(t.clone())).collect();
    let l = style(&mut g, &o, &s, eps)?;
    g.value(l).item()
}
