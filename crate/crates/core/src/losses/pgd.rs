use rand::Rng;

use super::cross_entropy;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Projected gradient ascent on cross-entropy inside an ℓ∞ ball.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgdConfig {
    pub epsilon: f64,
    pub step_size: f64,
    pub iters: usize,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
    /// Start from a uniform draw inside the ball instead of the clean input.
    pub random_start: bool,
}

impl PgdConfig {
    /// ε = 8/255, step 2/255 on `[0, 1]` data with a random start.
    pub fn standard(iters: usize) -> Self {
        PgdConfig {
            epsilon: 8.0 / 255.0,
            step_size: 2.0 / 255.0,
            iters,
            clamp_lo: 0.0,
            clamp_hi: 1.0,
            random_start: true,
        }
    }

    /// Ten iterations, used while training.
    pub fn train() -> Self {
        PgdConfig::standard(10)
    }

    /// Twenty iterations, used for robust accuracy.
    pub fn eval() -> Self {
        PgdConfig::standard(20)
    }

    /// `epsilon = 0` is accepted and makes the attack the identity.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step size must be positive, got {}", self.step_size));
        }
        if self.iters == 0 {
            return bad("iters must be at least 1".into());
        }
        if self.clamp_lo.partial_cmp(&self.clamp_hi) != Some(std::cmp::Ordering::Less) {
            return bad(format!("empty clamp range [{}, {}]", self.clamp_lo, self.clamp_hi));
        }
        Ok(())
    }

    fn project(&self, x0: f64, v: f64) -> f64 {
        v.clamp(x0 - self.epsilon, x0 + self.epsilon)
            .clamp(self.clamp_lo, self.clamp_hi)
    }
}

/// Adversarial example for `model`, a function from an input node to logits.
pub fn pgd_attack<F, R>(model: F, x: &Tensor, y: &[usize], cfg: &PgdConfig, rng: &mut R) -> Result<Tensor>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
    R: Rng + ?Sized,
{
    pgd_attack_traced(model, x, y, cfg, rng, |_, _| {})
}

/// [`pgd_attack`] that also reports every iterate: index 0 is the start
/// point, index `t` the result of step `t`.
pub fn pgd_attack_traced<F, R, O>(
    mut model: F,
    x: &Tensor,
    y: &[usize],
    cfg: &PgdConfig,
    rng: &mut R,
    mut observe: O,
) -> Result<Tensor>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
    R: Rng + ?Sized,
    O: FnMut(usize, &Tensor),
{
    cfg.validate()?;
    if x.data().iter().any(|v| !(cfg.clamp_lo..=cfg.clamp_hi).contains(v)) {
        return Err(Error::InvalidArgument(format!(
            "input outside clamp range [{}, {}]",
            cfg.clamp_lo, cfg.clamp_hi
        )));
    }
    let x0 = x.data();
    let mut cur: Vec<f64> = if cfg.random_start && cfg.epsilon > 0.0 {
        x0.iter()
            .map(|&v| cfg.project(v, v + rng.random_range(-cfg.epsilon..=cfg.epsilon)))
            .collect()
    } else {
        x0.to_vec()
    };
    observe(0, &Tensor::new(x.shape().to_vec(), cur.clone())?);
    for t in 1..=cfg.iters {
        let mut g = Graph::new();
        let xv = g.param(Tensor::new(x.shape().to_vec(), cur.clone())?);
        let logits = model(&mut g, xv)?;
        let loss = cross_entropy(&mut g, logits, y)?;
        let grads = g.backward(loss)?;
        let grad = grads.wrt(xv)?;
        if !grad.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        for ((c, &g), &o) in cur.iter_mut().zip(grad.data()).zip(x0) {
            let s = if g > 0.0 {
                1.0
            } else if g < 0.0 {
                -1.0
            } else {
                0.0
            };
            *c = cfg.project(o, *c + cfg.step_size * s);
        }
        observe(t, &Tensor::new(x.shape().to_vec(), cur.clone())?);
    }
    Tensor::new(x.shape().to_vec(), cur)
}
