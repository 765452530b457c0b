//! Gradient diagnostics across classes and curve smoothing.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_vectors(vectors: &[Vec<f64>]) -> Result<()> {
    if vectors.len() < 2 {
        return Err(Error::TooFewVectors {
            needed: 2,
            got: vectors.len(),
        });
    }
    let len = vectors[0].len();
    if vectors.iter().any(|v| v.len() != len) {
        return Err(Error::shape("gradient vectors of unequal length"));
    }
    Ok(())
}

/// Average cosine similarity over ordered pairs `i != j`.
pub fn pairwise_cosine(vectors: &[Vec<f64>]) -> Result<f64> {
    check_vectors(vectors)?;
    let sq: Vec<f64> = vectors.iter().map(|v| dot(v, v)).collect();
    if let Some(i) = sq.iter().position(|&s| s == 0.0) {
        return Err(Error::ZeroNormVector(i));
    }
    let n = vectors.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                // One square root of the product keeps identical and antipodal
                // pairs at exactly +1 and -1.
                let c = dot(&vectors[i], &vectors[j]) / (sq[i] * sq[j]).sqrt();
                total += c.clamp(-1.0, 1.0);
            }
        }
    }
    Ok((total / (n * (n - 1)) as f64).clamp(-1.0, 1.0))
}

/// Population standard deviation of the vectors' ℓ2 norms.
pub fn grad_norm_std(per_class_grads: &[Vec<f64>]) -> Result<f64> {
    check_vectors(per_class_grads)?;
    let norms: Vec<f64> = per_class_grads.iter().map(|v| dot(v, v).sqrt()).collect();
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    Ok((norms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

/// `s_0 = x_0`, `s_t = decay * s_{t-1} + (1 - decay) * x_t`.
pub fn ema_smooth(series: &[f64], decay: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::InvalidArgument(format!("decay must be in [0, 1), got {decay}")));
    }
    let (&first, rest) = series.split_first().ok_or(Error::EmptySeries)?;
    let mut out = Vec::with_capacity(series.len());
    out.push(first);
    let mut s = first;
    for &x in rest {
        s = decay * s + (1.0 - decay) * x;
        out.push(s);
    }
    Ok(out)
}

/// Per-class gradients of one stage's parameters for one latent.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub stage: usize,
    pub grads: Vec<Vec<f64>>,
}

impl GradReport {
    pub fn cosine(&self) -> Result<f64> {
        pairwise_cosine(&self.grads)
    }

    pub fn norm_std(&self) -> Result<f64> {
        grad_norm_std(&self.grads)
    }
}

/// Mean over latents of the pairwise cosine between per-class gradients.
///
/// `grad_of(z, y)` returns the flattened gradient of the measured stage's
/// parameters for latent `z` generated under class `y`.
pub fn inter_class_grad_similarity<F>(mut grad_of: F, latents: &[Tensor], classes: &[usize]) -> Result<f64>
where
    F: FnMut(&Tensor, usize) -> Result<Vec<f64>>,
{
    if latents.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if classes.len() < 2 {
        return Err(Error::TooFewVectors {
            needed: 2,
            got: classes.len(),
        });
    }
    let mut total = 0.0;
    for z in latents {
        let grads = classes
            .iter()
            .map(|&y| grad_of(z, y))
            .collect::<Result<Vec<_>>>()?;
        total += pairwise_cosine(&grads)?;
    }
    Ok(total / latents.len() as f64)
}
