//! Deterministic synthetic datasets and the crate-wide seeded generator.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{write_tensor, Tensor};

/// The single pseudo-random generator used throughout the crate.
pub type SeededRng = ChaCha8Rng;

/// Identifier recorded in metrics so runs can be replayed elsewhere.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha::ChaCha8Rng::seed_from_u64)";

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal_tensor(rng: &mut impl Rng, shape: impl Into<Vec<usize>>, std: f64) -> Result<Tensor> {
    let shape = shape.into();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(shape, data)
}

pub fn uniform_tensor(rng: &mut impl Rng, shape: impl Into<Vec<usize>>, lo: f64, hi: f64) -> Result<Tensor> {
    let shape = shape.into();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data)
}

/// Isotropic Gaussian mixture with one component per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub classes: usize,
    pub dim: usize,
    pub means: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::DegenerateSpec(m.to_string()));
        if self.classes < 2 {
            return bad("need at least two classes");
        }
        if self.dim == 0 {
            return bad("feature dimension must be positive");
        }
        if self.means.len() != self.classes || self.scales.len() != self.classes {
            return bad("one mean and one scale per class required");
        }
        if self.means.iter().any(|m| m.len() != self.dim) {
            return bad("mean length differs from feature dimension");
        }
        if self.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("scales must be positive and finite");
        }
        for i in 0..self.classes {
            for j in i + 1..self.classes {
                if self.means[i] == self.means[j] {
                    return Err(Error::DegenerateSpec(format!(
                        "classes {i} and {j} share a mean"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Means drawn uniformly from `[lo, hi)^dim` using the spec's own seed.
    pub fn random_means(classes: usize, dim: usize, lo: f64, hi: f64, scale: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 1);
        let means = (0..classes)
            .map(|_| (0..dim).map(|_| rng.random_range(lo..hi)).collect())
            .collect();
        MixtureSpec {
            classes,
            dim,
            means,
            scales: vec![scale; classes],
            seed,
        }
    }
}

/// Feature matrix `(n, D)` with one label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

#[derive(Serialize, Deserialize)]
struct LabelSidecar {
    classes: usize,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Permutation of the rows for `epoch`, a pure function of
    /// `(dataset size, shuffle_seed, epoch)`.
    pub fn epoch_order(&self, shuffle_seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut stream_rng(shuffle_seed, epoch));
        order
    }

    /// Row indices of each batch in `epoch`; the last batch may be short.
    pub fn batches(&self, shuffle_seed: u64, epoch: u64, batch_size: usize) -> Vec<Vec<usize>> {
        self.epoch_order(shuffle_seed, epoch)
            .chunks(batch_size.max(1))
            .map(<[usize]>::to_vec)
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.features.select_rows(indices)?;
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    /// Writes `<name>.sbnt` (features) and `<name>.labels.json`.
    pub fn export(&self, dir: &Path, name: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_tensor(
            BufWriter::new(File::create(dir.join(format!("{name}.sbnt")))?),
            &self.features,
        )?;
        let sidecar = LabelSidecar {
            classes: self.classes,
            labels: self.labels.clone(),
        };
        fs::write(
            dir.join(format!("{name}.labels.json")),
            serde_json::to_vec(&sidecar)?,
        )?;
        Ok(())
    }

    pub fn import(dir: &Path, name: &str) -> Result<Self> {
        let features = crate::tensor::read_tensor(std::io::BufReader::new(File::open(
            dir.join(format!("{name}.sbnt")),
        )?))?;
        let sidecar: LabelSidecar =
            serde_json::from_slice(&fs::read(dir.join(format!("{name}.labels.json")))?)?;
        if features.shape()[0] != sidecar.labels.len() {
            return Err(Error::Format("label count differs from feature rows".into()));
        }
        Ok(LabeledDataset {
            features,
            labels: sidecar.labels,
            classes: sidecar.classes,
        })
    }
}

/// Samples `n_per_class` points per component; rows interleave classes
/// (`label = row % K`).
pub fn gaussian_mixture(spec: &MixtureSpec, n_per_class: usize) -> Result<LabeledDataset> {
    spec.validate()?;
    if n_per_class == 0 {
        return Err(Error::DegenerateSpec("n_per_class must be at least 1".into()));
    }
    let mut rng = seeded_rng(spec.seed);
    let n = n_per_class * spec.classes;
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for row in 0..n {
        let k = row % spec.classes;
        labels.push(k);
        for &m in &spec.means[k] {
            data.push(m + spec.scales[k] * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok(LabeledDataset {
        features: Tensor::new(vec![n, spec.dim], data)?,
        labels,
        classes: spec.classes,
    })
}

/// Procedural texture patches with their per-instance target statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureBatch {
    /// `(n, C, H, W)`, values in `[0, 1]`.
    pub patches: Tensor,
    /// `(n, C)` requested per-channel means.
    pub target_mean: Tensor,
    /// `(n, C)` requested per-channel standard deviations.
    pub target_std: Tensor,
}

/// Sinusoid-plus-noise patches; each `(sample, channel)` plane is
/// standardized and rescaled to a drawn mean in `[0.35, 0.65)` and standard
/// deviation in `[0.04, 0.1)`, then clamped to `[0, 1]`.
pub fn texture_patches(seed: u64, n: usize, c: usize, h: usize, w: usize) -> Result<TextureBatch> {
    if n == 0 || c == 0 || h == 0 || w == 0 {
        return Err(Error::shape(format!("texture extents must be >= 1, got ({n},{c},{h},{w})")));
    }
    let mut rng = seeded_rng(seed);
    let plane = h * w;
    let mut data = Vec::with_capacity(n * c * plane);
    let mut means = Vec::with_capacity(n * c);
    let mut stds = Vec::with_capacity(n * c);
    for _ in 0..n * c {
        let target_mean = rng.random_range(0.35..0.65);
        let target_std = rng.random_range(0.04..0.1);
        let fy = rng.random_range(0.5..3.0);
        let fx = rng.random_range(0.5..3.0);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let raw: Vec<f64> = (0..plane)
            .map(|p| {
                let (y, x) = ((p / w) as f64, (p % w) as f64);
                let arg = std::f64::consts::TAU * (fy * y / h as f64 + fx * x / w as f64) + phase;
                arg.sin() + 0.5 * rng.random_range(-1.0..1.0)
            })
            .collect();
        let mu = raw.iter().sum::<f64>() / plane as f64;
        let sd = (raw.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / plane as f64).sqrt();
        data.extend(raw.iter().map(|v| {
            let z = if sd > 0.0 { (v - mu) / sd } else { 0.0 };
            (target_mean + target_std * z).clamp(0.0, 1.0)
        }));
        means.push(target_mean);
        stds.push(target_std);
    }
    Ok(TextureBatch {
        patches: Tensor::new(vec![n, c, h, w], data)?,
        target_mean: Tensor::new(vec![n, c], means)?,
        target_std: Tensor::new(vec![n, c], stds)?,
    })
}
