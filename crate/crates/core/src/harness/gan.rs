//! Toy conditional GAN on a 2-D Gaussian mixture.

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::ExperimentConfig;
use super::metrics::{Record, RunContext};
use crate::data::{normal_tensor, stream_rng, SeededRng};
use crate::diagnostics::{grad_norm_std, pairwise_cosine};
use crate::error::{Error, Result};
use crate::losses::{hinge_d, hinge_g};
use crate::norm::{ops as norm_ops, BranchStats, Condition, NormEps};
use crate::params::{Adam, Bound, Group, Linear, ParamId, ParamSet};
use crate::tensor::{Graph, Tensor, Var};

pub const CLASSES: usize = 4;
pub const LATENT: usize = 4;
pub const HIDDEN: usize = 32;
pub const MODE_RADIUS: f64 = 2.0;
pub const MODE_STD: f64 = 0.1;
/// A class counts as recovered when its generated mean lies this close to
/// the target mean.
pub const MODE_TOLERANCE: f64 = 1.0;
pub const EVAL_SAMPLES: usize = 256;
pub const DIAG_LATENTS: usize = 8;
pub const STAGES: usize = 2;
const LEAK: f64 = 0.2;

/// Mean of mixture component `k`: evenly spaced on a circle.
pub fn mode_mean(k: usize) -> [f64; 2] {
    let theta = std::f64::consts::TAU * k as f64 / CLASSES as f64;
    [MODE_RADIUS * theta.cos(), MODE_RADIUS * theta.sin()]
}

#[derive(Clone, Copy, Debug)]
struct CondNorm {
    bank_gamma: ParamId,
    bank_beta: ParamId,
    sandwich: Option<(ParamId, ParamId)>,
}

/// MLP generator with class-conditional normalization after each hidden
/// linear layer.
#[derive(Clone, Debug)]
pub struct Generator {
    pub params: ParamSet,
    hidden: [Linear; STAGES],
    norms: [CondNorm; STAGES],
    out: Linear,
    pub stats: [BranchStats; STAGES],
    eps: NormEps,
}

impl Generator {
    pub fn new(sandwich: bool, rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParamSet::new();
        let mut hidden = Vec::new();
        let mut norms = Vec::new();
        for l in 0..STAGES {
            let d_in = if l == 0 { LATENT } else { HIDDEN };
            hidden.push(Linear::new(&mut params, rng, &format!("g.hidden{l}"), d_in, HIDDEN)?);
            let sandwich = if sandwich {
                Some((
                    params.add(format!("g.norm{l}.sa_gamma"), Tensor::ones(vec![HIDDEN])?, Group::Weight),
                    params.add(format!("g.norm{l}.sa_beta"), Tensor::zeros(vec![HIDDEN])?, Group::Weight),
                ))
            } else {
                None
            };
            norms.push(CondNorm {
                bank_gamma: params.add(format!("g.norm{l}.bank_gamma"), Tensor::ones(vec![CLASSES, HIDDEN])?, Group::Weight),
                bank_beta: params.add(format!("g.norm{l}.bank_beta"), Tensor::zeros(vec![CLASSES, HIDDEN])?, Group::Weight),
                sandwich,
            });
        }
        let out = Linear::new(&mut params, rng, "g.out", HIDDEN, 2)?;
        Ok(Generator {
            params,
            hidden: [hidden[0], hidden[1]],
            norms: [norms[0], norms[1]],
            out,
            stats: [BranchStats::running(1, HIDDEN)?, BranchStats::running(1, HIDDEN)?],
            eps: NormEps::default(),
        })
    }

    /// Weight matrix feeding normalization layer `stage`.
    pub fn stage_weight(&self, stage: usize) -> ParamId {
        self.hidden[stage].w
    }

    pub fn set_training(&mut self, training: bool) {
        self.stats.iter_mut().for_each(|s| s.set_training(training));
    }

    pub fn forward(&mut self, g: &mut Graph, b: &Bound, z: Var, y: &[usize]) -> Result<Var> {
        let mut h = z;
        for l in 0..STAGES {
            h = self.hidden[l].apply(g, b, h)?;
            let n = self.norms[l];
            let bank = b.bank(n.bank_gamma, n.bank_beta);
            let cond = Condition::PerSample(y);
            h = match n.sandwich {
                Some((sg, sb)) => norm_ops::sabn(g, h, cond, b.affine(sg, sb), bank, &mut self.stats[l], self.eps)?,
                None => norm_ops::ccbn(g, h, cond, bank, &mut self.stats[l], self.eps)?,
            };
            h = g.relu(h)?;
        }
        self.out.apply(g, b, h)
    }
}

/// Projection discriminator: an MLP score plus `<embed(y), features>`.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub params: ParamSet,
    hidden: [Linear; 2],
    out: Linear,
    embed: ParamId,
}

impl Discriminator {
    pub fn new(rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParamSet::new();
        let h0 = Linear::new(&mut params, rng, "d.hidden0", 2, HIDDEN)?;
        let h1 = Linear::new(&mut params, rng, "d.hidden1", HIDDEN, HIDDEN)?;
        let out = Linear::new(&mut params, rng, "d.out", HIDDEN, 1)?;
        let e = normal_tensor(rng, vec![CLASSES, HIDDEN], 1.0 / (HIDDEN as f64).sqrt())?;
        let embed = params.add("d.embed", e, Group::Weight);
        Ok(Discriminator {
            params,
            hidden: [h0, h1],
            out,
            embed,
        })
    }

    /// Scores shaped `(N)`.
    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var, y: &[usize]) -> Result<Var> {
        let n = g.shape(x)[0];
        let mut h = x;
        for lin in &self.hidden {
            let a = lin.apply(g, b, h)?;
            h = g.leaky_relu(a, LEAK)?;
        }
        let score = self.out.apply(g, b, h)?;
        let score = g.reshape(score, vec![n])?;
        let mut onehot = vec![0.0; n * CLASSES];
        for (row, &k) in y.iter().enumerate() {
            if k >= CLASSES {
                return Err(Error::LabelOutOfRange { label: k, classes: CLASSES });
            }
            onehot[row * CLASSES + k] = 1.0;
        }
        let select = g.constant(Tensor::new(vec![n, CLASSES], onehot)?);
        let e = g.matmul(select, b.var(self.embed))?;
        let prod = g.mul(e, h)?;
        let proj = g.sum(prod, &[1])?;
        let proj = g.reshape(proj, vec![n])?;
        g.add(score, proj)
    }
}

fn real_batch(rng: &mut SeededRng, n: usize) -> Result<(Tensor, Vec<usize>)> {
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..CLASSES)).collect();
    let mut data = Vec::with_capacity(2 * n);
    for &k in &y {
        for m in mode_mean(k) {
            data.push(m + MODE_STD * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok((Tensor::new(vec![n, 2], data)?, y))
}

fn latents(rng: &mut SeededRng, n: usize) -> Result<Tensor> {
    normal_tensor(rng, vec![n, LATENT], 1.0)
}

/// Generator, discriminator and their optimizers.
#[derive(Clone, Debug)]
pub struct GanModel {
    pub gen: Generator,
    pub disc: Discriminator,
    opt_g: Adam,
    opt_d: Adam,
}

impl GanModel {
    pub fn new(sandwich: bool, seed: u64, lr_g: f64, lr_d: f64) -> Result<Self> {
        let mut rng = stream_rng(seed, 0);
        Ok(GanModel {
            gen: Generator::new(sandwich, &mut rng)?,
            disc: Discriminator::new(&mut rng)?,
            opt_g: Adam::new(lr_g, 0.5, 0.999),
            opt_d: Adam::new(lr_d, 0.5, 0.999),
        })
    }

    /// One discriminator update followed by one generator update; returns
    /// `(L_D, L_G)`.
    pub fn train_step(&mut self, rng: &mut SeededRng, batch: usize) -> Result<(f64, f64)> {
        self.gen.set_training(true);
        let (x_real, y) = real_batch(rng, batch)?;
        let z = latents(rng, batch)?;
        let mut g = Graph::new();
        let bg = self.gen.params.bind(&mut g);
        let zv = g.constant(z);
        let fake = self.gen.forward(&mut g, &bg, zv, &y)?;
        let fake = g.constant(g.value(fake).clone());
        let bd = self.disc.params.bind(&mut g);
        let xr = g.constant(x_real);
        let d_real = self.disc.forward(&mut g, &bd, xr, &y)?;
        let d_fake = self.disc.forward(&mut g, &bd, fake, &y)?;
        let loss_d = hinge_d(&mut g, d_real, d_fake)?;
        let ld = g.value(loss_d).item()?;
        let grads = g.backward(loss_d)?;
        self.opt_d.step(&mut self.disc.params, &bd, &grads, Group::Weight)?;

        let y: Vec<usize> = (0..batch).map(|_| rng.random_range(0..CLASSES)).collect();
        let z = latents(rng, batch)?;
        let mut g = Graph::new();
        let bg = self.gen.params.bind(&mut g);
        let bd = self.disc.params.bind(&mut g);
        let zv = g.constant(z);
        let fake = self.gen.forward(&mut g, &bg, zv, &y)?;
        let d_fake = self.disc.forward(&mut g, &bd, fake, &y)?;
        let loss_g = hinge_g(&mut g, d_fake)?;
        let lg = g.value(loss_g).item()?;
        let grads = g.backward(loss_g)?;
        self.opt_g.step(&mut self.gen.params, &bg, &grads, Group::Weight)?;
        if !(ld.is_finite() && lg.is_finite()) {
            return Err(Error::NonFinite("gan loss"));
        }
        Ok((ld, lg))
    }

    /// Flattened gradients of `L_G = -D(G(z, y), y)` w.r.t. each stage's
    /// weight, with the generator in eval mode.
    pub fn stage_grads(&mut self, z: &Tensor, y: usize) -> Result<Vec<Vec<f64>>> {
        self.gen.set_training(false);
        let mut g = Graph::new();
        let bg = self.gen.params.bind(&mut g);
        let bd = self.disc.params.bind(&mut g);
        let zv = g.constant(z.reshape(vec![1, LATENT])?);
        let fake = self.gen.forward(&mut g, &bg, zv, &[y])?;
        let d = self.disc.forward(&mut g, &bd, fake, &[y])?;
        let loss = hinge_g(&mut g, d)?;
        let grads = g.backward(loss)?;
        (0..STAGES)
            .map(|l| Ok(grads.wrt(bg.var(self.gen.stage_weight(l)))?.data().to_vec()))
            .collect()
    }

    /// Per-stage `(g_inter, grad_norm_std, latents used)`. Latents whose
    /// gradient vanishes for some class are left out of the average.
    pub fn diagnostics(&mut self, zs: &[Tensor]) -> Result<Vec<Option<(f64, f64, usize)>>> {
        let mut per_stage: Vec<Vec<Vec<Vec<f64>>>> = vec![Vec::new(); STAGES];
        for z in zs {
            let mut by_class = Vec::with_capacity(CLASSES);
            for y in 0..CLASSES {
                by_class.push(self.stage_grads(z, y)?);
            }
            for (l, stage) in per_stage.iter_mut().enumerate() {
                stage.push(by_class.iter().map(|s| s[l].clone()).collect());
            }
        }
        let mut out = Vec::with_capacity(STAGES);
        for stage in per_stage {
            let (mut cos, mut std, mut used) = (0.0, 0.0, 0usize);
            for grads in &stage {
                match pairwise_cosine(grads) {
                    Ok(c) => {
                        cos += c;
                        std += grad_norm_std(grads)?;
                        used += 1;
                    }
                    Err(Error::ZeroNormVector(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            out.push((used > 0).then(|| (cos / used as f64, std / used as f64, used)));
        }
        Ok(out)
    }

    /// Mean generated point per class, generator in eval mode.
    pub fn class_means(&mut self, rng: &mut SeededRng, samples: usize) -> Result<Vec<[f64; 2]>> {
        self.gen.set_training(false);
        let mut means = Vec::with_capacity(CLASSES);
        for k in 0..CLASSES {
            let z = latents(rng, samples)?;
            let mut g = Graph::new();
            let bg = self.gen.params.bind(&mut g);
            let zv = g.constant(z);
            let out = self.gen.forward(&mut g, &bg, zv, &vec![k; samples])?;
            let v = g.value(out).data();
            let mx = v.iter().step_by(2).sum::<f64>() / samples as f64;
            let my = v.iter().skip(1).step_by(2).sum::<f64>() / samples as f64;
            means.push([mx, my]);
        }
        Ok(means)
    }
}

/// Records of one seed plus the final distance of each class mean to its
/// target.
#[derive(Clone, Debug)]
pub struct GanOutcome {
    pub records: Vec<Record>,
    pub mode_errors: Vec<f64>,
}

impl GanOutcome {
    pub fn modes_recovered(&self) -> usize {
        self.mode_errors.iter().filter(|&&e| e < MODE_TOLERANCE).count()
    }
}

pub fn run_seed(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<GanOutcome> {
    let seed = ctx.seed;
    let mut model = GanModel::new(cfg.variant == "sabn", seed, cfg.rate("g"), cfg.rate("d"))?;
    let mut rng = stream_rng(seed, 1);
    let mut diag_rng = stream_rng(seed, 2);
    let zs = (0..DIAG_LATENTS)
        .map(|_| normal_tensor(&mut diag_rng, vec![LATENT], 1.0))
        .collect::<Result<Vec<_>>>()?;
    let every = cfg.diagnostics_every();
    let mut records = Vec::new();
    let mut mode_errors = Vec::new();
    if cfg.steps == 0 {
        return Ok(GanOutcome { records, mode_errors });
    }
    for step in 0..=cfg.steps {
        if step > 0 {
            let (ld, lg) = model.train_step(&mut rng, cfg.batch_size)?;
            records.push(ctx.record(step as u64, "train").num("loss_d", ld)?.num("loss_g", lg)?);
        }
        if step % every == 0 {
            for (l, d) in model.diagnostics(&zs)?.into_iter().enumerate() {
                if let Some((cos, std, used)) = d {
                    records.push(
                        ctx.record(step as u64, "diagnostics")
                            .int("stage", l as u64)
                            .int("epoch", step as u64)
                            .num("g_inter", cos)?
                            .num("grad_norm_std", std)?
                            .int("latents", used as u64),
                    );
                }
            }
        }
    }
    let means = model.class_means(&mut stream_rng(seed, 3), EVAL_SAMPLES)?;
    let mut rec = ctx.record(cfg.steps as u64, "eval");
    for (k, m) in means.iter().enumerate() {
        let t = mode_mean(k);
        let err = ((m[0] - t[0]).powi(2) + (m[1] - t[1]).powi(2)).sqrt();
        rec = rec.num(&format!("mode_error_class{k}"), err)?;
        mode_errors.push(err);
    }
    let recovered = mode_errors.iter().filter(|&&e| e < MODE_TOLERANCE).count();
    records.push(rec.num("modes_recovered", recovered as f64)?);
    Ok(GanOutcome { records, mode_errors })
}
