//! AdvProp-style adversarial training on a synthetic mixture in `[0, 1]^D`.

use super::config::ExperimentConfig;
use super::metrics::{Record, RunContext};
use crate::data::{gaussian_mixture, stream_rng, LabeledDataset, MixtureSpec, SeededRng};
use crate::error::{Error, Result};
use crate::losses::{advprop, pgd_attack, PgdConfig};
use crate::norm::{ops as norm_ops, BranchStats, NormEps, StatsMode, ADV_BRANCH, CLEAN_BRANCH};
use crate::params::{Adam, Bound, Group, Linear, ParamId, ParamSet};
use crate::tensor::{Graph, Tensor, Var};

pub const DIM: usize = 16;
pub const CLASSES: usize = 4;
pub const HIDDEN: usize = 32;
pub const TRAIN_PER_CLASS: usize = 128;
pub const TEST_PER_CLASS: usize = 64;
pub const MEAN_LO: f64 = 0.3;
pub const MEAN_HI: f64 = 0.7;
pub const CLASS_STD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdvVariant {
    Bn,
    AuxBn,
    SaAuxBn,
}

impl AdvVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bn" => Ok(AdvVariant::Bn),
            "auxbn" => Ok(AdvVariant::AuxBn),
            "sa_auxbn" => Ok(AdvVariant::SaAuxBn),
            other => Err(Error::ConfigInvalid(format!("unknown adv variant {other:?}"))),
        }
    }

    fn branches(self) -> usize {
        if self == AdvVariant::Bn {
            1
        } else {
            2
        }
    }

    /// Statistics branch used for `branch`; plain BN shares one.
    fn route(self, branch: usize) -> usize {
        if self == AdvVariant::Bn {
            0
        } else {
            branch
        }
    }
}

/// Train and test splits sharing one set of class means; values clamped to `[0, 1]`.
pub fn adv_data(seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let spec = MixtureSpec::random_means(CLASSES, DIM, MEAN_LO, MEAN_HI, CLASS_STD, seed);
    let test_spec = MixtureSpec {
        seed: seed ^ 0x7e57,
        ..spec.clone()
    };
    let clamp = |mut d: LabeledDataset| {
        d.features = d.features.map(|v| v.clamp(0.0, 1.0));
        d
    };
    Ok((
        clamp(gaussian_mixture(&spec, TRAIN_PER_CLASS)?),
        clamp(gaussian_mixture(&test_spec, TEST_PER_CLASS)?),
    ))
}

/// `Linear → Norm → ReLU → Linear` classifier with two normalization branches.
#[derive(Clone, Debug)]
pub struct AdvNet {
    pub variant: AdvVariant,
    pub params: ParamSet,
    input: Linear,
    head: Linear,
    gamma: ParamId,
    beta: ParamId,
    sandwich: Option<(ParamId, ParamId)>,
    pub stats: BranchStats,
    eps: NormEps,
}

impl AdvNet {
    pub fn new(variant: AdvVariant, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, 0);
        let mut params = ParamSet::new();
        let input = Linear::new(&mut params, &mut rng, "input", DIM, HIDDEN)?;
        let (gamma, beta) = match variant {
            AdvVariant::Bn => (
                params.add("norm.gamma", Tensor::ones(vec![HIDDEN])?, Group::Weight),
                params.add("norm.beta", Tensor::zeros(vec![HIDDEN])?, Group::Weight),
            ),
            _ => (
                params.add("norm.bank_gamma", Tensor::ones(vec![2, HIDDEN])?, Group::Weight),
                params.add("norm.bank_beta", Tensor::zeros(vec![2, HIDDEN])?, Group::Weight),
            ),
        };
        let sandwich = (variant == AdvVariant::SaAuxBn).then(|| -> Result<_> {
            Ok((
                params.add("norm.sa_gamma", Tensor::ones(vec![HIDDEN])?, Group::Weight),
                params.add("norm.sa_beta", Tensor::zeros(vec![HIDDEN])?, Group::Weight),
            ))
        });
        let sandwich = sandwich.transpose()?;
        let head = Linear::new(&mut params, &mut rng, "head", HIDDEN, CLASSES)?;
        Ok(AdvNet {
            variant,
            params,
            input,
            head,
            gamma,
            beta,
            sandwich,
            stats: BranchStats::running(variant.branches(), HIDDEN)?,
            eps: NormEps::default(),
        })
    }

    /// Logits of `x` routed through normalization `branch`.
    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var, branch: usize, stats: &mut BranchStats) -> Result<Var> {
        let h = self.input.apply(g, b, x)?;
        let branch = self.variant.route(branch);
        let h = match (self.variant, self.sandwich) {
            (AdvVariant::Bn, _) => norm_ops::bn(g, h, b.affine(self.gamma, self.beta), stats, self.eps)?,
            (AdvVariant::AuxBn, _) => norm_ops::auxbn(g, h, branch, stats, b.bank(self.gamma, self.beta), self.eps)?,
            (AdvVariant::SaAuxBn, Some((sg, sb))) => norm_ops::sa_auxbn(
                g,
                h,
                branch,
                stats,
                b.affine(sg, sb),
                b.bank(self.gamma, self.beta),
                self.eps,
            )?,
            (AdvVariant::SaAuxBn, None) => unreachable!("sandwich is created with the variant"),
        };
        let h = g.relu(h)?;
        self.head.apply(g, b, h)
    }

    /// PGD examples against `branch`, leaving the tracked statistics untouched.
    pub fn attack(&self, x: &Tensor, y: &[usize], branch: usize, cfg: &PgdConfig, rng: &mut SeededRng) -> Result<Tensor> {
        let mut stats = self.stats.clone();
        if stats.is_training() {
            stats.set_mode(StatsMode::Batch);
        }
        pgd_attack(
            |g, xv| {
                let b = self.params.bind(g);
                self.forward(g, &b, xv, branch, &mut stats)
            },
            x,
            y,
            cfg,
            rng,
        )
    }

    /// Predicted class per row with the tracked statistics.
    pub fn predict(&self, x: &Tensor, branch: usize) -> Result<Vec<usize>> {
        let mut stats = self.stats.clone();
        stats.set_training(false);
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let xv = g.constant(x.clone());
        let logits = self.forward(&mut g, &b, xv, branch, &mut stats)?;
        let v = g.value(logits);
        let k = v.shape()[1];
        Ok(v.data()
            .chunks(k)
            .map(|row| {
                let mut best = 0;
                for (i, &s) in row.iter().enumerate() {
                    if s > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }

    pub fn accuracy(&self, x: &Tensor, y: &[usize], branch: usize) -> Result<f64> {
        let pred = self.predict(x, branch)?;
        Ok(pred.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64)
    }

    /// Standard (clean) and robust accuracy of `branch` in eval mode.
    pub fn evaluate(&self, x: &Tensor, y: &[usize], branch: usize, cfg: &PgdConfig, rng: &mut SeededRng) -> Result<(f64, f64)> {
        let mut eval = self.clone();
        eval.stats.set_training(false);
        let sa = eval.accuracy(x, y, branch)?;
        let x_adv = eval.attack(x, y, branch, cfg, rng)?;
        let ra = eval.accuracy(&x_adv, y, branch)?;
        Ok((sa, ra))
    }
}

/// SA/RA of both branches at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdvEval {
    pub step: u64,
    pub sa_clean: f64,
    pub ra_clean: f64,
    pub sa_adv: f64,
    pub ra_adv: f64,
}

#[derive(Clone, Debug)]
pub struct AdvOutcome {
    pub records: Vec<Record>,
    /// Evaluation before training and, if any steps ran, after the last step.
    pub evals: Vec<AdvEval>,
}

fn eval_record(ctx: &RunContext, net: &AdvNet, test: &LabeledDataset, cfg: &PgdConfig, step: u64) -> Result<(Record, AdvEval)> {
    let mut rng = stream_rng(ctx.seed, 1000 + step);
    let (sa_clean, ra_clean) = net.evaluate(&test.features, &test.labels, CLEAN_BRANCH, cfg, &mut rng)?;
    let (sa_adv, ra_adv) = net.evaluate(&test.features, &test.labels, ADV_BRANCH, cfg, &mut rng)?;
    let rec = ctx
        .record(step, "eval")
        .num("sa_clean", sa_clean)?
        .num("ra_clean", ra_clean)?
        .num("sa_adv", sa_adv)?
        .num("ra_adv", ra_adv)?;
    Ok((
        rec,
        AdvEval {
            step,
            sa_clean,
            ra_clean,
            sa_adv,
            ra_adv,
        },
    ))
}

pub fn run_seed(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<AdvOutcome> {
    let seed = ctx.seed;
    let variant = AdvVariant::parse(&cfg.variant)?;
    let pgd = cfg.pgd_settings();
    let (train_cfg, eval_cfg) = (pgd.train(), pgd.eval());
    let (train, test) = adv_data(seed)?;
    let mut net = AdvNet::new(variant, seed)?;
    let mut opt = Adam::new(cfg.rate("w"), 0.9, 0.999);
    let mut attack_rng = stream_rng(seed, 2);

    let mut records = Vec::new();
    let mut evals = Vec::new();
    let (rec, ev) = eval_record(ctx, &net, &test, &eval_cfg, 0)?;
    records.push(rec);
    evals.push(ev);

    let mut batches = Vec::new();
    let mut epoch = 0;
    for step in 1..=cfg.steps {
        if batches.is_empty() {
            batches = train.batches(seed, epoch, cfg.batch_size);
            batches.reverse();
            epoch += 1;
        }
        let idx = batches.pop().expect("refilled above");
        let (x, y) = train.subset(&idx)?;
        let x_adv = net.attack(&x, &y, ADV_BRANCH, &train_cfg, &mut attack_rng)?;

        let mut g = Graph::new();
        let b = net.params.bind(&mut g);
        let xc = g.constant(x);
        let xa = g.constant(x_adv);
        let mut stats = net.stats.clone();
        let clean = net.forward(&mut g, &b, xc, CLEAN_BRANCH, &mut stats)?;
        let adv = net.forward(&mut g, &b, xa, ADV_BRANCH, &mut stats)?;
        net.stats = stats;
        let terms = advprop(&mut g, clean, adv, &y)?;
        let [total, clean, adv] = [terms.total, terms.clean, terms.adv].map(|v| g.value(v).item());
        let grads = g.backward(terms.total)?;
        opt.step(&mut net.params, &b, &grads, Group::Weight)?;
        records.push(
            ctx.record(step as u64, "train")
                .num("loss_total", total?)?
                .num("loss_clean", clean?)?
                .num("loss_adv", adv?)?,
        );
    }
    if cfg.steps > 0 {
        let (rec, ev) = eval_record(ctx, &net, &test, &eval_cfg, cfg.steps as u64)?;
        records.push(rec);
        evals.push(ev);
    }
    Ok(AdvOutcome { records, evals })
}
