//! Weight-sharing supernet over vector features with architecture scores,
//! first-order bilevel search and the four normalization ablations.
//!
//! Layers form a linear chain. Each layer holds the candidate ops
//! `{zero, skip, affine-small, affine-large}`; its output is the
//! softmax(α)-weighted sum of the op outputs. Under the conditional variants
//! every layer after the first picks its affine by an index drawn from the
//! softmax of the previous layer's α.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{normal_tensor, seeded_rng, LabeledDataset, SeededRng};
use crate::error::{Error, Result};
use crate::losses::cross_entropy;
use crate::norm::{ops as norm_ops, BranchStats, Condition, NormEps};
use crate::params::{Bound, Group, Linear, ParamId, ParamSet, Sgd};
use crate::tensor::{Graph, Tensor, Var};

pub const OP_ZERO: usize = 0;
pub const OP_SKIP: usize = 1;
pub const OP_SMALL: usize = 2;
pub const OP_LARGE: usize = 3;
pub const N_OPS: usize = 4;
/// Minimum teacher score gap of rows in [`planted_task`].
pub const PLANTED_MARGIN: f64 = 1.0;

pub const OP_NAMES: [&str; N_OPS] = ["zero", "skip", "affine-small", "affine-large"];

/// Normalization ablation attached to every parameterized op.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormVariant {
    /// Normalization with `gamma = 1`, `beta = 0` held fixed.
    #[serde(rename = "none-affine")]
    NoneAffine,
    #[serde(rename = "affine")]
    Affine,
    #[serde(rename = "ccbn")]
    Ccbn,
    #[serde(rename = "sabn")]
    Sabn,
}

impl NormVariant {
    pub const ALL: [NormVariant; 4] = [
        NormVariant::NoneAffine,
        NormVariant::Affine,
        NormVariant::Ccbn,
        NormVariant::Sabn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NormVariant::NoneAffine => "none-affine",
            NormVariant::Affine => "affine",
            NormVariant::Ccbn => "ccbn",
            NormVariant::Sabn => "sabn",
        }
    }

    pub fn is_conditional(self) -> bool {
        matches!(self, NormVariant::Ccbn | NormVariant::Sabn)
    }
}

impl fmt::Display for NormVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NormVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown norm variant {s:?}")))
    }
}

/// Softmax computed around the maximum.
pub fn softmax(alpha: &[f64]) -> Vec<f64> {
    let m = alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = alpha.iter().map(|a| (a - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn check_alpha(alpha: &Tensor) -> Result<()> {
    if !alpha.is_finite() {
        return Err(Error::NonFiniteAlpha);
    }
    Ok(())
}

/// Draws `i` with probability `softmax(alpha_prev)_i`.
pub fn sample_condition_index<R: Rng + ?Sized>(alpha_prev: &Tensor, rng: &mut R) -> Result<usize> {
    check_alpha(alpha_prev)?;
    let p = softmax(alpha_prev.data());
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(p.len() - 1)
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(alpha: &Tensor) -> Result<usize> {
    check_alpha(alpha)?;
    let mut best = 0;
    for (i, &a) in alpha.data().iter().enumerate() {
        if a > alpha.data()[best] {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NormParams {
    Plain { gamma: ParamId, beta: ParamId },
    Cond {
        gamma: ParamId,
        beta: ParamId,
        sandwich: Option<(ParamId, ParamId)>,
    },
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    alpha: ParamId,
    small: [Linear; 2],
    large: Linear,
    /// Norms of the affine-small and affine-large ops, once attached.
    norms: Option<[NormParams; 2]>,
}

/// Sizes of a supernet.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupernetSpec {
    pub dim: usize,
    pub classes: usize,
    pub layers: usize,
}

impl SupernetSpec {
    pub fn bottleneck(&self) -> usize {
        (self.dim / 2).max(1)
    }
}

/// Losses of one alternation, measured before the respective update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Supernet {
    spec: SupernetSpec,
    params: ParamSet,
    layers: Vec<Layer>,
    head: Linear,
    variant: Option<NormVariant>,
    eps: NormEps,
}

impl Supernet {
    /// Fresh supernet with random weights, zero α and no normalization.
    pub fn new(spec: SupernetSpec, seed: u64) -> Result<Self> {
        if spec.dim == 0 || spec.layers == 0 || spec.classes < 2 {
            return Err(Error::InvalidArgument(format!("degenerate supernet {spec:?}")));
        }
        let mut rng = seeded_rng(seed);
        let mut params = ParamSet::new();
        let (d, h) = (spec.dim, spec.bottleneck());
        let mut layers = Vec::with_capacity(spec.layers);
        for l in 0..spec.layers {
            let alpha = params.add(format!("layer{l}.alpha"), Tensor::zeros(vec![N_OPS])?, Group::Arch);
            let small = [
                Linear::new(&mut params, &mut rng, &format!("layer{l}.small.0"), d, h)?,
                Linear::new(&mut params, &mut rng, &format!("layer{l}.small.1"), h, d)?,
            ];
            let large = Linear::new(&mut params, &mut rng, &format!("layer{l}.large"), d, d)?;
            layers.push(Layer {
                alpha,
                small,
                large,
                norms: None,
            });
        }
        let head = Linear::new(&mut params, &mut rng, "head", d, spec.classes)?;
        Ok(Supernet {
            spec,
            params,
            layers,
            head,
            variant: None,
            eps: NormEps::DEFAULT,
        })
    }

    /// Installs the normalization of `variant` on every parameterized op.
    pub fn attach_norm_variant(&mut self, variant: NormVariant) -> Result<()> {
        if self.variant.is_some() {
            return Err(Error::AlreadyAttached);
        }
        let d = self.spec.dim;
        for l in 0..self.layers.len() {
            // The first layer has no predecessor to condition on.
            let k = if l == 0 { 1 } else { N_OPS };
            let mut norms = Vec::with_capacity(2);
            for op in ["small", "large"] {
                let name = format!("layer{l}.{op}.norm");
                let p = &mut self.params;
                norms.push(match variant {
                    NormVariant::NoneAffine => NormParams::Plain {
                        gamma: p.add_frozen(format!("{name}.gamma"), Tensor::ones(vec![d])?),
                        beta: p.add_frozen(format!("{name}.beta"), Tensor::zeros(vec![d])?),
                    },
                    NormVariant::Affine => NormParams::Plain {
                        gamma: p.add(format!("{name}.gamma"), Tensor::ones(vec![d])?, Group::Weight),
                        beta: p.add(format!("{name}.beta"), Tensor::zeros(vec![d])?, Group::Weight),
                    },
                    NormVariant::Ccbn | NormVariant::Sabn => {
                        let sandwich = (variant == NormVariant::Sabn).then(|| {
                            Ok::<_, Error>((
                                p.add(format!("{name}.sa_gamma"), Tensor::ones(vec![d])?, Group::Weight),
                                p.add(format!("{name}.sa_beta"), Tensor::zeros(vec![d])?, Group::Weight),
                            ))
                        });
                        NormParams::Cond {
                            sandwich: sandwich.transpose()?,
                            gamma: p.add(format!("{name}.bank_gamma"), Tensor::ones(vec![k, d])?, Group::Weight),
                            beta: p.add(format!("{name}.bank_beta"), Tensor::zeros(vec![k, d])?, Group::Weight),
                        }
                    }
                });
            }
            self.layers[l].norms = Some([norms[0], norms[1]]);
        }
        self.variant = Some(variant);
        Ok(())
    }

    pub fn spec(&self) -> SupernetSpec {
        self.spec
    }

    pub fn variant(&self) -> Option<NormVariant> {
        self.variant
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Ops carrying a normalization layer.
    pub fn normed_op_count(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn alpha(&self, layer: usize) -> Result<&Tensor> {
        let l = self.layer(layer)?;
        Ok(self.params.value(l.alpha))
    }

    pub fn set_alpha(&mut self, layer: usize, alpha: Tensor) -> Result<()> {
        let id = self.layer(layer)?.alpha;
        self.params.set(id, alpha)
    }

    pub fn alphas(&self) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .map(|l| self.params.value(l.alpha).data().to_vec())
            .collect()
    }

    fn layer(&self, layer: usize) -> Result<&Layer> {
        self.layers.get(layer).ok_or(Error::IndexOutOfRange {
            index: layer,
            len: self.layers.len(),
        })
    }

    /// Whether `layer` needs a condition index under the attached variant.
    pub fn needs_condition(&self, layer: usize) -> bool {
        layer > 0 && self.variant.is_some_and(NormVariant::is_conditional)
    }

    fn apply_norm(&self, g: &mut Graph, b: &Bound, x: Var, norm: NormParams, cond: Option<usize>) -> Result<Var> {
        let mut stats = BranchStats::batch(1, self.spec.dim)?;
        match norm {
            NormParams::Plain { gamma, beta } => norm_ops::bn(g, x, b.affine(gamma, beta), &mut stats, self.eps),
            NormParams::Cond { gamma, beta, sandwich } => {
                let c = Condition::Class(cond.unwrap_or(0));
                let bank = b.bank(gamma, beta);
                match sandwich {
                    Some((sg, sb)) => norm_ops::sabn(g, x, c, b.affine(sg, sb), bank, &mut stats, self.eps),
                    None => norm_ops::ccbn(g, x, c, bank, &mut stats, self.eps),
                }
            }
        }
    }

    /// Output of one candidate op of `layer`.
    pub fn op_forward(
        &self,
        g: &mut Graph,
        b: &Bound,
        layer: usize,
        op: usize,
        x: Var,
        cond: Option<usize>,
    ) -> Result<Var> {
        let l = self.layer(layer)?;
        let norms = l.norms.ok_or(Error::NotAttached)?;
        match op {
            OP_ZERO => {
                let z = g.constant(Tensor::zeros(g.shape(x).to_vec())?);
                Ok(z)
            }
            OP_SKIP => Ok(x),
            OP_SMALL => {
                let h = g.relu(x)?;
                let h = l.small[0].apply(g, b, h)?;
                let h = l.small[1].apply(g, b, h)?;
                self.apply_norm(g, b, h, norms[0], cond)
            }
            OP_LARGE => {
                let h = g.relu(x)?;
                let h = l.large.apply(g, b, h)?;
                self.apply_norm(g, b, h, norms[1], cond)
            }
            _ => Err(Error::IndexOutOfRange { index: op, len: N_OPS }),
        }
    }

    /// `Σ_j softmax(α)_j · op_j(x)`.
    pub fn mixed_forward(&self, g: &mut Graph, b: &Bound, layer: usize, x: Var, cond: Option<usize>) -> Result<Var> {
        let l = self.layer(layer)?;
        if self.variant.is_none() {
            return Err(Error::NotAttached);
        }
        match (self.needs_condition(layer), cond) {
            (true, None) => return Err(Error::MissingConditionIndex),
            (true, Some(i)) if i >= N_OPS => return Err(Error::IndexOutOfRange { index: i, len: N_OPS }),
            (false, Some(_)) => {
                return Err(Error::InvalidArgument(format!(
                    "layer {layer} takes no condition index"
                )))
            }
            _ => {}
        }
        check_alpha(self.params.value(l.alpha))?;
        let weights = g.softmax(b.var(l.alpha))?;
        let mut out: Option<Var> = None;
        // The zero op contributes nothing to the sum.
        for op in [OP_SKIP, OP_SMALL, OP_LARGE] {
            let y = self.op_forward(g, b, layer, op, x, cond)?;
            let w = g.narrow(weights, 0, op, 1)?;
            let w = g.reshape(w, vec![1, 1])?;
            let term = g.mul(y, w)?;
            out = Some(match out {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
        }
        Ok(out.expect("non-empty op set"))
    }

    /// Logits with explicit condition indices, one entry per layer.
    pub fn forward_with(&self, g: &mut Graph, b: &Bound, x: Var, conds: &[Option<usize>]) -> Result<Var> {
        if conds.len() != self.layers.len() {
            return Err(Error::shape(format!(
                "{} condition entries for {} layers",
                conds.len(),
                self.layers.len()
            )));
        }
        let mut h = x;
        for (l, &c) in conds.iter().enumerate() {
            h = self.mixed_forward(g, b, l, h, c)?;
        }
        self.head.apply(g, b, h)
    }

    /// Condition indices for one forward pass, drawn layer by layer.
    pub fn sample_conditions<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Option<usize>>> {
        (0..self.layers.len())
            .map(|l| {
                if self.needs_condition(l) {
                    let prev = self.params.value(self.layers[l - 1].alpha);
                    sample_condition_index(prev, rng).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect()
    }

    pub fn forward<R: Rng + ?Sized>(&self, g: &mut Graph, b: &Bound, x: Var, rng: &mut R) -> Result<Var> {
        let conds = self.sample_conditions(rng)?;
        self.forward_with(g, b, x, &conds)
    }

    fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        x: &Tensor,
        y: &[usize],
        rng: &mut R,
    ) -> Result<(f64, Bound, crate::tensor::Gradients)> {
        if y.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let xv = g.constant(x.clone());
        let logits = self.forward(&mut g, &b, xv, rng)?;
        let loss = cross_entropy(&mut g, logits, y)?;
        let value = g.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite("supernet loss"));
        }
        let grads = g.backward(loss)?;
        Ok((value, b, grads))
    }

    /// Cross-entropy of one sampled forward pass, without updates.
    pub fn loss<R: Rng + ?Sized>(&self, x: &Tensor, y: &[usize], rng: &mut R) -> Result<f64> {
        self.loss_and_grads(x, y, rng).map(|(v, _, _)| v)
    }

    /// One first-order alternation: an SGD step on the weights using the
    /// training batch, then an SGD step on α using the validation batch.
    pub fn alternate_step<R: Rng + ?Sized>(
        &mut self,
        train: (&Tensor, &[usize]),
        val: (&Tensor, &[usize]),
        lr_w: f64,
        lr_alpha: f64,
        rng: &mut R,
    ) -> Result<StepLosses> {
        let (train_loss, b, grads) = self.loss_and_grads(train.0, train.1, rng)?;
        Sgd { lr: lr_w }.step(&mut self.params, &b, &grads, Group::Weight)?;
        let (val_loss, b, grads) = self.loss_and_grads(val.0, val.1, rng)?;
        Sgd { lr: lr_alpha }.step(&mut self.params, &b, &grads, Group::Arch)?;
        Ok(StepLosses { train_loss, val_loss })
    }

    /// Per-layer argmax of α, lowest index on ties.
    pub fn derive_architecture(&self) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .map(|l| argmax(self.params.value(l.alpha)))
            .collect()
    }
}

/// Classification task whose labels are `argmax(x · A)` for a random
/// teacher `A`, keeping only rows whose best teacher score leads the
/// runner-up by [`PLANTED_MARGIN`] and balancing the classes.
///
/// Every feature is at most -1, so the ReLU in front of both parameterized
/// ops zeroes their input and they emit a batch-constant output. Skip is the
/// only op that carries the input forward, which plants it as the optimum on
/// every layer.
pub fn planted_task(seed: u64, dim: usize, classes: usize, n_train: usize, n_val: usize) -> Result<(LabeledDataset, LabeledDataset)> {
    if dim == 0 || classes < 2 || n_train == 0 || n_val == 0 {
        return Err(Error::DegenerateSpec(format!(
            "planted task dim {dim}, classes {classes}, sizes {n_train}/{n_val}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let raw = normal_tensor(&mut rng, vec![dim, classes], 1.0)?;
    // Zero column sums make a constant input offset shift every class score
    // equally.
    let teacher = Tensor::from_fn(vec![dim, classes], |i| {
        let col: f64 = (0..dim).map(|d| raw.data()[d * classes + i[1]]).sum();
        raw.data()[i[0] * classes + i[1]] - col / dim as f64
    })?;
    let mut make = |n: usize| -> Result<LabeledDataset> {
        let quota = n.div_ceil(classes);
        let mut counts = vec![0usize; classes];
        let mut rows = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        while labels.len() < n {
            let row = normal_tensor(&mut rng, vec![dim], 1.0)?.map(|v| -1.0 - v.abs());
            let mut scores: Vec<(f64, usize)> = (0..classes)
                .map(|k| {
                    let s = row
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(d, v)| v * teacher.data()[d * classes + k])
                        .sum::<f64>();
                    (s, k)
                })
                .collect();
            scores.sort_by(|a, b| b.0.total_cmp(&a.0));
            // Rows near a decision boundary are redrawn.
            if scores[0].0 - scores[1].0 >= PLANTED_MARGIN && counts[scores[0].1] < quota {
                counts[scores[0].1] += 1;
                rows.extend_from_slice(row.data());
                labels.push(scores[0].1);
            }
        }
        Ok(LabeledDataset {
            features: Tensor::new(vec![n, dim], rows)?,
            labels,
            classes,
        })
    };
    let train = make(n_train)?;
    let val = make(n_val)?;
    Ok((train, val))
}

/// Outcome of a search on the planted task.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub architecture: Vec<usize>,
    pub losses: Vec<StepLosses>,
}

/// Rng driving condition sampling during a search with shuffle seed `seed`.
pub fn search_rng(seed: u64) -> SeededRng {
    seeded_rng(seed ^ 0x5eed)
}

/// Alternations per epoch: one per training batch.
pub fn alternations_per_epoch(train_len: usize, batch: usize) -> usize {
    (train_len / batch.max(1)).max(1)
}

/// Runs up to `limit` alternations of `epoch`; training batch `i` pairs with
/// validation batch `i` of that epoch's shuffles.
#[allow(clippy::too_many_arguments)]
pub fn search_epoch(
    net: &mut Supernet,
    data: &(LabeledDataset, LabeledDataset),
    epoch: u64,
    limit: usize,
    batch: usize,
    lr_w: f64,
    lr_alpha: f64,
    seed: u64,
    rng: &mut SeededRng,
) -> Result<Vec<StepLosses>> {
    let (train, val) = data;
    let per_epoch = alternations_per_epoch(train.len(), batch);
    let train_batches = train.batches(seed, 2 * epoch, batch);
    let val_batches = val.batches(seed, 2 * epoch + 1, batch);
    let mut losses = Vec::new();
    for i in 0..per_epoch.min(limit) {
        let (xt, yt) = train.subset(&train_batches[i % train_batches.len()])?;
        let (xv, yv) = val.subset(&val_batches[i % val_batches.len()])?;
        losses.push(net.alternate_step((&xt, &yt), (&xv, &yv), lr_w, lr_alpha, rng)?);
    }
    Ok(losses)
}

/// Runs `alternations` search steps on the planted task with batches of
/// `batch` rows cycling through the training and validation sets.
pub fn search_planted(
    net: &mut Supernet,
    data: &(LabeledDataset, LabeledDataset),
    alternations: usize,
    batch: usize,
    lr_w: f64,
    lr_alpha: f64,
    seed: u64,
) -> Result<SearchResult> {
    let mut rng = search_rng(seed);
    let mut losses = Vec::with_capacity(alternations);
    let mut epoch = 0;
    while losses.len() < alternations {
        let left = alternations - losses.len();
        losses.extend(search_epoch(net, data, epoch, left, batch, lr_w, lr_alpha, seed, &mut rng)?);
        epoch += 1;
    }
    Ok(SearchResult {
        architecture: net.derive_architecture()?,
        losses,
    })
}

#[cfg(test)]
mod tests;
