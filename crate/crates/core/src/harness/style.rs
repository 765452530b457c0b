//! Toy style transfer: frozen encoder, transfer layer, trainable decoder.

use super::config::ExperimentConfig;
use super::metrics::{Record, RunContext};
use crate::data::{normal_tensor, stream_rng, texture_patches};
use crate::error::{Error, Result};
use crate::losses::{content, style};
use crate::norm::{ops as norm_ops, NormEps};
use crate::params::{Adam, Bound, Group, Linear, ParamId, ParamSet};
use crate::tensor::{Graph, Tensor, Var};

pub const CHANNELS: usize = 4;
pub const HEIGHT: usize = 8;
pub const WIDTH: usize = 8;
pub const FEATURES: usize = 8;
pub const STYLE_WEIGHT: f64 = 1.0;
const LEAK: f64 = 0.2;

/// 1×1 convolution on `(N, C, H, W)` as a per-pixel linear map.
fn conv1x1(g: &mut Graph, b: &Bound, x: Var, lin: &Linear) -> Result<Var> {
    let [n, c, h, w] = *g.shape(x) else {
        return Err(Error::ShapeMismatch(format!("conv input must be 4-D, got {:?}", g.shape(x))));
    };
    let c_out = g.shape(b.var(lin.w))[1];
    let t = g.permute(x, &[0, 2, 3, 1])?;
    let t = g.reshape(t, vec![n * h * w, c])?;
    let t = lin.apply(g, b, t)?;
    let t = g.reshape(t, vec![n, h, w, c_out])?;
    g.permute(t, &[0, 3, 1, 2])
}

fn frozen_linear(p: &mut ParamSet, rng: &mut impl rand::Rng, name: &str, d_in: usize, d_out: usize) -> Result<Linear> {
    let w = normal_tensor(rng, vec![d_in, d_out], 1.0 / (d_in as f64).sqrt())?;
    Ok(Linear {
        w: p.add_frozen(format!("{name}.w"), w),
        b: p.add_frozen(format!("{name}.b"), Tensor::zeros(vec![d_out])?),
    })
}

/// Content and style images for training and validation.
#[derive(Clone, Debug)]
pub struct StyleData {
    pub train_content: Tensor,
    pub train_style: Tensor,
    pub val_content: Tensor,
    pub val_style: Tensor,
}

impl StyleData {
    pub fn new(seed: u64, n: usize) -> Result<Self> {
        let patches = |k: u64| -> Result<Tensor> {
            let s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k);
            Ok(texture_patches(s, n, CHANNELS, HEIGHT, WIDTH)?.patches)
        };
        Ok(StyleData {
            train_content: patches(1)?,
            train_style: patches(2)?,
            val_content: patches(3)?,
            val_style: patches(4)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct StyleNet {
    pub params: ParamSet,
    encoder: [Linear; 2],
    decoder: [Linear; 2],
    sandwich: Option<(ParamId, ParamId)>,
    eps: NormEps,
}

impl StyleNet {
    /// `sandwich = Some(frozen)` selects SaAdaIN; the sandwich starts at identity.
    pub fn new(seed: u64, sandwich: Option<bool>) -> Result<Self> {
        let mut rng = stream_rng(seed, 0);
        let mut params = ParamSet::new();
        let encoder = [
            frozen_linear(&mut params, &mut rng, "enc0", CHANNELS, FEATURES)?,
            frozen_linear(&mut params, &mut rng, "enc1", FEATURES, FEATURES)?,
        ];
        let decoder = [
            Linear::new(&mut params, &mut rng, "dec0", FEATURES, FEATURES)?,
            Linear::new(&mut params, &mut rng, "dec1", FEATURES, CHANNELS)?,
        ];
        let sandwich = match sandwich {
            None => None,
            Some(frozen) => {
                let (gamma, beta) = (Tensor::ones(vec![FEATURES])?, Tensor::zeros(vec![FEATURES])?);
                Some(if frozen {
                    (params.add_frozen("sa_gamma", gamma), params.add_frozen("sa_beta", beta))
                } else {
                    (
                        params.add("sa_gamma", gamma, Group::Weight),
                        params.add("sa_beta", beta, Group::Weight),
                    )
                })
            }
        };
        Ok(StyleNet {
            params,
            encoder,
            decoder,
            sandwich,
            eps: NormEps::default(),
        })
    }

    /// Features after each encoder stage.
    pub fn encode(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Vec<Var>> {
        let mut feats = Vec::with_capacity(2);
        let mut h = x;
        for lin in &self.encoder {
            let a = conv1x1(g, b, h, lin)?;
            h = g.leaky_relu(a, LEAK)?;
            feats.push(h);
        }
        Ok(feats)
    }

    pub fn transfer(&self, g: &mut Graph, b: &Bound, fc: Var, fs: Var) -> Result<Var> {
        match self.sandwich {
            Some((sg, sb)) => norm_ops::saadain(g, fc, fs, b.affine(sg, sb), self.eps),
            None => norm_ops::adain(g, fc, fs, self.eps),
        }
    }

    pub fn decode(&self, g: &mut Graph, b: &Bound, t: Var) -> Result<Var> {
        let h = conv1x1(g, b, t, &self.decoder[0])?;
        let h = g.leaky_relu(h, LEAK)?;
        conv1x1(g, b, h, &self.decoder[1])
    }

    /// Builds `(content loss, style loss, weighted total)` for one batch.
    pub fn losses(&self, g: &mut Graph, b: &Bound, c: &Tensor, s: &Tensor) -> Result<(Var, Var, Var)> {
        let cv = g.constant(c.clone());
        let sv = g.constant(s.clone());
        let fc = self.encode(g, b, cv)?;
        let fs = self.encode(g, b, sv)?;
        let t = self.transfer(g, b, fc[1], fs[1])?;
        let out = self.decode(g, b, t)?;
        let fo = self.encode(g, b, out)?;
        let lc = content(g, fo[1], t)?;
        let ls = style(g, &fo, &fs, self.eps)?;
        let weighted = g.scale(ls, STYLE_WEIGHT)?;
        let total = g.add(lc, weighted)?;
        Ok((lc, ls, total))
    }

    pub fn loss_values(&self, c: &Tensor, s: &Tensor) -> Result<(f64, f64)> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let (lc, ls, _) = self.losses(&mut g, &b, c, s)?;
        Ok((g.value(lc).item()?, g.value(ls).item()?))
    }
}

/// Content/style losses after `step` updates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StylePoint {
    pub step: u64,
    pub train_content: f64,
    pub train_style: f64,
    pub val_content: f64,
    pub val_style: f64,
}

#[derive(Clone, Debug)]
pub struct StyleOutcome {
    pub records: Vec<Record>,
    pub trajectory: Vec<StylePoint>,
}

pub fn run_seed(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<StyleOutcome> {
    let seed = ctx.seed;
    let data = StyleData::new(seed, cfg.batch_size)?;
    let sandwich = (cfg.variant == "saadain").then(|| cfg.freeze_sandwich());
    let mut net = StyleNet::new(seed, sandwich)?;
    let mut opt = Adam::new(cfg.rate("w"), 0.9, 0.999);
    let mut records = Vec::with_capacity(cfg.steps + 1);
    let mut trajectory = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let mut g = Graph::new();
        let b = net.params.bind(&mut g);
        let (lc, ls, total) = net.losses(&mut g, &b, &data.train_content, &data.train_style)?;
        let (train_content, train_style) = (g.value(lc).item()?, g.value(ls).item()?);
        let (val_content, val_style) = net.loss_values(&data.val_content, &data.val_style)?;
        let point = StylePoint {
            step: step as u64,
            train_content,
            train_style,
            val_content,
            val_style,
        };
        records.push(
            ctx.record(point.step, "losses")
                .num("train_content", train_content)?
                .num("train_style", train_style)?
                .num("val_content", val_content)?
                .num("val_style", val_style)?,
        );
        trajectory.push(point);
        if step < cfg.steps {
            let grads = g.backward(total)?;
            opt.step(&mut net.params, &b, &grads, Group::Weight)?;
        }
    }
    Ok(StyleOutcome { records, trajectory })
}
