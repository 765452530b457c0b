//! Weight-sharing search on the planted-optimum task.

use serde_json::Value;

use super::config::ExperimentConfig;
use super::metrics::{Record, RunContext};
use crate::data::stream_rng;
use crate::error::Result;
use crate::supernet::{planted_task, search_epoch, search_rng, NormVariant, Supernet, SupernetSpec, OP_SKIP};

pub const DIM: usize = 8;
pub const CLASSES: usize = 4;
pub const LAYERS: usize = 3;
pub const TRAIN_ROWS: usize = 256;
pub const VAL_ROWS: usize = 256;

pub fn spec() -> SupernetSpec {
    SupernetSpec {
        dim: DIM,
        classes: CLASSES,
        layers: LAYERS,
    }
}

#[derive(Clone, Debug)]
pub struct NasOutcome {
    pub records: Vec<Record>,
    /// Derived architecture after each epoch, starting with initialization.
    pub architectures: Vec<Vec<usize>>,
    pub net: Supernet,
}

fn epoch_record(ctx: &RunContext, epoch: usize, net: &Supernet, train: f64, val: f64) -> Result<(Record, Vec<usize>)> {
    let arch = net.derive_architecture()?;
    let planted = arch.iter().all(|&op| op == OP_SKIP);
    let rec = ctx
        .record(epoch as u64, "epoch")
        .int("epoch", epoch as u64)
        .num("train_loss", train)?
        .num("val_loss", val)?
        .num("planted_recovered", if planted { 1.0 } else { 0.0 })?
        .value("derived_arch", Value::from(arch.clone()))
        .value("alpha", serde_json::to_value(net.alphas())?);
    Ok((rec, arch))
}

pub fn run_seed(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<NasOutcome> {
    let seed = ctx.seed;
    let variant: NormVariant = cfg.variant.parse()?;
    let data = planted_task(seed, DIM, CLASSES, TRAIN_ROWS, VAL_ROWS)?;
    let mut net = Supernet::new(spec(), seed)?;
    net.attach_norm_variant(variant)?;
    let (lr_w, lr_a) = (cfg.rate("w"), cfg.rate("alpha"));
    let mut rng = search_rng(seed);

    let mut probe = stream_rng(seed, 7);
    let train_init = net.loss(&data.0.features, &data.0.labels, &mut probe)?;
    let val_init = net.loss(&data.1.features, &data.1.labels, &mut probe)?;
    let (rec, arch) = epoch_record(ctx, 0, &net, train_init, val_init)?;
    let mut records = vec![rec.value("init", Value::Bool(true))];
    let mut architectures = vec![arch];
    for epoch in 1..=cfg.steps {
        let losses = search_epoch(
            &mut net,
            &data,
            (epoch - 1) as u64,
            usize::MAX,
            cfg.batch_size,
            lr_w,
            lr_a,
            seed,
            &mut rng,
        )?;
        let n = losses.len() as f64;
        let train = losses.iter().map(|l| l.train_loss).sum::<f64>() / n;
        let val = losses.iter().map(|l| l.val_loss).sum::<f64>() / n;
        let (rec, arch) = epoch_record(ctx, epoch, &net, train, val)?;
        records.push(rec);
        architectures.push(arch);
    }
    Ok(NasOutcome {
        records,
        architectures,
        net,
    })
}
