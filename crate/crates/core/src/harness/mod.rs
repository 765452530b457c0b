//! Experiment runner: strict configs, per-seed JSON-lines metrics, plot data.

pub mod adv;
pub mod config;
pub mod export;
pub mod gan;
pub mod metrics;
pub mod nas;
pub mod style;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

pub use config::{Experiment, ExperimentConfig, LearningRates, PgdSettings};
pub use export::{collect_plotdata, export_plotdata, read_plot_csv, PlotRow};
pub use metrics::{read_jsonl, write_jsonl, Record, RunContext};

use crate::data::RNG_ALGORITHM;
use crate::error::Result;

pub const MANIFEST: &str = "manifest.json";

/// Records of one seed, meta record first.
pub fn seed_records(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Record>> {
    let ctx = RunContext {
        experiment: cfg.experiment,
        variant: cfg.variant.clone(),
        seed,
    };
    let mut records = vec![meta_record(cfg, &ctx)?];
    records.extend(match cfg.experiment {
        Experiment::Gan => gan::run_seed(cfg, &ctx)?.records,
        Experiment::Nas => nas::run_seed(cfg, &ctx)?.records,
        Experiment::Adv => adv::run_seed(cfg, &ctx)?.records,
        Experiment::Style => style::run_seed(cfg, &ctx)?.records,
    });
    Ok(records)
}

fn meta_record(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Record> {
    let mut settings = cfg.clone();
    settings.output_dir = None;
    settings.seeds = vec![ctx.seed];
    let mut rates = serde_json::Map::new();
    for key in cfg.experiment.rate_keys() {
        rates.insert(key.to_string(), cfg.rate(key).into());
    }
    Ok(ctx
        .record(0, "meta")
        .value("rng", RNG_ALGORITHM.into())
        .value("config", serde_json::to_value(&settings)?)
        .value("learning_rates", rates.into()))
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: Experiment,
    variant: &'a str,
    seeds: &'a [u64],
    files: Vec<String>,
    rng: &'static str,
    config: &'a ExperimentConfig,
    created_unix_secs: u64,
}

/// Outcome of [`run`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
}

/// Runs every seed, writes one metrics file per seed and the manifest.
/// Seeds run on parallel workers.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(cfg.seeds.len());
    let chunk = cfg.seeds.len().div_ceil(workers);
    let results: Vec<Result<PathBuf>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .seeds
            .chunks(chunk)
            .map(|seeds| {
                s.spawn(move || {
                    seeds
                        .iter()
                        .map(|&seed| {
                            let records = seed_records(cfg, seed)?;
                            let ctx = RunContext {
                                experiment: cfg.experiment,
                                variant: cfg.variant.clone(),
                                seed,
                            };
                            let path = out_dir.join(ctx.file_name());
                            write_jsonl(&path, &records)?;
                            Ok(path)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("seed worker panicked"))
            .collect()
    });
    let files = results.into_iter().collect::<Result<Vec<_>>>()?;
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let manifest = Manifest {
        experiment: cfg.experiment,
        variant: &cfg.variant,
        seeds: &cfg.seeds,
        files: files
            .iter()
            .filter_map(|p| p.file_name()?.to_str().map(String::from))
            .collect(),
        rng: RNG_ALGORITHM,
        config: cfg,
        created_unix_secs: created,
    };
    let manifest_path = out_dir.join(MANIFEST);
    std::fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(RunSummary {
        files,
        manifest: manifest_path,
    })
}
