use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::PgdConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Gan,
    Nas,
    Adv,
    Style,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Gan => "gan",
            Experiment::Nas => "nas",
            Experiment::Adv => "adv",
            Experiment::Style => "style",
        }
    }

    pub fn variants(self) -> &'static [&'static str] {
        match self {
            Experiment::Gan => &["ccbn", "sabn"],
            Experiment::Nas => &["none-affine", "affine", "ccbn", "sabn"],
            Experiment::Adv => &["bn", "auxbn", "sa_auxbn"],
            Experiment::Style => &["adain", "saadain"],
        }
    }

    /// Learning-rate keys the experiment reads.
    pub fn rate_keys(self) -> &'static [&'static str] {
        match self {
            Experiment::Gan => &["g", "d"],
            Experiment::Nas => &["w", "alpha"],
            Experiment::Adv | Experiment::Style => &["w"],
        }
    }

    /// Names of the scalar metrics a run of this experiment emits.
    pub fn metric_names(self) -> Vec<String> {
        let fixed: &[&str] = match self {
            Experiment::Gan => &[
                "loss_d",
                "loss_g",
                "g_inter_stage0",
                "g_inter_stage1",
                "grad_norm_std_stage0",
                "grad_norm_std_stage1",
                "modes_recovered",
                "mode_error_class0",
                "mode_error_class1",
                "mode_error_class2",
                "mode_error_class3",
            ],
            Experiment::Nas => &["train_loss", "val_loss", "planted_recovered"],
            Experiment::Adv => &[
                "loss_total",
                "loss_clean",
                "loss_adv",
                "sa_clean",
                "ra_clean",
                "sa_adv",
                "ra_adv",
            ],
            Experiment::Style => &["train_content", "train_style", "val_content", "val_style"],
        };
        fixed.iter().map(|s| s.to_string()).collect()
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRates {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
}

impl LearningRates {
    fn entries(&self) -> [(&'static str, Option<f64>); 4] {
        [("w", self.w), ("alpha", self.alpha), ("g", self.g), ("d", self.d)]
    }
}

/// PGD settings for the adversarial experiment. Inputs live in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgdSettings {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_step")]
    pub step_size: f64,
    #[serde(default = "default_train_iters")]
    pub train_iters: usize,
    #[serde(default = "default_eval_iters")]
    pub eval_iters: usize,
    #[serde(default = "default_true")]
    pub random_start: bool,
}

fn default_epsilon() -> f64 {
    8.0 / 255.0
}
fn default_step() -> f64 {
    2.0 / 255.0
}
fn default_train_iters() -> usize {
    10
}
fn default_eval_iters() -> usize {
    20
}
fn default_true() -> bool {
    true
}

impl Default for PgdSettings {
    fn default() -> Self {
        PgdSettings {
            epsilon: default_epsilon(),
            step_size: default_step(),
            train_iters: default_train_iters(),
            eval_iters: default_eval_iters(),
            random_start: true,
        }
    }
}

impl PgdSettings {
    pub fn attack(&self, iters: usize) -> PgdConfig {
        PgdConfig {
            epsilon: self.epsilon,
            step_size: self.step_size,
            iters,
            clamp_lo: 0.0,
            clamp_hi: 1.0,
            random_start: self.random_start,
        }
    }

    pub fn train(&self) -> PgdConfig {
        self.attack(self.train_iters)
    }

    pub fn eval(&self) -> PgdConfig {
        self.attack(self.eval_iters)
    }
}

pub const DEFAULT_DIAGNOSTICS_EVERY: usize = 50;

/// One experiment invocation. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub variant: String,
    pub seeds: Vec<u64>,
    /// Training steps; NAS counts epochs.
    pub steps: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub learning_rates: LearningRates,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pgd: Option<PgdSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// GAN only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics_every: Option<usize>,
    /// Style only: keep the SaAdaIN sandwich at identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freeze_sandwich: Option<bool>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

impl ExperimentConfig {
    /// Minimal valid config with default learning rates.
    pub fn new(experiment: Experiment, variant: &str, seeds: Vec<u64>, steps: usize, batch_size: usize) -> Self {
        ExperimentConfig {
            experiment,
            variant: variant.to_string(),
            seeds,
            steps,
            batch_size,
            learning_rates: LearningRates::default(),
            pgd: None,
            output_dir: None,
            diagnostics_every: None,
            freeze_sandwich: None,
        }
    }

    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let exp = self.experiment;
        if !exp.variants().contains(&self.variant.as_str()) {
            return Err(invalid(format!(
                "variant {:?} is not one of {:?} for {exp}",
                self.variant,
                exp.variants()
            )));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds must not be empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("seeds must be distinct"));
        }
        let min_batch = if exp == Experiment::Style { 1 } else { 2 };
        if self.batch_size < min_batch {
            return Err(invalid(format!("batch_size must be at least {min_batch}")));
        }
        for (key, rate) in self.learning_rates.entries() {
            let Some(rate) = rate else { continue };
            if !exp.rate_keys().contains(&key) {
                return Err(invalid(format!("learning rate {key:?} is not used by {exp}")));
            }
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(invalid(format!("learning rate {key:?} must be finite and >= 0")));
            }
        }
        match (&self.pgd, exp) {
            (Some(p), Experiment::Adv) => {
                for iters in [p.train_iters, p.eval_iters] {
                    p.attack(iters).validate().map_err(|e| invalid(format!("pgd: {e}")))?;
                }
            }
            (Some(_), _) => return Err(invalid(format!("pgd is only valid for adv, not {exp}"))),
            (None, _) => {}
        }
        match (self.diagnostics_every, exp) {
            (Some(0), _) => return Err(invalid("diagnostics_every must be at least 1")),
            (Some(_), e) if e != Experiment::Gan => {
                return Err(invalid(format!("diagnostics_every is only valid for gan, not {exp}")))
            }
            _ => {}
        }
        if self.freeze_sandwich.is_some() && !(exp == Experiment::Style && self.variant == "saadain") {
            return Err(invalid("freeze_sandwich is only valid for style with variant saadain"));
        }
        Ok(())
    }

    /// Configured rate for `key`, or the experiment default.
    pub fn rate(&self, key: &str) -> f64 {
        let given = self
            .learning_rates
            .entries()
            .iter()
            .find(|(k, _)| *k == key)
            .and_then(|(_, v)| *v);
        given.unwrap_or(match (self.experiment, key) {
            (Experiment::Gan, _) => 1e-3,
            (Experiment::Nas, _) => 2.0,
            (Experiment::Adv, _) => 1e-2,
            (Experiment::Style, _) => 1e-2,
        })
    }

    pub fn pgd_settings(&self) -> PgdSettings {
        self.pgd.clone().unwrap_or_default()
    }

    pub fn diagnostics_every(&self) -> usize {
        self.diagnostics_every.unwrap_or(DEFAULT_DIAGNOSTICS_EVERY)
    }

    pub fn freeze_sandwich(&self) -> bool {
        self.freeze_sandwich.unwrap_or(false)
    }
}
