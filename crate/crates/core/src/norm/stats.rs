use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Where normalization statistics come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatsMode {
    /// Always normalize with the current batch; nothing is tracked.
    Batch,
    /// Track exponential running estimates. While training the batch moments
    /// are used and folded into the estimates; otherwise the estimates are used.
    Running,
}

/// Per-branch normalization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchStats {
    mean: Vec<Tensor>,
    var: Vec<Tensor>,
    momentum: f64,
    mode: StatsMode,
    training: bool,
}

pub const DEFAULT_MOMENTUM: f64 = 0.1;

impl BranchStats {
    pub fn new(branches: usize, channels: usize, mode: StatsMode, momentum: f64) -> Result<Self> {
        if branches == 0 || channels == 0 {
            return Err(Error::InvalidArgument(
                "branch stats need at least one branch and channel".into(),
            ));
        }
        if !(momentum > 0.0 && momentum <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in (0, 1], got {momentum}"
            )));
        }
        Ok(BranchStats {
            mean: vec![Tensor::zeros(vec![channels])?; branches],
            var: vec![Tensor::ones(vec![channels])?; branches],
            momentum,
            mode,
            training: true,
        })
    }

    pub fn batch(branches: usize, channels: usize) -> Result<Self> {
        BranchStats::new(branches, channels, StatsMode::Batch, DEFAULT_MOMENTUM)
    }

    pub fn running(branches: usize, channels: usize) -> Result<Self> {
        BranchStats::new(branches, channels, StatsMode::Running, DEFAULT_MOMENTUM)
    }

    pub fn branches(&self) -> usize {
        self.mean.len()
    }

    pub fn channels(&self) -> usize {
        self.mean[0].numel()
    }

    pub fn mode(&self) -> StatsMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: StatsMode) {
        self.mode = mode;
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    /// True when the next forward pass normalizes with batch moments.
    pub fn uses_batch_moments(&self) -> bool {
        self.mode == StatsMode::Batch || self.training
    }

    fn check_branch(&self, branch: usize) -> Result<()> {
        if branch >= self.branches() {
            return Err(Error::IndexOutOfRange {
                index: branch,
                len: self.branches(),
            });
        }
        Ok(())
    }

    pub fn running_mean(&self, branch: usize) -> Result<&Tensor> {
        self.check_branch(branch)?;
        Ok(&self.mean[branch])
    }

    pub fn running_var(&self, branch: usize) -> Result<&Tensor> {
        self.check_branch(branch)?;
        Ok(&self.var[branch])
    }

    /// Overwrites the running estimates of one branch.
    pub fn set_running(&mut self, branch: usize, mean: Tensor, var: Tensor) -> Result<()> {
        self.check_branch(branch)?;
        let c = self.channels();
        for t in [&mean, &var] {
            if t.shape() != [c] {
                return Err(Error::ChannelMismatch {
                    expected: c,
                    got: t.numel(),
                });
            }
        }
        if var.data().iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidArgument("running variance must be >= 0".into()));
        }
        self.mean[branch] = mean;
        self.var[branch] = var;
        Ok(())
    }

    /// `new = (1 - m) * old + m * batch` for one branch only.
    pub(crate) fn update(&mut self, branch: usize, batch_mean: &[f64], batch_var: &[f64]) -> Result<()> {
        self.check_branch(branch)?;
        let m = self.momentum;
        let blend = |old: &Tensor, new: &[f64]| {
            let data = old
                .data()
                .iter()
                .zip(new)
                .map(|(o, n)| (1.0 - m) * o + m * n)
                .collect();
            Tensor::new(old.shape().to_vec(), data)
        };
        self.mean[branch] = blend(&self.mean[branch], batch_mean)?;
        self.var[branch] = blend(&self.var[branch], batch_var)?;
        Ok(())
    }
}
