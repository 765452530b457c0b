//! Normalization layer family: BN, CCBN, SaBN, AuxBN, SaAuxBN, AdaIN and
//! SaAdaIN, plus folding a sandwich affine into a conditional bank.
//!
//! SaBN normalizes, applies one shared *sandwich* affine, then a conditional
//! affine picked by class index:
//!
//! ```text
//! h = gamma_i * (gamma_sa * xhat + beta_sa) + beta_i
//! ```
//!
//! At inference the sandwich can be folded into the bank with
//! [`merge_sandwich`], after which the layer computes exactly what CCBN does.

mod affine;
mod checkpoint;
mod forward;
pub mod ops;
mod stats;

#[cfg(test)]
mod tests;

pub use affine::{merge_sandwich, AffineVars, BankVars, ChannelAffine, ConditionalAffineBank};
pub use checkpoint::Checkpoint;
pub use forward::{
    adain_forward, auxbn_forward, bn_forward, ccbn_forward, instance_moments, instance_normalize_forward,
    normalize_forward,
    sa_auxbn_forward, saadain_forward, sabn_forward,
};
pub use ops::Condition;
pub use stats::{BranchStats, StatsMode, DEFAULT_MOMENTUM};

use crate::error::{Error, Result};

/// Branch index of adversarial inputs in two-branch layers.
pub const ADV_BRANCH: usize = 0;
/// Branch index of clean inputs in two-branch layers.
pub const CLEAN_BRANCH: usize = 1;

/// Positive constant added to the variance under the square root.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormEps(f64);

impl NormEps {
    pub const DEFAULT: NormEps = NormEps(1e-5);

    pub fn new(eps: f64) -> Result<Self> {
        if eps > 0.0 && eps.is_finite() {
            Ok(NormEps(eps))
        } else {
            Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for NormEps {
    fn default() -> Self {
        NormEps::DEFAULT
    }
}
