use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Per-channel scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAffine {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub gamma_trainable: bool,
    pub beta_trainable: bool,
}

impl ChannelAffine {
    pub fn new(gamma: Tensor, beta: Tensor) -> Result<Self> {
        if gamma.rank() != 1 || gamma.shape() != beta.shape() {
            return Err(Error::shape(format!(
                "affine gamma {:?} and beta {:?} must be matching vectors",
                gamma.shape(),
                beta.shape()
            )));
        }
        Ok(ChannelAffine {
            gamma,
            beta,
            gamma_trainable: true,
            beta_trainable: true,
        })
    }

    pub fn from_vecs(gamma: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        ChannelAffine::new(Tensor::vector(gamma)?, Tensor::vector(beta)?)
    }

    /// `gamma = 1`, `beta = 0`.
    pub fn identity(channels: usize) -> Result<Self> {
        ChannelAffine::new(Tensor::ones(vec![channels])?, Tensor::zeros(vec![channels])?)
    }

    pub fn with_trainable(mut self, trainable: bool) -> Self {
        self.gamma_trainable = trainable;
        self.beta_trainable = trainable;
        self
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn trainable_count(&self) -> usize {
        let c = self.channels();
        c * (self.gamma_trainable as usize + self.beta_trainable as usize)
    }

    pub fn bind(&self, g: &mut Graph) -> AffineVars {
        AffineVars {
            gamma: g.leaf(self.gamma.clone(), self.gamma_trainable),
            beta: g.leaf(self.beta.clone(), self.beta_trainable),
        }
    }
}

/// Indexed family of affines sharing one channel extent.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalAffineBank {
    entries: Vec<ChannelAffine>,
}

impl ConditionalAffineBank {
    pub fn new(entries: Vec<ChannelAffine>) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| Error::InvalidArgument("affine bank needs at least one entry".into()))?;
        let c = first.channels();
        if let Some(bad) = entries.iter().find(|e| e.channels() != c) {
            return Err(Error::ChannelMismatch {
                expected: c,
                got: bad.channels(),
            });
        }
        Ok(ConditionalAffineBank { entries })
    }

    pub fn identity(k: usize, channels: usize) -> Result<Self> {
        ConditionalAffineBank::new(
            (0..k)
                .map(|_| ChannelAffine::identity(channels))
                .collect::<Result<_>>()?,
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.entries[0].channels()
    }

    pub fn entries(&self) -> &[ChannelAffine] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> Result<&ChannelAffine> {
        self.entries.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: self.entries.len(),
        })
    }

    pub fn trainable_count(&self) -> usize {
        self.entries.iter().map(ChannelAffine::trainable_count).sum()
    }

    /// Stacks the bank into `(K, C)` gamma and beta leaves.
    pub fn bind(&self, g: &mut Graph) -> Result<BankVars> {
        let k = self.len();
        let c = self.channels();
        let stack = |f: fn(&ChannelAffine) -> &Tensor| -> Result<Tensor> {
            let data = self.entries.iter().flat_map(|e| f(e).data().to_vec()).collect();
            Tensor::new(vec![k, c], data)
        };
        let trainable = self.entries.iter().any(|e| e.gamma_trainable || e.beta_trainable);
        Ok(BankVars {
            gamma: g.leaf(stack(|e| &e.gamma)?, trainable),
            beta: g.leaf(stack(|e| &e.beta)?, trainable),
        })
    }
}

/// Graph handles of a [`ChannelAffine`]: two `(C)` vectors.
#[derive(Clone, Copy, Debug)]
pub struct AffineVars {
    pub gamma: Var,
    pub beta: Var,
}

/// Graph handles of a stacked bank: two `(K, C)` matrices.
#[derive(Clone, Copy, Debug)]
pub struct BankVars {
    pub gamma: Var,
    pub beta: Var,
}

impl BankVars {
    pub fn len(&self, g: &Graph) -> usize {
        g.shape(self.gamma)[0]
    }
}

/// Folds a shared sandwich affine into every entry of `bank`:
/// `gamma'_i = gamma_i * gamma_sa`, `beta'_i = gamma_i * beta_sa + beta_i`.
pub fn merge_sandwich(
    sandwich: &ChannelAffine,
    bank: &ConditionalAffineBank,
) -> Result<ConditionalAffineBank> {
    if sandwich.channels() != bank.channels() {
        return Err(Error::ChannelMismatch {
            expected: bank.channels(),
            got: sandwich.channels(),
        });
    }
    let entries = bank
        .entries()
        .iter()
        .map(|e| {
            let gamma = e.gamma.zip_with(&sandwich.gamma, |g, s| g * s)?;
            let shifted = e.gamma.zip_with(&sandwich.beta, |g, s| g * s)?;
            let beta = shifted.zip_with(&e.beta, |s, b| s + b)?;
            Ok(ChannelAffine {
                gamma,
                beta,
                gamma_trainable: e.gamma_trainable,
                beta_trainable: e.beta_trainable,
            })
        })
        .collect::<Result<_>>()?;
    ConditionalAffineBank::new(entries)
}
