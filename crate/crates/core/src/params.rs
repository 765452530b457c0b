//! Named parameter storage, graph binding and first-order optimizers.

use rand::Rng;

use crate::data::normal_tensor;
use crate::error::{Error, Result};
use crate::norm::{AffineVars, BankVars};
use crate::tensor::{Gradients, Graph, Tensor, Var};

/// Optimizer grouping: network weights or architecture scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Weight,
    Arch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    trainable: bool,
    group: Group,
}

/// Ordered collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<Entry>,
}

/// Graph handles for every parameter of a [`ParamSet`], in insertion order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn affine(&self, gamma: ParamId, beta: ParamId) -> AffineVars {
        AffineVars {
            gamma: self.var(gamma),
            beta: self.var(beta),
        }
    }

    pub fn bank(&self, gamma: ParamId, beta: ParamId) -> BankVars {
        BankVars {
            gamma: self.var(gamma),
            beta: self.var(beta),
        }
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: Group) -> ParamId {
        self.push(name.into(), value, true, group)
    }

    /// Parameter that is bound as a constant and never updated.
    pub fn add_frozen(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, false, Group::Weight)
    }

    fn push(&mut self, name: String, value: Tensor, trainable: bool, group: Group) -> ParamId {
        self.entries.push(Entry {
            name,
            value,
            trainable,
            group,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter {} is {:?}, got {:?}",
                e.name,
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = value;
        Ok(())
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn group(&self, id: ParamId) -> Group {
        self.entries[id.0].group
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of trainable scalars in `group`.
    pub fn trainable_count(&self, group: Group) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable && e.group == group)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Adds every parameter to `g`; trainable ones require gradients.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|e| g.leaf(e.value.clone(), e.trainable))
                .collect(),
        }
    }

    fn updatable(&self, group: Group) -> impl Iterator<Item = usize> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.trainable && e.group == group)
            .map(|(i, _)| i)
    }
}

/// Parameter handles of a dense layer `x · w + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    /// Weights drawn with std `1/sqrt(d_in)`, zero bias; named `<name>.w`, `<name>.b`.
    pub fn new(p: &mut ParamSet, rng: &mut impl Rng, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let w = normal_tensor(rng, vec![d_in, d_out], 1.0 / (d_in as f64).sqrt())?;
        Ok(Linear {
            w: p.add(format!("{name}.w"), w, Group::Weight),
            b: p.add(format!("{name}.b"), Tensor::zeros(vec![d_out])?, Group::Weight),
        })
    }

    pub fn apply(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        g.linear(x, b.var(self.w), b.var(self.b))
    }
}

fn grad_of<'a>(grads: &'a Gradients, bound: &Bound, i: usize) -> Result<&'a Tensor> {
    let g = grads.wrt(bound.vars[i])?;
    if !g.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    Ok(g)
}

/// Plain gradient descent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    /// Updates the trainable parameters of `group`. A zero learning rate
    /// leaves them untouched.
    pub fn step(&self, params: &mut ParamSet, bound: &Bound, grads: &Gradients, group: Group) -> Result<()> {
        if self.lr == 0.0 {
            return Ok(());
        }
        let idx: Vec<usize> = params.updatable(group).collect();
        for i in idx {
            let g = grad_of(grads, bound, i)?;
            let e = &mut params.entries[i];
            e.value = e.value.zip_with(g, |w, d| w - self.lr * d)?;
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Option<Vec<f64>>>,
    v: Vec<Option<Vec<f64>>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, bound: &Bound, grads: &Gradients, group: Group) -> Result<()> {
        if self.lr == 0.0 {
            return Ok(());
        }
        self.t += 1;
        self.m.resize(params.len(), None);
        self.v.resize(params.len(), None);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let idx: Vec<usize> = params.updatable(group).collect();
        for i in idx {
            let g = grad_of(grads, bound, i)?;
            let n = g.numel();
            let m = self.m[i].get_or_insert_with(|| vec![0.0; n]);
            let v = self.v[i].get_or_insert_with(|| vec![0.0; n]);
            let e = &mut params.entries[i];
            let mut data = e.value.data().to_vec();
            for (k, &d) in g.data().iter().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * d;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * d * d;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                data[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
            e.value = Tensor::new(e.value.shape().to_vec(), data)?;
        }
        Ok(())
    }
}
