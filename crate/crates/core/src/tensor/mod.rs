//! Dense `f64` tensors and the reverse-mode autodiff graph built on them.

mod gradcheck;
mod graph;
mod io;
pub(crate) mod shape;

pub use gradcheck::{finite_diff_grad, gradient_error};
pub use graph::{BinaryKind, Gradients, Graph, Var};
pub use io::{read_tensor, write_tensor, DTYPE_F64_LE, MAGIC, VERSION};

use crate::error::{Error, Result};

/// Row-major dense array of `f64`.
///
/// Every extent is at least one and `data.len()` always equals the product
/// of the extents. Tensors are never mutated in place once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() {
            return Err(Error::shape("tensor rank must be at least 1"));
        }
        if shape.contains(&0) {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Result<Self> {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// 1-D tensor holding `values`.
    pub fn vector(values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![values.len()], values)
    }

    /// Builds a tensor by evaluating `f` at every multi-index, row-major.
    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            data.push(f(&idx));
            shape::advance(&mut idx, &shape);
        }
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::shape(format!(
                "item() on tensor with {} elements",
                self.numel()
            ))),
        }
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        if index.len() != self.rank() || index.iter().zip(&self.shape).any(|(i, e)| i >= e) {
            return Err(Error::shape(format!(
                "index {index:?} invalid for shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[shape::offset(index, &shape::strides(&self.shape))])
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two tensors of identical shape.
    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        Ok(self
            .zip_with(other, |a, b| (a - b).abs())?
            .data
            .into_iter()
            .fold(0.0, f64::max))
    }

    /// Materializes this tensor broadcast to `shape` (singleton axes stretch).
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        let out = shape::broadcast_shape(&self.shape, shape)?;
        if out != shape {
            return Err(Error::shape(format!(
                "{:?} cannot broadcast to {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: shape::expand(&self.data, &self.shape, shape),
        })
    }

    /// Row `i` of a tensor viewed as `(shape[0], rest)`.
    pub fn row(&self, i: usize) -> Result<&[f64]> {
        let n = self.shape[0];
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
        let width = self.numel() / n;
        Ok(&self.data[i * width..(i + 1) * width])
    }

    /// Stacks the given rows (all of equal length) into an `(n, width)` tensor.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let width = rows.first().map(|r| r.len()).ok_or(Error::EmptyBatch)?;
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::shape("rows of unequal length"));
        }
        Tensor::new(vec![rows.len(), width], rows.concat())
    }

    /// Selects rows by index along axis 0.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        let mut data = Vec::with_capacity(shape.iter().product());
        for &i in indices {
            data.extend_from_slice(self.row(i)?);
        }
        Tensor::new(shape, data)
    }
}

/// Elementwise `a (op) b` with singleton-axis broadcasting.
pub fn ew_binary(a: &Tensor, b: &Tensor, kind: BinaryKind) -> Result<Tensor> {
    let mut g = Graph::new();
    let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
    let out = g.binary(kind, av, bv)?;
    Ok(g.value(out).clone())
}

/// Mean and biased variance over `axes`; reduced axes keep extent 1.
pub fn reduce_moments(x: &Tensor, axes: &[usize]) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let (m, v) = g.moments(xv, axes)?;
    Ok((g.value(m).clone(), g.value(v).clone()))
}
