use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Central-difference gradient `(f(x + h e_k) - f(x - h e_k)) / 2h` of a
/// scalar function, one coordinate at a time.
///
/// `f` is evaluated twice at `x` first; differing results are reported as
/// [`Error::NonDeterministicFunction`].
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let first = f(x)?;
    let second = f(x)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministicFunction { first, second });
    }
    let mut probe = x.data().to_vec();
    let mut grad = Vec::with_capacity(probe.len());
    for k in 0..probe.len() {
        let orig = probe[k];
        probe[k] = orig + h;
        let plus = f(&Tensor::new(x.shape().to_vec(), probe.clone())?)?;
        probe[k] = orig - h;
        let minus = f(&Tensor::new(x.shape().to_vec(), probe.clone())?)?;
        probe[k] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// Largest relative disagreement between the autodiff gradient of `f` with
/// respect to `x` and its central-difference estimate, using the denominator
/// `max(1, |analytic|)`.
///
/// `f` receives a fresh graph and the node holding `x`, and must return a
/// one-element loss.
pub fn gradient_error<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let loss = f(&mut g, xv)?;
    let analytic = g.backward(loss)?.wrt(xv)?.clone();
    let numeric = finite_diff_grad(
        |t| {
            let mut g = Graph::new();
            let xv = g.constant(t.clone());
            let loss = f(&mut g, xv)?;
            g.value(loss).item()
        },
        x,
        h,
    )?;
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::new(vec![2, 2], vec![0.3, -1.0, 2.0, 5.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.sum()), &x, 1e-6).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn square_at_three() {
        let x = Tensor::scalar(3.0);
        let g = finite_diff_grad(|t| Ok(t.data()[0].powi(2)), &x, 1e-6).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn detects_nondeterminism() {
        let calls = Cell::new(0u32);
        let x = Tensor::scalar(1.0);
        let r = finite_diff_grad(
            |t| {
                calls.set(calls.get() + 1);
                Ok(t.sum() + calls.get() as f64)
            },
            &x,
            1e-6,
        );
        assert!(matches!(r, Err(Error::NonDeterministicFunction { .. })));
    }

    #[test]
    fn division_gradient_matches() {
        let a = Tensor::new(vec![3], vec![1.5, -2.0, 0.7]).unwrap();
        let b = Tensor::new(vec![3], vec![0.8, 1.9, -1.3]).unwrap();
        let err = gradient_error(
            |g, bv| {
                let av = g.constant(a.clone());
                let q = g.div(av, bv)?;
                g.sum_all(q)
            },
            &b,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Tensor::scalar(1.0);
        assert!(finite_diff_grad(|t| Ok(t.sum()), &x, 0.0).is_err());
    }
}
