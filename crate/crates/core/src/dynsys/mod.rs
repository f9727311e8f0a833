//! Evaluatable vector fields, metrics and the building case study.

mod building;
mod compiled;
mod metric;

use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::expr::{DiffError, EvalError};

pub use building::{BuildingError, BuildingModel};
pub use compiled::CompiledSystem;
pub use metric::{Metric, MetricError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

/// `ẋ = F(x, t)` on `R^n`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<(), EvalError>;

    /// `∂F/∂x`. The default is a central difference.
    fn jacobian(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>, EvalError> {
        fd_jacobian(self, x, t)
    }

    fn eval_vec(&self, x: &[f64], t: f64) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.dim()];
        self.eval(x, t, &mut out)?;
        Ok(out)
    }
}

pub fn fd_jacobian<F: VectorField + ?Sized>(field: &F, x: &[f64], t: f64) -> Result<DMatrix<f64>, EvalError> {
    let n = field.dim();
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        field.eval(&xp, t, &mut fp)?;
        xp[j] = x[j] - h;
        field.eval(&xp, t, &mut fm)?;
        xp[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<(), EvalError> {
        (**self).eval(x, t, out)
    }
    fn jacobian(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>, EvalError> {
        (**self).jacobian(x, t)
    }
}

impl<T: VectorField + ?Sized> VectorField for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<(), EvalError> {
        (**self).eval(x, t, out)
    }
    fn jacobian(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>, EvalError> {
        (**self).jacobian(x, t)
    }
}

type RhsFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;
type JacFn = dyn Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync;

/// Field given by closures; the Jacobian falls back to finite differences.
#[derive(Clone)]
pub struct FnField {
    dim: usize,
    rhs: Arc<RhsFn>,
    jac: Option<Arc<JacFn>>,
}

impl FnField {
    pub fn new(dim: usize, rhs: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        FnField {
            dim,
            rhs: Arc::new(rhs),
            jac: None,
        }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.jac = Some(Arc::new(jac));
        self
    }
}

impl VectorField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<(), EvalError> {
        (self.rhs)(x, t, out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(crate::expr::EvalError::Domain {
                op: "non-finite field value".into(),
            })
        }
    }

    fn jacobian(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>, EvalError> {
        match &self.jac {
            Some(j) => Ok(j(x, t)),
            None => fd_jacobian(self, x, t),
        }
    }
}

/// `ẋ = A x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    pub a: DMatrix<f64>,
}

impl LinearField {
    pub fn new(a: DMatrix<f64>) -> Self {
        assert!(a.is_square(), "system matrix must be square");
        LinearField { a }
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, x: &[f64], _t: f64, out: &mut [f64]) -> Result<(), EvalError> {
        let n = self.dim();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            *o = (0..n).map(|j| self.a[(i, j)] * x[j]).sum();
        }
        Ok(())
    }

    fn jacobian(&self, _x: &[f64], _t: f64) -> Result<DMatrix<f64>, EvalError> {
        Ok(self.a.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_difference_jacobian_of_linear_field() {
        let a = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 0.5, -3.0]);
        let field = LinearField::new(a.clone());
        let fd = fd_jacobian(&field, &[0.3, -0.7], 0.0).unwrap();
        assert!((fd - a).abs().max() < 1e-8);
    }

    #[test]
    fn closure_field() {
        let field = FnField::new(1, |x, _t, out| out[0] = -x[0] * x[0]);
        assert_eq!(field.eval_vec(&[3.0], 0.0).unwrap(), vec![-9.0]);
        let j = field.jacobian(&[3.0], 0.0).unwrap();
        assert!((j[(0, 0)] + 6.0).abs() < 1e-6);
        let bad = FnField::new(1, |x, _t, out| out[0] = 1.0 / x[0]);
        assert!(bad.eval_vec(&[0.0], 0.0).is_err());
    }
}
