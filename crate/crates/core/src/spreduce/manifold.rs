use nalgebra::{DMatrix, DVector};

use super::ReduceError;
use crate::dynsys::VectorField;
use crate::linalg;

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 100;

/// Root `x̄` of the fast rows `f(x, y, t) = 0` of `field` with the slow
/// states `y` frozen. The fast states are the first `x_init.len()` entries.
pub fn solve_slow_manifold<F: VectorField + ?Sized>(
    field: &F,
    y: &[f64],
    t: f64,
    x_init: &[f64],
) -> Result<Vec<f64>, ReduceError> {
    let nf = x_init.len();
    if nf + y.len() != field.dim() {
        return Err(ReduceError::Dimension(format!(
            "{} fast + {} slow states for a {}-dimensional field",
            nf,
            y.len(),
            field.dim()
        )));
    }
    let mut state: Vec<f64> = x_init.iter().chain(y).copied().collect();
    let residual = |s: &[f64]| -> Result<Vec<f64>, ReduceError> {
        let mut r = field.eval_vec(s, t)?;
        r.truncate(nf);
        Ok(r)
    };
    let mut r = residual(&state)?;
    let mut rn = linalg::norm(&r);
    let mut best = rn;
    for _ in 0..NEWTON_MAX_ITER {
        if rn <= NEWTON_TOL {
            state.truncate(nf);
            return Ok(state);
        }
        let jac = field.jacobian(&state, t)?;
        let jxx = jac.view((0, 0), (nf, nf)).into_owned();
        let step = jxx
            .lu()
            .solve(&DVector::from_column_slice(&r))
            .ok_or_else(|| ReduceError::SingularSensitivity { y: y.to_vec() })?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = state
                .iter()
                .enumerate()
                .map(|(i, v)| if i < nf { v - lambda * step[i] } else { *v })
                .collect();
            if let Ok(tr) = residual(&trial) {
                let tn = linalg::norm(&tr);
                if tn < rn {
                    state = trial;
                    r = tr;
                    rn = tn;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-6 {
                return Err(ReduceError::NoConvergence { best_residual: best });
            }
        }
        best = best.min(rn);
    }
    if rn <= NEWTON_TOL {
        state.truncate(nf);
        return Ok(state);
    }
    Err(ReduceError::NoConvergence { best_residual: best })
}

/// Implicit-function sensitivities at a root: `S_y = -(∂f/∂x)⁻¹ ∂f/∂y` and
/// `S_t = -(∂f/∂x)⁻¹ ∂f/∂t`, with `jac` the full Jacobian of the field at
/// `(x̄, y)` and `dfdt` its explicit time derivative.
pub fn sensitivities(
    jac: &DMatrix<f64>,
    dfdt: &[f64],
    n_fast: usize,
    y: &[f64],
) -> Result<(DMatrix<f64>, DVector<f64>), ReduceError> {
    let n = jac.nrows();
    let ns = n - n_fast;
    let lu = jac.view((0, 0), (n_fast, n_fast)).into_owned().lu();
    let singular = || ReduceError::SingularSensitivity { y: y.to_vec() };
    let fy = jac.view((0, n_fast), (n_fast, ns)).into_owned();
    let s_y = -lu.solve(&fy).ok_or_else(singular)?;
    let s_t = -lu
        .solve(&DVector::from_column_slice(&dfdt[..n_fast]))
        .ok_or_else(singular)?;
    Ok((s_y, s_t))
}
