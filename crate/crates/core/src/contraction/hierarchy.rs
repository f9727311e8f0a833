use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ContractionError, Point, SampleDomain};
use crate::dynsys::{Metric, VectorField};
use crate::linalg;
use crate::sim::in_pool;

/// Number of weights tried: `ν = 2^-i` for `i = 0..NU_GRID_LEN`.
pub const NU_GRID_LEN: usize = 21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyCheck {
    /// Largest sampled spectral norm of the coupling block `B`.
    pub max_coupling: f64,
    pub slow_lambda_min: f64,
    pub slow_lambda_max: f64,
    /// Largest grid weight for which the Schur complement is negative
    /// definite at every sample.
    pub nu: Option<f64>,
    /// `-max λ_max` of the Schur complement at `nu` (or at the smallest
    /// grid weight when none passes).
    pub margin: f64,
    pub contracting: bool,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HierarchyError {
    #[error("slow block is not contracting: λ_max(sym F_y) = {lambda_max} at x = {point:?}")]
    SlowNotContracting { lambda_max: f64, point: Vec<f64> },
    #[error(transparent)]
    Contraction(#[from] ContractionError),
}

/// `λ_max(F_x^s - ν² B (F_y^s)⁻¹ Bᵀ)`; negative means the weighted
/// interconnection is contracting.
pub fn schur_margin(fx_sym: &DMatrix<f64>, b: &DMatrix<f64>, fy_sym: &DMatrix<f64>, nu: f64) -> Option<f64> {
    let inv = fy_sym.clone().try_inverse()?;
    let s = fx_sym - (b * inv * b.transpose()) * (nu * nu);
    Some(linalg::sym_lambda_max(&s))
}

struct Sample {
    fx: DMatrix<f64>,
    b: DMatrix<f64>,
    fy: DMatrix<f64>,
}

/// Hierarchical contraction check for `ẋ = f(x, y)` (rows `..n_fast` of
/// `fast`) feeding `ẏ = g(x, y)` (rows `n_fast..` of `slow`).
#[allow(clippy::too_many_arguments)]
pub fn check_hierarchy<F, G>(
    fast: &F,
    slow: &G,
    theta_x: &Metric,
    theta_y: &Metric,
    n_fast: usize,
    domain: &SampleDomain,
    samples: usize,
) -> Result<HierarchyCheck, HierarchyError>
where
    F: VectorField + ?Sized,
    G: VectorField + ?Sized,
{
    let n = fast.dim();
    if slow.dim() != n || domain.dim() != n || theta_x.dim() != n_fast || theta_y.dim() + n_fast != n {
        return Err(ContractionError::Dimension(format!(
            "fields of dimension {n}/{}, metrics {}+{}, split at {n_fast}",
            slow.dim(),
            theta_x.dim(),
            theta_y.dim()
        ))
        .into());
    }
    let points = domain.points(samples);
    let one = |p: &Point| -> Result<Sample, ContractionError> {
        let err = |source| ContractionError::Eval { x: p.x.clone(), source };
        let (xs, ys) = p.x.split_at(n_fast);
        let jf = fast.jacobian(&p.x, p.t).map_err(err)?;
        let jg = slow.jacobian(&p.x, p.t).map_err(err)?;
        let m = n - n_fast;
        let jxx = jf.view((0, 0), (n_fast, n_fast)).into_owned();
        let jxy = jf.view((0, n_fast), (n_fast, m)).into_owned();
        let jyy = jg.view((n_fast, n_fast), (m, m)).into_owned();
        let (xdot, ydot) = if theta_x.is_constant() && theta_y.is_constant() {
            (vec![0.0; n_fast], vec![0.0; m])
        } else {
            let a = fast.eval_vec(&p.x, p.t).map_err(err)?;
            let b = slow.eval_vec(&p.x, p.t).map_err(err)?;
            (a[..n_fast].to_vec(), b[n_fast..].to_vec())
        };
        let fx = theta_x.generalized_jacobian(&jxx, xs, p.t, &xdot)?;
        let fy = theta_y.generalized_jacobian(&jyy, ys, p.t, &ydot)?;
        let tx = theta_x.theta(xs, p.t)?;
        let ty_inv = theta_y
            .theta(ys, p.t)?
            .try_inverse()
            .ok_or_else(|| crate::dynsys::MetricError::Singular { x: ys.to_vec(), t: p.t })?;
        Ok(Sample {
            fx: linalg::symmetric_part(&fx),
            b: tx * jxy * ty_inv * 0.5,
            fy: linalg::symmetric_part(&fy),
        })
    };
    let data: Vec<Sample> = in_pool(|| points.par_iter().map(one).collect::<Result<Vec<_>, _>>())?;

    let mut slow_min = f64::INFINITY;
    let mut slow_max = f64::NEG_INFINITY;
    let mut max_coupling: f64 = 0.0;
    for (s, p) in data.iter().zip(&points) {
        let ev = linalg::sym_eigenvalues(&s.fy);
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        if hi >= 0.0 {
            return Err(HierarchyError::SlowNotContracting {
                lambda_max: hi,
                point: p.x.clone(),
            });
        }
        slow_min = slow_min.min(lo);
        slow_max = slow_max.max(hi);
        max_coupling = max_coupling.max(linalg::spectral_norm(&s.b));
    }

    let worst_at = |nu: f64| {
        data.iter()
            .map(|s| schur_margin(&s.fx, &s.b, &s.fy, nu).unwrap_or(f64::INFINITY))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut chosen = None;
    let mut lam = f64::NAN;
    for i in 0..NU_GRID_LEN {
        let nu = 0.5f64.powi(i as i32);
        lam = worst_at(nu);
        if lam < 0.0 {
            chosen = Some(nu);
            break;
        }
    }
    Ok(HierarchyCheck {
        max_coupling,
        slow_lambda_min: slow_min,
        slow_lambda_max: slow_max,
        nu: chosen,
        margin: -lam,
        contracting: chosen.is_some(),
        samples: points.len(),
    })
}
