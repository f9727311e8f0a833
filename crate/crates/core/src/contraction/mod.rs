//! Sampled contraction certificates, partial contraction and the
//! hierarchical (Schur complement) check.

mod hierarchy;
mod sampling;

use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynsys::{Metric, MetricError, VectorField};
use crate::expr::EvalError;
use crate::linalg;
use crate::sim::in_pool;

pub use hierarchy::{check_hierarchy, schur_margin, HierarchyCheck, HierarchyError, NU_GRID_LEN};
pub use sampling::{Point, SampleDomain};

/// Default number of domain samples.
pub const DEFAULT_SAMPLES: usize = 2000;
const REFINE_STARTS: usize = 8;
const REFINE_EVALS: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionCertificate {
    pub metric: String,
    /// Contraction rate: `-max λ_max(sym F)` over the samples.
    pub beta: f64,
    /// Largest sampled condition number of `Θ`.
    pub chi: f64,
    pub domain: SampleDomain,
    /// State indices the certificate is about; the others are frozen.
    pub block: Range<usize>,
    pub worst_point: Vec<f64>,
    pub worst_time: f64,
    pub worst_lambda: f64,
    pub samples: usize,
    pub refinement_evals: usize,
}

/// Evidence that the sampled domain contains a non-contracting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub point: Vec<f64>,
    pub time: f64,
    pub lambda_max: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContractionError {
    #[error("not contracting: λ_max(sym F) = {} at x = {:?}, t = {}", .0.lambda_max, .0.point, .0.time)]
    NotContracting(Box<Violation>),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("field evaluation failed at x = {x:?}: {source}")]
    Eval { x: Vec<f64>, source: EvalError },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

struct Probe<'a, F: ?Sized> {
    field: &'a F,
    metric: &'a Metric,
    block: Range<usize>,
}

impl<F: VectorField + ?Sized> Probe<'_, F> {
    fn lambda(&self, p: &Point) -> Result<f64, ContractionError> {
        let eval_err = |source| ContractionError::Eval { x: p.x.clone(), source };
        let jac = self.field.jacobian(&p.x, p.t).map_err(eval_err)?;
        let b = self.block.clone();
        let jb: DMatrix<f64> = jac.view((b.start, b.start), (b.len(), b.len())).into_owned();
        let xdot = if self.metric.is_constant() {
            vec![0.0; b.len()]
        } else {
            self.field.eval_vec(&p.x, p.t).map_err(eval_err)?[b.clone()].to_vec()
        };
        let f = self.metric.generalized_jacobian(&jb, &p.x[b], p.t, &xdot)?;
        Ok(linalg::log_norm(&f))
    }

    fn condition(&self, p: &Point) -> Result<f64, ContractionError> {
        Ok(self.metric.condition(&p.x[self.block.clone()], p.t)?)
    }
}

/// Certify `ẋ = F(x, t)` contracting in `metric` over `domain`.
pub fn certify<F: VectorField + ?Sized>(
    field: &F,
    metric: &Metric,
    domain: &SampleDomain,
    samples: usize,
) -> Result<ContractionCertificate, ContractionError> {
    certify_partial(field, metric, domain, 0..field.dim(), samples)
}

/// Certify contraction of the states in `block`, with the remaining states
/// treated as exogenous parameters ranging over `domain`.
pub fn certify_partial<F: VectorField + ?Sized>(
    field: &F,
    metric: &Metric,
    domain: &SampleDomain,
    block: Range<usize>,
    samples: usize,
) -> Result<ContractionCertificate, ContractionError> {
    let n = field.dim();
    if domain.dim() != n {
        return Err(ContractionError::Dimension(format!(
            "domain has {} intervals for a {n}-dimensional field",
            domain.dim()
        )));
    }
    if block.end > n || block.is_empty() || metric.dim() != block.len() {
        return Err(ContractionError::Dimension(format!(
            "block {block:?} with a {}-dimensional metric in a {n}-dimensional field",
            metric.dim()
        )));
    }
    let probe = Probe {
        field,
        metric,
        block: block.clone(),
    };
    let points = domain.points(samples);
    let constant = metric.is_constant();
    let values: Vec<(f64, f64)> = in_pool(|| {
        points
            .par_iter()
            .map(|p| {
                let lam = probe.lambda(p)?;
                let cond = if constant { 0.0 } else { probe.condition(p)? };
                Ok((lam, cond))
            })
            .collect::<Result<Vec<_>, ContractionError>>()
    })?;

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| values[b].0.total_cmp(&values[a].0));
    let starts: Vec<usize> = order.into_iter().take(REFINE_STARTS).collect();
    let refined: Vec<(Point, f64)> = in_pool(|| {
        starts
            .par_iter()
            .map(|&i| {
                let obj = |p: &Point| probe.lambda(p).ok();
                sampling::compass_maximize(domain, points[i].clone(), values[i].0, &obj, REFINE_EVALS)
            })
            .collect()
    });
    let (worst, worst_lambda) = refined
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one sample");

    let mut chi = if constant {
        probe.condition(&worst)?
    } else {
        values.iter().map(|v| v.1).fold(1.0, f64::max)
    };
    if !constant {
        chi = chi.max(probe.condition(&worst)?);
    }
    if worst_lambda >= 0.0 {
        return Err(ContractionError::NotContracting(Box::new(Violation {
            point: worst.x,
            time: worst.t,
            lambda_max: worst_lambda,
            samples: points.len(),
        })));
    }
    Ok(ContractionCertificate {
        metric: metric.describe(),
        beta: -worst_lambda,
        chi,
        domain: domain.clone(),
        block,
        worst_point: worst.x,
        worst_time: worst.t,
        worst_lambda,
        samples: points.len(),
        refinement_evals: REFINE_STARTS * REFINE_EVALS,
    })
}

/// Rate and condition number of a block-diagonal composition of
/// independently certified modules: `(min β, max χ)`.
pub fn combine_modules(certs: &[ContractionCertificate]) -> Option<(f64, f64)> {
    if certs.is_empty() {
        return None;
    }
    let beta = certs.iter().map(|c| c.beta).fold(f64::INFINITY, f64::min);
    let chi = certs.iter().map(|c| c.chi).fold(1.0, f64::max);
    Some((beta, chi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{CompiledSystem, FnField, LinearField};
    use crate::expr::parse_system;

    fn compiled(src: &str) -> CompiledSystem {
        CompiledSystem::new(&parse_system(src).unwrap()).unwrap()
    }

    #[test]
    fn conductance_rate() {
        let sys = compiled("dyn x = -(x + 0.5*sin(x))");
        let dom = SampleDomain::cube(1, -20.0, 20.0);
        let cert = certify(&sys, &Metric::identity(1), &dom, 200).unwrap();
        assert!((cert.beta - 0.5).abs() < 1e-6, "{cert:?}");
        assert_eq!(cert.chi, 1.0);
        assert!((cert.worst_point[0].cos() + 1.0).abs() < 1e-6);
    }

    #[test]
    fn linear_rates() {
        let sys = compiled("dyn x = -x");
        let cert = certify(&sys, &Metric::identity(1), &SampleDomain::cube(1, -5.0, 5.0), 50).unwrap();
        assert!((cert.beta - 1.0).abs() < 1e-12);
        let a = LinearField::new(DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 0.0, -2.0]));
        let cert = certify(&a, &Metric::identity(2), &SampleDomain::cube(2, -1.0, 1.0), 20).unwrap();
        assert!((cert.beta - 1.5).abs() < 1e-12);
    }

    #[test]
    fn expanding_system_is_rejected() {
        let sys = compiled("dyn x = x");
        match certify(&sys, &Metric::identity(1), &SampleDomain::cube(1, -1.0, 1.0), 20) {
            Err(ContractionError::NotContracting(v)) => assert!((v.lambda_max - 1.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn partial_contraction_freezes_slow_states() {
        let sys = compiled("params { epsilon = 0.1 }\nfast x\nslow y\ndyn x = -(x - y)\ndyn y = epsilon*y^3");
        let dom = SampleDomain::cube(2, -3.0, 3.0);
        let cert = certify_partial(&sys, &Metric::identity(1), &dom, 0..1, 100).unwrap();
        assert!((cert.beta - 1.0).abs() < 1e-12);
        assert!(certify(&sys, &Metric::identity(2), &dom, 100).is_err());
    }

    #[test]
    fn metric_scaling_invariance() {
        let a = LinearField::new(DMatrix::from_row_slice(2, 2, &[-1.0, 3.0, 0.0, -2.0]));
        let dom = SampleDomain::cube(2, -1.0, 1.0);
        let m = Metric::parse("diag:1,2.5", 2).unwrap();
        let c1 = certify(&a, &m, &dom, 10).unwrap();
        let c2 = certify(&a, &m.scaled(4.0), &dom, 10).unwrap();
        assert!((c1.beta - c2.beta).abs() < 1e-12);
        assert!((c1.chi - c2.chi).abs() < 1e-12);
        assert!((c1.chi - 2.5).abs() < 1e-12);
    }

    #[test]
    fn time_varying_metric_uses_theta_dot() {
        // Θ = e^{t}: F = Θ̇Θ⁻¹ + J = 1 - 2
        let field = FnField::new(1, |x, _t, out| out[0] = -2.0 * x[0]);
        let metric = Metric::function(1, |_x, t| DMatrix::from_element(1, 1, t.exp()));
        let dom = SampleDomain::cube(1, -1.0, 1.0).with_time(0.0, 1.0);
        let cert = certify(&field, &metric, &dom, 20).unwrap();
        assert!((cert.beta - 1.0).abs() < 1e-6);
        assert!((cert.chi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn enlarging_the_domain_never_increases_beta() {
        let sys = compiled("dyn x = -(x + 0.5*sin(x))");
        let mut last = f64::INFINITY;
        for half in [0.5, 1.0, 2.0, 3.0, 4.0] {
            let c = certify(&sys, &Metric::identity(1), &SampleDomain::cube(1, -half, half), 100).unwrap();
            assert!(c.beta <= last + 1e-12);
            last = c.beta;
        }
    }
}
