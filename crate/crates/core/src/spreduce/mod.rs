//! Reduction to standard singular-perturbation form, gain constants, the
//! critical perturbation value and the tracking bounds built on them.

mod gains;
mod lp;
mod manifold;
mod standard;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contraction::{certify, certify_partial, ContractionCertificate, ContractionError, SampleDomain};
use crate::dynsys::{CompiledSystem, Metric};
use crate::expr::{EvalError, Interval};
use crate::json::num;
use crate::linalg;
use crate::sim::{integrate, IntegratorConfig, SimError};

pub use gains::{
    cascade_epsilon, check_gain_constants, epsilon_critical, estimate_gain_constants, lemma3_bounds, transient_time,
    Cascade, FittedGains, GainCheck, GainConstants, TrackingBounds, TransientTimes, GROWTH_RATIO_LIMIT, INFLATION,
};
pub use manifold::{sensitivities, solve_slow_manifold, NEWTON_MAX_ITER, NEWTON_TOL};
pub use standard::{Decomposition, ModularSystem, ReducedField};

/// Time window sampled for systems with explicit inputs.
pub const INPUT_TIME_WINDOW: (f64, f64) = (0.0, 100.0);
const M_BAR_MARGIN: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReduceError {
    #[error("Newton iteration for the slow manifold did not converge (best residual {best_residual:e})")]
    NoConvergence { best_residual: f64 },
    #[error("fast Jacobian is singular at y = {y:?}")]
    SingularSensitivity { y: Vec<f64> },
    #[error("system needs both fast and slow states (got {n_fast} fast, {n_slow} slow)")]
    Partition { n_fast: usize, n_slow: usize },
    #[error("ε = {epsilon} is not below ε_c = {epsilon_c}")]
    AboveCritical { epsilon: f64, epsilon_c: f64 },
    #[error("gain bound hypothesis fails: {0}")]
    Hypothesis(String),
    #[error("{0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Contraction(#[from] ContractionError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsSource {
    Fitted,
    Supplied,
}

#[derive(Debug, Clone)]
pub struct ReduceOptions {
    pub samples: usize,
    pub fast_metric: Option<Metric>,
    pub slow_metric: Option<Metric>,
    /// Use these constants instead of fitting them; they are still checked
    /// against the samples and the result is reported.
    pub gains: Option<GainConstants>,
    pub m_bar: Option<f64>,
    pub delta_offset: f64,
    /// Initial state; sets `|x̃₀|` and the reduced-trajectory estimate of `M̄`.
    pub initial: Option<Vec<f64>>,
}

impl Default for ReduceOptions {
    fn default() -> Self {
        ReduceOptions {
            samples: crate::contraction::DEFAULT_SAMPLES,
            fast_metric: None,
            slow_metric: None,
            gains: None,
            m_bar: None,
            delta_offset: 0.0,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SPReport {
    pub epsilon: f64,
    #[serde(with = "num")]
    pub epsilon_c: f64,
    /// `1 - ε/ε_c`; positive iff the small-gain condition holds.
    #[serde(with = "num")]
    pub margin: f64,
    pub x_tilde0: f64,
    pub m_xtilde_bound: Option<f64>,
    pub ytilde_asymptote: Option<f64>,
    pub t_fast: Option<f64>,
    pub t_total: Option<f64>,
    pub bounds_valid: bool,
    pub transient_valid: bool,
    pub constants: GainConstants,
    pub constants_source: ConstantsSource,
    pub fitted: Option<FittedGains>,
    /// Whether the reported constants dominate `|δf|`, `|δg|` at every sample.
    pub constants_hold: bool,
    pub gain_check: GainCheck,
    pub fast_certificate: ContractionCertificate,
    pub slow_certificate: ContractionCertificate,
    pub domain: SampleDomain,
}

/// Sampling domain of a specification: its state box, plus the input time
/// window when the right-hand side depends on time.
pub fn analysis_domain(sys: &CompiledSystem) -> SampleDomain {
    let dom = SampleDomain::new(sys.spec().domain.clone());
    if sys.spec().inputs.is_empty() {
        dom
    } else {
        dom.with_time(INPUT_TIME_WINDOW.0, INPUT_TIME_WINDOW.1)
    }
}

fn sup_norm(box_: &[Interval]) -> f64 {
    box_.iter()
        .map(|iv| iv.lo.abs().max(iv.hi.abs()).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Which part of a system a contraction certificate covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Full,
    /// Fast states of the `ε = 0` system, slow states frozen.
    Fast,
    /// The reduced slow field `ḡ` on the slow part of the domain.
    Slow,
}

impl ModularSystem {
    pub fn certify_fast(
        &self,
        metric: &Metric,
        domain: &SampleDomain,
        samples: usize,
    ) -> Result<ContractionCertificate, ContractionError> {
        certify_partial(self.unperturbed(), metric, domain, self.fast_range(), samples)
    }

    pub fn certify_slow(
        &self,
        metric: &Metric,
        domain: &SampleDomain,
        samples: usize,
    ) -> Result<ContractionCertificate, ContractionError> {
        let slow_domain = SampleDomain {
            states: domain.states[self.n_fast()..].to_vec(),
            time: domain.time,
        };
        certify(&self.reduced(1.0), metric, &slow_domain, samples)
    }
}

/// Certify `block` of `sys` over its own domain.
pub fn certify_block(
    sys: &CompiledSystem,
    block: Block,
    metric: &Metric,
    samples: usize,
) -> Result<ContractionCertificate, ReduceError> {
    let domain = analysis_domain(sys);
    Ok(match block {
        Block::Full => certify(sys, metric, &domain, samples)?,
        Block::Fast => ModularSystem::new(sys)?.certify_fast(metric, &domain, samples)?,
        Block::Slow => ModularSystem::new(sys)?.certify_slow(metric, &domain, samples)?,
    })
}

/// Certify both subsystems, obtain gain constants and evaluate the bounds.
pub fn reduce(sys: &CompiledSystem, opts: &ReduceOptions) -> Result<SPReport, ReduceError> {
    let modular = ModularSystem::new(sys)?;
    let domain = analysis_domain(sys);
    let (nf, ns) = (modular.n_fast(), modular.n_slow());
    let eps = modular.epsilon();
    let fast_metric = opts.fast_metric.clone().unwrap_or_else(|| Metric::identity(nf));
    let slow_metric = opts.slow_metric.clone().unwrap_or_else(|| Metric::identity(ns));

    let fast_cert = modular.certify_fast(&fast_metric, &domain, opts.samples)?;
    let slow_cert = modular.certify_slow(&slow_metric, &domain, opts.samples)?;

    let (x_tilde0, y0) = match &opts.initial {
        Some(ic) if ic.len() == nf + ns => {
            let d = modular.decompose(ic, 0.0)?;
            (linalg::norm(&d.x_tilde), Some(ic[nf..].to_vec()))
        }
        Some(ic) => {
            return Err(ReduceError::Dimension(format!(
                "initial state has {} entries, expected {}",
                ic.len(),
                nf + ns
            )))
        }
        None => (0.0, None),
    };

    let (constants, source, fitted) = match &opts.gains {
        Some(gc) => (gc.clone(), ConstantsSource::Supplied, None),
        None => {
            let fit = estimate_gain_constants(&modular, &domain, opts.samples)?;
            let mut gc = GainConstants {
                d_f: fit.d_f,
                alpha_fx: fit.alpha_fx,
                alpha_fy: fit.alpha_fy,
                d_g: fit.d_g,
                alpha_gx: fit.alpha_gx,
                chi_f: fast_cert.chi,
                beta_f: fast_cert.beta,
                chi_g: slow_cert.chi,
                beta_g: slow_cert.beta,
                m_bar: 0.0,
                delta_offset: opts.delta_offset,
            };
            gc.m_bar = match (opts.m_bar, &y0) {
                (Some(m), _) => m,
                (None, Some(y0)) => reduced_sup(&modular, &gc, y0)?,
                (None, None) => sup_norm(&domain.states[nf..]),
            };
            (gc, ConstantsSource::Fitted, Some(fit))
        }
    };
    constants.validate()?;
    let check = check_gain_constants(&modular, &constants, &domain, opts.samples)?;
    let eps_c = epsilon_critical(&constants);
    let tracking = lemma3_bounds(&constants, eps, x_tilde0).ok();
    let times = transient_time(constants.beta_f, constants.beta_g, eps).ok();
    Ok(SPReport {
        epsilon: eps,
        epsilon_c: eps_c,
        margin: 1.0 - eps / eps_c,
        x_tilde0,
        m_xtilde_bound: tracking.as_ref().map(|t| t.m_xtilde),
        ytilde_asymptote: tracking.as_ref().map(|t| t.ytilde.asymptote),
        t_fast: times.map(|t| t.t_fast),
        t_total: times.map(|t| t.t_total),
        bounds_valid: tracking.is_some(),
        transient_valid: times.is_some(),
        constants,
        constants_source: source,
        fitted,
        constants_hold: check.holds(),
        gain_check: check,
        fast_certificate: fast_cert,
        slow_certificate: slow_cert,
        domain,
    })
}

/// `1.05 · sup |ȳ(t)|` along the reduced trajectory from `y0`, over the
/// total transient time (or 100 slow time units when that is undefined).
fn reduced_sup(modular: &ModularSystem, gc: &GainConstants, y0: &[f64]) -> Result<f64, ReduceError> {
    let eps = modular.epsilon();
    let horizon = transient_time(gc.beta_f, gc.beta_g, eps)
        .map(|t| t.t_total)
        .unwrap_or(100.0 / eps.max(1e-3));
    let field = modular.reduced(eps.max(f64::MIN_POSITIVE));
    let traj = integrate(&field, y0, &IntegratorConfig::with_horizon(horizon))?;
    let sup = traj.states.iter().map(|s| linalg::norm(s)).fold(0.0, f64::max);
    Ok(M_BAR_MARGIN * sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::BuildingModel;
    use crate::expr::parse_system;

    #[test]
    fn building_report() {
        let spec = BuildingModel::reference(0.1).case_study().unwrap();
        let sys = CompiledSystem::new(&spec).unwrap();
        let opts = ReduceOptions {
            samples: 500,
            gains: Some(GainConstants::building_reference()),
            ..Default::default()
        };
        let rep = reduce(&sys, &opts).unwrap();
        assert!((rep.epsilon_c - std::f64::consts::SQRT_2 / 7.0).abs() < 1e-12);
        assert!(rep.bounds_valid && rep.transient_valid);
        assert!((rep.fast_certificate.beta - 0.5).abs() < 1e-3);
        assert!((rep.slow_certificate.beta - 0.25).abs() < 1e-3);
    }

    #[test]
    fn decoupled_report_has_infinite_critical_value() {
        let src = "params { epsilon = 0.2 }\nfast x\nslow y\ndyn x = -x\ndyn y = -epsilon*y\ndomain x in [-2, 2]\ndomain y in [-2, 2]\n";
        let sys = CompiledSystem::new(&parse_system(src).unwrap()).unwrap();
        let rep = reduce(
            &sys,
            &ReduceOptions {
                samples: 200,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(rep.epsilon_c, f64::INFINITY);
        assert!(rep.bounds_valid && rep.constants_hold);
        let json = serde_json::to_value(&rep).unwrap();
        assert_eq!(json["epsilon_c"], "inf");
        assert_eq!(rep.constants.m_bar, 2.0);
    }

    #[test]
    fn above_critical_flags_bounds() {
        let spec = BuildingModel::reference(0.5).case_study().unwrap();
        let sys = CompiledSystem::new(&spec).unwrap();
        let opts = ReduceOptions {
            samples: 200,
            gains: Some(GainConstants::building_reference()),
            ..Default::default()
        };
        let rep = reduce(&sys, &opts).unwrap();
        assert!(!rep.bounds_valid && rep.m_xtilde_bound.is_none());
        assert!(rep.margin < 0.0);
    }
}
