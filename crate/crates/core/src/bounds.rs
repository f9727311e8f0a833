//! Disturbance-rejection envelopes for contracting systems and their
//! empirical verification by simulation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contraction::ContractionCertificate;
use crate::dynsys::VectorField;
use crate::linalg;
use crate::sim::{integrate, IntegratorConfig, SimError};

/// Relative slack allowed for integrator error when comparing against a bound.
pub const VERIFY_TOLERANCE: f64 = 0.02;
/// Deviations below this count as zero when the bound itself is zero.
pub const ABSOLUTE_FLOOR: f64 = 1e-9;
const MIN_OUTPUT_POINTS: usize = 201;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundedDisturbance {
    pub sup: f64,
}

/// `|d(x, t)| ≤ k0 + kx |x|` around a nominal trajectory with `|x₀(t)| ≤ x00`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LGainDisturbance {
    pub k0: f64,
    pub kx: f64,
    pub x00: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceModel {
    Bounded(BoundedDisturbance),
    LGain(LGainDisturbance),
}

/// `R(t) = amplitude · e^{-rate t} + asymptote`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub amplitude: f64,
    pub rate: f64,
    pub asymptote: f64,
    pub valid: bool,
}

impl BoundCurve {
    pub fn eval(&self, t: f64) -> f64 {
        if self.amplitude == 0.0 {
            return self.asymptote;
        }
        self.amplitude * (-self.rate * t).exp() + self.asymptote
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundError {
    #[error("small-gain condition fails: β - χ K_x = {margin}")]
    SmallGainViolated { margin: f64 },
    #[error("invalid bound parameters: {0}")]
    Invalid(String),
}

fn check_params(beta: f64, chi: f64, rest: &[f64]) -> Result<(), BoundError> {
    let ok = beta > 0.0 && beta.is_finite() && chi >= 1.0 && chi.is_finite();
    if !ok || rest.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(BoundError::Invalid(format!("β = {beta}, χ = {chi}, others = {rest:?}")));
    }
    Ok(())
}

/// Envelope for `|x(t) - x₀(t)|` under a disturbance with `|d| ≤ d_sup`.
pub fn lemma1_bound(beta: f64, chi: f64, r0: f64, d_sup: f64) -> Result<BoundCurve, BoundError> {
    check_params(beta, chi, &[r0, d_sup])?;
    Ok(BoundCurve {
        amplitude: chi * r0,
        rate: beta,
        asymptote: d_sup * chi / beta,
        valid: true,
    })
}

/// Envelope under `|d(x, t)| ≤ k0 + kx |x|`; requires `kx < β/χ`.
pub fn lemma2_bound(beta: f64, chi: f64, r0: f64, d: &LGainDisturbance) -> Result<BoundCurve, BoundError> {
    check_params(beta, chi, &[r0, d.k0, d.kx, d.x00])?;
    let margin = beta - chi * d.kx;
    if margin <= 0.0 {
        return Err(BoundError::SmallGainViolated { margin });
    }
    Ok(BoundCurve {
        amplitude: chi * r0,
        rate: margin,
        asymptote: chi * (d.k0 + d.kx * d.x00) / margin,
        valid: true,
    })
}

pub fn bound_for(model: &DisturbanceModel, beta: f64, chi: f64, r0: f64) -> Result<BoundCurve, BoundError> {
    match model {
        DisturbanceModel::Bounded(d) => lemma1_bound(beta, chi, r0, d.sup),
        DisturbanceModel::LGain(d) => lemma2_bound(beta, chi, r0, d),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub verdict: Verdict,
    pub bound: BoundCurve,
    /// Largest `|x(t) - x₀(t)| / R(t)` over the compared times.
    pub max_ratio: f64,
    pub worst_time: f64,
    pub max_deviation: f64,
    /// First output time at which either trajectory left the certified domain.
    pub exit_time: Option<f64>,
    pub tolerance: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Integrate `nominal` from `x0_nominal` and `disturbed` from `x0_disturbed`
/// and compare their distance with the envelope implied by `cert`.
pub fn verify_bound<F, G>(
    nominal: &F,
    disturbed: &G,
    cert: &ContractionCertificate,
    model: &DisturbanceModel,
    x0_nominal: &[f64],
    x0_disturbed: &[f64],
    config: &IntegratorConfig,
) -> Result<VerificationReport, VerifyError>
where
    F: VectorField + ?Sized,
    G: VectorField + ?Sized,
{
    if nominal.dim() != disturbed.dim() || cert.domain.dim() != nominal.dim() {
        return Err(VerifyError::Dimension(format!(
            "nominal {}, disturbed {}, certificate domain {}",
            nominal.dim(),
            disturbed.dim(),
            cert.domain.dim()
        )));
    }
    let r0 = linalg::dist(x0_nominal, x0_disturbed);
    let bound = bound_for(model, cert.beta, cert.chi, r0)?;
    let config = IntegratorConfig {
        output_points: config.output_points.max(MIN_OUTPUT_POINTS),
        ..config.clone()
    };
    let a = integrate(nominal, x0_nominal, &config)?;
    let b = integrate(disturbed, x0_disturbed, &config)?;

    let mut report = VerificationReport {
        verdict: Verdict::Pass,
        bound,
        max_ratio: 0.0,
        worst_time: 0.0,
        max_deviation: 0.0,
        exit_time: None,
        tolerance: VERIFY_TOLERANCE,
        points: 0,
    };
    let n = a.len().min(b.len());
    for k in 0..n {
        let t = a.times[k];
        if !cert.domain.contains(&a.states[k]) || !cert.domain.contains(&b.states[k]) {
            report.exit_time = Some(t);
            break;
        }
        let dev = linalg::dist(&a.states[k], &b.states[k]);
        let r = bound.eval(t);
        let ratio = if r > 0.0 {
            dev / r
        } else if dev <= ABSOLUTE_FLOOR {
            0.0
        } else {
            f64::INFINITY
        };
        report.points += 1;
        report.max_deviation = report.max_deviation.max(dev);
        if ratio > report.max_ratio {
            report.max_ratio = ratio;
            report.worst_time = t;
        }
    }
    if report.exit_time.is_none() {
        report.exit_time = a.diverged_at.into_iter().chain(b.diverged_at).reduce(f64::min);
    }
    report.verdict = if report.max_ratio > 1.0 + VERIFY_TOLERANCE {
        Verdict::Fail
    } else if report.exit_time.is_some() {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contraction::{certify, SampleDomain};
    use crate::dynsys::{FnField, Metric};

    #[test]
    fn lemma1_plug_in() {
        let b = lemma1_bound(1.0, 1.0, 2.0, 0.5).unwrap();
        assert_eq!(b.eval(0.0), 2.5);
        assert_eq!(b.asymptote, 0.5);
        assert_eq!(lemma1_bound(0.5, 1.0, 0.0, 0.75).unwrap().asymptote, 1.5);
        let pure = lemma1_bound(2.0, 3.0, 1.0, 0.0).unwrap();
        assert!((pure.eval(1.0) - 3.0 * (-2f64).exp()).abs() < 1e-15);
        assert!(lemma1_bound(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(lemma1_bound(1.0, 0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn lemma2_plug_in_and_small_gain() {
        let d = LGainDisturbance {
            k0: 0.0,
            kx: 0.5,
            x00: 2.0,
        };
        assert_eq!(lemma2_bound(1.0, 1.0, 0.0, &d).unwrap().asymptote, 2.0);
        let d = LGainDisturbance {
            k0: 0.0,
            kx: 0.6,
            x00: 1.0,
        };
        match lemma2_bound(1.0, 2.0, 1.0, &d) {
            Err(BoundError::SmallGainViolated { margin }) => assert!((margin + 0.2).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lemma2_reduces_to_lemma1() {
        let l1 = lemma1_bound(0.7, 1.8, 1.3, 0.4).unwrap();
        let exact = LGainDisturbance {
            k0: 0.4,
            kx: 0.0,
            x00: 5.0,
        };
        assert_eq!(lemma2_bound(0.7, 1.8, 1.3, &exact).unwrap(), l1);
        let tiny = LGainDisturbance { kx: 1e-12, ..exact };
        let l2 = lemma2_bound(0.7, 1.8, 1.3, &tiny).unwrap();
        for k in 0..50 {
            let t = 0.2 * k as f64;
            assert!((l1.eval(t) - l2.eval(t)).abs() <= 1e-9);
        }
    }

    fn decay_cert(half: f64) -> ContractionCertificate {
        let f = FnField::new(1, |x, _t, out| out[0] = -x[0]);
        certify(&f, &Metric::identity(1), &SampleDomain::cube(1, -half, half), 10).unwrap()
    }

    #[test]
    fn sinusoidal_disturbance_stays_inside() {
        let nominal = FnField::new(1, |x, _t, out| out[0] = -x[0]);
        let disturbed = FnField::new(1, |x, t, out| out[0] = -x[0] + 0.5 * t.sin());
        let model = DisturbanceModel::Bounded(BoundedDisturbance { sup: 0.5 });
        let cfg = IntegratorConfig::with_horizon(20.0);
        let rep = verify_bound(&nominal, &disturbed, &decay_cert(5.0), &model, &[0.0], &[1.0], &cfg).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        assert!(rep.max_ratio <= 1.0, "{rep:?}");
    }

    #[test]
    fn identical_runs_with_zero_bound_pass() {
        let f = FnField::new(1, |x, _t, out| out[0] = -x[0]);
        let model = DisturbanceModel::Bounded(BoundedDisturbance { sup: 0.0 });
        let rep = verify_bound(
            &f,
            &f,
            &decay_cert(5.0),
            &model,
            &[1.0],
            &[1.0],
            &IntegratorConfig::with_horizon(5.0),
        )
        .unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        assert_eq!(rep.max_ratio, 0.0);
    }

    #[test]
    fn state_dependent_disturbance() {
        let nominal = FnField::new(1, |x, _t, out| out[0] = -x[0]);
        let disturbed = FnField::new(1, |x, _t, out| out[0] = -x[0] + 0.25 * x[0]);
        let model = DisturbanceModel::LGain(LGainDisturbance {
            k0: 0.0,
            kx: 0.25,
            x00: 2.0,
        });
        let cfg = IntegratorConfig::with_horizon(20.0);
        let rep = verify_bound(&nominal, &disturbed, &decay_cert(5.0), &model, &[2.0], &[2.5], &cfg).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{rep:?}");
    }

    #[test]
    fn leaving_the_domain_is_inconclusive() {
        let nominal = FnField::new(1, |x, _t, out| out[0] = -x[0]);
        let disturbed = FnField::new(1, |x, _t, out| out[0] = -x[0] + 3.0);
        let model = DisturbanceModel::Bounded(BoundedDisturbance { sup: 3.0 });
        let cfg = IntegratorConfig::with_horizon(10.0);
        let rep = verify_bound(&nominal, &disturbed, &decay_cert(1.0), &model, &[0.0], &[0.0], &cfg).unwrap();
        assert_eq!(rep.verdict, Verdict::Inconclusive);
        assert!(rep.exit_time.unwrap() > 0.0);
    }
}
