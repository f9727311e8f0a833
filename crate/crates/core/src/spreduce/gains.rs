use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lp::{minimize_cover, LpError};
use super::standard::ModularSystem;
use super::ReduceError;
use crate::bounds::BoundCurve;
use crate::contraction::{Point, SampleDomain};
use crate::json::num;
use crate::linalg;
use crate::sim::in_pool;

/// Safety factor applied to fitted constants.
pub const INFLATION: f64 = 1.01;
const VERIFY_SLACK: f64 = 1e-9;
/// Largest acceptable ratio between the sampled maxima over the full box
/// and over the inner half box; affine growth stays at or below 2.
pub const GROWTH_RATIO_LIMIT: f64 = 2.5;

/// Constants of the affine bounds `|δf| ≤ d_f + α_fx |x̃| + α_fy |y|` and
/// `|δg| ≤ d_g + α_gx |x̃|`, together with the contraction data of the fast
/// and reduced slow subsystems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainConstants {
    pub d_f: f64,
    pub alpha_fx: f64,
    pub alpha_fy: f64,
    pub d_g: f64,
    pub alpha_gx: f64,
    pub chi_f: f64,
    pub beta_f: f64,
    pub chi_g: f64,
    pub beta_g: f64,
    /// Bound on `|ȳ(t)|`.
    pub m_bar: f64,
    /// Initial slow mismatch `|y(0) - ȳ(0)|`.
    #[serde(default)]
    pub delta_offset: f64,
}

impl GainConstants {
    /// Hand-derived constants for the building case study with the
    /// conductances `z + sin(z)/2`, `k = 1/2` and the identity metric.
    pub fn building_reference() -> Self {
        let r2 = std::f64::consts::SQRT_2;
        GainConstants {
            d_f: 0.75,
            alpha_fx: r2 / 4.0,
            alpha_fy: 0.75,
            d_g: 1.0,
            alpha_gx: r2 / 2.0,
            chi_f: 1.0,
            beta_f: 0.5,
            chi_g: 1.0,
            beta_g: 0.25,
            m_bar: 5.0,
            delta_offset: 5.0,
        }
    }

    pub fn validate(&self) -> Result<(), ReduceError> {
        let all = [
            self.d_f,
            self.alpha_fx,
            self.alpha_fy,
            self.d_g,
            self.alpha_gx,
            self.m_bar,
            self.delta_offset,
        ];
        let ok = all.iter().all(|v| *v >= 0.0 && v.is_finite())
            && self.beta_f > 0.0
            && self.beta_g > 0.0
            && self.chi_f >= 1.0
            && self.chi_g >= 1.0
            && [self.beta_f, self.beta_g, self.chi_f, self.chi_g]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(ReduceError::Invalid(format!("gain constants {self:?}")))
        }
    }
}

/// Critical perturbation `ε_c`: reciprocal of the small-gain bracket,
/// `+∞` when there is no feedback.
pub fn epsilon_critical(gc: &GainConstants) -> f64 {
    let bracket = gc.chi_f / gc.beta_f * (gc.alpha_fx + gc.chi_g / gc.beta_g * gc.alpha_fy * gc.alpha_gx);
    if bracket == 0.0 {
        f64::INFINITY
    } else {
        1.0 / bracket
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingBounds {
    /// Bound on `sup |x̃(t)|`.
    pub m_xtilde: f64,
    /// Envelope of `|y(t) - ȳ(t)|`.
    pub ytilde: BoundCurve,
}

/// Fast-error bound and slow-error envelope for `ε < ε_c` from the initial
/// fast error `|x̃₀|`.
pub fn lemma3_bounds(gc: &GainConstants, eps: f64, x_tilde0: f64) -> Result<TrackingBounds, ReduceError> {
    gc.validate()?;
    let eps_c = epsilon_critical(gc);
    if !(eps >= 0.0) || eps >= eps_c {
        return Err(ReduceError::AboveCritical {
            epsilon: eps,
            epsilon_c: eps_c,
        });
    }
    let slow = gc.m_bar + gc.chi_g * (gc.delta_offset + gc.d_g / gc.beta_g);
    let num = gc.chi_f * x_tilde0 + eps * gc.chi_f / gc.beta_f * (gc.d_f + gc.alpha_fy * slow);
    let m_xtilde = num / (1.0 - eps / eps_c);
    Ok(TrackingBounds {
        m_xtilde,
        ytilde: BoundCurve {
            amplitude: gc.chi_g * gc.delta_offset,
            rate: eps * gc.beta_g,
            asymptote: gc.chi_g * gc.alpha_gx * m_xtilde / gc.beta_g,
            valid: true,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransientTimes {
    /// Boundary-layer time `ln(1/ε)/β_f`.
    pub t_fast: f64,
    /// `(1/β_f + 1/(ε β_g)) ln(1/ε)`.
    pub t_total: f64,
}

pub fn transient_time(beta_f: f64, beta_g: f64, eps: f64) -> Result<TransientTimes, ReduceError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ReduceError::Invalid(format!(
            "transient times need 0 < ε < 1, got {eps}"
        )));
    }
    if !(beta_f > 0.0 && beta_g > 0.0) {
        return Err(ReduceError::Invalid(format!("rates β_f = {beta_f}, β_g = {beta_g}")));
    }
    let l = (1.0 / eps).ln();
    Ok(TransientTimes {
        t_fast: l / beta_f,
        t_total: (1.0 / beta_f + 1.0 / (eps * beta_g)) * l,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cascade {
    #[serde(with = "num::vec")]
    pub levels: Vec<f64>,
    /// Product of the per-level critical values; also the estimated ratio
    /// between the fastest and slowest timescales.
    #[serde(with = "num")]
    pub product: f64,
}

pub fn cascade_epsilon(levels: &[GainConstants]) -> Result<Cascade, ReduceError> {
    if levels.is_empty() {
        return Err(ReduceError::Invalid("cascade needs at least one level".into()));
    }
    let eps: Vec<f64> = levels.iter().map(epsilon_critical).collect();
    if let Some(i) = eps.iter().position(|e| *e == 0.0 || e.is_nan()) {
        return Err(ReduceError::Invalid(format!(
            "level {i} has degenerate ε_c = {}",
            eps[i]
        )));
    }
    Ok(Cascade {
        product: eps.iter().product(),
        levels: eps,
    })
}

/// Fitted affine constants (before contraction data is attached).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedGains {
    pub d_f: f64,
    pub alpha_fx: f64,
    pub alpha_fy: f64,
    pub d_g: f64,
    pub alpha_gx: f64,
    pub samples: usize,
}

struct Triple {
    df: f64,
    dg: f64,
    xt: f64,
    y: f64,
    inner: bool,
}

fn fit(c: &[f64], rows: &[(Vec<f64>, f64)]) -> Result<Vec<f64>, ReduceError> {
    minimize_cover(c, rows).map_err(|e| match e {
        LpError::Infeasible | LpError::NegativeCost => ReduceError::Invalid(format!("gain fit: {e:?}")),
        LpError::IterationLimit => ReduceError::Numerical("gain fit did not terminate".into()),
    })
}

fn growth_check(name: &str, values: impl Iterator<Item = (f64, bool)>) -> Result<(), ReduceError> {
    let (mut full, mut inner) = (0.0f64, 0.0f64);
    for (v, is_inner) in values {
        full = full.max(v);
        if is_inner {
            inner = inner.max(v);
        }
    }
    if inner > 1e-12 && full / inner > GROWTH_RATIO_LIMIT {
        return Err(ReduceError::Hypothesis(format!(
            "|{name}| grows faster than affinely: max {full} over the domain vs {inner} on the inner half"
        )));
    }
    Ok(())
}

/// Smallest affine constants dominating `|δf|` and `|δg|` at the sampled
/// points of `domain` (states in `(x, y)` order), inflated by [`INFLATION`].
pub fn estimate_gain_constants(
    sys: &ModularSystem,
    domain: &SampleDomain,
    samples: usize,
) -> Result<FittedGains, ReduceError> {
    if domain.dim() != sys.n_fast() + sys.n_slow() {
        return Err(ReduceError::Dimension(format!(
            "domain has {} intervals for {} states",
            domain.dim(),
            sys.n_fast() + sys.n_slow()
        )));
    }
    let points = domain.points(samples);
    let inner_of = |p: &Point| {
        p.x.iter()
            .zip(&domain.states)
            .all(|(v, iv)| (v - iv.center()).abs() <= 0.25 * iv.width() + 1e-12)
    };
    let nf = sys.n_fast();
    let triples: Vec<Triple> = in_pool(|| {
        points
            .par_iter()
            .map(|p| {
                let d = sys.decompose(&p.x, p.t)?;
                Ok(Triple {
                    df: linalg::norm(&d.delta_f),
                    dg: linalg::norm(&d.delta_g),
                    xt: linalg::norm(&d.x_tilde),
                    y: linalg::norm(&p.x[nf..]),
                    inner: inner_of(p),
                })
            })
            .collect::<Result<Vec<_>, ReduceError>>()
    })?;
    growth_check("δf", triples.iter().map(|s| (s.df, s.inner)))?;
    growth_check("δg", triples.iter().map(|s| (s.dg, s.inner)))?;

    let f_rows: Vec<(Vec<f64>, f64)> = triples.iter().map(|s| (vec![1.0, s.xt, s.y], s.df)).collect();
    let g_rows: Vec<(Vec<f64>, f64)> = triples.iter().map(|s| (vec![1.0, s.xt], s.dg)).collect();
    let f = fit(&[1.0, 1.0, 1.0], &f_rows)?;
    let g = fit(&[1.0, 1.0], &g_rows)?;
    let fitted = FittedGains {
        d_f: f[0] * INFLATION,
        alpha_fx: f[1] * INFLATION,
        alpha_fy: f[2] * INFLATION,
        d_g: g[0] * INFLATION,
        alpha_gx: g[1] * INFLATION,
        samples: triples.len(),
    };
    for s in &triples {
        let bf = fitted.d_f + fitted.alpha_fx * s.xt + fitted.alpha_fy * s.y;
        let bg = fitted.d_g + fitted.alpha_gx * s.xt;
        if s.df > bf + VERIFY_SLACK || s.dg > bg + VERIFY_SLACK {
            return Err(ReduceError::Numerical(
                "fitted gain constants fail re-verification".into(),
            ));
        }
    }
    Ok(fitted)
}

/// Largest violation of the affine bounds claimed by `gc` over the samples,
/// as `(sup(|δf| - bound_f), sup(|δg| - bound_g))` together with the
/// states attaining them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainCheck {
    pub delta_f_excess: f64,
    pub delta_f_point: Vec<f64>,
    pub delta_g_excess: f64,
    pub delta_g_point: Vec<f64>,
    pub samples: usize,
}

impl GainCheck {
    pub fn holds(&self) -> bool {
        self.delta_f_excess <= VERIFY_SLACK && self.delta_g_excess <= VERIFY_SLACK
    }
}

pub fn check_gain_constants(
    sys: &ModularSystem,
    gc: &GainConstants,
    domain: &SampleDomain,
    samples: usize,
) -> Result<GainCheck, ReduceError> {
    let nf = sys.n_fast();
    let points = domain.points(samples);
    let excess: Vec<(f64, f64)> = in_pool(|| {
        points
            .par_iter()
            .map(|p| {
                let d = sys.decompose(&p.x, p.t)?;
                let xt = linalg::norm(&d.x_tilde);
                let y = linalg::norm(&p.x[nf..]);
                let ef = linalg::norm(&d.delta_f) - (gc.d_f + gc.alpha_fx * xt + gc.alpha_fy * y);
                let eg = linalg::norm(&d.delta_g) - (gc.d_g + gc.alpha_gx * xt);
                Ok((ef, eg))
            })
            .collect::<Result<Vec<_>, ReduceError>>()
    })?;
    let arg = |k: usize| {
        let (i, v) = excess
            .iter()
            .map(|e| if k == 0 { e.0 } else { e.1 })
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((0, f64::NEG_INFINITY));
        (v, points.get(i).map(|p| p.x.clone()).unwrap_or_default())
    };
    let (fe, fp) = arg(0);
    let (ge, gp) = arg(1);
    Ok(GainCheck {
        delta_f_excess: fe,
        delta_f_point: fp,
        delta_g_excess: ge,
        delta_g_point: gp,
        samples: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::CompiledSystem;
    use crate::expr::parse_system;

    #[test]
    fn critical_value_from_reference_constants() {
        let gc = GainConstants::building_reference();
        let eps_c = epsilon_critical(&gc);
        assert!((eps_c - std::f64::consts::SQRT_2 / 7.0).abs() < 1e-12);
        let none = GainConstants {
            alpha_fx: 0.0,
            alpha_gx: 0.0,
            alpha_fy: 0.0,
            ..gc.clone()
        };
        assert_eq!(epsilon_critical(&none), f64::INFINITY);
        let single = GainConstants {
            alpha_fx: 1.0,
            alpha_fy: 0.0,
            alpha_gx: 0.0,
            beta_f: 1.0,
            ..gc
        };
        assert_eq!(epsilon_critical(&single), 1.0);
    }

    #[test]
    fn critical_value_is_time_scale_free() {
        let gc = GainConstants::building_reference();
        let c = 3.7;
        let scaled = GainConstants {
            d_f: gc.d_f * c,
            alpha_fx: gc.alpha_fx * c,
            alpha_fy: gc.alpha_fy * c,
            d_g: gc.d_g * c,
            alpha_gx: gc.alpha_gx * c,
            beta_f: gc.beta_f * c,
            beta_g: gc.beta_g * c,
            ..gc.clone()
        };
        assert!((epsilon_critical(&scaled) - epsilon_critical(&gc)).abs() < 1e-12);
    }

    #[test]
    fn transient_plug_in() {
        let t = transient_time(0.5, 0.25, 0.1).unwrap();
        assert!((t.t_total - 42.0 * 10f64.ln()).abs() < 1e-12);
        assert!((t.t_total - 96.709).abs() < 1e-3);
        assert!((transient_time(1.0, 1.0, 0.5).unwrap().t_fast - 2f64.ln()).abs() < 1e-15);
        let eps = 0.5 * std::f64::consts::SQRT_2 / 7.0;
        let t_fast = transient_time(0.5, 0.25, eps).unwrap().t_fast;
        assert!((t_fast - 2.0 * (1.0 / eps).ln()).abs() < 1e-12);
        assert!((t_fast - 4.583).abs() < 3e-3);
        assert!(transient_time(0.5, 0.25, 1.0).is_err());
    }

    #[test]
    fn lemma3_limits_and_guards() {
        let gc = GainConstants::building_reference();
        let eps_c = epsilon_critical(&gc);
        let tiny = lemma3_bounds(&gc, 1e-9, 0.0).unwrap();
        assert!(tiny.m_xtilde < 1e-7);
        assert!(matches!(
            lemma3_bounds(&gc, eps_c, 0.0),
            Err(ReduceError::AboveCritical { .. })
        ));
        let b = lemma3_bounds(&gc, 0.5 * eps_c, 0.0).unwrap();
        // 2 ε χ_f/β_f (d_f + α_fy (M̄ + χ_g(|Δ| + d_g/β_g)))
        let expect = 2.0 * (0.5 * eps_c) * 2.0 * (0.75 + 0.75 * (5.0 + 5.0 + 4.0));
        assert!((b.m_xtilde - expect).abs() < 1e-12);
        assert!((b.ytilde.eval(0.0) - 5.0 - b.ytilde.asymptote).abs() < 1e-12);
        let base = lemma3_bounds(&gc, 0.3 * eps_c, 0.1).unwrap().m_xtilde;
        for bump in [
            GainConstants {
                d_f: gc.d_f + 0.1,
                ..gc.clone()
            },
            GainConstants {
                alpha_fy: gc.alpha_fy + 0.01,
                ..gc.clone()
            },
            GainConstants {
                alpha_fx: gc.alpha_fx + 0.01,
                ..gc.clone()
            },
            GainConstants {
                alpha_gx: gc.alpha_gx + 0.01,
                ..gc.clone()
            },
            GainConstants {
                m_bar: gc.m_bar + 0.1,
                ..gc.clone()
            },
            GainConstants {
                delta_offset: gc.delta_offset + 0.1,
                ..gc.clone()
            },
        ] {
            assert!(lemma3_bounds(&bump, 0.3 * eps_c, 0.1).unwrap().m_xtilde > base);
        }
        assert!(lemma3_bounds(&gc, 0.31 * eps_c, 0.1).unwrap().m_xtilde > base);
    }

    #[test]
    fn cascade_products() {
        let gc = GainConstants::building_reference();
        assert_eq!(cascade_epsilon(&[gc.clone()]).unwrap().product, epsilon_critical(&gc));
        let two = cascade_epsilon(&[gc.clone(), gc.clone()]).unwrap();
        assert!((two.product - 2.0 / 49.0).abs() < 1e-15);
        let free = GainConstants {
            alpha_fx: 0.0,
            alpha_fy: 0.0,
            alpha_gx: 0.0,
            ..gc.clone()
        };
        assert_eq!(cascade_epsilon(&[gc, free]).unwrap().product, f64::INFINITY);
        assert!(cascade_epsilon(&[]).is_err());
    }

    fn modular(src: &str) -> ModularSystem {
        ModularSystem::new(&CompiledSystem::new(&parse_system(src).unwrap()).unwrap()).unwrap()
    }

    #[test]
    fn synthetic_affine_gain() {
        // δf = g_x = 0.3 + 0.1|x|, no slow feedback through x̄ = 0
        let m = modular(
            "params { epsilon = 0.1 }\nfast x\nslow y\ndyn x = -x + epsilon*(0.3 + 0.1*abs(x))\ndyn y = -epsilon*y\n",
        );
        let g = estimate_gain_constants(&m, &SampleDomain::cube(2, -4.0, 4.0), 400).unwrap();
        assert!((g.d_f - 0.3 * INFLATION).abs() < 1e-9, "{g:?}");
        assert!((g.alpha_fx - 0.1 * INFLATION).abs() < 1e-9);
        assert!(g.alpha_fy.abs() < 1e-12);
        assert_eq!((g.d_g, g.alpha_gx), (0.0, 0.0));
    }

    #[test]
    fn decoupled_system_has_zero_gains() {
        let m = modular("params { epsilon = 0.2 }\nfast x\nslow y\ndyn x = -x\ndyn y = -epsilon*y\n");
        let g = estimate_gain_constants(&m, &SampleDomain::cube(2, -3.0, 3.0), 200).unwrap();
        assert_eq!([g.d_f, g.alpha_fx, g.alpha_fy, g.d_g, g.alpha_gx], [0.0; 5]);
    }

    #[test]
    fn quadratic_growth_is_rejected() {
        let m = modular("params { epsilon = 0.1 }\nfast x\nslow y\ndyn x = -x + epsilon*x^2\ndyn y = -epsilon*y\n");
        assert!(matches!(
            estimate_gain_constants(&m, &SampleDomain::cube(2, -4.0, 4.0), 400),
            Err(ReduceError::Hypothesis(_))
        ));
    }
}
