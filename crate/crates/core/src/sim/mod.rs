//! ODE integration, seeded ensembles and trajectory export.

mod compare;
mod dopri;
mod ensemble;
mod export;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynsys::VectorField;
use crate::expr::EvalError;

pub use compare::{compare_full_reduced, Comparison};
pub(crate) use ensemble::in_pool;
pub use ensemble::{
    cluster_points, ensemble_thread_count, run_ensemble, sample_box, Cluster, EnsembleResult, EnsembleRun, MERGE_RADIUS,
};
pub use export::{write_ensemble_csv, write_trajectory_csv};

/// State norm beyond which a run is declared divergent.
pub const BLOWUP_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// Classical fixed-step Runge-Kutta.
    Rk4 { step: f64 },
    /// Adaptive Dormand-Prince 5(4) with dense output.
    Dopri5,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    pub atol: f64,
    pub rtol: f64,
    pub max_step: f64,
    pub horizon: f64,
    /// Number of uniformly spaced output times including `0` and `horizon`.
    pub output_points: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::Dopri5,
            atol: 1e-9,
            rtol: 1e-7,
            max_step: f64::INFINITY,
            horizon: 1.0,
            output_points: 201,
        }
    }
}

impl IntegratorConfig {
    pub fn with_horizon(horizon: f64) -> Self {
        IntegratorConfig {
            horizon,
            ..Default::default()
        }
    }

    pub fn output_times(&self) -> Vec<f64> {
        let n = self.output_points.max(2);
        (0..n)
            .map(|k| {
                if k + 1 == n {
                    self.horizon
                } else {
                    self.horizon * k as f64 / (n - 1) as f64
                }
            })
            .collect()
    }

    fn check(&self) -> Result<(), SimError> {
        let step_ok = match self.method {
            Method::Rk4 { step } => step > 0.0,
            Method::Dopri5 => true,
        };
        if !(self.atol > 0.0 && self.rtol > 0.0 && self.horizon > 0.0 && self.max_step > 0.0 && step_ok) {
            return Err(SimError::Config(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid integrator configuration: {0}")]
    Config(String),
    #[error("initial state has dimension {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("initial state is not finite")]
    NonFinite,
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("evaluation failed at t = {t}: {source}")]
    Eval { t: f64, source: EvalError },
}

/// Solution sampled on the output grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// One row per output time.
    pub states: Vec<Vec<f64>>,
    /// Time at which the state norm exceeded [`BLOWUP_THRESHOLD`]; the grid
    /// stops before it.
    pub diverged_at: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn component(&self, j: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[j]).collect()
    }

    /// Apply `f` to every state.
    pub fn map(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Trajectory {
        Trajectory {
            times: self.times.clone(),
            states: self.states.iter().map(|s| f(s)).collect(),
            diverged_at: self.diverged_at,
        }
    }
}

pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    config: &IntegratorConfig,
) -> Result<Trajectory, SimError> {
    config.check()?;
    if x0.len() != field.dim() {
        return Err(SimError::Dimension {
            expected: field.dim(),
            found: x0.len(),
        });
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(SimError::NonFinite);
    }
    match config.method {
        Method::Dopri5 => dopri::integrate(field, x0, config),
        Method::Rk4 { step } => rk4(field, x0, config, step),
    }
}

fn rk4<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    config: &IntegratorConfig,
    step: f64,
) -> Result<Trajectory, SimError> {
    let n = x0.len();
    let eval =
        |x: &[f64], t: f64, out: &mut [f64]| field.eval(x, t, out).map_err(|source| SimError::Eval { t, source });
    let times = config.output_times();
    let mut out = Trajectory {
        times: vec![0.0],
        states: vec![x0.to_vec()],
        diverged_at: None,
    };
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for w in times.windows(2) {
        let span = w[1] - w[0];
        let substeps = (span / step - 1e-9).ceil().max(1.0) as usize;
        let h = span / substeps as f64;
        for s in 0..substeps {
            let t = w[0] + s as f64 * h;
            eval(&x, t, &mut k1)?;
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * h * k1[i];
            }
            eval(&tmp, t + 0.5 * h, &mut k2)?;
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * h * k2[i];
            }
            eval(&tmp, t + 0.5 * h, &mut k3)?;
            for i in 0..n {
                tmp[i] = x[i] + h * k3[i];
            }
            eval(&tmp, t + h, &mut k4)?;
            for i in 0..n {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if crate::linalg::norm(&x) > BLOWUP_THRESHOLD {
                out.diverged_at = Some(t + h);
                return Ok(out);
            }
        }
        out.times.push(w[1]);
        out.states.push(x.clone());
    }
    Ok(out)
}
