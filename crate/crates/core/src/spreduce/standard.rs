use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::manifold::{sensitivities, solve_slow_manifold};
use super::ReduceError;
use crate::dynsys::{CompiledSystem, VectorField};
use crate::expr::EvalError;

/// A two-timescale system `ẋ = f(x, y, t) + ε g_x(x, y, t)`,
/// `ẏ = ε g_y(x, y, t)`, split from a compiled specification by its
/// perturbation parameter.
#[derive(Debug, Clone)]
pub struct ModularSystem {
    full: CompiledSystem,
    zero: CompiledSystem,
    eps: f64,
    n_fast: usize,
    n_slow: usize,
}

/// The standard-form pieces at one point `(x, y, t)` with `x = x̄(y, t) + x̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub x_bar: Vec<f64>,
    pub x_tilde: Vec<f64>,
    pub f_tilde: Vec<f64>,
    pub g_bar: Vec<f64>,
    pub delta_g: Vec<f64>,
    pub delta_f: Vec<f64>,
    pub s_y: DMatrix<f64>,
    pub s_t: Vec<f64>,
}

impl ModularSystem {
    pub fn new(sys: &CompiledSystem) -> Result<Self, ReduceError> {
        let (n_fast, n_slow) = (sys.n_fast(), sys.n_slow());
        if n_fast == 0 || n_slow == 0 {
            return Err(ReduceError::Partition { n_fast, n_slow });
        }
        let eps = sys.epsilon();
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(ReduceError::Invalid(format!("perturbation parameter {eps}")));
        }
        Ok(ModularSystem {
            full: sys.clone(),
            zero: sys.with_epsilon(0.0),
            eps,
            n_fast,
            n_slow,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    pub fn with_epsilon(&self, eps: f64) -> Result<Self, ReduceError> {
        ModularSystem::new(&self.full.with_epsilon(eps))
    }

    pub fn n_fast(&self) -> usize {
        self.n_fast
    }

    pub fn n_slow(&self) -> usize {
        self.n_slow
    }

    pub fn fast_range(&self) -> Range<usize> {
        0..self.n_fast
    }

    pub fn slow_range(&self) -> Range<usize> {
        self.n_fast..self.n_fast + self.n_slow
    }

    /// The full system at the current `ε`.
    pub fn full(&self) -> &CompiledSystem {
        &self.full
    }

    /// The system at `ε = 0`; its fast rows are `f`.
    pub fn unperturbed(&self) -> &CompiledSystem {
        &self.zero
    }

    fn join(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        x.iter().chain(y).copied().collect()
    }

    pub fn f(&self, state: &[f64], t: f64) -> Result<Vec<f64>, EvalError> {
        let mut v = self.zero.eval_vec(state, t)?;
        v.truncate(self.n_fast);
        Ok(v)
    }

    /// `(g_x, g_y)` with `ε g_x = F_ε - F_0` on the fast rows and
    /// `ε g_y = G_ε` on the slow rows; `∂/∂ε` at `ε = 0`.
    pub fn g(&self, state: &[f64], t: f64) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
        let v = if self.eps > 0.0 {
            let a = self.full.eval_vec(state, t)?;
            let b = self.zero.eval_vec(state, t)?;
            let mut v: Vec<f64> = a.iter().zip(&b).map(|(p, q)| (p - q) / self.eps).collect();
            for (i, vi) in v.iter_mut().enumerate().skip(self.n_fast) {
                *vi = a[i] / self.eps;
            }
            v
        } else {
            let mut v = vec![0.0; state.len()];
            self.zero.dfde(state, t, &mut v)?;
            v
        };
        let (gx, gy) = v.split_at(self.n_fast);
        Ok((gx.to_vec(), gy.to_vec()))
    }

    /// Rows of `∂g_y/∂(x, y)`.
    fn g_y_jacobian(&self, state: &[f64], t: f64) -> Result<DMatrix<f64>, EvalError> {
        let (nf, ns) = (self.n_fast, self.n_slow);
        let j = if self.eps > 0.0 {
            self.full.jacobian(state, t)? / self.eps
        } else {
            self.zero.dfde_jacobian(state, t)?
        };
        Ok(j.view((nf, 0), (ns, nf + ns)).into_owned())
    }

    pub fn x_bar(&self, y: &[f64], t: f64) -> Result<Vec<f64>, ReduceError> {
        solve_slow_manifold(&self.zero, y, t, &vec![0.0; self.n_fast])
    }

    fn sensitivities_at(&self, x_bar: &[f64], y: &[f64], t: f64) -> Result<(DMatrix<f64>, DVector<f64>), ReduceError> {
        let s = self.join(x_bar, y);
        let jac = self.zero.jacobian(&s, t)?;
        let mut dt = vec![0.0; s.len()];
        self.zero.dfdt(&s, t, &mut dt)?;
        sensitivities(&jac, &dt, self.n_fast, y)
    }

    /// `ḡ(y, t) = g_y(x̄(y, t), y, t)`.
    pub fn g_bar(&self, y: &[f64], t: f64) -> Result<Vec<f64>, ReduceError> {
        let xb = self.x_bar(y, t)?;
        Ok(self.g(&self.join(&xb, y), t)?.1)
    }

    /// `∂ḡ/∂y = ∂g_y/∂y + ∂g_y/∂x S_y`.
    pub fn g_bar_jacobian(&self, y: &[f64], t: f64) -> Result<DMatrix<f64>, ReduceError> {
        let xb = self.x_bar(y, t)?;
        let (s_y, _) = self.sensitivities_at(&xb, y, t)?;
        let j = self.g_y_jacobian(&self.join(&xb, y), t)?;
        let (nf, ns) = (self.n_fast, self.n_slow);
        let gx = j.view((0, 0), (ns, nf)).into_owned();
        let gy = j.view((0, nf), (ns, ns)).into_owned();
        Ok(gy + gx * s_y)
    }

    /// Split the state `(x, y)` at time `t`.
    pub fn decompose(&self, state: &[f64], t: f64) -> Result<Decomposition, ReduceError> {
        let (x, y) = state.split_at(self.n_fast);
        let x_bar = self.x_bar(y, t)?;
        let x_tilde: Vec<f64> = x.iter().zip(&x_bar).map(|(a, b)| a - b).collect();
        let (s_y, s_t) = self.sensitivities_at(&x_bar, y, t)?;
        let f_tilde = self.f(state, t)?;
        let (g_x, g_y) = self.g(state, t)?;
        let g_bar = self.g(&self.join(&x_bar, y), t)?.1;
        let delta_g: Vec<f64> = g_y.iter().zip(&g_bar).map(|(a, b)| a - b).collect();
        let drift = &s_y * DVector::from_column_slice(&g_y);
        let mut delta_f = Vec::with_capacity(self.n_fast);
        for i in 0..self.n_fast {
            let time_term = if s_t[i] == 0.0 {
                0.0
            } else if self.eps > 0.0 {
                s_t[i] / self.eps
            } else {
                return Err(ReduceError::Invalid(
                    "time-varying slow manifold with zero perturbation parameter".into(),
                ));
            };
            delta_f.push(g_x[i] - drift[i] - time_term);
        }
        Ok(Decomposition {
            x_bar,
            x_tilde,
            f_tilde,
            g_bar,
            delta_g,
            delta_f,
            s_y,
            s_t: s_t.iter().copied().collect(),
        })
    }

    /// Reassemble `(ẋ, ẏ)` from a decomposition:
    /// `ẋ = f̃ + ε δf + S_y ε (ḡ + δg) + S_t`, `ẏ = ε (ḡ + δg)`.
    pub fn reconstruct(&self, d: &Decomposition) -> Vec<f64> {
        let e = self.eps;
        let ydot: Vec<f64> = d.g_bar.iter().zip(&d.delta_g).map(|(a, b)| e * (a + b)).collect();
        let lift = &d.s_y * DVector::from_column_slice(&ydot);
        let mut out: Vec<f64> = (0..self.n_fast)
            .map(|i| d.f_tilde[i] + e * d.delta_f[i] + lift[i] + d.s_t[i])
            .collect();
        out.extend(ydot);
        out
    }

    /// `ẏ = scale · ḡ(y, t)` as a vector field on the slow states.
    pub fn reduced(&self, scale: f64) -> ReducedField<'_> {
        ReducedField { sys: self, scale }
    }
}

/// The reduced slow dynamics `ẏ = scale · ḡ(y, t)`.
#[derive(Debug, Clone, Copy)]
pub struct ReducedField<'a> {
    sys: &'a ModularSystem,
    scale: f64,
}

fn as_eval(e: ReduceError) -> EvalError {
    match e {
        ReduceError::Eval(e) => e,
        other => EvalError::Domain { op: other.to_string() },
    }
}

impl VectorField for ReducedField<'_> {
    fn dim(&self) -> usize {
        self.sys.n_slow
    }

    fn eval(&self, y: &[f64], t: f64, out: &mut [f64]) -> Result<(), EvalError> {
        let g = self.sys.g_bar(y, t).map_err(as_eval)?;
        for (o, v) in out.iter_mut().zip(g) {
            *o = self.scale * v;
        }
        Ok(())
    }

    fn jacobian(&self, y: &[f64], t: f64) -> Result<DMatrix<f64>, EvalError> {
        Ok(self.sys.g_bar_jacobian(y, t).map_err(as_eval)? * self.scale)
    }
}
