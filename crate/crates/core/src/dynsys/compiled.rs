use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::{CompileError, VectorField};
use crate::expr::{differentiate, Compiled, EvalError, Expr, SlotMap, SystemSpec, TIME};

struct Programs {
    rhs: Vec<Compiled>,
    // row-major n x n
    jac: Vec<Compiled>,
    dt: Vec<Compiled>,
    deps: Vec<Compiled>,
    deps_jac: Vec<Compiled>,
    exprs: Vec<Expr>,
}

/// A [`SystemSpec`] lowered to slot programs: right-hand side, symbolic
/// Jacobian, and derivatives with respect to time and the perturbation
/// parameter.
///
/// Slots are laid out as `[states..., t, params...]`. Cloning and
/// re-parameterizing are cheap; the programs are shared.
#[derive(Clone)]
pub struct CompiledSystem {
    spec: Arc<SystemSpec>,
    programs: Arc<Programs>,
    slots: SlotMap,
    base: Vec<f64>,
    n: usize,
    t_slot: usize,
    eps_slot: usize,
}

impl std::fmt::Debug for CompiledSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompiledSystem")
            .field("name", &self.spec.name)
            .field("n", &self.n)
            .field("params", &self.params())
            .finish()
    }
}

impl CompiledSystem {
    pub fn new(spec: &SystemSpec) -> Result<Self, CompileError> {
        let n = spec.n_states();
        let mut slots = SlotMap::new(spec.states());
        let t_slot = slots.push(TIME);
        for (name, _) in &spec.params {
            slots.push(name.as_str());
        }
        let eps_slot = slots.push(spec.epsilon.as_str());
        let mut base = vec![0.0; slots.len()];
        for (name, v) in &spec.params {
            base[slots.get(name).expect("param slot")] = *v;
        }
        if eps_slot >= n + 1 + spec.params.len() {
            base[eps_slot] = spec.epsilon_value();
        }

        let exprs = spec.expanded_rhs()?;
        let states = spec.state_names();
        let compile = |e: &Expr| Compiled::new(e, &slots);
        let mut rhs = Vec::with_capacity(n);
        let mut jac = Vec::with_capacity(n * n);
        let mut dt = Vec::with_capacity(n);
        let mut deps = Vec::with_capacity(n);
        let mut deps_jac = Vec::with_capacity(n * n);
        let none = Default::default();
        for e in &exprs {
            rhs.push(compile(e)?);
            for s in &states {
                jac.push(compile(&differentiate(e, s, &none)?)?);
            }
            dt.push(compile(&differentiate(e, TIME, &none)?)?);
            let de = differentiate(e, &spec.epsilon, &none)?;
            deps.push(compile(&de)?);
            for s in &states {
                deps_jac.push(compile(&differentiate(&de, s, &none)?)?);
            }
        }
        Ok(CompiledSystem {
            spec: Arc::new(spec.clone()),
            programs: Arc::new(Programs {
                rhs,
                jac,
                dt,
                deps,
                deps_jac,
                exprs,
            }),
            slots,
            base,
            n,
            t_slot,
            eps_slot,
        })
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn n_fast(&self) -> usize {
        self.spec.n_fast()
    }

    pub fn n_slow(&self) -> usize {
        self.spec.n_slow()
    }

    pub fn fast_range(&self) -> Range<usize> {
        0..self.n_fast()
    }

    pub fn slow_range(&self) -> Range<usize> {
        self.n_fast()..self.n
    }

    pub fn state_names(&self) -> Vec<String> {
        self.spec.state_names()
    }

    /// Right-hand side expressions with inputs and user functions expanded.
    pub fn rhs_exprs(&self) -> &[Expr] {
        &self.programs.exprs
    }

    pub fn params(&self) -> Vec<(String, f64)> {
        self.slots.names()[self.n + 1..]
            .iter()
            .zip(&self.base[self.n + 1..])
            .map(|(n, v)| (n.clone(), *v))
            .collect()
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        let i = self.slots.get(name)?;
        (i > self.t_slot).then(|| self.base[i])
    }

    pub fn epsilon(&self) -> f64 {
        self.base[self.eps_slot]
    }

    pub fn with_param(&self, name: &str, value: f64) -> Result<Self, CompileError> {
        match self.slots.get(name) {
            Some(i) if i > self.t_slot => {
                let mut out = self.clone();
                out.base[i] = value;
                Ok(out)
            }
            _ => Err(CompileError::UnknownParam(name.to_owned())),
        }
    }

    pub fn with_epsilon(&self, value: f64) -> Self {
        let mut out = self.clone();
        out.base[self.eps_slot] = value;
        out
    }

    fn values(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut v = self.base.clone();
        v[..self.n].copy_from_slice(&x[..self.n]);
        v[self.t_slot] = t;
        v
    }

    fn eval_all(&self, progs: &[Compiled], x: &[f64], t: f64, out: &mut [f64]) -> Result<(), EvalError> {
        let v = self.values(x, t);
        for (o, p) in out.iter_mut().zip(progs) {
            *o = p.eval(&v)?;
        }
        Ok(())
    }

    fn matrix(&self, progs: &[Compiled], x: &[f64], t: f64) -> Result<DMatrix<f64>, EvalError> {
        let v = self.values(x, t);
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m[(i, j)] = progs[i * self.n + j].eval(&v)?;
            }
        }
        Ok(m)
    }

    /// `∂F/∂t` (explicit time dependence, through inputs).
    pub fn dfdt(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<(), EvalError> {
        self.eval_all(&self.programs.dt, x, t, out)
    }

    /// `∂F/∂ε` at the current parameter values.
    pub fn dfde(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<(), EvalError> {
        self.eval_all(&self.programs.deps, x, t, out)
    }

    /// `∂²F/∂ε∂x`.
    pub fn dfde_jacobian(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>, EvalError> {
        self.matrix(&self.programs.deps_jac, x, t)
    }
}

impl VectorField for CompiledSystem {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<(), EvalError> {
        self.eval_all(&self.programs.rhs, x, t, out)
    }

    fn jacobian(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>, EvalError> {
        self.matrix(&self.programs.jac, x, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::fd_jacobian;
    use crate::expr::parse_system;

    #[test]
    fn single_state() {
        let sys = CompiledSystem::new(&parse_system("dyn x = -x").unwrap()).unwrap();
        assert_eq!(sys.eval_vec(&[3.0], 0.0).unwrap(), vec![-3.0]);
        assert_eq!(sys.jacobian(&[3.0], 0.0).unwrap()[(0, 0)], -1.0);
        assert_eq!(sys.epsilon(), 1.0);
    }

    #[test]
    fn time_and_epsilon_derivatives() {
        let src = "params { eps = 0.2; a = 3 }\nperturbation eps\ninput u(t) = sin(a*t)\nfast x\nslow y\ndyn x = -(x - y) + u + eps*x^2\ndyn y = -eps*y\n";
        let sys = CompiledSystem::new(&parse_system(src).unwrap()).unwrap();
        let (x, t) = ([0.5, -1.0], 0.3);
        let mut d = [0.0; 2];
        sys.dfdt(&x, t, &mut d).unwrap();
        assert!((d[0] - 3.0 * (0.9f64).cos()).abs() < 1e-12);
        assert_eq!(d[1], 0.0);
        sys.dfde(&x, t, &mut d).unwrap();
        assert_eq!(d, [0.25, 1.0]);
        let dj = sys.dfde_jacobian(&x, t).unwrap();
        assert_eq!(dj[(0, 0)], 1.0);
        assert_eq!(dj[(1, 1)], -1.0);
        let fd = fd_jacobian(&sys, &x, t).unwrap();
        assert!((fd - sys.jacobian(&x, t).unwrap()).abs().max() < 1e-8);
        let faster = sys.with_param("a", 1.0).unwrap().with_epsilon(0.0);
        assert_eq!(faster.epsilon(), 0.0);
        assert_eq!(faster.param("a"), Some(1.0));
        assert_eq!(sys.param("a"), Some(3.0));
        assert!(sys.with_param("x", 1.0).is_err());
    }
}
