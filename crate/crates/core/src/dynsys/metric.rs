use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::expr::{differentiate, Compiled, EvalError, Expr, SlotMap, TIME};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("metric is singular at x = {x:?}, t = {t}")]
    Singular { x: Vec<f64>, t: f64 },
    #[error("metric has dimension {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid metric description `{0}`")]
    Parse(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

type ThetaFn = dyn Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync;

#[derive(Debug)]
pub struct SymbolicMetric {
    n: usize,
    slots: SlotMap,
    theta: Vec<Compiled>,
    dtheta_dt: Vec<Compiled>,
    // one n x n block per state
    dtheta_dx: Vec<Vec<Compiled>>,
}

/// Coordinate transform `Θ(x, t)`; the contraction metric is `ΘᵀΘ`.
#[derive(Clone)]
pub enum Metric {
    Identity(usize),
    Constant(DMatrix<f64>),
    /// Entries given as expressions in the states and `t`; `Θ̇` is exact.
    Symbolic(Arc<SymbolicMetric>),
    /// Arbitrary matrix function; `Θ̇` is a central difference along the
    /// flow with step 1e-6.
    Function {
        dim: usize,
        theta: Arc<ThetaFn>,
    },
}

impl std::fmt::Debug for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Metric({})", self.describe())
    }
}

const FD_STEP: f64 = 1e-6;

impl Metric {
    pub fn identity(n: usize) -> Self {
        Metric::Identity(n)
    }

    pub fn constant(theta: DMatrix<f64>) -> Result<Self, MetricError> {
        if !theta.is_square() {
            return Err(MetricError::Dimension {
                expected: theta.nrows(),
                found: theta.ncols(),
            });
        }
        if linalg::cond2(&theta).is_none() {
            return Err(MetricError::Singular { x: Vec::new(), t: 0.0 });
        }
        Ok(Metric::Constant(theta))
    }

    pub fn diagonal(d: &[f64]) -> Result<Self, MetricError> {
        Metric::constant(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)))
    }

    /// `entries[i][j]` may reference the given state names and `t`.
    pub fn symbolic(entries: &[Vec<Expr>], states: &[String]) -> Result<Self, MetricError> {
        let n = entries.len();
        if n != states.len() {
            return Err(MetricError::Dimension {
                expected: states.len(),
                found: n,
            });
        }
        let mut slots = SlotMap::new(states.iter().map(String::as_str));
        slots.push(TIME);
        let none = Default::default();
        let mut theta = Vec::with_capacity(n * n);
        let mut dtheta_dt = Vec::with_capacity(n * n);
        let mut dtheta_dx = vec![Vec::with_capacity(n * n); n];
        for row in entries {
            if row.len() != n {
                return Err(MetricError::Dimension {
                    expected: n,
                    found: row.len(),
                });
            }
            for e in row {
                theta.push(Compiled::new(e, &slots)?);
                let dt = differentiate(e, TIME, &none).map_err(|e| MetricError::Parse(e.to_string()))?;
                dtheta_dt.push(Compiled::new(&dt, &slots)?);
                for (k, s) in states.iter().enumerate() {
                    let d = differentiate(e, s, &none).map_err(|e| MetricError::Parse(e.to_string()))?;
                    dtheta_dx[k].push(Compiled::new(&d, &slots)?);
                }
            }
        }
        Ok(Metric::Symbolic(Arc::new(SymbolicMetric {
            n,
            slots,
            theta,
            dtheta_dt,
            dtheta_dx,
        })))
    }

    pub fn function(dim: usize, theta: impl Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        Metric::Function {
            dim,
            theta: Arc::new(theta),
        }
    }

    /// Parse `identity`, `diag:a,b,...` or `matrix:a,b;c,d` (rows separated
    /// by `;`).
    pub fn parse(desc: &str, n: usize) -> Result<Self, MetricError> {
        let bad = || MetricError::Parse(desc.to_owned());
        let nums = |s: &str| -> Result<Vec<f64>, MetricError> {
            s.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
                .collect()
        };
        let m = if desc.trim() == "identity" {
            Metric::Identity(n)
        } else if let Some(rest) = desc.strip_prefix("diag:") {
            Metric::diagonal(&nums(rest)?)?
        } else if let Some(rest) = desc.strip_prefix("matrix:") {
            let rows: Vec<Vec<f64>> = rest.split(';').map(nums).collect::<Result<_, _>>()?;
            let r = rows.len();
            if rows.iter().any(|row| row.len() != r) {
                return Err(bad());
            }
            Metric::constant(DMatrix::from_fn(r, r, |i, j| rows[i][j]))?
        } else {
            return Err(bad());
        };
        if m.dim() != n {
            return Err(MetricError::Dimension {
                expected: n,
                found: m.dim(),
            });
        }
        Ok(m)
    }

    pub fn describe(&self) -> String {
        match self {
            Metric::Identity(n) => format!("identity({n})"),
            Metric::Constant(m) => {
                let rows: Vec<String> = m
                    .row_iter()
                    .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
                    .collect();
                format!("matrix:{}", rows.join(";"))
            }
            Metric::Symbolic(s) => format!("symbolic({})", s.n),
            Metric::Function { dim, .. } => format!("function({dim})"),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Metric::Identity(n) => *n,
            Metric::Constant(m) => m.nrows(),
            Metric::Symbolic(s) => s.n,
            Metric::Function { dim, .. } => *dim,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Metric::Identity(_) | Metric::Constant(_))
    }

    pub fn theta(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>, MetricError> {
        Ok(match self {
            Metric::Identity(n) => DMatrix::identity(*n, *n),
            Metric::Constant(m) => m.clone(),
            Metric::Symbolic(s) => s.matrix(&s.theta, x, t)?,
            Metric::Function { theta, .. } => theta(x, t),
        })
    }

    /// Total derivative of `Θ` along the flow `ẋ = xdot`.
    pub fn theta_dot(&self, x: &[f64], t: f64, xdot: &[f64]) -> Result<DMatrix<f64>, MetricError> {
        let n = self.dim();
        Ok(match self {
            Metric::Identity(_) | Metric::Constant(_) => DMatrix::zeros(n, n),
            Metric::Symbolic(s) => {
                let mut m = s.matrix(&s.dtheta_dt, x, t)?;
                for (k, block) in s.dtheta_dx.iter().enumerate() {
                    if xdot[k] != 0.0 {
                        m += s.matrix(block, x, t)? * xdot[k];
                    }
                }
                m
            }
            Metric::Function { theta, .. } => {
                let h = FD_STEP;
                let xp: Vec<f64> = x.iter().zip(xdot).map(|(a, b)| a + h * b).collect();
                let xm: Vec<f64> = x.iter().zip(xdot).map(|(a, b)| a - h * b).collect();
                (theta(&xp, t + h) - theta(&xm, t - h)) / (2.0 * h)
            }
        })
    }

    /// `F = Θ̇Θ⁻¹ + Θ J Θ⁻¹` for the Jacobian `jac` at `(x, t)` with
    /// `ẋ = xdot`.
    pub fn generalized_jacobian(
        &self,
        jac: &DMatrix<f64>,
        x: &[f64],
        t: f64,
        xdot: &[f64],
    ) -> Result<DMatrix<f64>, MetricError> {
        if let Metric::Identity(_) = self {
            return Ok(jac.clone());
        }
        let theta = self.theta(x, t)?;
        let inv = theta
            .clone()
            .try_inverse()
            .ok_or_else(|| MetricError::Singular { x: x.to_vec(), t })?;
        let mut f = &theta * jac * &inv;
        if !self.is_constant() {
            f += self.theta_dot(x, t, xdot)? * &inv;
        }
        Ok(f)
    }

    /// Spectral condition number of `Θ(x, t)`.
    pub fn condition(&self, x: &[f64], t: f64) -> Result<f64, MetricError> {
        match self {
            Metric::Identity(_) => Ok(1.0),
            _ => linalg::cond2(&self.theta(x, t)?).ok_or_else(|| MetricError::Singular { x: x.to_vec(), t }),
        }
    }

    /// `c Θ`.
    pub fn scaled(&self, c: f64) -> Metric {
        match self {
            Metric::Identity(n) => Metric::Constant(DMatrix::identity(*n, *n) * c),
            Metric::Constant(m) => Metric::Constant(m * c),
            other => {
                let inner = other.clone();
                Metric::function(other.dim(), move |x, t| {
                    inner.theta(x, t).expect("metric evaluation") * c
                })
            }
        }
    }

    /// Block-diagonal composition; block `k` sees the matching slice of the
    /// state.
    pub fn block_diag(blocks: &[Metric]) -> Metric {
        let n: usize = blocks.iter().map(Metric::dim).sum();
        if blocks.iter().all(Metric::is_constant) {
            let mut m = DMatrix::zeros(n, n);
            let mut off = 0;
            for b in blocks {
                let d = b.dim();
                let theta = b.theta(&[], 0.0).expect("constant metric");
                m.view_mut((off, off), (d, d)).copy_from(&theta);
                off += d;
            }
            return Metric::Constant(m);
        }
        let blocks = blocks.to_vec();
        Metric::function(n, move |x, t| {
            let mut m = DMatrix::zeros(n, n);
            let mut off = 0;
            for b in &blocks {
                let d = b.dim();
                let theta = b.theta(&x[off..off + d], t).expect("metric evaluation");
                m.view_mut((off, off), (d, d)).copy_from(&theta);
                off += d;
            }
            m
        })
    }
}

impl SymbolicMetric {
    fn matrix(&self, progs: &[Compiled], x: &[f64], t: f64) -> Result<DMatrix<f64>, EvalError> {
        let mut v = vec![0.0; self.slots.len()];
        v[..self.n].copy_from_slice(&x[..self.n]);
        v[self.n] = t;
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m[(i, j)] = progs[i * self.n + j].eval(&v)?;
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    #[test]
    fn parse_descriptions() {
        assert_eq!(Metric::parse("identity", 3).unwrap().dim(), 3);
        let d = Metric::parse("diag:1,2", 2).unwrap();
        assert!((d.condition(&[0.0, 0.0], 0.0).unwrap() - 2.0).abs() < 1e-12);
        let m = Metric::parse("matrix:1,0.5;0,1", 2).unwrap();
        assert_eq!(m.theta(&[], 0.0).unwrap()[(0, 1)], 0.5);
        assert!(Metric::parse("diag:1,2", 3).is_err());
        assert!(Metric::parse("matrix:1,1;1,1", 2).is_err());
        assert!(Metric::parse("nonsense", 2).is_err());
    }

    #[test]
    fn symbolic_and_function_rates_agree() {
        let states = vec!["x".to_string(), "y".to_string()];
        let e = |s: &str| parse_expr(s).unwrap();
        let entries = vec![vec![e("1 + 0.1*x^2"), e("0.2*sin(t)")], vec![e("0"), e("2 + y*t")]];
        let sym = Metric::symbolic(&entries, &states).unwrap();
        let fun = Metric::function(2, |x, t| {
            DMatrix::from_row_slice(2, 2, &[1.0 + 0.1 * x[0] * x[0], 0.2 * t.sin(), 0.0, 2.0 + x[1] * t])
        });
        let (x, t, xdot) = ([0.4, -0.3], 0.7, [1.5, -2.0]);
        let a = sym.theta_dot(&x, t, &xdot).unwrap();
        let b = fun.theta_dot(&x, t, &xdot).unwrap();
        assert!((a - b).abs().max() < 1e-7);
    }

    #[test]
    fn block_diagonal_composition() {
        let m = Metric::block_diag(&[Metric::diagonal(&[2.0]).unwrap(), Metric::identity(2)]);
        let theta = m.theta(&[0.0; 3], 0.0).unwrap();
        assert_eq!(
            theta,
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0, 1.0]))
        );
    }

    #[test]
    fn scaling_leaves_generalized_jacobian_unchanged() {
        let j = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
        let m = Metric::parse("matrix:1,0.3;0,2", 2).unwrap();
        let a = m.generalized_jacobian(&j, &[0.0, 0.0], 0.0, &[0.0, 0.0]).unwrap();
        let b = m
            .scaled(7.0)
            .generalized_jacobian(&j, &[0.0, 0.0], 0.0, &[0.0, 0.0])
            .unwrap();
        assert!((a - b).abs().max() < 1e-12);
    }
}
