use thiserror::Error;

use crate::expr::{parse_expr, Expr, FuncDef, Interval, ParseError, SystemSpec, DEFAULT_DOMAIN};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildingError {
    #[error("building needs at least one floor and one room, got {floors}x{rooms}")]
    Empty { floors: usize, rooms: usize },
    #[error("barycentric coordinates are defined for 2 floors x 2 rooms only, got {floors}x{rooms}")]
    Unsupported { floors: usize, rooms: usize },
    #[error("expected {expected} cross-floor conductances, got {found}")]
    Conductances { expected: usize, found: usize },
    #[error(transparent)]
    Invalid(#[from] ParseError),
}

/// Insulated building with `floors` floors of `rooms` rooms. Rooms on one
/// floor exchange heat through `f`; room `j` exchanges with the room above
/// through `ε g_j`.
///
/// Conductances are single-argument functions of `x`; `g` bodies may call
/// `f`, `g1`, ... and use `params`.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingModel {
    pub floors: usize,
    pub rooms: usize,
    pub f: Expr,
    pub g: Vec<Expr>,
    pub params: Vec<(String, f64)>,
    pub epsilon: f64,
}

fn body(src: &str) -> Expr {
    parse_expr(src).expect("built-in conductance")
}

impl BuildingModel {
    /// `f = g₁ = x + sin(x)/2`, `g₂ = −k g₁` with `k = 1/2`.
    pub fn reference(epsilon: f64) -> Self {
        BuildingModel {
            floors: 2,
            rooms: 2,
            f: body("x + 0.5*sin(x)"),
            g: vec![body("x + 0.5*sin(x)"), body("-k*g1(x)")],
            params: vec![("k".into(), 0.5)],
            epsilon,
        }
    }

    /// Same as [`reference`](Self::reference) with the intra-floor conductance
    /// evaluated at half the temperature difference. Its barycentric image is
    /// exactly the case-study system.
    pub fn reference_half_gap(epsilon: f64) -> Self {
        BuildingModel {
            f: body("x/2 + 0.5*sin(x/2)"),
            ..Self::reference(epsilon)
        }
    }

    fn functions(&self) -> Vec<FuncDef> {
        let x = vec!["x".to_string()];
        let mut out = vec![FuncDef {
            name: "f".into(),
            params: x.clone(),
            body: self.f.clone(),
        }];
        for (j, g) in self.g.iter().enumerate() {
            out.push(FuncDef {
                name: format!("g{}", j + 1),
                params: x.clone(),
                body: g.clone(),
            });
        }
        out
    }

    fn params_with_epsilon(&self) -> Vec<(String, f64)> {
        let mut p = vec![("epsilon".to_string(), self.epsilon)];
        p.extend(self.params.iter().cloned());
        p
    }

    pub fn state_name(&self, floor: usize, room: usize) -> String {
        if self.floors < 10 && self.rooms < 10 {
            format!("x{}{}", floor + 1, room + 1)
        } else {
            format!("x{}_{}", floor + 1, room + 1)
        }
    }

    fn check(&self) -> Result<(), BuildingError> {
        if self.floors == 0 || self.rooms == 0 {
            return Err(BuildingError::Empty {
                floors: self.floors,
                rooms: self.rooms,
            });
        }
        if self.g.len() != self.rooms {
            return Err(BuildingError::Conductances {
                expected: self.rooms,
                found: self.g.len(),
            });
        }
        Ok(())
    }

    /// Room temperatures `x_ij`, ordered floor by floor.
    pub fn raw(&self) -> Result<SystemSpec, BuildingError> {
        self.check()?;
        let (n, m) = (self.floors, self.rooms);
        let idx = |i: usize, j: usize| i * m + j;
        let names: Vec<String> = (0..n)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .map(|(i, j)| self.state_name(i, j))
            .collect();
        let sym = |i: usize, j: usize| Expr::sym(names[idx(i, j)].clone());
        let mut terms: Vec<Vec<(bool, Expr)>> = vec![Vec::new(); n * m];
        for i in 0..n {
            for a in 0..m {
                for b in a + 1..m {
                    let flux = Expr::Call(
                        "f".into(),
                        vec![Expr::Binary(
                            crate::expr::BinOp::Sub,
                            Box::new(sym(i, b)),
                            Box::new(sym(i, a)),
                        )],
                    );
                    terms[idx(i, a)].push((true, flux.clone()));
                    terms[idx(i, b)].push((false, flux));
                }
            }
        }
        for i in 0..n.saturating_sub(1) {
            for j in 0..m {
                let flux = Expr::Binary(
                    crate::expr::BinOp::Mul,
                    Box::new(Expr::sym("epsilon")),
                    Box::new(Expr::Call(
                        format!("g{}", j + 1),
                        vec![Expr::Binary(
                            crate::expr::BinOp::Sub,
                            Box::new(sym(i + 1, j)),
                            Box::new(sym(i, j)),
                        )],
                    )),
                );
                terms[idx(i, j)].push((true, flux.clone()));
                terms[idx(i + 1, j)].push((false, flux));
            }
        }
        let rhs = terms
            .into_iter()
            .map(|ts| {
                let mut acc: Option<Expr> = None;
                for (plus, e) in ts {
                    acc = Some(match (acc, plus) {
                        (None, true) => e,
                        (None, false) => Expr::Unary(crate::expr::UnaryOp::Neg, Box::new(e)),
                        (Some(a), true) => Expr::Binary(crate::expr::BinOp::Add, Box::new(a), Box::new(e)),
                        (Some(a), false) => Expr::Binary(crate::expr::BinOp::Sub, Box::new(a), Box::new(e)),
                    });
                }
                acc.unwrap_or(Expr::Const(0.0))
            })
            .collect();
        let spec = SystemSpec {
            name: "building_raw".into(),
            params: self.params_with_epsilon(),
            epsilon: "epsilon".into(),
            fast: Vec::new(),
            slow: names,
            inputs: Vec::new(),
            functions: self.functions(),
            rhs,
            domain: vec![Interval::new(DEFAULT_DOMAIN.0, DEFAULT_DOMAIN.1); n * m],
        };
        spec.validate()?;
        Ok(spec)
    }

    fn two_by_two(&self, name: &str, fast_arg: &str) -> Result<SystemSpec, BuildingError> {
        self.check()?;
        if self.floors != 2 || self.rooms != 2 {
            return Err(BuildingError::Unsupported {
                floors: self.floors,
                rooms: self.rooms,
            });
        }
        let d1 = fast_arg.replace('#', "d1");
        let d2 = fast_arg.replace('#', "d2");
        let rhs = vec![
            body(&format!("-f({d1}) + (epsilon/2)*(g2(D + d2 - d1) - g1(D + d1 - d2))")),
            body(&format!("-f({d2}) + (epsilon/2)*(g1(D + d1 - d2) - g2(D + d2 - d1))")),
            body("-epsilon*(g1(D + d1 - d2) + g2(D + d2 - d1))"),
        ];
        let spec = SystemSpec {
            name: name.into(),
            params: self.params_with_epsilon(),
            epsilon: "epsilon".into(),
            fast: vec!["d1".into(), "d2".into()],
            slow: vec!["D".into()],
            inputs: Vec::new(),
            functions: self.functions(),
            rhs,
            domain: vec![Interval::new(DEFAULT_DOMAIN.0, DEFAULT_DOMAIN.1); 3],
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Exact image of [`raw`](Self::raw) under
    /// `δᵢ = (x_i2 − x_i1)/2`, `Δ = ((x22 + x21) − (x12 + x11))/2`;
    /// the fast terms read `−f(2δᵢ)`.
    pub fn barycentric(&self) -> Result<SystemSpec, BuildingError> {
        self.two_by_two("building_barycentric", "2*#")
    }

    /// The standard-form case study with fast terms `−f(δᵢ)`.
    pub fn case_study(&self) -> Result<SystemSpec, BuildingError> {
        self.two_by_two("building", "#")
    }

    /// `(x11, x12, x21, x22) ↦ (δ₁, δ₂, Δ)`.
    pub fn to_barycentric(x: &[f64]) -> [f64; 3] {
        [
            0.5 * (x[1] - x[0]),
            0.5 * (x[3] - x[2]),
            0.5 * ((x[3] + x[2]) - (x[1] + x[0])),
        ]
    }

    /// Inverse of [`to_barycentric`](Self::to_barycentric) given the mean
    /// temperature.
    pub fn from_barycentric(b: &[f64], mean: f64) -> [f64; 4] {
        let (a1, a2) = (mean - 0.5 * b[2], mean + 0.5 * b[2]);
        [a1 - b[0], a1 + b[0], a2 - b[1], a2 + b[1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{CompiledSystem, VectorField};

    #[test]
    fn coordinate_maps() {
        assert_eq!(BuildingModel::to_barycentric(&[1.0, 2.0, 3.0, 4.0]), [0.5, 0.5, 2.0]);
        assert_eq!(BuildingModel::to_barycentric(&[7.0; 4]), [0.0, 0.0, 0.0]);
        let x = [1.0, -2.0, 0.5, 3.0];
        let mean = x.iter().sum::<f64>() / 4.0;
        let back = BuildingModel::from_barycentric(&BuildingModel::to_barycentric(&x), mean);
        for (a, b) in x.iter().zip(back) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn raw_first_room() {
        let sys = CompiledSystem::new(&BuildingModel::reference(0.1).raw().unwrap()).unwrap();
        let dx = sys.eval_vec(&[1.0, 2.0, 3.0, 4.0], 0.0).unwrap();
        let f = |x: f64| x + 0.5 * x.sin();
        assert!((dx[0] - (f(1.0) + 0.1 * f(2.0))).abs() < 1e-12);
        assert!((dx[0] - 1.6661).abs() < 2e-4);
    }

    #[test]
    fn jacobian_columns_sum_to_zero() {
        for (n, m) in [(1, 3), (2, 2), (3, 2), (2, 4)] {
            let model = BuildingModel {
                floors: n,
                rooms: m,
                g: (0..m).map(|_| body("x + 0.5*sin(x)")).collect(),
                ..BuildingModel::reference(0.3)
            };
            let sys = CompiledSystem::new(&model.raw().unwrap()).unwrap();
            let x: Vec<f64> = (0..n * m).map(|k| (k as f64 * 1.7).sin() * 3.0).collect();
            let jac = sys.jacobian(&x, 0.0).unwrap();
            for j in 0..n * m {
                assert!(jac.column(j).sum().abs() < 1e-12);
            }
            let dx = sys.eval_vec(&x, 0.0).unwrap();
            assert!(dx.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn decoupled_floors_at_zero_epsilon() {
        let model = BuildingModel {
            f: body("x"),
            g: vec![body("x"), body("x")],
            ..BuildingModel::reference(0.0)
        };
        let sys = CompiledSystem::new(&model.raw().unwrap()).unwrap();
        let jac = sys.jacobian(&[0.3, 1.0, -2.0, 4.0], 0.0).unwrap();
        for (i, j) in [(0, 2), (0, 3), (1, 2), (1, 3), (2, 0), (3, 1)] {
            assert_eq!(jac[(i, j)], 0.0);
        }
    }

    #[test]
    fn case_study_values() {
        let sys = CompiledSystem::new(&BuildingModel::reference(0.1).case_study().unwrap()).unwrap();
        assert_eq!(sys.eval_vec(&[0.0; 3], 0.0).unwrap(), vec![0.0; 3]);
        let d = sys.eval_vec(&[0.0, 0.0, 1.0], 0.0).unwrap();
        let g1 = 1.0 + 0.5 * 1f64.sin();
        assert!((d[2] + 0.1 * 0.5 * g1).abs() < 1e-12);
        assert!((d[2] + 0.0710).abs() < 1e-4);
        let j = sys.jacobian(&[0.0; 3], 0.0).unwrap();
        assert!((j[(0, 0)] + 1.5375).abs() < 1e-12);
    }

    #[test]
    fn barycentric_needs_two_by_two() {
        let model = BuildingModel {
            floors: 3,
            ..BuildingModel::reference(0.1)
        };
        assert!(matches!(model.barycentric(), Err(BuildingError::Unsupported { .. })));
        assert!(model.raw().is_ok());
    }
}
