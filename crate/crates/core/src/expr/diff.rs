use std::collections::HashMap;

use thiserror::Error;

use super::{BinOp, Expr, FuncDef, UnaryOp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("function `{name}` expects {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },
}

/// Exact symbolic derivative of `e` with respect to the symbol `wrt`.
///
/// User-function applications are differentiated with the multivariate chain
/// rule: the body is differentiated with respect to each formal parameter and
/// the actual arguments are substituted. `abs'(u) = sign(u)` with
/// `sign(0) = 0`.
pub fn differentiate(e: &Expr, wrt: &str, funcs: &HashMap<String, FuncDef>) -> Result<Expr, DiffError> {
    use UnaryOp::*;
    Ok(match e {
        Expr::Const(_) => Expr::c(0.0),
        Expr::Sym(s) => Expr::c(if s == wrt { 1.0 } else { 0.0 }),
        Expr::Unary(op, a) => {
            let da = differentiate(a, wrt, funcs)?;
            if da.as_const() == Some(0.0) {
                return Ok(Expr::c(0.0));
            }
            let a = (**a).clone();
            let outer = match op {
                Neg => return Ok(Expr::neg(da)),
                Sin => Expr::unary(Cos, a),
                Cos => Expr::neg(Expr::unary(Sin, a)),
                Tanh => Expr::sub(Expr::c(1.0), Expr::pow(Expr::unary(Tanh, a), Expr::c(2.0))),
                Exp => Expr::unary(Exp, a),
                Log => return Ok(Expr::div(da, a)),
                Abs => Expr::unary(Sign, a),
                Sqrt => Expr::div(Expr::c(0.5), Expr::unary(Sqrt, a)),
                // piecewise constant
                Sign => return Ok(Expr::c(0.0)),
            };
            Expr::mul(outer, da)
        }
        Expr::Binary(op, a, b) => {
            let da = differentiate(a, wrt, funcs)?;
            let db = differentiate(b, wrt, funcs)?;
            let (a, b) = ((**a).clone(), (**b).clone());
            match op {
                BinOp::Add => Expr::add(da, db),
                BinOp::Sub => Expr::sub(da, db),
                BinOp::Mul => Expr::add(Expr::mul(da, b), Expr::mul(a, db)),
                BinOp::Div => Expr::div(
                    Expr::sub(Expr::mul(da, b.clone()), Expr::mul(a, db)),
                    Expr::pow(b, Expr::c(2.0)),
                ),
                BinOp::Pow => diff_pow(a, b, da, db),
            }
        }
        Expr::Call(name, args) => {
            let def = funcs
                .get(name)
                .ok_or_else(|| DiffError::UnknownFunction(name.clone()))?;
            if def.params.len() != args.len() {
                return Err(DiffError::Arity {
                    name: name.clone(),
                    expected: def.params.len(),
                    found: args.len(),
                });
            }
            let actuals: HashMap<String, Expr> = def.params.iter().cloned().zip(args.iter().cloned()).collect();
            let mut total = Expr::c(0.0);
            // globals referenced by the body (parameters, time) unless shadowed
            if !def.params.iter().any(|p| p == wrt) {
                total = differentiate(&def.body, wrt, funcs)?.substitute(&actuals);
            }
            for (param, arg) in def.params.iter().zip(args) {
                let darg = differentiate(arg, wrt, funcs)?;
                if darg.as_const() == Some(0.0) {
                    continue;
                }
                let partial = differentiate(&def.body, param, funcs)?.substitute(&actuals);
                total = Expr::add(total, Expr::mul(partial, darg));
            }
            total
        }
    })
}

fn diff_pow(a: Expr, b: Expr, da: Expr, db: Expr) -> Expr {
    let db_zero = db.as_const() == Some(0.0);
    let da_zero = da.as_const() == Some(0.0);
    if db_zero {
        // b * a^(b-1) * a'
        let exp = Expr::sub(b.clone(), Expr::c(1.0));
        return Expr::mul(Expr::mul(b, Expr::pow(a, exp)), da);
    }
    let ln_a = Expr::unary(UnaryOp::Log, a.clone());
    let pow = Expr::pow(a.clone(), b.clone());
    if da_zero {
        return Expr::mul(Expr::mul(pow, ln_a), db);
    }
    // a^b * (b' ln a + b a'/a)
    Expr::mul(pow, Expr::add(Expr::mul(db, ln_a), Expr::div(Expr::mul(b, da), a)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{eval, parse_expr};

    fn d(src: &str, wrt: &str) -> Expr {
        differentiate(&parse_expr(src).unwrap(), wrt, &HashMap::new()).unwrap()
    }

    fn at(e: &Expr, pairs: &[(&str, f64)]) -> f64 {
        let env = pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        eval(e, &env, &HashMap::new()).unwrap()
    }

    #[test]
    fn textbook_derivatives() {
        assert_eq!(d("x + 0.5*sin(x)", "x"), parse_expr("1 + 0.5*cos(x)").unwrap());
        assert_eq!(d("3.5", "x"), Expr::c(0.0));
        assert_eq!(d("y^2", "x"), Expr::c(0.0));
    }

    #[test]
    fn abs_has_zero_subgradient_at_origin() {
        let e = d("abs(x)", "x");
        assert_eq!(at(&e, &[("x", 0.0)]), 0.0);
        assert_eq!(at(&e, &[("x", -2.0)]), -1.0);
        assert_eq!(at(&e, &[("x", 2.0)]), 1.0);
    }

    #[test]
    fn general_power_rule() {
        let e = d("x^x", "x");
        let x: f64 = 1.7;
        let expected = x.powf(x) * (x.ln() + 1.0);
        assert!((at(&e, &[("x", x)]) - expected).abs() < 1e-12);
        let e = d("2^x", "x");
        assert!((at(&e, &[("x", x)]) - 2f64.powf(x) * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn chain_rule_through_user_function() {
        let mut funcs = HashMap::new();
        funcs.insert(
            "g".to_string(),
            FuncDef {
                name: "g".into(),
                params: vec!["x".into(), "y".into()],
                body: parse_expr("x*y^2").unwrap(),
            },
        );
        // formal `x` must not capture the outer `x`
        let e = parse_expr("g(2*x, x + 1)").unwrap();
        let de = differentiate(&e, "x", &funcs).unwrap();
        let env = [("x".to_string(), 0.3)].into_iter().collect();
        let v = eval(&de, &env, &funcs).unwrap();
        // d/dx 2x (x+1)^2 = 2(x+1)^2 + 4x(x+1)
        let expected = 2.0 * 1.3f64.powi(2) + 4.0 * 0.3 * 1.3;
        assert!((v - expected).abs() < 1e-12);
    }
}
