use std::collections::HashMap;

use thiserror::Error;

use super::{BinOp, Expr, FuncDef, UnaryOp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound symbol `{0}`")]
    Unbound(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("function `{name}` expects {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("domain error: {op} produced a non-finite value")]
    Domain { op: String },
}

pub(crate) fn domain(op: impl Into<String>) -> EvalError {
    EvalError::Domain { op: op.into() }
}

/// Evaluate `e` with symbols bound by `env`. User functions are looked up in
/// `funcs`; their formal parameters shadow `env`.
///
/// Any non-finite intermediate result is reported as [`EvalError::Domain`].
pub fn eval(e: &Expr, env: &HashMap<String, f64>, funcs: &HashMap<String, FuncDef>) -> Result<f64, EvalError> {
    let v = match e {
        Expr::Const(v) => *v,
        Expr::Sym(s) => *env.get(s).ok_or_else(|| EvalError::Unbound(s.clone()))?,
        Expr::Unary(op, a) => {
            let x = eval(a, env, funcs)?;
            checked_unary(*op, x)?
        }
        Expr::Binary(op, a, b) => {
            let x = eval(a, env, funcs)?;
            let y = eval(b, env, funcs)?;
            checked_binary(*op, x, y)?
        }
        Expr::Call(name, args) => {
            let def = funcs
                .get(name)
                .ok_or_else(|| EvalError::UnknownFunction(name.clone()))?;
            if def.params.len() != args.len() {
                return Err(EvalError::Arity {
                    name: name.clone(),
                    expected: def.params.len(),
                    found: args.len(),
                });
            }
            let mut local = env.clone();
            for (p, a) in def.params.iter().zip(args) {
                let v = eval(a, env, funcs)?;
                local.insert(p.clone(), v);
            }
            eval(&def.body, &local, funcs)?
        }
    };
    Ok(v)
}

#[inline]
pub(crate) fn checked_unary(op: UnaryOp, x: f64) -> Result<f64, EvalError> {
    let r = op.apply(x);
    if r.is_finite() {
        Ok(r)
    } else {
        Err(domain(format!("{}({x})", op.name())))
    }
}

#[inline]
pub(crate) fn checked_binary(op: BinOp, x: f64, y: f64) -> Result<f64, EvalError> {
    let r = op.apply(x, y);
    if r.is_finite() {
        Ok(r)
    } else {
        Err(domain(format!("{x} {} {y}", op.symbol())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    fn env(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn conductance_values() {
        let e = parse_expr("x + 0.5*sin(x)").unwrap();
        let none = HashMap::new();
        assert_eq!(eval(&e, &env(&[("x", 0.0)]), &none).unwrap(), 0.0);
        let at_pi = eval(&e, &env(&[("x", std::f64::consts::PI)]), &none).unwrap();
        assert!((at_pi - std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn unbound_and_domain_errors() {
        let none = HashMap::new();
        let e = parse_expr("x + z").unwrap();
        assert_eq!(
            eval(&e, &env(&[("x", 1.0)]), &none),
            Err(EvalError::Unbound("z".into()))
        );
        let e = parse_expr("log(x)").unwrap();
        assert!(matches!(
            eval(&e, &env(&[("x", -1.0)]), &none),
            Err(EvalError::Domain { .. })
        ));
        let e = parse_expr("1/x").unwrap();
        assert!(matches!(
            eval(&e, &env(&[("x", 0.0)]), &none),
            Err(EvalError::Domain { .. })
        ));
    }
}
