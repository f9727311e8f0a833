use std::fmt;

use super::{BinOp, Expr, SystemSpec, UnaryOp};

// binding strength, higher binds tighter
const SUM: u8 = 1;
const PRODUCT: u8 = 2;
const PREFIX: u8 = 3;
const POWER: u8 = 4;
const ATOM: u8 = 5;

fn strength(e: &Expr) -> u8 {
    match e {
        Expr::Const(v) if *v < 0.0 || v.is_sign_negative() => ATOM,
        Expr::Const(_) | Expr::Sym(_) | Expr::Call(..) => ATOM,
        Expr::Unary(UnaryOp::Neg, _) => PREFIX,
        Expr::Unary(..) => ATOM,
        Expr::Binary(BinOp::Add | BinOp::Sub, ..) => SUM,
        Expr::Binary(BinOp::Mul | BinOp::Div, ..) => PRODUCT,
        Expr::Binary(BinOp::Pow, ..) => POWER,
    }
}

fn write_at(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    if strength(e) < min {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => {
                if v.is_sign_negative() {
                    write!(f, "(-{})", -v)
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Sym(s) => write!(f, "{s}"),
            Expr::Unary(UnaryOp::Neg, a) => {
                f.write_str("-")?;
                write_at(f, a, POWER)
            }
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => {
                let (left, right) = match op {
                    BinOp::Add | BinOp::Sub => (SUM, PRODUCT),
                    BinOp::Mul | BinOp::Div => (PRODUCT, PREFIX),
                    BinOp::Pow => (ATOM, PREFIX),
                };
                write_at(f, a, left)?;
                match op {
                    BinOp::Pow => f.write_str("^")?,
                    _ => write!(f, " {} ", op.symbol())?,
                }
                write_at(f, b, right)
            }
            Expr::Call(name, args) => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Canonical source form; parsing it yields an equal spec.
impl fmt::Display for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "system {}", self.name)?;
        if !self.params.is_empty() {
            f.write_str("params {")?;
            for (i, (name, v)) in self.params.iter().enumerate() {
                let sep = if i == 0 { " " } else { "; " };
                write!(f, "{sep}{name} = {v}")?;
            }
            f.write_str(" }\n")?;
        }
        writeln!(f, "perturbation {}", self.epsilon)?;
        for (name, e) in &self.inputs {
            writeln!(f, "input {name}(t) = {e}")?;
        }
        for def in &self.functions {
            writeln!(f, "func {}({}) = {}", def.name, def.params.join(", "), def.body)?;
        }
        if !self.fast.is_empty() {
            writeln!(f, "fast {}", self.fast.join(", "))?;
        }
        if !self.slow.is_empty() || self.fast.is_empty() {
            writeln!(f, "slow {}", self.slow.join(", "))?;
        }
        for (state, e) in self.states().zip(&self.rhs) {
            writeln!(f, "dyn {state} = {e}")?;
        }
        for (state, iv) in self.states().zip(&self.domain) {
            writeln!(f, "domain {state} in [{}, {}]", iv.lo, iv.hi)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use crate::expr::{parse_expr, parse_system};

    fn roundtrip(src: &str) -> String {
        let e = parse_expr(src).unwrap();
        let printed = e.to_string();
        assert_eq!(parse_expr(&printed).unwrap(), e, "printed as {printed}");
        printed
    }

    #[test]
    fn minimal_parentheses() {
        assert_eq!(roundtrip("a - (b - c)"), "a - (b - c)");
        assert_eq!(roundtrip("(a - b) - c"), "a - b - c");
        assert_eq!(roundtrip("a / (b * c)"), "a / (b * c)");
        assert_eq!(roundtrip("(-x)^2"), "(-x)^2");
        assert_eq!(roundtrip("-x^2"), "-x^2");
        assert_eq!(roundtrip("(a^b)^c"), "(a^b)^c");
        assert_eq!(roundtrip("a^b^c"), "a^b^c");
        assert_eq!(roundtrip("x^-y"), "x^-y");
        assert_eq!(roundtrip("f(x, y + 1) * sin(x)"), "f(x, y + 1) * sin(x)");
        assert_eq!(roundtrip("-(-x)"), "-(-x)");
    }

    #[test]
    fn system_roundtrip() {
        let spec = parse_system(crate::expr::system::tests::BUILDING).unwrap();
        let again = parse_system(&spec.to_string()).unwrap();
        assert_eq!(spec, again);
        let spec = parse_system("dyn x = -x").unwrap();
        assert_eq!(parse_system(&spec.to_string()).unwrap(), spec);
    }
}
