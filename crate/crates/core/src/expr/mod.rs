//! Expression language: AST, parser, printer, evaluator and symbolic
//! differentiation for system-description files.

mod compiled;
mod diff;
mod eval;
mod parse;
mod print;
mod system;

use std::collections::{BTreeSet, HashMap};

pub use compiled::{Compiled, SlotMap};
pub use diff::{differentiate, DiffError};
pub use eval::{eval, EvalError};
pub use parse::{parse_expr, parse_system, ParseError, ParseErrorKind, Pos};
pub use system::{FuncDef, Interval, SystemSpec, DEFAULT_DOMAIN, DEFAULT_EPSILON_NAME, TIME};

/// Built-in scalar functions and negation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tanh,
    Exp,
    Log,
    Abs,
    Sqrt,
    /// Sign function with `sign(0) = 0`; appears in derivatives of `abs`.
    Sign,
}

impl UnaryOp {
    pub const FUNCTIONS: [UnaryOp; 8] = [
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Tanh,
        UnaryOp::Exp,
        UnaryOp::Log,
        UnaryOp::Abs,
        UnaryOp::Sqrt,
        UnaryOp::Sign,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Abs => "abs",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Sign => "sign",
        }
    }

    pub fn from_name(name: &str) -> Option<UnaryOp> {
        UnaryOp::FUNCTIONS.iter().copied().find(|op| op.name() == name)
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Neg => -x,
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Tanh => x.tanh(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log => {
                if x > 0.0 {
                    x.ln()
                } else {
                    f64::NAN
                }
            }
            UnaryOp::Abs => x.abs(),
            UnaryOp::Sqrt => x.sqrt(),
            UnaryOp::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    pub fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Pow => a.powf(b),
        }
    }
}

/// Expression tree.
///
/// The parser builds trees verbatim (no simplification) so that printing and
/// re-parsing is the identity. The lowercase constructors (`add`, `mul`, ...)
/// apply constant folding and 0/1 identities and are used by the
/// differentiator.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Sym(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
}

impl Expr {
    pub fn c(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn sym(name: impl Into<String>) -> Expr {
        Expr::Sym(name.into())
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(v) => Some(*v),
            _ => None,
        }
    }

    fn is_const(&self, v: f64) -> bool {
        self.as_const() == Some(v)
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Expr {
        if let Some(v) = a.as_const() {
            let r = op.apply(v);
            if r.is_finite() {
                return Expr::Const(r);
            }
        }
        if op == UnaryOp::Neg {
            if let Expr::Unary(UnaryOp::Neg, inner) = a {
                return *inner;
            }
        }
        Expr::Unary(op, Box::new(a))
    }

    pub fn neg(a: Expr) -> Expr {
        Expr::unary(UnaryOp::Neg, a)
    }

    pub fn binary(op: BinOp, a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            let r = op.apply(x, y);
            if r.is_finite() {
                return Expr::Const(r);
            }
        }
        match op {
            BinOp::Add => {
                if a.is_const(0.0) {
                    return b;
                }
                if b.is_const(0.0) {
                    return a;
                }
            }
            BinOp::Sub => {
                if b.is_const(0.0) {
                    return a;
                }
                if a.is_const(0.0) {
                    return Expr::neg(b);
                }
            }
            BinOp::Mul => {
                if a.is_const(0.0) || b.is_const(0.0) {
                    return Expr::Const(0.0);
                }
                if a.is_const(1.0) {
                    return b;
                }
                if b.is_const(1.0) {
                    return a;
                }
                if a.is_const(-1.0) {
                    return Expr::neg(b);
                }
                if b.is_const(-1.0) {
                    return Expr::neg(a);
                }
            }
            BinOp::Div => {
                if a.is_const(0.0) {
                    return Expr::Const(0.0);
                }
                if b.is_const(1.0) {
                    return a;
                }
            }
            BinOp::Pow => {
                if b.is_const(0.0) {
                    return Expr::Const(1.0);
                }
                if b.is_const(1.0) {
                    return a;
                }
            }
        }
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinOp::Add, a, b)
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinOp::Sub, a, b)
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinOp::Mul, a, b)
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinOp::Div, a, b)
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinOp::Pow, a, b)
    }

    /// Free symbols (function names excluded).
    pub fn symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Sym(s) => {
                out.insert(s.clone());
            }
            Expr::Unary(_, a) => a.collect_symbols(out),
            Expr::Binary(_, a, b) => {
                a.collect_symbols(out);
                b.collect_symbols(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_symbols(out)),
        }
    }

    /// Names of user functions applied anywhere in the tree.
    pub fn calls(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Call(name, _) = e {
                out.insert(name.clone());
            }
        });
        out
    }

    pub fn depends_on(&self, name: &str) -> bool {
        let mut found = false;
        self.visit(&mut |e| {
            if let Expr::Sym(s) = e {
                if s == name {
                    found = true;
                }
            }
        });
        found
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Sym(_) => {}
            Expr::Unary(_, a) => a.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.visit(f)),
        }
    }

    /// Simultaneous substitution of symbols. Structure is kept verbatim.
    pub fn substitute(&self, map: &HashMap<String, Expr>) -> Expr {
        match self {
            Expr::Const(_) => self.clone(),
            Expr::Sym(s) => map.get(s).cloned().unwrap_or_else(|| self.clone()),
            Expr::Unary(op, a) => Expr::Unary(*op, Box::new(a.substitute(map))),
            Expr::Binary(op, a, b) => Expr::Binary(*op, Box::new(a.substitute(map)), Box::new(b.substitute(map))),
            Expr::Call(name, args) => Expr::Call(name.clone(), args.iter().map(|a| a.substitute(map)).collect()),
        }
    }

    /// Replace every user-function application by its body with actual
    /// arguments substituted, recursively.
    pub fn inline_calls(&self, funcs: &HashMap<String, FuncDef>) -> Result<Expr, EvalError> {
        Ok(match self {
            Expr::Const(_) | Expr::Sym(_) => self.clone(),
            Expr::Unary(op, a) => Expr::Unary(*op, Box::new(a.inline_calls(funcs)?)),
            Expr::Binary(op, a, b) => {
                Expr::Binary(*op, Box::new(a.inline_calls(funcs)?), Box::new(b.inline_calls(funcs)?))
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
                let mut map = HashMap::new();
                for (p, a) in def.params.iter().zip(args) {
                    map.insert(p.clone(), a.inline_calls(funcs)?);
                }
                def.body.inline_calls(funcs)?.substitute(&map)
            }
        })
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }
}
