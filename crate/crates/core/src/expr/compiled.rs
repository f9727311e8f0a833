use std::collections::HashMap;

use super::eval::{checked_binary, checked_unary};
use super::{BinOp, EvalError, Expr, UnaryOp};

/// Assignment of symbol names to positions in a flat value slice.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlotMap {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl SlotMap {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut map = SlotMap::default();
        for n in names {
            map.push(n);
        }
        map
    }

    /// Returns the slot of `name`, appending it if new.
    pub fn push(&mut self, name: impl Into<String>) -> usize {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            return i;
        }
        let i = self.names.len();
        self.index.insert(name.clone(), i);
        self.names.push(name);
        i
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Load(usize),
    Unary(UnaryOp),
    Binary(BinOp),
}

const INLINE_STACK: usize = 32;

/// Expression lowered to a postfix program over slot indices.
///
/// The source expression must be free of user-function calls
/// (see [`Expr::inline_calls`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Compiled {
    ops: Vec<Op>,
    depth: usize,
}

impl Compiled {
    pub fn new(e: &Expr, slots: &SlotMap) -> Result<Self, EvalError> {
        let mut ops = Vec::with_capacity(e.size());
        let depth = lower(e, slots, &mut ops)?;
        Ok(Compiled { ops, depth })
    }

    pub fn constant(&self) -> Option<f64> {
        match self.ops.as_slice() {
            [Op::Const(v)] => Some(*v),
            _ => None,
        }
    }

    /// Evaluate with `values[i]` bound to slot `i`. Fails on any non-finite
    /// intermediate value.
    pub fn eval(&self, values: &[f64]) -> Result<f64, EvalError> {
        if self.depth <= INLINE_STACK {
            let mut stack = [0.0; INLINE_STACK];
            self.run(values, &mut stack)
        } else {
            let mut stack = vec![0.0; self.depth];
            self.run(values, &mut stack)
        }
    }

    fn run(&self, values: &[f64], stack: &mut [f64]) -> Result<f64, EvalError> {
        let mut sp = 0;
        for op in &self.ops {
            match *op {
                Op::Const(v) => {
                    stack[sp] = v;
                    sp += 1;
                }
                Op::Load(i) => {
                    let v = values[i];
                    if !v.is_finite() {
                        return Err(super::eval::domain(format!("non-finite input in slot {i}")));
                    }
                    stack[sp] = v;
                    sp += 1;
                }
                Op::Unary(u) => {
                    stack[sp - 1] = checked_unary(u, stack[sp - 1])?;
                }
                Op::Binary(b) => {
                    sp -= 1;
                    stack[sp - 1] = checked_binary(b, stack[sp - 1], stack[sp])?;
                }
            }
        }
        Ok(stack[0])
    }
}

// returns the stack depth needed for `e`
fn lower(e: &Expr, slots: &SlotMap, ops: &mut Vec<Op>) -> Result<usize, EvalError> {
    Ok(match e {
        Expr::Const(v) => {
            ops.push(Op::Const(*v));
            1
        }
        Expr::Sym(s) => {
            let i = slots.get(s).ok_or_else(|| EvalError::Unbound(s.clone()))?;
            ops.push(Op::Load(i));
            1
        }
        Expr::Unary(op, a) => {
            let d = lower(a, slots, ops)?;
            ops.push(Op::Unary(*op));
            d
        }
        Expr::Binary(op, a, b) => {
            let da = lower(a, slots, ops)?;
            let db = lower(b, slots, ops)?;
            ops.push(Op::Binary(*op));
            da.max(db + 1)
        }
        Expr::Call(name, _) => return Err(EvalError::UnknownFunction(name.clone())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{eval, parse_expr};

    #[test]
    fn matches_tree_evaluation() {
        let e = parse_expr("a*sin(x)^2 - exp(-y/a) + (x - y)*(x + y)^3").unwrap();
        let slots = SlotMap::new(["x", "y", "a"]);
        let c = Compiled::new(&e, &slots).unwrap();
        let vals = [0.7, -1.3, 2.5];
        let env = slots.names().iter().cloned().zip(vals).collect::<HashMap<_, _>>();
        let expected = eval(&e, &env, &HashMap::new()).unwrap();
        assert_eq!(c.eval(&vals).unwrap(), expected);
    }

    #[test]
    fn deep_expression_uses_heap_stack() {
        let mut src = String::from("x");
        for _ in 0..50 {
            src = format!("1 + ({src}) * 1");
        }
        // right-nested chain forces deep stacks
        let mut nested = String::from("x");
        for _ in 0..40 {
            nested = format!("x - ({nested})");
        }
        let slots = SlotMap::new(["x"]);
        let c = Compiled::new(&parse_expr(&nested).unwrap(), &slots).unwrap();
        assert!(c.depth > INLINE_STACK);
        assert_eq!(c.eval(&[2.0]).unwrap(), 2.0);
        let c = Compiled::new(&parse_expr(&src).unwrap(), &slots).unwrap();
        assert_eq!(c.eval(&[1.0]).unwrap(), 51.0);
    }

    #[test]
    fn errors() {
        let slots = SlotMap::new(["x"]);
        assert_eq!(
            Compiled::new(&parse_expr("x + q").unwrap(), &slots),
            Err(EvalError::Unbound("q".into()))
        );
        let c = Compiled::new(&parse_expr("1/x").unwrap(), &slots).unwrap();
        assert!(matches!(c.eval(&[0.0]), Err(EvalError::Domain { .. })));
    }
}
