use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::parse::{eval_constant, Site};
use super::{EvalError, Expr, ParseError, ParseErrorKind, Pos};

/// Name of the time variable available to dynamics, inputs and metrics.
pub const TIME: &str = "t";
/// Perturbation parameter name used when no `perturbation` statement is given.
pub const DEFAULT_EPSILON_NAME: &str = "epsilon";
/// Analysis interval assigned to states without a `domain` entry.
pub const DEFAULT_DOMAIN: (f64, f64) = (-10.0, 10.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// User function `name(params...) = body`.
#[derive(Debug, Clone, PartialEq)]
pub struct FuncDef {
    pub name: String,
    pub params: Vec<String>,
    pub body: Expr,
}

/// Validated description of an ODE system split into fast and slow states.
///
/// States are ordered fast first, then slow; `rhs` and `domain` follow the
/// same order.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub name: String,
    /// Parameters in declaration order. Always contains the perturbation
    /// parameter.
    pub params: Vec<(String, f64)>,
    /// Name of the parameter designated as the timescale separation.
    pub epsilon: String,
    pub fast: Vec<String>,
    pub slow: Vec<String>,
    pub inputs: Vec<(String, Expr)>,
    pub functions: Vec<FuncDef>,
    pub rhs: Vec<Expr>,
    pub domain: Vec<Interval>,
}

impl SystemSpec {
    pub fn states(&self) -> impl Iterator<Item = &str> {
        self.fast.iter().chain(self.slow.iter()).map(String::as_str)
    }

    pub fn state_names(&self) -> Vec<String> {
        self.states().map(str::to_owned).collect()
    }

    pub fn n_states(&self) -> usize {
        self.fast.len() + self.slow.len()
    }

    pub fn n_fast(&self) -> usize {
        self.fast.len()
    }

    pub fn n_slow(&self) -> usize {
        self.slow.len()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states().position(|s| s == name)
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Returns false if no such parameter exists.
    pub fn set_param(&mut self, name: &str, value: f64) -> bool {
        match self.params.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => {
                slot.1 = value;
                true
            }
            None => false,
        }
    }

    pub fn epsilon_value(&self) -> f64 {
        self.param(&self.epsilon).unwrap_or(1.0)
    }

    pub fn set_epsilon(&mut self, value: f64) {
        let name = self.epsilon.clone();
        if !self.set_param(&name, value) {
            self.params.push((name, value));
        }
    }

    pub fn function_table(&self) -> HashMap<String, FuncDef> {
        self.functions.iter().map(|f| (f.name.clone(), f.clone())).collect()
    }

    pub fn rhs_of(&self, state: &str) -> Option<&Expr> {
        self.state_index(state).map(|i| &self.rhs[i])
    }

    /// Right-hand side with inputs substituted and user functions inlined;
    /// the result only references states, parameters and time.
    pub fn expanded_rhs(&self) -> Result<Vec<Expr>, EvalError> {
        let funcs = self.function_table();
        let inputs = self.expanded_inputs()?;
        self.rhs
            .iter()
            .map(|e| Ok(e.inline_calls(&funcs)?.substitute(&inputs)))
            .collect()
    }

    fn expanded_inputs(&self) -> Result<HashMap<String, Expr>, EvalError> {
        let funcs = self.function_table();
        self.inputs
            .iter()
            .map(|(n, e)| Ok((n.clone(), e.inline_calls(&funcs)?)))
            .collect()
    }

    /// Re-run the semantic checks performed by the parser. Use after building
    /// or editing a spec programmatically.
    pub fn validate(&self) -> Result<(), ParseError> {
        self.check(&Positions::default())
    }

    pub(crate) fn check(&self, pos: &Positions) -> Result<(), ParseError> {
        let err = |p: Pos, kind| Err(ParseError::new(p, kind));
        let n = self.n_states();
        if n == 0 {
            return err(Pos::default(), ParseErrorKind::NoSystem);
        }
        if self.rhs.len() != n {
            return err(
                Pos::default(),
                ParseErrorKind::MissingDynamics(self.state_names().get(self.rhs.len()).cloned().unwrap_or_default()),
            );
        }

        // one namespace for states, parameters, inputs, functions and `t`
        let mut seen: HashSet<&str> = HashSet::new();
        seen.insert(TIME);
        for s in self.states() {
            if !seen.insert(s) {
                let kind = if s == TIME {
                    ParseErrorKind::DuplicateDefinition(s.into())
                } else {
                    ParseErrorKind::DuplicateState(s.into())
                };
                return err(pos.decl(&format!("state:{s}")), kind);
            }
        }
        let others = self
            .params
            .iter()
            .map(|(n, _)| ("param", n.as_str()))
            .chain(self.inputs.iter().map(|(n, _)| ("input", n.as_str())))
            .chain(self.functions.iter().map(|f| ("func", f.name.as_str())));
        for (kind, name) in others {
            if !seen.insert(name) || super::UnaryOp::from_name(name).is_some() {
                return err(
                    pos.decl(&format!("{kind}:{name}")),
                    ParseErrorKind::DuplicateDefinition(name.into()),
                );
            }
        }

        match self.param(&self.epsilon) {
            None if !self.fast.is_empty() => {
                return err(pos.decl("fast"), ParseErrorKind::MissingEpsilon(self.epsilon.clone()))
            }
            Some(v) if v < 0.0 => {
                return err(
                    pos.decl(&format!("param:{}", self.epsilon)),
                    ParseErrorKind::NegativeEpsilon(self.epsilon.clone()),
                )
            }
            _ => {}
        }

        let params: HashSet<&str> = self.params.iter().map(|(n, _)| n.as_str()).collect();
        let inputs: HashSet<&str> = self.inputs.iter().map(|(n, _)| n.as_str()).collect();
        let states: HashSet<&str> = self.states().collect();
        let arity: HashMap<&str, usize> = self
            .functions
            .iter()
            .map(|f| (f.name.as_str(), f.params.len()))
            .collect();

        let check_expr = |ctx: &str, e: &Expr, allowed: &dyn Fn(&str) -> bool| -> Result<(), ParseError> {
            for s in e.symbols() {
                if !allowed(&s) {
                    return err(pos.site(ctx, &s), ParseErrorKind::UndefinedSymbol(s));
                }
            }
            check_calls(e, &arity, &|name| pos.site(ctx, name))
        };

        for f in &self.functions {
            let mut formals = HashSet::new();
            for p in &f.params {
                if !formals.insert(p.as_str()) {
                    return err(
                        pos.decl(&format!("func:{}", f.name)),
                        ParseErrorKind::DuplicateDefinition(p.clone()),
                    );
                }
            }
            check_expr(&format!("func:{}", f.name), &f.body, &|s| {
                formals.contains(s) || params.contains(s) || inputs.contains(s) || s == TIME
            })?;
        }
        check_recursion(&self.functions, pos)?;

        for (name, e) in &self.inputs {
            check_expr(&format!("input:{name}"), e, &|s| params.contains(s) || s == TIME)?;
        }
        for (state, e) in self.states().zip(&self.rhs) {
            check_expr(&format!("dyn:{state}"), e, &|s| {
                states.contains(s) || params.contains(s) || inputs.contains(s) || s == TIME
            })?;
        }

        if self.domain.len() != n {
            return err(Pos::default(), ParseErrorKind::InvalidDomain("<size mismatch>".into()));
        }
        for (state, iv) in self.states().zip(&self.domain) {
            if !(iv.lo.is_finite() && iv.hi.is_finite() && iv.lo < iv.hi) {
                return err(
                    pos.decl(&format!("domain:{state}")),
                    ParseErrorKind::InvalidDomain(state.into()),
                );
            }
        }
        Ok(())
    }
}

fn check_calls(e: &Expr, arity: &HashMap<&str, usize>, at: &dyn Fn(&str) -> Pos) -> Result<(), ParseError> {
    match e {
        Expr::Const(_) | Expr::Sym(_) => Ok(()),
        Expr::Unary(_, a) => check_calls(a, arity, at),
        Expr::Binary(_, a, b) => {
            check_calls(a, arity, at)?;
            check_calls(b, arity, at)
        }
        Expr::Call(name, args) => {
            match arity.get(name.as_str()) {
                None => {
                    return Err(ParseError::new(
                        at(name),
                        ParseErrorKind::UndefinedFunction(name.clone()),
                    ))
                }
                Some(&n) if n != args.len() => {
                    return Err(ParseError::new(
                        at(name),
                        ParseErrorKind::Arity {
                            name: name.clone(),
                            expected: n,
                            found: args.len(),
                        },
                    ))
                }
                _ => {}
            }
            args.iter().try_for_each(|a| check_calls(a, arity, at))
        }
    }
}

fn check_recursion(funcs: &[FuncDef], pos: &Positions) -> Result<(), ParseError> {
    let graph: HashMap<&str, BTreeSet<String>> = funcs.iter().map(|f| (f.name.as_str(), f.body.calls())).collect();
    // 0 = unvisited, 1 = on stack, 2 = done
    fn visit<'a>(
        name: &'a str,
        graph: &'a HashMap<&str, BTreeSet<String>>,
        state: &mut HashMap<&'a str, u8>,
    ) -> Option<&'a str> {
        match state.get(name) {
            Some(1) => return Some(name),
            Some(2) => return None,
            _ => {}
        }
        state.insert(name, 1);
        if let Some(callees) = graph.get(name) {
            for c in callees {
                if let Some(bad) = visit(c.as_str(), graph, state) {
                    return Some(bad);
                }
            }
        }
        state.insert(name, 2);
        None
    }
    let mut state = HashMap::new();
    for f in funcs {
        if let Some(bad) = visit(&f.name, &graph, &mut state) {
            return Err(ParseError::new(
                pos.decl(&format!("func:{bad}")),
                ParseErrorKind::RecursiveFunction(bad.to_owned()),
            ));
        }
    }
    Ok(())
}

/// Source locations used to attach positions to semantic errors.
#[derive(Debug, Default)]
pub(crate) struct Positions {
    pub decl: HashMap<String, Pos>,
    pub sites: HashMap<(String, String), Pos>,
}

impl Positions {
    fn decl(&self, key: &str) -> Pos {
        self.decl.get(key).copied().unwrap_or_default()
    }

    fn site(&self, ctx: &str, name: &str) -> Pos {
        self.sites
            .get(&(ctx.to_owned(), name.to_owned()))
            .copied()
            .unwrap_or_else(|| self.decl(ctx))
    }

    fn add_sites(&mut self, ctx: &str, sites: &[Site]) {
        for s in sites {
            self.sites.entry((ctx.to_owned(), s.name.clone())).or_insert(s.pos);
        }
    }
}

type ExprStmt = (String, Pos, Expr, Vec<Site>);

/// Statements as written, before semantic assembly.
#[derive(Debug, Default)]
pub(crate) struct RawSystem {
    pub name: Option<String>,
    pub params: Vec<ExprStmt>,
    pub epsilon: Option<(String, Pos)>,
    pub fast: Vec<(String, Pos)>,
    pub slow: Vec<(String, Pos)>,
    pub fast_declared: Option<Pos>,
    pub slow_declared: Option<Pos>,
    pub inputs: Vec<ExprStmt>,
    pub functions: Vec<(FuncDef, Pos, Vec<(String, Pos)>, Vec<Site>)>,
    pub dynamics: Vec<ExprStmt>,
    pub domain: Vec<(String, Pos, Expr, Expr, Vec<Site>)>,
}

fn constant_error(e: EvalError, ctx: &str, sites: &[Site], at: Pos) -> ParseError {
    match e {
        EvalError::Unbound(name) => {
            let p = sites.iter().find(|s| s.name == name).map(|s| s.pos).unwrap_or(at);
            ParseError::new(p, ParseErrorKind::UndefinedSymbol(name))
        }
        other => ParseError::new(at, ParseErrorKind::Constant(format!("{ctx}: {other}"))),
    }
}

impl RawSystem {
    pub(crate) fn finish(self, mut positions: Positions) -> Result<SystemSpec, ParseError> {
        let err = |p: Pos, kind| Err(ParseError::new(p, kind));

        let mut params: Vec<(String, f64)> = Vec::new();
        let mut env = HashMap::new();
        for (name, pos, e, sites) in &self.params {
            if env.contains_key(name) {
                return err(*pos, ParseErrorKind::DuplicateDefinition(name.clone()));
            }
            let v =
                eval_constant(e, &env).map_err(|x| constant_error(x, &format!("parameter `{name}`"), sites, *pos))?;
            env.insert(name.clone(), v);
            params.push((name.clone(), v));
            positions.decl.insert(format!("param:{name}"), *pos);
        }
        let epsilon = self
            .epsilon
            .as_ref()
            .map(|(n, _)| n.clone())
            .unwrap_or_else(|| DEFAULT_EPSILON_NAME.to_owned());

        let declared = self.fast_declared.is_some() || self.slow_declared.is_some();
        let (fast, slow): (Vec<(String, Pos)>, Vec<(String, Pos)>) = if declared {
            (self.fast.clone(), self.slow.clone())
        } else {
            let mut slow: Vec<(String, Pos)> = Vec::new();
            for (name, pos, _, _) in &self.dynamics {
                if !slow.iter().any(|(n, _)| n == name) {
                    slow.push((name.clone(), *pos));
                }
            }
            (Vec::new(), slow)
        };
        if let Some(p) = self.fast_declared {
            positions.decl.insert("fast".into(), p);
        }
        if fast.is_empty() && slow.is_empty() {
            return err(Pos { line: 1, col: 1 }, ParseErrorKind::NoSystem);
        }
        let mut names: Vec<&(String, Pos)> = Vec::new();
        for entry in fast.iter().chain(slow.iter()) {
            if names.iter().any(|(n, _)| *n == entry.0) {
                return err(entry.1, ParseErrorKind::DuplicateState(entry.0.clone()));
            }
            positions.decl.insert(format!("state:{}", entry.0), entry.1);
            names.push(entry);
        }

        let mut rhs: Vec<Option<Expr>> = vec![None; names.len()];
        for (name, pos, e, sites) in &self.dynamics {
            let Some(i) = names.iter().position(|(n, _)| n == name) else {
                return err(*pos, ParseErrorKind::UndefinedSymbol(name.clone()));
            };
            if rhs[i].is_some() {
                return err(*pos, ParseErrorKind::DuplicateDynamics(name.clone()));
            }
            rhs[i] = Some(e.clone());
            positions.add_sites(&format!("dyn:{name}"), sites);
            positions.decl.insert(format!("dyn:{name}"), *pos);
        }
        let mut rhs_done = Vec::with_capacity(rhs.len());
        for (slot, (name, pos)) in rhs.into_iter().zip(&names) {
            match slot {
                Some(e) => rhs_done.push(e),
                None => return err(*pos, ParseErrorKind::MissingDynamics(name.clone())),
            }
        }

        if fast.is_empty() && !params.iter().any(|(n, _)| *n == epsilon) {
            params.push((epsilon.clone(), 1.0));
        }
        if let Some((name, p)) = &self.epsilon {
            positions.decl.entry(format!("param:{name}")).or_insert(*p);
        }

        let mut domain: Vec<Option<Interval>> = vec![None; names.len()];
        for (name, pos, lo, hi, sites) in &self.domain {
            let Some(i) = names.iter().position(|(n, _)| n == name) else {
                return err(*pos, ParseErrorKind::UndefinedSymbol(name.clone()));
            };
            if domain[i].is_some() {
                return err(*pos, ParseErrorKind::DuplicateDefinition(format!("domain of {name}")));
            }
            let ctx = format!("domain of `{name}`");
            let lo = eval_constant(lo, &env).map_err(|x| constant_error(x, &ctx, sites, *pos))?;
            let hi = eval_constant(hi, &env).map_err(|x| constant_error(x, &ctx, sites, *pos))?;
            if !(lo < hi) {
                return err(*pos, ParseErrorKind::InvalidDomain(name.clone()));
            }
            domain[i] = Some(Interval::new(lo, hi));
            positions.decl.insert(format!("domain:{name}"), *pos);
        }
        let domain = domain
            .into_iter()
            .map(|d| d.unwrap_or(Interval::new(DEFAULT_DOMAIN.0, DEFAULT_DOMAIN.1)))
            .collect();

        let mut inputs = Vec::new();
        for (name, pos, e, sites) in &self.inputs {
            positions.decl.insert(format!("input:{name}"), *pos);
            positions.add_sites(&format!("input:{name}"), sites);
            inputs.push((name.clone(), e.clone()));
        }
        let mut functions = Vec::new();
        for (def, pos, _, sites) in &self.functions {
            positions.decl.insert(format!("func:{}", def.name), *pos);
            positions.add_sites(&format!("func:{}", def.name), sites);
            functions.push(def.clone());
        }

        let spec = SystemSpec {
            name: self.name.clone().unwrap_or_else(|| "system".to_owned()),
            params,
            epsilon,
            fast: fast.into_iter().map(|(n, _)| n).collect(),
            slow: slow.into_iter().map(|(n, _)| n).collect(),
            inputs,
            functions,
            rhs: rhs_done,
            domain,
        };
        spec.check(&positions)?;
        Ok(spec)
    }
}
