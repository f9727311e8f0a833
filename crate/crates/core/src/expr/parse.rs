use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use super::system::{Positions, RawSystem};
use super::{BinOp, Expr, FuncDef, SystemSpec, UnaryOp};

/// 1-based source position. `line == 0` means "no source location".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("no system: the source declares no states or dynamics")]
    NoSystem,
    #[error("duplicate state `{0}`")]
    DuplicateState(String),
    #[error("`{0}` is defined more than once")]
    DuplicateDefinition(String),
    #[error("undefined symbol `{0}`")]
    UndefinedSymbol(String),
    #[error("undefined function `{0}`")]
    UndefinedFunction(String),
    #[error("function `{name}` expects {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("function `{0}` is recursive")]
    RecursiveFunction(String),
    #[error("missing perturbation parameter `{0}` (required when fast states are declared)")]
    MissingEpsilon(String),
    #[error("perturbation parameter `{0}` must be >= 0")]
    NegativeEpsilon(String),
    #[error("state `{0}` has no dynamics")]
    MissingDynamics(String),
    #[error("state `{0}` has more than one dynamics equation")]
    DuplicateDynamics(String),
    #[error("empty domain for `{0}` (lower bound must be < upper bound)")]
    InvalidDomain(String),
    #[error("invalid constant expression: {0}")]
    Constant(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ParseError {
    pub pos: Pos,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pos.line == 0 {
            write!(f, "{}", self.kind)
        } else {
            write!(f, "line {}, column {}: {}", self.pos.line, self.pos.col, self.kind)
        }
    }
}

impl ParseError {
    pub(crate) fn new(pos: Pos, kind: ParseErrorKind) -> Self {
        ParseError { pos, kind }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Punct(char),
    Newline,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: Pos,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if c == '\n' {
            out.push(Token { tok: Tok::Newline, pos });
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v: f64 = text
                .parse()
                .map_err(|_| ParseError::new(pos, ParseErrorKind::Syntax(format!("bad number literal `{text}`"))))?;
            col += i - start;
            out.push(Token { tok: Tok::Num(v), pos });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                pos,
            });
            continue;
        }
        if "+-*/^()[]{},=;".contains(c) {
            out.push(Token {
                tok: Tok::Punct(c),
                pos,
            });
            i += 1;
            col += 1;
            continue;
        }
        return Err(ParseError::new(
            pos,
            ParseErrorKind::Syntax(format!("unexpected character `{c}`")),
        ));
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: Pos { line, col },
    });
    Ok(out)
}

/// A symbol or function-name occurrence inside an expression.
#[derive(Debug, Clone)]
pub(crate) struct Site {
    pub name: String,
    pub pos: Pos,
}

struct Parser {
    toks: Vec<Token>,
    i: usize,
    nesting: usize,
    sites: Vec<Site>,
}

impl Parser {
    fn new(toks: Vec<Token>) -> Self {
        Parser {
            toks,
            i: 0,
            nesting: 0,
            sites: Vec::new(),
        }
    }

    fn skip_nested_newlines(&mut self) {
        if self.nesting > 0 {
            while self.toks[self.i].tok == Tok::Newline {
                self.i += 1;
            }
        }
    }

    fn peek(&mut self) -> &Token {
        self.skip_nested_newlines();
        &self.toks[self.i]
    }

    fn next(&mut self) -> Token {
        self.skip_nested_newlines();
        let t = self.toks[self.i].clone();
        if t.tok != Tok::Eof {
            self.i += 1;
        }
        t
    }

    fn pos(&mut self) -> Pos {
        self.peek().pos
    }

    fn is_punct(&mut self, c: char) -> bool {
        self.peek().tok == Tok::Punct(c)
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.is_punct(c) {
            self.next();
            true
        } else {
            false
        }
    }

    fn syntax<T>(&mut self, msg: impl Into<String>) -> Result<T, ParseError> {
        let pos = self.pos();
        Err(ParseError::new(pos, ParseErrorKind::Syntax(msg.into())))
    }

    fn describe(tok: &Tok) -> String {
        match tok {
            Tok::Num(v) => format!("number `{v}`"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Punct(c) => format!("`{c}`"),
            Tok::Newline => "end of line".into(),
            Tok::Eof => "end of input".into(),
        }
    }

    fn expect_punct(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat_punct(c) {
            Ok(())
        } else {
            let found = Self::describe(&self.peek().tok.clone());
            self.syntax(format!("expected `{c}`, found {found}"))
        }
    }

    fn ident(&mut self) -> Result<(String, Pos), ParseError> {
        let t = self.next();
        match t.tok {
            Tok::Ident(s) => Ok((s, t.pos)),
            other => Err(ParseError::new(
                t.pos,
                ParseErrorKind::Syntax(format!("expected identifier, found {}", Self::describe(&other))),
            )),
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.is_punct('+') {
                BinOp::Add
            } else if self.is_punct('-') {
                BinOp::Sub
            } else {
                break;
            };
            self.next();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    // term := unary (('*'|'/') unary)*
    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.is_punct('*') {
                BinOp::Mul
            } else if self.is_punct('/') {
                BinOp::Div
            } else {
                break;
            };
            self.next();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    // unary := '-' unary | power
    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_punct('-') {
            let inner = self.unary()?;
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.power()
    }

    // power := atom ('^' unary)?   (right associative through unary)
    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat_punct('^') {
            let exp = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let t = self.next();
        match t.tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::Ident(name) => {
                if self.is_punct('(') {
                    self.next();
                    self.nesting += 1;
                    let mut args = Vec::new();
                    if !self.is_punct(')') {
                        loop {
                            args.push(self.expr()?);
                            if !self.eat_punct(',') {
                                break;
                            }
                        }
                    }
                    self.nesting -= 1;
                    self.expect_punct(')')?;
                    if let Some(op) = UnaryOp::from_name(&name) {
                        if args.len() != 1 {
                            return Err(ParseError::new(
                                t.pos,
                                ParseErrorKind::Arity {
                                    name,
                                    expected: 1,
                                    found: args.len(),
                                },
                            ));
                        }
                        return Ok(Expr::Unary(op, Box::new(args.pop().unwrap())));
                    }
                    self.sites.push(Site {
                        name: name.clone(),
                        pos: t.pos,
                    });
                    Ok(Expr::Call(name, args))
                } else {
                    self.sites.push(Site {
                        name: name.clone(),
                        pos: t.pos,
                    });
                    Ok(Expr::Sym(name))
                }
            }
            Tok::Punct('(') => {
                self.nesting += 1;
                let e = self.expr()?;
                self.nesting -= 1;
                self.expect_punct(')')?;
                Ok(e)
            }
            other => Err(ParseError::new(
                t.pos,
                ParseErrorKind::Syntax(format!("expected expression, found {}", Self::describe(&other))),
            )),
        }
    }

    fn take_sites(&mut self) -> Vec<Site> {
        std::mem::take(&mut self.sites)
    }

    fn at_statement_end(&mut self) -> bool {
        matches!(
            self.peek().tok,
            Tok::Newline | Tok::Eof | Tok::Punct(';') | Tok::Punct('}')
        )
    }

    fn end_statement(&mut self) -> Result<(), ParseError> {
        if self.at_statement_end() {
            Ok(())
        } else {
            let found = Self::describe(&self.peek().tok.clone());
            self.syntax(format!("expected end of statement, found {found}"))
        }
    }
}

/// Parse a standalone expression.
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser::new(lex(src)?);
    p.nesting = 1; // newlines are insignificant in a standalone expression
    let e = p.expr()?;
    if p.peek().tok != Tok::Eof {
        let found = Parser::describe(&p.peek().tok.clone());
        return p.syntax(format!("unexpected {found} after expression"));
    }
    Ok(e)
}

/// Parse and validate a system-description source.
pub fn parse_system(src: &str) -> Result<SystemSpec, ParseError> {
    let mut p = Parser::new(lex(src)?);
    let mut raw = RawSystem::default();
    let mut positions = Positions::default();

    loop {
        match p.peek().tok.clone() {
            Tok::Eof => break,
            Tok::Newline | Tok::Punct(';') => {
                p.next();
                continue;
            }
            Tok::Ident(kw) => {
                let kw_pos = p.pos();
                p.next();
                match kw.as_str() {
                    "system" => {
                        let (name, _) = p.ident()?;
                        raw.name = Some(name);
                    }
                    "params" => parse_params(&mut p, &mut raw, &mut positions)?,
                    "perturbation" => {
                        let (name, pos) = p.ident()?;
                        positions.decl.insert(format!("perturbation:{name}"), pos);
                        raw.epsilon = Some((name, pos));
                    }
                    "fast" | "slow" => {
                        if kw == "fast" {
                            raw.fast_declared.get_or_insert(kw_pos);
                        } else {
                            raw.slow_declared.get_or_insert(kw_pos);
                        }
                        loop {
                            let (name, pos) = p.ident()?;
                            let list = if kw == "fast" { &mut raw.fast } else { &mut raw.slow };
                            list.push((name, pos));
                            if !p.eat_punct(',') {
                                break;
                            }
                        }
                    }
                    "input" => {
                        let (name, pos) = p.ident()?;
                        if p.eat_punct('(') {
                            let (arg, apos) = p.ident()?;
                            if arg != super::TIME {
                                return Err(ParseError::new(
                                    apos,
                                    ParseErrorKind::Syntax(format!("inputs are functions of `{}` only", super::TIME)),
                                ));
                            }
                            p.expect_punct(')')?;
                        }
                        p.expect_punct('=')?;
                        let e = p.expr()?;
                        let sites = p.take_sites();
                        raw.inputs.push((name, pos, e, sites));
                    }
                    "func" => {
                        let (name, pos) = p.ident()?;
                        p.expect_punct('(')?;
                        let mut params = Vec::new();
                        if !p.is_punct(')') {
                            loop {
                                params.push(p.ident()?);
                                if !p.eat_punct(',') {
                                    break;
                                }
                            }
                        }
                        p.expect_punct(')')?;
                        p.expect_punct('=')?;
                        let body = p.expr()?;
                        let sites = p.take_sites();
                        raw.functions.push((
                            FuncDef {
                                name,
                                params: params.iter().map(|(n, _)| n.clone()).collect(),
                                body,
                            },
                            pos,
                            params,
                            sites,
                        ));
                    }
                    "dyn" => {
                        let (name, pos) = p.ident()?;
                        p.expect_punct('=')?;
                        let e = p.expr()?;
                        let sites = p.take_sites();
                        raw.dynamics.push((name, pos, e, sites));
                    }
                    "domain" => loop {
                        parse_domain_entry(&mut p, &mut raw)?;
                        if !p.eat_punct(',') && !domain_continues(&mut p) {
                            break;
                        }
                    },
                    _ => {
                        // `name in [lo, hi]` continuation of a domain section
                        if p.peek().tok == Tok::Ident("in".into()) {
                            p.i -= 1;
                            parse_domain_entry(&mut p, &mut raw)?;
                        } else {
                            return Err(ParseError::new(
                                kw_pos,
                                ParseErrorKind::Syntax(format!("unknown statement `{kw}`")),
                            ));
                        }
                    }
                }
                p.end_statement()?;
            }
            other => {
                let desc = Parser::describe(&other);
                return p.syntax(format!("expected a statement, found {desc}"));
            }
        }
    }
    raw.finish(positions)
}

/// After `;` inside a domain line, another `name in [..]` continues it.
fn domain_continues(p: &mut Parser) -> bool {
    if p.peek().tok != Tok::Punct(';') {
        return false;
    }
    let save = p.i;
    p.next();
    let ok = matches!(p.toks[p.i].tok, Tok::Ident(_))
        && p.toks.get(p.i + 1).map(|t| &t.tok) == Some(&Tok::Ident("in".into()));
    if !ok {
        p.i = save;
    }
    ok
}

fn parse_domain_entry(p: &mut Parser, raw: &mut RawSystem) -> Result<(), ParseError> {
    let (name, pos) = p.ident()?;
    match p.next() {
        Token {
            tok: Tok::Ident(ref s), ..
        } if s == "in" => {}
        t => {
            return Err(ParseError::new(
                t.pos,
                ParseErrorKind::Syntax(format!("expected `in`, found {}", Parser::describe(&t.tok))),
            ))
        }
    }
    p.expect_punct('[')?;
    p.nesting += 1;
    let lo = p.expr()?;
    p.expect_punct(',')?;
    let hi = p.expr()?;
    p.nesting -= 1;
    p.expect_punct(']')?;
    let sites = p.take_sites();
    raw.domain.push((name, pos, lo, hi, sites));
    Ok(())
}

fn parse_params(p: &mut Parser, raw: &mut RawSystem, positions: &mut Positions) -> Result<(), ParseError> {
    let braced = p.eat_punct('{');
    if braced {
        p.nesting += 1;
    }
    loop {
        if braced {
            while p.eat_punct(';') || p.eat_punct(',') {}
            if p.is_punct('}') {
                break;
            }
        }
        let (name, pos) = p.ident()?;
        p.expect_punct('=')?;
        // a newline ends the value even inside braces
        let saved = p.nesting;
        p.nesting = 0;
        let e = p.expr()?;
        p.nesting = saved;
        let sites = p.take_sites();
        positions.decl.insert(format!("param:{name}"), pos);
        raw.params.push((name, pos, e, sites));
        if braced {
            let newline = p.toks[p.i].tok == Tok::Newline;
            if p.is_punct('}') {
                break;
            }
            if !(newline || p.eat_punct(';') || p.eat_punct(',')) {
                let found = Parser::describe(&p.peek().tok.clone());
                return p.syntax(format!("expected `;`, `,` or `}}` in params, found {found}"));
            }
        } else if !p.eat_punct(',') {
            break;
        }
    }
    if braced {
        p.nesting -= 1;
        p.expect_punct('}')?;
    }
    Ok(())
}

pub(crate) fn eval_constant(e: &Expr, known: &HashMap<String, f64>) -> Result<f64, super::EvalError> {
    super::eval(e, known, &HashMap::new())
}
