//! Signal temporal logic with quantitative (space) robustness.
//!
//! # Grammar
//!
//! ```text
//! formula   := until ( "->" formula )?
//! until     := or    ( "U" interval or )?
//! or        := and   ( ("or" | "|") and )*
//! and       := unary ( ("and" | "&") unary )*
//! unary     := ("not" | "!") unary
//!            | "G" interval unary  | "F" interval unary
//!            | "true" | "false" | "(" formula ")" | predicate
//! predicate := expr (">=" | ">" | "<=" | "<") expr
//! expr      := term (("+" | "-") term)*
//! term      := factor (("*" | "/") factor)*
//! factor    := number | channel | "-" factor | "abs" "(" expr ")" | "(" expr ")"
//! interval  := "[" number "," number "]"
//! ```
//!
//! `G`, `F`, `U`, `abs`, `and`, `or`, `not`, `true` and `false` are reserved
//! and cannot be channel names. The reference specifications:
//!
//! ```text
//! G[0,50](d_rel - (d_safe + 1.4*v_ego) >= 0)
//! G[0,50]((d_rel < d_safe + 1.4*v_ego) -> F[0,5](d_rel > d_safe + 1.4*v_ego))
//! G[27,30](abs(error) <= 0.35)
//! ```
//!
//! # Semantics
//!
//! Robustness is evaluated on the sampling grid of the trace. A predicate
//! `lhs >= rhs` (or `>`) has robustness `lhs - rhs`; `lhs <= rhs` (or `<`)
//! has `rhs - lhs`. Negation flips the sign, conjunction is `min`,
//! disjunction is `max`, and `a -> b` is `max(-a, b)`. `G[a,b]` takes the
//! minimum over every grid time in the closed window `[t+a, t+b]`, `F[a,b]`
//! the maximum, and `φ U[a,b] ψ` is
//! `max over t' in [t+a, t+b] of min(ψ(t'), min over t <= t'' < t' of φ(t''))`.
//!
//! A trace satisfies a formula when its robustness at time 0 is `>= 0`, so
//! zero robustness counts as satisfied.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signals::{Channel, SignalError, Trace};

/// Slack used when snapping interval bounds to the sampling grid.
const GRID_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StlError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("malformed interval at byte {pos}: [{lo}, {hi}]")]
    MalformedInterval { pos: usize, lo: f64, hi: f64 },
    #[error("trace too short: formula needs {required} samples, trace has {available}")]
    TraceTooShort { required: usize, available: usize },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Abs(Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cmp {
    Ge,
    Gt,
    Le,
    Lt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Option<Self> {
        (0.0 <= lo && lo <= hi && hi.is_finite()).then_some(Self { lo, hi })
    }

    /// Grid offsets `(first, last)` covered by the closed interval.
    /// `first > last` when no grid point falls inside.
    pub fn offsets(&self, dt: f64) -> (usize, usize) {
        let first = (self.lo / dt - GRID_EPS).ceil().max(0.0) as usize;
        let last = (self.hi / dt + GRID_EPS).floor().max(0.0) as usize;
        (first, last)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StlFormula {
    True,
    False,
    Pred { lhs: Expr, cmp: Cmp, rhs: Expr },
    Not(Box<StlFormula>),
    And(Box<StlFormula>, Box<StlFormula>),
    Or(Box<StlFormula>, Box<StlFormula>),
    Implies(Box<StlFormula>, Box<StlFormula>),
    Always(Interval, Box<StlFormula>),
    Eventually(Interval, Box<StlFormula>),
    Until(Interval, Box<StlFormula>, Box<StlFormula>),
}

impl Expr {
    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => out.push(v),
            Expr::Neg(e) | Expr::Abs(e) => e.collect_vars(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Evaluates with a channel lookup.
    pub fn eval(&self, lookup: &impl Fn(&str) -> f64) -> f64 {
        match self {
            Expr::Num(x) => *x,
            Expr::Var(v) => lookup(v),
            Expr::Neg(e) => -e.eval(lookup),
            Expr::Abs(e) => e.eval(lookup).abs(),
            Expr::Add(a, b) => a.eval(lookup) + b.eval(lookup),
            Expr::Sub(a, b) => a.eval(lookup) - b.eval(lookup),
            Expr::Mul(a, b) => a.eval(lookup) * b.eval(lookup),
            Expr::Div(a, b) => a.eval(lookup) / b.eval(lookup),
        }
    }
}

/// Signed margin of a comparison.
pub fn predicate_margin(lhs: f64, cmp: Cmp, rhs: f64) -> f64 {
    match cmp {
        Cmp::Ge | Cmp::Gt => lhs - rhs,
        Cmp::Le | Cmp::Lt => rhs - lhs,
    }
}

impl StlFormula {
    /// Time horizon in seconds: how far past `t0` the formula looks.
    pub fn horizon(&self) -> f64 {
        use StlFormula::*;
        match self {
            True | False | Pred { .. } => 0.0,
            Not(f) => f.horizon(),
            And(a, b) | Or(a, b) | Implies(a, b) => a.horizon().max(b.horizon()),
            Always(i, f) | Eventually(i, f) => i.hi + f.horizon(),
            Until(i, a, b) => i.hi + a.horizon().max(b.horizon()),
        }
    }

    /// Horizon in grid steps for sampling period `dt`.
    pub fn horizon_steps(&self, dt: f64) -> usize {
        use StlFormula::*;
        match self {
            True | False | Pred { .. } => 0,
            Not(f) => f.horizon_steps(dt),
            And(a, b) | Or(a, b) | Implies(a, b) => a.horizon_steps(dt).max(b.horizon_steps(dt)),
            Always(i, f) | Eventually(i, f) => i.offsets(dt).1 + f.horizon_steps(dt),
            Until(i, a, b) => i.offsets(dt).1 + a.horizon_steps(dt).max(b.horizon_steps(dt)),
        }
    }

    pub fn channels(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit_preds(&mut |lhs, rhs| {
            lhs.collect_vars(&mut out);
            rhs.collect_vars(&mut out);
        });
        out.sort_unstable();
        out.dedup();
        out
    }

    fn visit_preds<'a>(&'a self, f: &mut impl FnMut(&'a Expr, &'a Expr)) {
        use StlFormula::*;
        match self {
            True | False => {}
            Pred { lhs, rhs, .. } => f(lhs, rhs),
            Not(a) | Always(_, a) | Eventually(_, a) => a.visit_preds(f),
            And(a, b) | Or(a, b) | Implies(a, b) | Until(_, a, b) => {
                a.visit_preds(f);
                b.visit_preds(f);
            }
        }
    }

    pub fn not(self) -> Self {
        StlFormula::Not(Box::new(self))
    }
}

// ---------------------------------------------------------------------------
// Evaluation

enum CExpr<'a> {
    Num(f64),
    Var(Channel<'a>),
    Neg(Box<CExpr<'a>>),
    Abs(Box<CExpr<'a>>),
    Bin(char, Box<CExpr<'a>>, Box<CExpr<'a>>),
}

impl<'a> CExpr<'a> {
    fn compile(e: &Expr, trace: &'a Trace) -> Result<Self, SignalError> {
        Ok(match e {
            Expr::Num(x) => CExpr::Num(*x),
            Expr::Var(v) => CExpr::Var(trace.channel(v)?),
            Expr::Neg(a) => CExpr::Neg(Box::new(Self::compile(a, trace)?)),
            Expr::Abs(a) => CExpr::Abs(Box::new(Self::compile(a, trace)?)),
            Expr::Add(a, b) => CExpr::Bin('+', Box::new(Self::compile(a, trace)?), Box::new(Self::compile(b, trace)?)),
            Expr::Sub(a, b) => CExpr::Bin('-', Box::new(Self::compile(a, trace)?), Box::new(Self::compile(b, trace)?)),
            Expr::Mul(a, b) => CExpr::Bin('*', Box::new(Self::compile(a, trace)?), Box::new(Self::compile(b, trace)?)),
            Expr::Div(a, b) => CExpr::Bin('/', Box::new(Self::compile(a, trace)?), Box::new(Self::compile(b, trace)?)),
        })
    }

    fn at(&self, i: usize) -> f64 {
        match self {
            CExpr::Num(x) => *x,
            CExpr::Var(c) => c.at(i),
            CExpr::Neg(a) => -a.at(i),
            CExpr::Abs(a) => a.at(i).abs(),
            CExpr::Bin(op, a, b) => {
                let (x, y) = (a.at(i), b.at(i));
                match op {
                    '+' => x + y,
                    '-' => x - y,
                    '*' => x * y,
                    _ => x / y,
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Extremum {
    Min,
    Max,
}

/// `out[i] = min/max of sig over [i+first, i+last]`, with the window clipped
/// to the end of the signal and collapsed onto the last sample when it starts
/// past the end.
fn sliding(sig: &[f64], first: usize, last: usize, ext: Extremum) -> Vec<f64> {
    let n = sig.len();
    let empty = match ext {
        Extremum::Min => f64::INFINITY,
        Extremum::Max => f64::NEG_INFINITY,
    };
    if first > last {
        return vec![empty; n];
    }
    let better = |a: f64, b: f64| match ext {
        Extremum::Min => a <= b,
        Extremum::Max => a >= b,
    };
    let mut out = Vec::with_capacity(n);
    let mut dq: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let mut next = 0usize;
    for i in 0..n {
        let s = (i + first).min(n - 1);
        let e = (i + last).min(n - 1);
        while next <= e {
            while let Some(&back) = dq.back() {
                if better(sig[next], sig[back]) {
                    dq.pop_back();
                } else {
                    break;
                }
            }
            dq.push_back(next);
            next += 1;
        }
        while let Some(&front) = dq.front() {
            if front < s {
                dq.pop_front();
            } else {
                break;
            }
        }
        out.push(sig[*dq.front().expect("window is nonempty")]);
    }
    out
}

fn until_signal(left: &[f64], right: &[f64], first: usize, last: usize) -> Vec<f64> {
    let n = left.len();
    let mut out = vec![f64::NEG_INFINITY; n];
    if first > last {
        return out;
    }
    for (i, slot) in out.iter_mut().enumerate() {
        let s = (i + first).min(n - 1);
        let e = (i + last).min(n - 1);
        // running min of the left operand over [i, j)
        let mut left_min = f64::INFINITY;
        let mut best = f64::NEG_INFINITY;
        for j in i..=e {
            if j >= s {
                best = best.max(right[j].min(left_min));
            }
            left_min = left_min.min(left[j]);
        }
        *slot = best;
    }
    out
}

fn signal_of(f: &StlFormula, trace: &Trace) -> Result<Vec<f64>, StlError> {
    use StlFormula::*;
    let n = trace.len();
    let dt = trace.dt;
    Ok(match f {
        True => vec![f64::INFINITY; n],
        False => vec![f64::NEG_INFINITY; n],
        Pred { lhs, cmp, rhs } => {
            let l = CExpr::compile(lhs, trace)?;
            let r = CExpr::compile(rhs, trace)?;
            (0..n).map(|i| predicate_margin(l.at(i), *cmp, r.at(i))).collect()
        }
        Not(a) => signal_of(a, trace)?.into_iter().map(|x| -x).collect(),
        And(a, b) => zip_with(signal_of(a, trace)?, signal_of(b, trace)?, f64::min),
        Or(a, b) => zip_with(signal_of(a, trace)?, signal_of(b, trace)?, f64::max),
        Implies(a, b) => zip_with(signal_of(a, trace)?, signal_of(b, trace)?, |x, y| (-x).max(y)),
        Always(iv, a) => {
            let (first, last) = iv.offsets(dt);
            sliding(&signal_of(a, trace)?, first, last, Extremum::Min)
        }
        Eventually(iv, a) => {
            let (first, last) = iv.offsets(dt);
            sliding(&signal_of(a, trace)?, first, last, Extremum::Max)
        }
        Until(iv, a, b) => {
            let (first, last) = iv.offsets(dt);
            until_signal(&signal_of(a, trace)?, &signal_of(b, trace)?, first, last)
        }
    })
}

fn zip_with(a: Vec<f64>, b: Vec<f64>, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.into_iter().zip(b).map(|(x, y)| f(x, y)).collect()
}

/// Robustness at every sample of the trace.
///
/// Where a temporal window reaches past the end of the trace it is clipped to
/// the samples that exist (and collapsed onto the final sample if it starts
/// past the end). At every index whose horizon fits inside the trace the value
/// equals [`robustness`] exactly.
pub fn robustness_signal(trace: &Trace, formula: &StlFormula) -> Result<Vec<f64>, StlError> {
    signal_of(formula, trace)
}

/// Robustness of `formula` at time `t0`; the trace must cover `t0 + horizon`.
pub fn robustness(trace: &Trace, formula: &StlFormula, t0: f64) -> Result<f64, StlError> {
    let i0 = trace.index_at(t0.max(0.0));
    let required = i0 + formula.horizon_steps(trace.dt) + 1;
    if t0 < 0.0 || required > trace.len() {
        return Err(StlError::TraceTooShort {
            required,
            available: trace.len(),
        });
    }
    Ok(signal_of(formula, trace)?[i0])
}

pub fn satisfied(trace: &Trace, formula: &StlFormula) -> Result<bool, StlError> {
    Ok(robustness(trace, formula, 0.0)? >= 0.0)
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(&'static str),
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, StlError> {
    const SYMS: [&str; 16] = [
        "->", ">=", "<=", "&&", "||", ">", "<", "(", ")", "[", "]", ",", "+", "-", "*", "/",
    ];
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    'outer: while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit())) {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let lit = &text[start..i];
            let v = lit.parse::<f64>().map_err(|_| StlError::Syntax {
                pos: start,
                msg: format!("bad number `{lit}`"),
            })?;
            out.push((start, Tok::Num(v)));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(text[start..i].to_string())));
            continue;
        }
        for s in SYMS {
            if text[i..].starts_with(s) {
                let sym = match s {
                    "&&" => "&",
                    "||" => "|",
                    other => other,
                };
                out.push((i, Tok::Sym(sym)));
                i += s.len();
                continue 'outer;
            }
        }
        match c {
            '!' => out.push((i, Tok::Sym("!"))),
            '&' => out.push((i, Tok::Sym("&"))),
            '|' => out.push((i, Tok::Sym("|"))),
            _ => {
                return Err(StlError::Syntax {
                    pos: i,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        }
        i += 1;
    }
    Ok(out)
}

const RESERVED: [&str; 9] = ["G", "F", "U", "abs", "and", "or", "not", "true", "false"];

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, StlError> {
        Err(StlError::Syntax {
            pos: self.offset(),
            msg: msg.into(),
        })
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(x)) if *x == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(x)) if x == k)
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), StlError> {
        if self.is_sym(s) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{s}`"))
        }
    }

    fn number(&mut self) -> Result<f64, StlError> {
        let neg = if self.is_sym("-") {
            self.pos += 1;
            true
        } else {
            false
        };
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(if neg { -v } else { v })
            }
            _ => self.err("expected a number"),
        }
    }

    fn interval(&mut self) -> Result<Interval, StlError> {
        let at = self.offset();
        self.expect_sym("[")?;
        let lo = self.number()?;
        self.expect_sym(",")?;
        let hi = self.number()?;
        self.expect_sym("]")?;
        Interval::new(lo, hi).ok_or(StlError::MalformedInterval { pos: at, lo, hi })
    }

    fn formula(&mut self) -> Result<StlFormula, StlError> {
        let lhs = self.until()?;
        if self.is_sym("->") {
            self.pos += 1;
            let rhs = self.formula()?;
            return Ok(StlFormula::Implies(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<StlFormula, StlError> {
        let lhs = self.or()?;
        if self.is_kw("U") {
            self.pos += 1;
            let iv = self.interval()?;
            let rhs = self.or()?;
            return Ok(StlFormula::Until(iv, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<StlFormula, StlError> {
        let mut lhs = self.and()?;
        while self.is_kw("or") || self.is_sym("|") {
            self.pos += 1;
            let rhs = self.and()?;
            lhs = StlFormula::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<StlFormula, StlError> {
        let mut lhs = self.unary()?;
        while self.is_kw("and") || self.is_sym("&") {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = StlFormula::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<StlFormula, StlError> {
        if self.is_kw("not") || self.is_sym("!") {
            self.pos += 1;
            return Ok(StlFormula::Not(Box::new(self.unary()?)));
        }
        if self.is_kw("G") || self.is_kw("F") {
            let always = self.is_kw("G");
            self.pos += 1;
            let iv = self.interval()?;
            let body = Box::new(self.unary()?);
            return Ok(if always {
                StlFormula::Always(iv, body)
            } else {
                StlFormula::Eventually(iv, body)
            });
        }
        if self.is_kw("true") {
            self.pos += 1;
            return Ok(StlFormula::True);
        }
        if self.is_kw("false") {
            self.pos += 1;
            return Ok(StlFormula::False);
        }
        if self.is_sym("(") {
            // Either a parenthesized formula or the start of an arithmetic
            // expression such as `(a + b) >= 0`.
            let save = self.pos;
            self.pos += 1;
            let attempt = self.formula().and_then(|f| self.expect_sym(")").map(|()| f));
            let formula_err = match attempt {
                Ok(f) if !self.continues_arithmetic() => return Ok(f),
                Ok(_) => StlError::Syntax {
                    pos: self.offset(),
                    msg: "arithmetic after a parenthesized formula".into(),
                },
                Err(e) => e,
            };
            self.pos = save;
            return self.predicate().map_err(|e| furthest(formula_err, e));
        }
        self.predicate()
    }

    fn continues_arithmetic(&self) -> bool {
        matches!(
            self.peek(),
            Some(Tok::Sym(">=" | "<=" | ">" | "<" | "+" | "-" | "*" | "/"))
        )
    }

    fn predicate(&mut self) -> Result<StlFormula, StlError> {
        let lhs = self.expr()?;
        let cmp = match self.peek() {
            Some(Tok::Sym(">=")) => Cmp::Ge,
            Some(Tok::Sym(">")) => Cmp::Gt,
            Some(Tok::Sym("<=")) => Cmp::Le,
            Some(Tok::Sym("<")) => Cmp::Lt,
            _ => return self.err("expected a comparison (>=, >, <=, <)"),
        };
        self.pos += 1;
        let rhs = self.expr()?;
        Ok(StlFormula::Pred { lhs, cmp, rhs })
    }

    fn expr(&mut self) -> Result<Expr, StlError> {
        let mut lhs = self.term()?;
        loop {
            if self.is_sym("+") {
                self.pos += 1;
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.is_sym("-") {
                self.pos += 1;
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, StlError> {
        let mut lhs = self.factor()?;
        loop {
            if self.is_sym("*") {
                self.pos += 1;
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.is_sym("/") {
                self.pos += 1;
                lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, StlError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Sym("-")) => {
                self.pos += 1;
                Ok(match self.factor()? {
                    Expr::Num(v) => Expr::Num(-v),
                    e => Expr::Neg(Box::new(e)),
                })
            }
            Some(Tok::Sym("(")) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) if name == "abs" => {
                self.pos += 1;
                self.expect_sym("(")?;
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(Expr::Abs(Box::new(e)))
            }
            Some(Tok::Ident(name)) if !RESERVED.contains(&name.as_str()) => {
                self.pos += 1;
                Ok(Expr::Var(name))
            }
            Some(Tok::Ident(name)) => self.err(format!("reserved word `{name}` used as a channel")),
            _ => self.err("expected a number, channel or `(`"),
        }
    }
}

fn furthest(a: StlError, b: StlError) -> StlError {
    let pos = |e: &StlError| match e {
        StlError::Syntax { pos, .. } | StlError::MalformedInterval { pos, .. } => *pos,
        _ => 0,
    };
    if matches!(a, StlError::MalformedInterval { .. }) || pos(&a) > pos(&b) {
        a
    } else {
        b
    }
}

pub fn parse_stl(text: &str) -> Result<StlFormula, StlError> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    let f = p.formula()?;
    if p.pos != p.toks.len() {
        return p.err("unexpected trailing input");
    }
    Ok(f)
}

impl std::str::FromStr for StlFormula {
    type Err = StlError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_stl(s)
    }
}

// ---------------------------------------------------------------------------
// Printing (fully parenthesized, so the output re-parses to the same tree)

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(e) => write!(f, "-({e})"),
            Expr::Abs(e) => write!(f, "abs({e})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
        }
    }
}

impl fmt::Display for Cmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cmp::Ge => ">=",
            Cmp::Gt => ">",
            Cmp::Le => "<=",
            Cmp::Lt => "<",
        })
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.lo, self.hi)
    }
}

impl fmt::Display for StlFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use StlFormula::*;
        match self {
            True => f.write_str("true"),
            False => f.write_str("false"),
            Pred { lhs, cmp, rhs } => write!(f, "{lhs} {cmp} {rhs}"),
            Not(a) => write!(f, "not ({a})"),
            And(a, b) => write!(f, "(({a}) and ({b}))"),
            Or(a, b) => write!(f, "(({a}) or ({b}))"),
            Implies(a, b) => write!(f, "(({a}) -> ({b}))"),
            Always(i, a) => write!(f, "G{i} ({a})"),
            Eventually(i, a) => write!(f, "F{i} ({a})"),
            Until(i, a, b) => write!(f, "(({a}) U{i} ({b}))"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn speed_trace(values: &[f64], dt: f64) -> Trace {
        Trace {
            dt,
            state_names: vec!["speed".into()],
            states: values.iter().map(|&v| vec![v]).collect(),
            output_names: vec![],
            outputs: vec![vec![]; values.len()],
            actions: vec![0.0; values.len()],
            input_names: vec![],
            inputs: vec![vec![]; values.len()],
            extra_names: vec![],
            extra: vec![],
        }
    }

    #[test]
    fn parses_reference_specs() {
        let acc = parse_stl("G[0,50](d_rel - (d_safe + 1.4*v_ego) >= 0)").unwrap();
        match &acc {
            StlFormula::Always(iv, body) => {
                assert_eq!((iv.lo, iv.hi), (0.0, 50.0));
                assert!(matches!(**body, StlFormula::Pred { cmp: Cmp::Ge, .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(acc.channels(), vec!["d_rel", "d_safe", "v_ego"]);
        let cstr = parse_stl("G[27,30](abs(error) <= 0.35)").unwrap();
        assert!(matches!(cstr, StlFormula::Always(Interval { lo: 27.0, hi: 30.0 }, _)));
        let acc2 =
            parse_stl("G[0,50]((d_rel < d_safe + 1.4*v_ego) -> F[0,5](d_rel > d_safe + 1.4*v_ego))").unwrap();
        assert_eq!(acc2.horizon(), 55.0);
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(parse_stl("G[0,1](x >= 0"), Err(StlError::Syntax { .. })));
        assert!(matches!(
            parse_stl("G[2,1](x >= 0)"),
            Err(StlError::MalformedInterval { lo: 2.0, hi: 1.0, .. })
        ));
        assert!(matches!(parse_stl("x >= "), Err(StlError::Syntax { pos: 5, .. })));
        assert!(parse_stl("G >= 1").is_err());
        assert!(parse_stl("x >= 1 y").is_err());
    }

    #[test]
    fn round_trip_reference_specs() {
        for s in [
            "G[0,50](d_rel - (d_safe + 1.4*v_ego) >= 0)",
            "G[27,30](abs(error) <= 0.35)",
            "G[0,50]((d_rel < d_safe + 1.4*v_ego) -> F[0,5](d_rel > d_safe + 1.4*v_ego))",
            "(x > 0 U[1,2] y < -3) and not true",
        ] {
            let f = parse_stl(s).unwrap();
            assert_eq!(parse_stl(&f.to_string()).unwrap(), f, "{s}");
        }
    }

    #[test]
    fn constant_speed_margin() {
        let phi = parse_stl("G[0,30](speed <= 60)").unwrap();
        let ok = speed_trace(&[58.0; 31], 1.0);
        let bad = speed_trace(&[62.0; 31], 1.0);
        assert_eq!(robustness(&ok, &phi, 0.0).unwrap(), 2.0);
        assert_eq!(robustness(&bad, &phi, 0.0).unwrap(), -2.0);
        assert!(satisfied(&ok, &phi).unwrap());
        assert!(!satisfied(&bad, &phi).unwrap());
        let edge = speed_trace(&[60.0; 31], 1.0);
        assert_eq!(robustness(&edge, &phi, 0.0).unwrap(), 0.0);
        assert!(satisfied(&edge, &phi).unwrap());
    }

    #[test]
    fn short_trace_is_rejected() {
        let phi = parse_stl("G[0,30](speed <= 60)").unwrap();
        let tr = speed_trace(&[1.0; 10], 1.0);
        assert_eq!(
            robustness(&tr, &phi, 0.0),
            Err(StlError::TraceTooShort {
                required: 31,
                available: 10
            })
        );
    }

    #[test]
    fn until_basic() {
        // speed > 0 holds until speed >= 5 at index 3
        let tr = speed_trace(&[1.0, 2.0, 3.0, 5.0, -1.0], 1.0);
        let phi = parse_stl("(speed > 0) U[0,4] (speed >= 5)").unwrap();
        assert_eq!(robustness(&tr, &phi, 0.0).unwrap(), 0.0);
        let phi = parse_stl("(speed > 0) U[0,2] (speed >= 5)").unwrap();
        assert_eq!(robustness(&tr, &phi, 0.0).unwrap(), -2.0);
    }

    #[test]
    fn unknown_channel() {
        let tr = speed_trace(&[1.0], 1.0);
        let phi = parse_stl("accel <= 1").unwrap();
        assert!(matches!(robustness(&tr, &phi, 0.0), Err(StlError::Signal(_))));
    }

    #[test]
    fn grid_snapping_is_closed() {
        let tr = speed_trace(&[0.0, 1.0, 2.0, 3.0, 4.0], 0.5);
        // [0.5, 1.0] covers indices 1 and 2
        let phi = parse_stl("F[0.5,1](speed >= 0)").unwrap();
        assert_eq!(robustness(&tr, &phi, 0.0).unwrap(), 2.0);
        let phi = parse_stl("G[0.5,1](speed >= 0)").unwrap();
        assert_eq!(robustness(&tr, &phi, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn sliding_matches_naive() {
        let sig: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        for (first, last) in [(0, 0), (0, 3), (2, 5), (10, 50), (39, 45)] {
            let fast = sliding(&sig, first, last, Extremum::Min);
            for i in 0..sig.len() {
                let s = (i + first).min(sig.len() - 1);
                let e = (i + last).min(sig.len() - 1);
                let naive = sig[s..=e].iter().copied().fold(f64::INFINITY, f64::min);
                assert_eq!(fast[i], naive);
            }
        }
    }
}
