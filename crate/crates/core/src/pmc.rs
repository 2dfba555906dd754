//! PCTL model checking on finite MDPs by value iteration.
//!
//! # Query syntax
//!
//! ```text
//! state := conj
//! conj  := unary ( "&" unary )*
//! unary := "!" unary | "true" | "false" | "\"" ap "\"" | "(" state ")"
//!        | "P" cmp prob "[" path "]"
//! path  := "X" state | "F" bound? state | "G" bound? state
//!        | state "U" bound? state
//! cmp   := "<" | "<=" | ">" | ">="
//! bound := "<=" k
//! ```
//!
//! Atomic propositions are `"rob=-1"`, `"rob=+1"` and `"init"`. The two
//! canonical safety queries:
//!
//! ```
//! use cpsafe::pmc::parse_pctl;
//! let reach_unsafe = parse_pctl(r#"P>0.8 [ F<=10 "rob=-1" ]"#).unwrap();
//! let next_unsafe = parse_pctl(r#"P>0.5 [ X "rob=-1" ]"#).unwrap();
//! assert_eq!(reach_unsafe.to_string(), r#"P>0.8 [ F<=10 "rob=-1" ]"#);
//! # let _ = next_unsafe;
//! ```
//!
//! A probability operator is resolved against the extremal probability over
//! all schedulers: the maximum under [`Quantifier::Max`] (the default, the
//! worst case for reach-unsafe queries) or the minimum. States without
//! outgoing transitions behave as if they carried a probability-one self
//! loop.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::Mdp;

/// Sup-norm stopping tolerance for unbounded iteration.
pub const CONVERGENCE_TOL: f64 = 1e-9;
/// Iteration cap for unbounded operators.
pub const MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PmcError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("probability bound {0} is outside [0, 1]")]
    BoundOutOfRange(f64),
    #[error("unknown atomic proposition \"{0}\"")]
    UnknownProposition(String),
    #[error("state {state} is outside 0..{n}")]
    StateOutOfRange { state: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantifier {
    #[default]
    Max,
    Min,
}

impl Quantifier {
    pub fn dual(self) -> Self {
        match self {
            Quantifier::Max => Quantifier::Min,
            Quantifier::Min => Quantifier::Max,
        }
    }
}

impl FromStr for Quantifier {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(Quantifier::Max),
            "min" => Ok(Quantifier::Min),
            other => Err(format!("unknown quantifier {other:?} (expected max or min)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbCmp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl ProbCmp {
    pub fn holds(self, p: f64, bound: f64) -> bool {
        match self {
            ProbCmp::Lt => p < bound,
            ProbCmp::Le => p <= bound,
            ProbCmp::Gt => p > bound,
            ProbCmp::Ge => p >= bound,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            ProbCmp::Lt => "<",
            ProbCmp::Le => "<=",
            ProbCmp::Gt => ">",
            ProbCmp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PctlFormula {
    True,
    False,
    Atom(String),
    Not(Box<PctlFormula>),
    And(Box<PctlFormula>, Box<PctlFormula>),
    Prob {
        cmp: ProbCmp,
        bound: f64,
        path: Box<PathFormula>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathFormula {
    Next(PctlFormula),
    Finally(Option<usize>, PctlFormula),
    Globally(Option<usize>, PctlFormula),
    Until(Option<usize>, PctlFormula, PctlFormula),
}

impl fmt::Display for PctlFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PctlFormula::True => f.write_str("true"),
            PctlFormula::False => f.write_str("false"),
            PctlFormula::Atom(a) => write!(f, "\"{a}\""),
            PctlFormula::Not(a) => write!(f, "!{}", Operand(a)),
            PctlFormula::And(a, b) => write!(f, "{} & {}", Operand(a), Operand(b)),
            PctlFormula::Prob { cmp, bound, path } => write!(f, "P{}{} [ {} ]", cmp.symbol(), bound, path),
        }
    }
}

/// Parenthesizes conjunctions when nested.
struct Operand<'a>(&'a PctlFormula);

impl fmt::Display for Operand<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            PctlFormula::And(..) => write!(f, "({})", self.0),
            other => write!(f, "{other}"),
        }
    }
}

fn write_bound(f: &mut fmt::Formatter<'_>, k: Option<usize>) -> fmt::Result {
    match k {
        Some(k) => write!(f, "<={k}"),
        None => Ok(()),
    }
}

impl fmt::Display for PathFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathFormula::Next(a) => write!(f, "X {a}"),
            PathFormula::Finally(k, a) => {
                f.write_str("F")?;
                write_bound(f, *k)?;
                write!(f, " {a}")
            }
            PathFormula::Globally(k, a) => {
                f.write_str("G")?;
                write_bound(f, *k)?;
                write!(f, " {a}")
            }
            PathFormula::Until(k, a, b) => {
                write!(f, "{} U", Operand(a))?;
                write_bound(f, *k)?;
                write!(f, " {}", Operand(b))
            }
        }
    }
}

impl FromStr for PctlFormula {
    type Err = PmcError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_pctl(s)
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    Num(f64, String),
    Sym(&'static str),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, PmcError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c == '"' {
            let end = src[i + 1..].find('"').ok_or(PmcError::Syntax {
                pos: i,
                msg: "unterminated string".into(),
            })?;
            out.push((start, Tok::Str(src[i + 1..i + 1 + end].to_string())));
            i += end + 2;
        } else if c.is_ascii_alphabetic() {
            while i < bytes.len() && (bytes[i] as char).is_ascii_alphanumeric() {
                i += 1;
            }
            // Operator keywords glue onto what follows (`P>0.8`, `F<=10`).
            out.push((start, Tok::Word(src[start..i].to_string())));
        } else if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.' || bytes[i] == b'e') {
                i += 1;
            }
            let text = &src[start..i];
            let v = text.parse().map_err(|_| PmcError::Syntax {
                pos: start,
                msg: format!("bad number {text:?}"),
            })?;
            out.push((start, Tok::Num(v, text.to_string())));
        } else {
            let two = src.get(i..i + 2).unwrap_or("");
            let sym = match two {
                "<=" => Some("<="),
                ">=" => Some(">="),
                _ => None,
            };
            let sym = match sym {
                Some(s) => s,
                None => match c {
                    '<' => "<",
                    '>' => ">",
                    '[' => "[",
                    ']' => "]",
                    '(' => "(",
                    ')' => ")",
                    '!' => "!",
                    '&' => "&",
                    _ => {
                        return Err(PmcError::Syntax {
                            pos: i,
                            msg: format!("unexpected character {c:?}"),
                        })
                    }
                },
            };
            i += sym.len();
            out.push((start, Tok::Sym(sym)));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.len, |(p, _)| *p)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, PmcError> {
        Err(PmcError::Syntax {
            pos: self.offset(),
            msg: msg.into(),
        })
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(x)) if *x == s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), PmcError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected '{s}'"))
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Word(x)) if x == w) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn state(&mut self) -> Result<PctlFormula, PmcError> {
        let mut lhs = self.unary()?;
        while self.eat_sym("&") {
            let rhs = self.unary()?;
            lhs = PctlFormula::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<PctlFormula, PmcError> {
        if self.eat_sym("!") {
            return Ok(PctlFormula::Not(Box::new(self.unary()?)));
        }
        if self.eat_sym("(") {
            let f = self.state()?;
            self.expect_sym(")")?;
            return Ok(f);
        }
        match self.peek().cloned() {
            Some(Tok::Str(s)) => {
                self.pos += 1;
                Ok(PctlFormula::Atom(s))
            }
            Some(Tok::Word(w)) if w == "true" => {
                self.pos += 1;
                Ok(PctlFormula::True)
            }
            Some(Tok::Word(w)) if w == "false" => {
                self.pos += 1;
                Ok(PctlFormula::False)
            }
            Some(Tok::Word(w)) if w == "P" => {
                self.pos += 1;
                self.prob()
            }
            _ => self.err("expected a state formula"),
        }
    }

    fn prob(&mut self) -> Result<PctlFormula, PmcError> {
        let cmp = match self.peek() {
            Some(Tok::Sym("<")) => ProbCmp::Lt,
            Some(Tok::Sym("<=")) => ProbCmp::Le,
            Some(Tok::Sym(">")) => ProbCmp::Gt,
            Some(Tok::Sym(">=")) => ProbCmp::Ge,
            _ => return self.err("expected a comparison after P"),
        };
        self.pos += 1;
        let bound = match self.peek() {
            Some(Tok::Num(v, _)) => *v,
            _ => return self.err("expected a probability bound"),
        };
        if !(0.0..=1.0).contains(&bound) {
            return Err(PmcError::BoundOutOfRange(bound));
        }
        self.pos += 1;
        self.expect_sym("[")?;
        let path = self.path()?;
        self.expect_sym("]")?;
        Ok(PctlFormula::Prob {
            cmp,
            bound,
            path: Box::new(path),
        })
    }

    fn step_bound(&mut self) -> Result<Option<usize>, PmcError> {
        if !self.eat_sym("<=") {
            return Ok(None);
        }
        match self.peek() {
            Some(Tok::Num(_, text)) if text.chars().all(|c| c.is_ascii_digit()) => {
                let k = text.parse().map_err(|_| PmcError::Syntax {
                    pos: self.offset(),
                    msg: "step bound too large".into(),
                })?;
                self.pos += 1;
                Ok(Some(k))
            }
            _ => self.err("expected a nonnegative integer step bound"),
        }
    }

    fn path(&mut self) -> Result<PathFormula, PmcError> {
        if self.eat_word("X") {
            return Ok(PathFormula::Next(self.state()?));
        }
        if self.eat_word("F") {
            let k = self.step_bound()?;
            return Ok(PathFormula::Finally(k, self.state()?));
        }
        if self.eat_word("G") {
            let k = self.step_bound()?;
            return Ok(PathFormula::Globally(k, self.state()?));
        }
        let lhs = self.state()?;
        if !self.eat_word("U") {
            return self.err("expected 'U' in a path formula");
        }
        let k = self.step_bound()?;
        let rhs = self.state()?;
        Ok(PathFormula::Until(k, lhs, rhs))
    }
}

pub fn parse_pctl(text: &str) -> Result<PctlFormula, PmcError> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        len: text.len(),
    };
    let f = p.state()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(f)
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone, PartialEq)]
pub struct Reach {
    pub probs: Vec<f64>,
    pub iterations: usize,
    /// False when an unbounded iteration hit [`MAX_ITERATIONS`].
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub holds: bool,
    /// Extremal path probability when the formula is a top-level `P` operator.
    pub probability: Option<f64>,
    pub quantifier: Quantifier,
}

fn sweep(mdp: &Mdp, left: &[bool], right: &[bool], q: Quantifier, x: &[f64], next: &mut [f64]) -> f64 {
    let mut diff = 0.0_f64;
    for s in 0..mdp.num_states() {
        let v = if right[s] {
            1.0
        } else if !left[s] {
            0.0
        } else {
            let cs = mdp.choices(s);
            if cs.is_empty() {
                x[s]
            } else {
                let vals = cs
                    .iter()
                    .map(|c| c.successors.iter().map(|&(t, p)| p * x[t]).sum::<f64>());
                match q {
                    Quantifier::Max => vals.fold(f64::NEG_INFINITY, f64::max),
                    Quantifier::Min => vals.fold(f64::INFINITY, f64::min),
                }
            }
        };
        diff = diff.max((v - x[s]).abs());
        next[s] = v;
    }
    diff
}

/// Extremal probability of `left U<=k right` from every state.
pub fn until_prob(mdp: &Mdp, left: &[bool], right: &[bool], bound: Option<usize>, q: Quantifier) -> Reach {
    let n = mdp.num_states();
    let mut x: Vec<f64> = right.iter().map(|&r| if r { 1.0 } else { 0.0 }).collect();
    let mut next = vec![0.0; n];
    match bound {
        Some(k) => {
            for _ in 0..k {
                sweep(mdp, left, right, q, &x, &mut next);
                std::mem::swap(&mut x, &mut next);
            }
            Reach {
                probs: x,
                iterations: k,
                converged: true,
            }
        }
        None => {
            for it in 1..=MAX_ITERATIONS {
                let diff = sweep(mdp, left, right, q, &x, &mut next);
                std::mem::swap(&mut x, &mut next);
                if diff < CONVERGENCE_TOL {
                    return Reach {
                        probs: x,
                        iterations: it,
                        converged: true,
                    };
                }
            }
            log::warn!("value iteration hit the {MAX_ITERATIONS}-iteration cap");
            Reach {
                probs: x,
                iterations: MAX_ITERATIONS,
                converged: false,
            }
        }
    }
}

/// Extremal probability of reaching `target` within `bound` steps.
pub fn reach_prob(mdp: &Mdp, target: &[bool], bound: Option<usize>, q: Quantifier) -> Reach {
    let all = vec![true; mdp.num_states()];
    until_prob(mdp, &all, target, bound, q)
}

/// States satisfying `f`.
pub fn sat_set(mdp: &Mdp, f: &PctlFormula, q: Quantifier) -> Result<Vec<bool>, PmcError> {
    let n = mdp.num_states();
    Ok(match f {
        PctlFormula::True => vec![true; n],
        PctlFormula::False => vec![false; n],
        PctlFormula::Atom(a) => mdp
            .states_with(a)
            .ok_or_else(|| PmcError::UnknownProposition(a.clone()))?,
        PctlFormula::Not(a) => sat_set(mdp, a, q)?.into_iter().map(|b| !b).collect(),
        PctlFormula::And(a, b) => {
            let (a, b) = (sat_set(mdp, a, q)?, sat_set(mdp, b, q)?);
            a.iter().zip(&b).map(|(x, y)| *x && *y).collect()
        }
        PctlFormula::Prob { cmp, bound, path } => {
            let probs = path_prob(mdp, path, q)?;
            probs.iter().map(|&p| cmp.holds(p, *bound)).collect()
        }
    })
}

/// Extremal probability of `path` from every state.
pub fn path_prob(mdp: &Mdp, path: &PathFormula, q: Quantifier) -> Result<Vec<f64>, PmcError> {
    let n = mdp.num_states();
    Ok(match path {
        PathFormula::Next(a) => {
            let sat = sat_set(mdp, a, q)?;
            let ind: Vec<f64> = sat.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let mut out = vec![0.0; n];
            // One sweep with nothing pre-accepted computes the one-step expectation.
            sweep(mdp, &vec![true; n], &vec![false; n], q, &ind, &mut out);
            out
        }
        PathFormula::Finally(k, a) => reach_prob(mdp, &sat_set(mdp, a, q)?, *k, q).probs,
        PathFormula::Until(k, a, b) => until_prob(mdp, &sat_set(mdp, a, q)?, &sat_set(mdp, b, q)?, *k, q).probs,
        PathFormula::Globally(k, a) => {
            let bad: Vec<bool> = sat_set(mdp, a, q)?.into_iter().map(|b| !b).collect();
            reach_prob(mdp, &bad, *k, q.dual())
                .probs
                .into_iter()
                .map(|p| (1.0 - p).max(0.0))
                .collect()
        }
    })
}

pub fn check(mdp: &Mdp, state: usize, f: &PctlFormula, q: Quantifier) -> Result<Verdict, PmcError> {
    let n = mdp.num_states();
    if state >= n {
        return Err(PmcError::StateOutOfRange { state, n });
    }
    if let PctlFormula::Prob { cmp, bound, path } = f {
        let p = path_prob(mdp, path, q)?[state];
        return Ok(Verdict {
            holds: cmp.holds(p, *bound),
            probability: Some(p),
            quantifier: q,
        });
    }
    Ok(Verdict {
        holds: sat_set(mdp, f, q)?[state],
        probability: None,
        quantifier: q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{Label, Transition};
    use proptest::prelude::*;

    fn t(from: usize, action: i64, to: usize, prob: f64) -> Transition {
        Transition { from, action, to, prob }
    }

    #[test]
    fn parses_canonical_queries() {
        let f = parse_pctl(r#"P>0.8 [ F<=10 "rob=-1" ]"#).unwrap();
        assert_eq!(
            f,
            PctlFormula::Prob {
                cmp: ProbCmp::Gt,
                bound: 0.8,
                path: Box::new(PathFormula::Finally(Some(10), PctlFormula::Atom("rob=-1".into()))),
            }
        );
        let g = parse_pctl(r#"P>0.5 [ X "rob=-1" ]"#).unwrap();
        assert!(matches!(g, PctlFormula::Prob { path, .. } if matches!(*path, PathFormula::Next(_))));
    }

    #[test]
    fn rejects_bad_queries() {
        assert!(matches!(
            parse_pctl(r#"P>1.5 [ F "rob=-1" ]"#),
            Err(PmcError::BoundOutOfRange(_))
        ));
        assert!(parse_pctl(r#"P>0.5 [ F "rob=-1" "#).is_err());
        assert!(parse_pctl(r#"P>0.5 [ F<=x "rob=-1" ]"#).is_err());
        assert!(parse_pctl(r#"P>0.5 [ F<=1.5 "rob=-1" ]"#).is_err());
        assert!(parse_pctl(r#""a" "b""#).is_err());
        assert!(parse_pctl(r#"P 0.5 [ X "a" ]"#).is_err());
    }

    #[test]
    fn display_round_trips() {
        for q in [
            r#"P>0.8 [ F<=10 "rob=-1" ]"#,
            r#"P>=0.1 [ "rob=+1" U<=3 "rob=-1" ]"#,
            r#"!P<0.2 [ G "rob=+1" ] & true"#,
            r#"P<=1 [ (true & "init") U !"rob=-1" ]"#,
            r#"P>0 [ X P>0.5 [ F "rob=-1" ] ]"#,
        ] {
            let f = parse_pctl(q).unwrap();
            assert_eq!(parse_pctl(&f.to_string()).unwrap(), f, "{q}");
        }
    }

    fn chain() -> Mdp {
        // s0 -> (0.5 s1, 0.5 s0); s1 is unsafe.
        Mdp::new(0, vec![Label::Safe, Label::Unsafe], vec![t(0, 0, 1, 0.5), t(0, 0, 0, 0.5)]).unwrap()
    }

    #[test]
    fn two_state_chain() {
        let m = chain();
        let r = reach_prob(&m, &[false, true], Some(2), Quantifier::Max);
        assert!((r.probs[0] - 0.75).abs() < 1e-15);
        assert_eq!(r.probs[1], 1.0);
        let r = reach_prob(&m, &[false, true], None, Quantifier::Max);
        assert!(r.converged);
        assert!((r.probs[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn unsafe_state_holds_immediately() {
        let m = chain();
        let q = parse_pctl(r#"P>0.8 [ F<=10 "rob=-1" ]"#).unwrap();
        let v = check(&m, 1, &q, Quantifier::Max).unwrap();
        assert!(v.holds);
        assert_eq!(v.probability, Some(1.0));
    }

    #[test]
    fn unreachable_unsafe_gives_zero() {
        let m = Mdp::new(0, vec![Label::Safe, Label::Unsafe], vec![t(0, 0, 0, 1.0)]).unwrap();
        let q = parse_pctl(r#"P>0.8 [ F<=10 "rob=-1" ]"#).unwrap();
        let v = check(&m, 0, &q, Quantifier::Max).unwrap();
        assert!(!v.holds);
        assert_eq!(v.probability, Some(0.0));
    }

    #[test]
    fn dead_ends_are_absorbing() {
        let m = Mdp::new(0, vec![Label::Safe, Label::Unsafe], vec![]).unwrap();
        let g = parse_pctl(r#"P>=1 [ G "rob=+1" ]"#).unwrap();
        assert!(check(&m, 0, &g, Quantifier::Max).unwrap().holds);
        let x = parse_pctl(r#"P>=1 [ X "rob=+1" ]"#).unwrap();
        assert!(check(&m, 0, &x, Quantifier::Max).unwrap().holds);
        assert!(!check(&m, 1, &x, Quantifier::Max).unwrap().holds);
    }

    #[test]
    fn max_and_min_schedulers() {
        // Action 0 goes to unsafe, action 1 stays.
        let m = Mdp::new(
            0,
            vec![Label::Safe, Label::Unsafe],
            vec![t(0, 0, 1, 1.0), t(0, 1, 0, 1.0)],
        )
        .unwrap();
        let target = [false, true];
        assert_eq!(reach_prob(&m, &target, Some(3), Quantifier::Max).probs[0], 1.0);
        assert_eq!(reach_prob(&m, &target, Some(3), Quantifier::Min).probs[0], 0.0);
        let g = parse_pctl(r#"P>=1 [ G "rob=+1" ]"#).unwrap();
        assert!(check(&m, 0, &g, Quantifier::Max).unwrap().holds);
        assert!(!check(&m, 0, &g, Quantifier::Min).unwrap().holds);
    }

    #[test]
    fn errors() {
        let m = chain();
        let q = parse_pctl(r#"P>0.8 [ F "nope" ]"#).unwrap();
        assert!(matches!(
            check(&m, 0, &q, Quantifier::Max),
            Err(PmcError::UnknownProposition(_))
        ));
        assert!(matches!(
            check(&m, 9, &PctlFormula::True, Quantifier::Max),
            Err(PmcError::StateOutOfRange { .. })
        ));
    }

    /// Expectimax over the full path tree, no memoization.
    fn oracle(m: &Mdp, target: &[bool], s: usize, k: usize, q: Quantifier) -> f64 {
        if target[s] {
            return 1.0;
        }
        if k == 0 {
            return 0.0;
        }
        let cs = m.choices(s);
        if cs.is_empty() {
            return oracle(m, target, s, k - 1, q);
        }
        let vals = cs.iter().map(|c| {
            c.successors
                .iter()
                .map(|&(t, p)| p * oracle(m, target, t, k - 1, q))
                .sum::<f64>()
        });
        match q {
            Quantifier::Max => vals.fold(0.0, f64::max),
            Quantifier::Min => vals.fold(1.0, f64::min),
        }
    }

    fn arb_mdp() -> impl Strategy<Value = (Mdp, Vec<bool>, usize)> {
        (1usize..=6, 1usize..=3, 0usize..=5, any::<u64>()).prop_map(|(n, acts, k, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let labels = (0..n)
                .map(|_| if rng.random_bool(0.3) { Label::Unsafe } else { Label::Safe })
                .collect();
            let mut ts = Vec::new();
            for s in 0..n {
                for a in 0..rng.random_range(0..=acts) {
                    let weights: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * rng.random_range(0..2) as f64).collect();
                    let total: f64 = weights.iter().sum();
                    if total == 0.0 {
                        ts.push(t(s, a as i64, s, 1.0));
                        continue;
                    }
                    for (to, w) in weights.iter().enumerate() {
                        if *w > 0.0 {
                            ts.push(t(s, a as i64, to, w / total));
                        }
                    }
                }
            }
            let m = match Mdp::new(0, labels, ts) {
                Ok(m) => m,
                // Rounding can push a sum past the tolerance; fall back to a sink.
                Err(_) => Mdp::new(0, vec![Label::Safe; n], vec![]).unwrap(),
            };
            let target = m.states_with("rob=-1").unwrap();
            (m, target, k)
        })
    }

    proptest! {
        #[test]
        fn bounded_reach_matches_tree_oracle((m, target, k) in arb_mdp()) {
            for q in [Quantifier::Max, Quantifier::Min] {
                let r = reach_prob(&m, &target, Some(k), q);
                for s in 0..m.num_states() {
                    let o = oracle(&m, &target, s, k, q);
                    prop_assert!((r.probs[s] - o).abs() < 1e-9, "s={s} q={q:?} got {} want {o}", r.probs[s]);
                }
            }
        }

        #[test]
        fn monotone_in_k_and_max_dominates_min((m, target, k) in arb_mdp()) {
            let lo = reach_prob(&m, &target, Some(k), Quantifier::Max).probs;
            let hi = reach_prob(&m, &target, Some(k + 1), Quantifier::Max).probs;
            let min = reach_prob(&m, &target, Some(k), Quantifier::Min).probs;
            for s in 0..m.num_states() {
                prop_assert!(hi[s] + 1e-12 >= lo[s]);
                prop_assert!(lo[s] + 1e-12 >= min[s]);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&lo[s]));
            }
        }
    }
}
