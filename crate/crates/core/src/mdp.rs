//! Finite labeled Markov decision processes.
//!
//! States are dense indices `0..n`. Every state carries one of two atomic
//! propositions, `rob=-1` (some concrete member violates the specification)
//! or `rob=+1`. Actions are integers; a state may offer any number of them,
//! including none (a dead end, treated as absorbing by the model checker).
//!
//! # Explicit-state export
//!
//! [`Mdp::to_tra`] writes the transition file of explicit-state model
//! checkers:
//!
//! ```text
//! <states> <choices> <transitions>
//! <s> <choice> <s'> <p> a<act>
//! ```
//!
//! Rows are sorted by `(s, act, s')`. `choice` numbers the actions of `s`
//! from zero in ascending order and the action integer is kept as the row's
//! trailing label (action integers can be negative, which column 2 cannot
//! be). Probabilities carry 12 significant digits. [`Mdp::to_lab`] writes
//! the companion label file, with `rob=-1` exported as `unsafe` and `rob=+1`
//! as `safe`.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the atomic proposition held by unsafe states.
pub const AP_UNSAFE: &str = "rob=-1";
/// Name of the atomic proposition held by safe states.
pub const AP_SAFE: &str = "rob=+1";

/// Tolerance for per-choice probability normalization.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("transition {from} -[{action}]-> {to} references a state outside 0..{n}")]
    StateOutOfRange { from: usize, action: i64, to: usize, n: usize },
    #[error("initial state {0} is out of range")]
    BadInitial(usize),
    #[error("probability {prob} of {from} -[{action}]-> {to} is outside [0, 1]")]
    BadProbability { from: usize, action: i64, to: usize, prob: f64 },
    #[error("probabilities of state {state}, action {action} sum to {sum}")]
    NotNormalized { state: usize, action: i64, sum: f64 },
    #[error("duplicate transition {from} -[{action}]-> {to}")]
    Duplicate { from: usize, action: i64, to: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "rob=-1")]
    Unsafe,
    #[serde(rename = "rob=+1")]
    Safe,
}

impl Label {
    pub fn as_ap(self) -> &'static str {
        match self {
            Label::Unsafe => AP_UNSAFE,
            Label::Safe => AP_SAFE,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_ap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: usize,
    pub action: i64,
    pub to: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub action: i64,
    pub successors: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpRepr", into = "MdpRepr")]
pub struct Mdp {
    initial: usize,
    labels: Vec<Label>,
    transitions: Vec<Transition>,
    choices: Vec<Vec<Choice>>,
}

#[derive(Serialize, Deserialize)]
struct MdpRepr {
    initial: usize,
    labels: Vec<Label>,
    /// `(s, act, s', p)` quadruples.
    transitions: Vec<(usize, i64, usize, f64)>,
}

impl TryFrom<MdpRepr> for Mdp {
    type Error = MdpError;
    fn try_from(r: MdpRepr) -> Result<Self, Self::Error> {
        let ts = r
            .transitions
            .into_iter()
            .map(|(from, action, to, prob)| Transition { from, action, to, prob })
            .collect();
        Mdp::new(r.initial, r.labels, ts)
    }
}

impl From<Mdp> for MdpRepr {
    fn from(m: Mdp) -> Self {
        MdpRepr {
            initial: m.initial,
            labels: m.labels,
            transitions: m.transitions.iter().map(|t| (t.from, t.action, t.to, t.prob)).collect(),
        }
    }
}

impl Mdp {
    /// Validates and indexes a model. Transitions are sorted by `(s, act, s')`.
    pub fn new(initial: usize, labels: Vec<Label>, mut transitions: Vec<Transition>) -> Result<Self, MdpError> {
        let n = labels.len();
        if initial >= n {
            return Err(MdpError::BadInitial(initial));
        }
        transitions.sort_by(|a, b| (a.from, a.action, a.to).cmp(&(b.from, b.action, b.to)));
        let mut grouped: BTreeMap<(usize, i64), Vec<(usize, f64)>> = BTreeMap::new();
        for w in transitions.windows(2) {
            if (w[0].from, w[0].action, w[0].to) == (w[1].from, w[1].action, w[1].to) {
                return Err(MdpError::Duplicate {
                    from: w[0].from,
                    action: w[0].action,
                    to: w[0].to,
                });
            }
        }
        for t in &transitions {
            if t.from >= n || t.to >= n {
                return Err(MdpError::StateOutOfRange {
                    from: t.from,
                    action: t.action,
                    to: t.to,
                    n,
                });
            }
            if !(0.0..=1.0).contains(&t.prob) {
                return Err(MdpError::BadProbability {
                    from: t.from,
                    action: t.action,
                    to: t.to,
                    prob: t.prob,
                });
            }
            grouped.entry((t.from, t.action)).or_default().push((t.to, t.prob));
        }
        let mut choices = vec![Vec::new(); n];
        for ((s, action), successors) in grouped {
            let sum: f64 = successors.iter().map(|(_, p)| p).sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(MdpError::NotNormalized { state: s, action, sum });
            }
            choices[s].push(Choice { action, successors });
        }
        Ok(Self {
            initial,
            labels,
            transitions,
            choices,
        })
    }

    pub fn num_states(&self) -> usize {
        self.labels.len()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn label(&self, s: usize) -> Label {
        self.labels[s]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn num_transitions(&self) -> usize {
        self.transitions.len()
    }

    /// Actions available in `s`, ascending.
    pub fn choices(&self, s: usize) -> &[Choice] {
        &self.choices[s]
    }

    /// States satisfying atomic proposition `ap`, or `None` for an unknown name.
    /// Accepts `rob=-1`, `rob=+1` (also `rob=1`) and `init`.
    pub fn states_with(&self, ap: &str) -> Option<Vec<bool>> {
        let want = match ap {
            AP_UNSAFE => Label::Unsafe,
            AP_SAFE | "rob=1" => Label::Safe,
            "init" => return Some((0..self.num_states()).map(|s| s == self.initial).collect()),
            _ => return None,
        };
        Some(self.labels.iter().map(|&l| l == want).collect())
    }

    pub fn to_tra(&self) -> String {
        let num_choices: usize = self.choices.iter().map(Vec::len).sum();
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {}", self.num_states(), num_choices, self.transitions.len());
        for (state, cs) in self.choices.iter().enumerate() {
            for (ci, c) in cs.iter().enumerate() {
                for &(to, p) in &c.successors {
                    let _ = writeln!(s, "{state} {ci} {to} {} a{}", sig12(p), c.action);
                }
            }
        }
        s
    }

    pub fn to_lab(&self) -> String {
        let mut s = String::from("0=\"init\" 1=\"unsafe\" 2=\"safe\"\n");
        for (state, l) in self.labels.iter().enumerate() {
            let mut tags = Vec::new();
            if state == self.initial {
                tags.push("0");
            }
            tags.push(match l {
                Label::Unsafe => "1",
                Label::Safe => "2",
            });
            let _ = writeln!(s, "{state}: {}", tags.join(" "));
        }
        s
    }
}

/// Fixed-point rendering with 12 significant digits.
pub fn sig12(p: f64) -> String {
    if p == 0.0 {
        return "0".to_string();
    }
    let magnitude = p.abs().log10().floor() as i32;
    let decimals = (11 - magnitude).max(0) as usize;
    format!("{p:.decimals$}")
}
