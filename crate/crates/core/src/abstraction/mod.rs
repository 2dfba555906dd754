//! Trace-driven construction of a finite abstract MDP.
//!
//! Concrete states (plant observation vectors) are projected onto their top
//! `k` principal components and the reduced space is cut into `c` equal
//! intervals per dimension. Each occupied grid cell is an abstract state;
//! points outside the grid bounds share a single out-of-bounds state.
//!
//! * A concrete action is abstracted to its integer part, truncating toward
//!   zero (`1.7 → 1`, `-0.4 → 0`).
//! * A state is labeled `rob=-1` when the smallest robustness among its
//!   members is below the labeling threshold, `rob=+1` otherwise.
//! * Transition probabilities are observed count ratios:
//!   `δ(s, a, s') = #(s, a, s') / #(s, a, ·)`.
//! * When traces start in different states a synthetic initial state is
//!   added, with one action (`0`) leading uniformly to every observed start.
//!
//! Grid bounds default to the data range widened by a margin (1% of the
//! range on each side). A value equal to the upper bound falls into the last
//! interval.
//!
//! [`refine`] splits mixed states: a state whose member robustness has
//! population variance above the variance threshold and that contains both
//! safe and unsafe members gets a linear classifier, and the model is rebuilt
//! with the state replaced by its two sides. Each pass splits every mixed
//! state once, so a cell refined over several passes holds a tree of
//! classifiers ([`SplitTree`]).

pub mod pca;
pub mod svm;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{Label, Mdp, MdpError, Transition};
pub use pca::{fit_pca, PcaTransform};
pub use svm::{train_svm, Hyperplane, SvmConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AbstractionError {
    #[error("no trace data")]
    EmptyData,
    #[error("non-finite value in trace data")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid abstraction config: {0}")]
    InvalidConfig(String),
    #[error("trace {trace} is inconsistent: {msg}")]
    BadTrace { trace: usize, msg: String },
    #[error("non-finite action {0}")]
    NonFiniteAction(f64),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AbstractionConfig {
    /// Reduced dimension.
    pub k: usize,
    /// Intervals per reduced dimension.
    pub c: usize,
    pub label_threshold: f64,
    pub variance_threshold: f64,
    /// Fraction of the data range added on each side of the grid.
    pub margin: f64,
    /// Fixed grid bounds per reduced dimension; derived from data when absent.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub svm: SvmConfig,
    /// Refinement passes run by [`refine`].
    pub refine_passes: usize,
}

impl Default for AbstractionConfig {
    fn default() -> Self {
        Self {
            k: 3,
            c: 10,
            label_threshold: 0.0,
            variance_threshold: 0.0,
            margin: 0.01,
            bounds: None,
            svm: SvmConfig::default(),
            refine_passes: 1,
        }
    }
}

impl AbstractionConfig {
    pub fn validate(&self) -> Result<(), AbstractionError> {
        let bad = |m: String| Err(AbstractionError::InvalidConfig(m));
        if self.k < 1 {
            return bad("k must be at least 1".into());
        }
        if self.c < 2 {
            return bad("c must be at least 2".into());
        }
        if (self.c as u64).checked_pow(self.k as u32).is_none() {
            return bad(format!("{}^{} cells overflow the cell id space", self.c, self.k));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad(format!("margin {} must be nonnegative", self.margin));
        }
        if self.label_threshold.is_nan() || self.variance_threshold.is_nan() {
            return bad("thresholds must not be NaN".into());
        }
        if let Some(b) = &self.bounds {
            if b.len() != self.k {
                return bad(format!("{} bounds for {} reduced dimensions", b.len(), self.k));
            }
            if b.iter().any(|(lo, hi)| !(lo < hi)) {
                return bad("every bound needs lo < hi".into());
            }
        }
        Ok(())
    }
}

/// Equal-interval grid over the reduced space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub c: usize,
    pub bounds: Vec<(f64, f64)>,
}

impl Grid {
    /// Per-dimension interval indices, or `None` outside the bounds.
    pub fn indices(&self, q: &[f64]) -> Option<Vec<usize>> {
        q.iter()
            .zip(&self.bounds)
            .map(|(&v, &(lo, hi))| {
                if !(lo..=hi).contains(&v) {
                    return None;
                }
                let raw = (self.c as f64 * (v - lo) / (hi - lo)).floor();
                Some((raw as usize).min(self.c - 1))
            })
            .collect()
    }

    /// Mixed-radix encoding with dimension 0 as the least significant digit.
    pub fn encode(&self, idx: &[usize]) -> u64 {
        idx.iter().rev().fold(0u64, |acc, &i| acc * self.c as u64 + i as u64)
    }

    pub fn decode(&self, mut id: u64) -> Vec<usize> {
        (0..self.bounds.len())
            .map(|_| {
                let d = (id % self.c as u64) as usize;
                id /= self.c as u64;
                d
            })
            .collect()
    }

    pub fn cell_of(&self, q: &[f64]) -> Region {
        match self.indices(q) {
            Some(idx) => Region::Cell(self.encode(&idx)),
            None => Region::OutOfBounds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// Synthetic start state (only present when traces start in different states).
    Initial,
    Cell(u64),
    OutOfBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Negative,
    Positive,
}

/// Classifiers of one refined cell. Descending from the root, every
/// [`SplitTree::Node`] sends a point to one of its two subtrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTree {
    Leaf,
    Node {
        plane: Hyperplane,
        negative: Box<SplitTree>,
        positive: Box<SplitTree>,
    },
}

impl SplitTree {
    /// Sides taken from the root down to the leaf containing `q_hat`.
    pub fn route(&self, q_hat: &[f64]) -> Vec<Side> {
        let mut path = Vec::new();
        let mut node = self;
        while let SplitTree::Node { plane, negative, positive } = node {
            if plane.positive(q_hat) {
                path.push(Side::Positive);
                node = positive;
            } else {
                path.push(Side::Negative);
                node = negative;
            }
        }
        path
    }

    fn leaf_mut(&mut self, path: &[Side]) -> Option<&mut SplitTree> {
        let Some((first, rest)) = path.split_first() else {
            return matches!(self, SplitTree::Leaf).then_some(self);
        };
        match self {
            SplitTree::Leaf => None,
            SplitTree::Node { negative, positive, .. } => match first {
                Side::Negative => negative.leaf_mut(rest),
                Side::Positive => positive.leaf_mut(rest),
            },
        }
    }

    pub fn num_splits(&self) -> usize {
        match self {
            SplitTree::Leaf => 0,
            SplitTree::Node { negative, positive, .. } => 1 + negative.num_splits() + positive.num_splits(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractState {
    pub region: Region,
    /// Sides taken through the cell's classifiers; empty for unsplit cells.
    pub path: Vec<Side>,
    pub label: Label,
    /// Number of concrete samples mapped here.
    pub support: usize,
}

/// Concrete states, actions and per-step robustness of one trace.
///
/// `actions[i]` moves `states[i]` to `states[i + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrace {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<f64>,
    pub robustness: Vec<f64>,
}

pub fn abstract_action(sigma: f64) -> Result<i64, AbstractionError> {
    if !sigma.is_finite() {
        return Err(AbstractionError::NonFiniteAction(sigma));
    }
    Ok(sigma.trunc() as i64)
}

type Key = (Region, Vec<Side>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Stored", into = "Stored")]
pub struct AbstractMdp {
    pub config: AbstractionConfig,
    pub pca: PcaTransform,
    pub grid: Grid,
    pub states: Vec<AbstractState>,
    pub classifiers: BTreeMap<u64, SplitTree>,
    pub mdp: Mdp,
    index: HashMap<Key, usize>,
}

#[derive(Serialize, Deserialize)]
struct Stored {
    config: AbstractionConfig,
    pca: PcaTransform,
    grid: Grid,
    states: Vec<AbstractState>,
    classifiers: BTreeMap<u64, SplitTree>,
    mdp: Mdp,
}

impl From<Stored> for AbstractMdp {
    fn from(s: Stored) -> Self {
        let index = s.states.iter().enumerate().map(|(i, st)| ((st.region, st.path.clone()), i)).collect();
        Self {
            config: s.config,
            pca: s.pca,
            grid: s.grid,
            states: s.states,
            classifiers: s.classifiers,
            mdp: s.mdp,
            index,
        }
    }
}

impl From<AbstractMdp> for Stored {
    fn from(m: AbstractMdp) -> Self {
        Self {
            config: m.config,
            pca: m.pca,
            grid: m.grid,
            states: m.states,
            classifiers: m.classifiers,
            mdp: m.mdp,
        }
    }
}

impl AbstractMdp {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.mdp.num_transitions()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    fn key_of_reduced(&self, q_hat: &[f64]) -> Key {
        key_of(&self.grid, &self.classifiers, q_hat)
    }

    /// Abstract state of a concrete state; `None` when it lands somewhere
    /// never observed during construction.
    pub fn abstract_state_of(&self, q: &[f64]) -> Result<Option<usize>, AbstractionError> {
        let q_hat = self.pca.reduce(q)?;
        Ok(self.index.get(&self.key_of_reduced(&q_hat)).copied())
    }

    pub fn state_id(&self, region: Region, path: &[Side]) -> Option<usize> {
        self.index.get(&(region, path.to_vec())).copied()
    }
}

fn key_of(grid: &Grid, classifiers: &BTreeMap<u64, SplitTree>, q_hat: &[f64]) -> Key {
    let region = grid.cell_of(q_hat);
    let path = match region {
        Region::Cell(id) => classifiers.get(&id).map_or_else(Vec::new, |t| t.route(q_hat)),
        _ => Vec::new(),
    };
    (region, path)
}

fn check_traces(traces: &[LabeledTrace]) -> Result<usize, AbstractionError> {
    let dim = traces
        .iter()
        .find_map(|t| t.states.first().map(Vec::len))
        .ok_or(AbstractionError::EmptyData)?;
    for (i, t) in traces.iter().enumerate() {
        let bad = |msg: String| AbstractionError::BadTrace { trace: i, msg };
        if t.robustness.len() != t.states.len() {
            return Err(bad(format!("{} states but {} robustness values", t.states.len(), t.robustness.len())));
        }
        if t.actions.len() + 1 < t.states.len() {
            return Err(bad(format!("{} states but only {} actions", t.states.len(), t.actions.len())));
        }
        for s in &t.states {
            if s.len() != dim {
                return Err(AbstractionError::DimensionMismatch { expected: dim, got: s.len() });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(AbstractionError::NonFinite);
            }
        }
        if t.robustness.iter().any(|r| r.is_nan()) {
            return Err(AbstractionError::NonFinite);
        }
    }
    Ok(dim)
}

fn data_bounds(reduced: &[Vec<f64>], k: usize, margin: f64) -> Vec<(f64, f64)> {
    (0..k)
        .map(|j| {
            let lo = reduced.iter().map(|q| q[j]).fold(f64::INFINITY, f64::min);
            let hi = reduced.iter().map(|q| q[j]).fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            if span > 0.0 {
                (lo - margin * span, hi + margin * span)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        })
        .collect()
}

/// Fits the projection and grid on `traces` and builds the abstract MDP.
pub fn build_abstraction(traces: &[LabeledTrace], config: &AbstractionConfig) -> Result<AbstractMdp, AbstractionError> {
    config.validate()?;
    check_traces(traces)?;
    let all: Vec<Vec<f64>> = traces.iter().flat_map(|t| t.states.iter().cloned()).collect();
    let pca = fit_pca(&all, config.k)?;
    let bounds = match &config.bounds {
        Some(b) => b.clone(),
        None => {
            let reduced: Vec<Vec<f64>> = all.iter().map(|q| pca.reduce(q)).collect::<Result<_, _>>()?;
            data_bounds(&reduced, config.k, config.margin)
        }
    };
    let grid = Grid { c: config.c, bounds };
    assemble(config.clone(), pca, grid, BTreeMap::new(), traces)
}

fn assemble(
    config: AbstractionConfig,
    pca: PcaTransform,
    grid: Grid,
    classifiers: BTreeMap<u64, SplitTree>,
    traces: &[LabeledTrace],
) -> Result<AbstractMdp, AbstractionError> {
    let mut shell = AbstractMdp {
        config,
        pca,
        grid,
        states: vec![],
        classifiers,
        mdp: Mdp::new(0, vec![Label::Safe], vec![])?,
        index: HashMap::new(),
    };
    let mut keys: Vec<Vec<Key>> = Vec::with_capacity(traces.len());
    // Key → (min robustness, support).
    let mut members: BTreeMap<Key, (f64, usize)> = BTreeMap::new();
    for t in traces {
        let mut ks = Vec::with_capacity(t.states.len());
        for (q, &rob) in t.states.iter().zip(&t.robustness) {
            let key = shell.key_of_reduced(&shell.pca.reduce(q)?);
            let e = members.entry(key.clone()).or_insert((f64::INFINITY, 0));
            e.0 = e.0.min(rob);
            e.1 += 1;
            ks.push(key);
        }
        keys.push(ks);
    }
    let starts: BTreeSet<Key> = keys.iter().filter_map(|k| k.first().cloned()).collect();
    let synthetic_start = starts.len() > 1;
    let threshold = shell.config.label_threshold;
    let mut states = Vec::with_capacity(members.len() + 1);
    if synthetic_start {
        states.push(AbstractState {
            region: Region::Initial,
            path: Vec::new(),
            label: Label::Safe,
            support: 0,
        });
    }
    for ((region, path), &(min_rob, support)) in &members {
        states.push(AbstractState {
            region: *region,
            path: path.clone(),
            label: if min_rob < threshold { Label::Unsafe } else { Label::Safe },
            support,
        });
    }
    let index: HashMap<Key, usize> = states.iter().enumerate().map(|(i, s)| ((s.region, s.path.clone()), i)).collect();
    let in_cells = states.iter().filter(|s| matches!(s.region, Region::Cell(_))).count();
    if in_cells <= 1 {
        log::warn!("all construction states fall into a single grid cell");
    }

    let mut counts: BTreeMap<(usize, i64, usize), u64> = BTreeMap::new();
    for (t, ks) in traces.iter().zip(&keys) {
        for i in 0..ks.len().saturating_sub(1) {
            let a = abstract_action(t.actions[i])?;
            *counts.entry((index[&ks[i]], a, index[&ks[i + 1]])).or_default() += 1;
        }
    }
    let mut totals: BTreeMap<(usize, i64), u64> = BTreeMap::new();
    for (&(s, a, _), &n) in &counts {
        *totals.entry((s, a)).or_default() += n;
    }
    let mut transitions: Vec<Transition> = counts
        .iter()
        .map(|(&(from, action, to), &n)| Transition {
            from,
            action,
            to,
            prob: n as f64 / totals[&(from, action)] as f64,
        })
        .collect();
    let initial = if synthetic_start {
        let p = 1.0 / starts.len() as f64;
        transitions.extend(starts.iter().map(|k| Transition {
            from: 0,
            action: 0,
            to: index[k],
            prob: p,
        }));
        0
    } else {
        index[starts.iter().next().expect("traces are nonempty")]
    };
    let labels = states.iter().map(|s| s.label).collect();
    shell.mdp = Mdp::new(initial, labels, transitions)?;
    shell.states = states;
    shell.index = index;
    Ok(shell)
}

/// Population variance.
fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Splits mixed states with linear classifiers and rebuilds the model.
///
/// A state is split when the population variance of its member robustness
/// exceeds the variance threshold and it holds members on both sides of the
/// labeling threshold. Runs `config.refine_passes` passes; already split
/// states keep their classifiers and only their leaves are split further.
pub fn refine(model: &AbstractMdp, traces: &[LabeledTrace], config: &AbstractionConfig) -> Result<AbstractMdp, AbstractionError> {
    check_traces(traces)?;
    let reduced: Vec<Vec<(Vec<f64>, f64)>> = traces
        .iter()
        .map(|t| {
            t.states
                .iter()
                .zip(&t.robustness)
                .map(|(q, &rob)| Ok((model.pca.reduce(q)?, rob)))
                .collect::<Result<_, AbstractionError>>()
        })
        .collect::<Result<_, _>>()?;
    let mut classifiers = model.classifiers.clone();
    for pass in 0..config.refine_passes {
        let split = refine_pass(&model.grid, &mut classifiers, &reduced, config);
        log::info!("refinement pass {}: split {split} states", pass + 1);
        if split == 0 {
            break;
        }
    }
    let mut cfg = model.config.clone();
    cfg.label_threshold = config.label_threshold;
    cfg.variance_threshold = config.variance_threshold;
    cfg.svm = config.svm;
    cfg.refine_passes = config.refine_passes;
    assemble(cfg, model.pca.clone(), model.grid.clone(), classifiers, traces)
}

fn refine_pass(
    grid: &Grid,
    classifiers: &mut BTreeMap<u64, SplitTree>,
    reduced: &[Vec<(Vec<f64>, f64)>],
    config: &AbstractionConfig,
) -> usize {
    let mut groups: BTreeMap<(u64, Vec<Side>), (Vec<Vec<f64>>, Vec<f64>)> = BTreeMap::new();
    for (q_hat, rob) in reduced.iter().flatten() {
        if let (Region::Cell(id), path) = key_of(grid, classifiers, q_hat) {
            let e = groups.entry((id, path)).or_default();
            e.0.push(q_hat.clone());
            e.1.push(*rob);
        }
    }
    let mut split = 0usize;
    for ((id, path), (pts, robs)) in &groups {
        if variance(robs) <= config.variance_threshold {
            continue;
        }
        let ys: Vec<bool> = robs.iter().map(|&r| r >= config.label_threshold).collect();
        if ys.iter().all(|&y| y) || ys.iter().all(|&y| !y) {
            continue;
        }
        let Some(fit) = train_svm(pts, &ys, &config.svm) else {
            log::debug!("cell {id} {path:?}: no separating hyperplane found, left unsplit");
            continue;
        };
        let pos = pts.iter().filter(|p| fit.plane.positive(p)).count();
        if pos == 0 || pos == pts.len() {
            log::debug!("cell {id} {path:?}: classifier puts every member on one side, left unsplit");
            continue;
        }
        let tree = classifiers.entry(*id).or_insert(SplitTree::Leaf);
        let leaf = tree.leaf_mut(path).expect("group paths end at leaves");
        *leaf = SplitTree::Node {
            plane: fit.plane,
            negative: Box::new(SplitTree::Leaf),
            positive: Box::new(SplitTree::Leaf),
        };
        split += 1;
    }
    split
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Preciseness {
    pub matched: usize,
    pub mismatched: usize,
    pub unknown: usize,
}

impl Preciseness {
    pub fn total(&self) -> usize {
        self.matched + self.mismatched + self.unknown
    }

    /// Label agreement among states that mapped to a known abstract state.
    pub fn precision(&self) -> f64 {
        let known = self.matched + self.mismatched;
        if known == 0 {
            return 0.0;
        }
        self.matched as f64 / known as f64
    }

    pub fn unknown_fraction(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        self.unknown as f64 / self.total() as f64
    }
}

/// Compares abstract labels with the labels of fresh concrete states.
pub fn preciseness(model: &AbstractMdp, traces: &[LabeledTrace]) -> Result<Preciseness, AbstractionError> {
    let mut p = Preciseness::default();
    for t in traces {
        for (q, &rob) in t.states.iter().zip(&t.robustness) {
            match model.abstract_state_of(q)? {
                None => p.unknown += 1,
                Some(s) => {
                    let own = if rob < model.config.label_threshold { Label::Unsafe } else { Label::Safe };
                    if model.states[s].label == own {
                        p.matched += 1;
                    } else {
                        p.mismatched += 1;
                    }
                }
            }
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid3() -> Grid {
        Grid {
            c: 10,
            bounds: vec![(0.0, 1.0); 3],
        }
    }

    #[test]
    fn cell_indices() {
        let g = grid3();
        assert_eq!(g.indices(&[0.0, 0.0, 0.0]), Some(vec![0, 0, 0]));
        assert_eq!(g.indices(&[1.0, 0.5, 0.0]), Some(vec![9, 5, 0]));
        assert_eq!(g.indices(&[0.25, 0.5, 0.99]), Some(vec![2, 5, 9]));
        assert_eq!(g.cell_of(&[1.01, 0.5, 0.0]), Region::OutOfBounds);
        assert_eq!(g.cell_of(&[f64::NAN, 0.5, 0.0]), Region::OutOfBounds);
        let id = g.encode(&[2, 5, 9]);
        assert_eq!(id, 2 + 5 * 10 + 9 * 100);
        assert_eq!(g.decode(id), vec![2, 5, 9]);
    }

    #[test]
    fn action_truncation() {
        assert_eq!(abstract_action(1.7).unwrap(), 1);
        assert_eq!(abstract_action(-0.4).unwrap(), 0);
        assert_eq!(abstract_action(-1.9).unwrap(), -1);
        assert_eq!(abstract_action(3.0).unwrap(), 3);
        assert!(abstract_action(f64::NAN).is_err());
    }

    fn fixed(k: usize, c: usize, bounds: Vec<(f64, f64)>) -> AbstractionConfig {
        AbstractionConfig {
            k,
            c,
            bounds: Some(bounds),
            ..Default::default()
        }
    }

    #[test]
    fn single_transition() {
        let t = LabeledTrace {
            states: vec![vec![0.0, 0.0], vec![1.0, 1.0]],
            actions: vec![0.0, 0.0],
            robustness: vec![1.0, 1.0],
        };
        let m = build_abstraction(&[t], &AbstractionConfig { k: 1, c: 2, ..Default::default() }).unwrap();
        assert_eq!(m.num_states(), 2);
        assert_eq!(m.mdp.transitions().len(), 1);
        assert_eq!(m.mdp.transitions()[0].prob, 1.0);
    }

    #[test]
    fn count_ratios_and_labels() {
        // One dimension, three cells of width 1 on [0, 3].
        let cfg = fixed(1, 3, vec![(-1.5, 1.5)]);
        let mk = |a: f64, b: f64, rob_b: f64| LabeledTrace {
            states: vec![vec![a, 0.0], vec![b, 0.0]],
            actions: vec![1.2, 0.0],
            robustness: vec![0.5, rob_b],
        };
        // Symmetric mean keeps the projection centered; negative-x data
        // points average out the positive ones.
        let traces = vec![mk(0.0, 1.0, 0.5), mk(0.0, 1.0, -0.1), mk(0.0, -1.0, 2.0)];
        let m = build_abstraction(&traces, &cfg).unwrap();
        let from = m.abstract_state_of(&[0.0, 0.0]).unwrap().unwrap();
        let right = m.abstract_state_of(&[1.0, 0.0]).unwrap().unwrap();
        let left = m.abstract_state_of(&[-1.0, 0.0]).unwrap().unwrap();
        let probs: BTreeMap<usize, f64> = m
            .mdp
            .transitions()
            .iter()
            .filter(|t| t.from == from)
            .map(|t| (t.to, t.prob))
            .collect();
        assert_eq!(probs[&right], 2.0 / 3.0);
        assert_eq!(probs[&left], 1.0 / 3.0);
        assert!(m.mdp.transitions().iter().all(|t| t.action == 1));
        assert_eq!(m.states[right].label, Label::Unsafe);
        assert_eq!(m.states[left].label, Label::Safe);
        assert_eq!(m.states[from].support, 3);
    }

    #[test]
    fn synthetic_initial_when_starts_differ() {
        let cfg = fixed(1, 4, vec![(-2.0, 2.0)]);
        let traces = vec![
            LabeledTrace {
                states: vec![vec![-1.5], vec![0.5]],
                actions: vec![0.0; 2],
                robustness: vec![1.0; 2],
            },
            LabeledTrace {
                states: vec![vec![1.5], vec![0.5]],
                actions: vec![0.0; 2],
                robustness: vec![1.0; 2],
            },
        ];
        let m = build_abstraction(&traces, &cfg).unwrap();
        assert_eq!(m.states[0].region, Region::Initial);
        assert_eq!(m.mdp.initial(), 0);
        let out: Vec<f64> = m.mdp.choices(0)[0].successors.iter().map(|s| s.1).collect();
        assert_eq!(out, vec![0.5, 0.5]);
    }

    #[test]
    fn unknown_and_out_of_bounds() {
        let cfg = fixed(1, 4, vec![(-2.0, 2.0)]);
        let t = LabeledTrace {
            states: vec![vec![-1.5], vec![3.0]],
            actions: vec![0.0; 2],
            robustness: vec![1.0; 2],
        };
        let m = build_abstraction(&[t], &cfg).unwrap();
        // PCA centers at 0.75; reduced values are ±2.25, the upper one out of bounds.
        assert!(m.state_id(Region::OutOfBounds, &[]).is_some());
        assert_eq!(m.abstract_state_of(&[0.75]).unwrap(), None);
        assert!(m.abstract_state_of(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn refine_skips_pure_and_singleton_cells() {
        let cfg = fixed(1, 2, vec![(-2.0, 2.0)]);
        let traces = vec![LabeledTrace {
            states: vec![vec![-1.0], vec![-0.5], vec![1.0]],
            actions: vec![0.0; 3],
            robustness: vec![1.0, 1.0, -1.0],
        }];
        let m = build_abstraction(&traces, &cfg).unwrap();
        let r = refine(&m, &traces, &cfg).unwrap();
        assert!(r.classifiers.is_empty());
        assert_eq!(r, m);
    }

    #[test]
    fn extra_passes_split_interleaved_clusters() {
        // Safe, unsafe, safe along one axis: one hyperplane cannot separate them.
        let xs: Vec<f64> = (0..30).map(|i| i as f64 * 0.05 - 0.725).collect();
        let robustness: Vec<f64> = xs.iter().map(|&x| if x.abs() < 0.25 { -1.0 } else { 1.0 }).collect();
        let traces = vec![LabeledTrace {
            states: xs.iter().map(|&x| vec![x]).collect(),
            actions: vec![0.0; xs.len()],
            robustness,
        }];
        let base = fixed(1, 2, vec![(-0.8, 3.2)]);
        let m = build_abstraction(&traces, &base).unwrap();
        assert_eq!(m.num_states(), 1);
        let one = refine(&m, &traces, &base).unwrap();
        assert_eq!(one.num_states(), 2);
        assert!(preciseness(&one, &traces).unwrap().precision() < 1.0);
        let three = AbstractionConfig { refine_passes: 3, ..base };
        let r = refine(&m, &traces, &three).unwrap();
        assert_eq!(preciseness(&r, &traces).unwrap().precision(), 1.0);
        assert!(r.num_states() >= 3);
        assert_eq!(r.classifiers[&0].num_splits() + 1, r.num_states());
        let back = AbstractMdp::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn json_round_trip() {
        let cfg = fixed(1, 2, vec![(-2.0, 2.0)]);
        let traces = vec![LabeledTrace {
            states: vec![vec![-1.0], vec![1.0], vec![-1.0]],
            actions: vec![-1.5, 2.5, 0.0],
            robustness: vec![1.0, -1.0, 1.0],
        }];
        let m = build_abstraction(&traces, &cfg).unwrap();
        let back = AbstractMdp::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.abstract_state_of(&[1.0]).unwrap(), m.abstract_state_of(&[1.0]).unwrap());
    }

    #[test]
    fn rejects_inconsistent_traces() {
        let cfg = AbstractionConfig::default();
        assert!(matches!(build_abstraction(&[], &cfg), Err(AbstractionError::EmptyData)));
        let t = LabeledTrace {
            states: vec![vec![0.0], vec![1.0]],
            actions: vec![0.0],
            robustness: vec![1.0],
        };
        assert!(matches!(build_abstraction(&[t], &cfg), Err(AbstractionError::BadTrace { .. })));
        let bad = AbstractionConfig { c: 1, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn variance_is_population() {
        assert_eq!(variance(&[1.0, 3.0]), 1.0);
        assert_eq!(variance(&[2.0]), 0.0);
    }
}
