//! Model-guided falsification and baseline searches.
//!
//! [`mosaic_falsify`] keeps a first-in-first-out queue of promising input
//! signals, seeded with `k` random samples. Each of `t_g` rounds runs
//! `t_l` simulations. The first candidate of a round is dequeued, or drawn
//! at random when the queue is empty, and the rest come from a hill climber
//! started at that candidate. A candidate with negative robustness ends the
//! search. Otherwise its concrete state at `checkpoint_time` is mapped into
//! the abstract model, and the candidate is enqueued when the safety query
//! holds there.
//!
//! Queue entries are simulated only when dequeued, so a search that never
//! succeeds runs exactly `t_g * t_l` simulations.
//!
//! The baselines share this budget accounting:
//!
//! * [`Algorithm::Random`] simulates `t_g * t_l` independent samples.
//! * [`Algorithm::OptOnly`] restarts the hill climber from a random sample
//!   `t_g` times with `t_l` simulations each.
//! * [`Algorithm::MosaicRand`] is the queue search with the model check
//!   replaced by enqueueing a fresh random sample.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{AbstractMdp, AbstractionError};
use crate::controllers::ControllerHandle;
use crate::plants::{simulate, PlantModel, SimConfig, SimError};
use crate::pmc::{check, PctlFormula, PmcError, Quantifier};
use crate::signals::{InputSignal, InputSpec, Trace};
use crate::stl::{robustness, StlError, StlFormula};

#[derive(Debug, Error)]
pub enum FalsifyError {
    #[error("invalid falsification config: {0}")]
    InvalidConfig(String),
    #[error("the model-guided search needs an abstract model")]
    MissingModel,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Pmc(#[from] PmcError),
}

/// A closed-loop system under test.
pub trait System {
    fn input_spec(&self) -> &InputSpec;
    fn run(&self, input: &InputSignal) -> Result<Trace, FalsifyError>;
    /// Concrete (abstraction-space) state of `trace` at time `t`.
    fn state_at(&self, trace: &Trace, t: f64) -> Vec<f64>;
}

/// A plant in closed loop with a fixed controller.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub plant: PlantModel,
    pub controller: ControllerHandle,
    pub sim: SimConfig,
    pub input_spec: InputSpec,
}

impl System for ClosedLoop {
    fn input_spec(&self) -> &InputSpec {
        &self.input_spec
    }

    fn run(&self, input: &InputSignal) -> Result<Trace, FalsifyError> {
        let mut c = self.controller.clone();
        Ok(simulate(&self.plant, &mut c, input, &self.sim)?)
    }

    fn state_at(&self, trace: &Trace, t: f64) -> Vec<f64> {
        let i = trace.index_at(t).min(trace.len() - 1);
        self.plant.observe(&trace.states[i], i as f64 * trace.dt, &trace.inputs[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HillClimbConfig {
    /// Initial perturbation scale as a fraction of each range.
    pub initial_step: f64,
    /// Step multiplier after a rejected proposal.
    pub decay: f64,
    /// Step multiplier after an accepted proposal.
    pub growth: f64,
    /// Upper bound on the step fraction.
    pub max_step: f64,
}

impl Default for HillClimbConfig {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            decay: 0.85,
            growth: 1.5,
            max_step: 1.0,
        }
    }
}

/// (1+1) hill climber over the control values of an input signal.
///
/// Every coordinate of the incumbent is perturbed by Gaussian noise with
/// standard deviation `step * range width`, then clamped to its range. A
/// proposal replaces the incumbent only when its objective is strictly lower.
#[derive(Debug, Clone)]
pub struct HillClimber {
    spec: InputSpec,
    cfg: HillClimbConfig,
    widths: Vec<f64>,
    best: InputSignal,
    best_value: f64,
    step: f64,
}

impl HillClimber {
    pub fn new(start: InputSignal, start_value: f64, cfg: HillClimbConfig) -> Self {
        let spec = start.spec.clone();
        let widths = spec
            .ranges
            .iter()
            .flat_map(|(lo, hi)| std::iter::repeat_n(hi - lo, spec.num_control_points))
            .collect();
        Self {
            spec,
            cfg,
            widths,
            best: start,
            best_value: start_value,
            step: cfg.initial_step,
        }
    }

    pub fn best(&self) -> (&InputSignal, f64) {
        (&self.best, self.best_value)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> InputSignal {
        let flat: Vec<f64> = self
            .best
            .flat()
            .iter()
            .zip(&self.widths)
            .map(|(x, w)| {
                let z: f64 = StandardNormal.sample(rng);
                x + z * self.step * w
            })
            .collect();
        InputSignal::from_flat_clamped(&self.spec, &flat)
    }

    /// Records the objective of a proposal; returns whether it was accepted.
    pub fn observe(&mut self, candidate: InputSignal, value: f64) -> bool {
        if value < self.best_value {
            self.best = candidate;
            self.best_value = value;
            self.step = (self.step * self.cfg.growth).min(self.cfg.max_step);
            true
        } else {
            self.step *= self.cfg.decay;
            false
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HillClimbResult {
    pub best: InputSignal,
    pub best_value: f64,
    pub evals: usize,
    /// Step fraction after each evaluation past the first.
    pub steps: Vec<f64>,
}

#[derive(Debug)]
pub struct HillClimbError<E> {
    pub source: E,
    /// Best point found before the failure, if any evaluation succeeded.
    pub partial: Option<HillClimbResult>,
}

/// Minimizes `objective` from `start` with at most `budget` evaluations.
pub fn hill_climb<E, R: Rng + ?Sized>(
    mut objective: impl FnMut(&InputSignal) -> Result<f64, E>,
    start: InputSignal,
    budget: usize,
    cfg: &HillClimbConfig,
    rng: &mut R,
) -> Result<HillClimbResult, HillClimbError<E>> {
    let v0 = objective(&start).map_err(|source| HillClimbError { source, partial: None })?;
    let mut hc = HillClimber::new(start, v0, *cfg);
    let mut steps = Vec::new();
    let snapshot = |hc: &HillClimber, evals: usize, steps: &Vec<f64>| HillClimbResult {
        best: hc.best.clone(),
        best_value: hc.best_value,
        evals,
        steps: steps.clone(),
    };
    for evals in 1..budget.max(1) {
        let cand = hc.propose(rng);
        match objective(&cand) {
            Ok(v) => {
                hc.observe(cand, v);
                steps.push(hc.step);
            }
            Err(source) => {
                return Err(HillClimbError {
                    source,
                    partial: Some(snapshot(&hc, evals, &steps)),
                })
            }
        }
    }
    Ok(snapshot(&hc, budget.max(1), &steps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Mosaic,
    Random,
    OptOnly,
    MosaicRand,
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mosaic" => Ok(Algorithm::Mosaic),
            "random" => Ok(Algorithm::Random),
            "opt" | "opt-only" => Ok(Algorithm::OptOnly),
            "mosaic-rand" => Ok(Algorithm::MosaicRand),
            other => Err(format!("unknown algorithm {other:?}")),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Mosaic => "mosaic",
            Algorithm::Random => "random",
            Algorithm::OptOnly => "opt",
            Algorithm::MosaicRand => "mosaic-rand",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FalsifyConfig {
    pub spec: StlFormula,
    pub query: PctlFormula,
    pub quantifier: Quantifier,
    /// Initial queue size.
    pub seeds: usize,
    /// Outer rounds.
    pub global_budget: usize,
    /// Simulations per round.
    pub local_budget: usize,
    pub checkpoint_time: f64,
    pub seed: u64,
    pub hill: HillClimbConfig,
}

impl FalsifyConfig {
    pub fn new(spec: StlFormula, query: PctlFormula) -> Self {
        Self {
            spec,
            query,
            quantifier: Quantifier::Max,
            seeds: 10,
            global_budget: 20,
            local_budget: 10,
            checkpoint_time: 5.0,
            seed: 0,
            hill: HillClimbConfig::default(),
        }
    }

    pub fn validate(&self, horizon: f64) -> Result<(), FalsifyError> {
        if self.seeds < 1 || self.global_budget < 1 || self.local_budget < 1 {
            return Err(FalsifyError::InvalidConfig(
                "queue size and both budgets must be at least 1".into(),
            ));
        }
        if !(self.checkpoint_time >= 0.0 && self.checkpoint_time < horizon) {
            return Err(FalsifyError::InvalidConfig(format!(
                "checkpoint time {} must lie in [0, {horizon})",
                self.checkpoint_time
            )));
        }
        Ok(())
    }

    /// Upper bound on simulations: every queue entry is simulated on dequeue.
    pub fn max_simulations(&self) -> usize {
        self.global_budget * self.local_budget
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FalsificationOutcome {
    pub algorithm: Algorithm,
    pub success: bool,
    pub falsifying_input: Option<InputSignal>,
    /// Robustness of every simulated candidate, in order.
    pub robustness_history: Vec<f64>,
    pub simulations: usize,
    pub wall_time: f64,
    pub enqueued: usize,
    /// Checkpoint states that mapped to no abstract state.
    pub unknown_checkpoints: usize,
    /// Candidate ids in enqueue order; the initial samples are `0..seeds`.
    pub enqueue_log: Vec<usize>,
    /// Candidate ids in dequeue order.
    pub dequeue_log: Vec<usize>,
}

impl FalsificationOutcome {
    pub fn min_robustness(&self) -> f64 {
        self.robustness_history.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

struct Search<'a, S: System> {
    system: &'a S,
    cfg: &'a FalsifyConfig,
    model: Option<&'a AbstractMdp>,
    rng: ChaCha8Rng,
    history: Vec<f64>,
    unknown: usize,
}

enum Eval {
    Falsified,
    Value(f64, bool),
}

impl<S: System> Search<'_, S> {
    fn simulate(&mut self, x: &InputSignal, want_flag: bool) -> Result<Eval, FalsifyError> {
        let trace = self.system.run(x)?;
        let rob = robustness(&trace, &self.cfg.spec, 0.0)?;
        self.history.push(rob);
        if rob < 0.0 {
            return Ok(Eval::Falsified);
        }
        let mut flag = false;
        if want_flag {
            let model = self.model.ok_or(FalsifyError::MissingModel)?;
            let q = self.system.state_at(&trace, self.cfg.checkpoint_time);
            match model.abstract_state_of(&q)? {
                Some(s) => flag = check(&model.mdp, s, &self.cfg.query, self.cfg.quantifier)?.holds,
                None => self.unknown += 1,
            }
        }
        Ok(Eval::Value(rob, flag))
    }

    fn random(&mut self) -> InputSignal {
        self.system.input_spec().random(&mut self.rng)
    }
}

/// Runs one falsification trial.
pub fn run_falsifier<S: System>(
    algorithm: Algorithm,
    system: &S,
    model: Option<&AbstractMdp>,
    cfg: &FalsifyConfig,
) -> Result<FalsificationOutcome, FalsifyError> {
    cfg.validate(system.input_spec().duration)?;
    if algorithm == Algorithm::Mosaic && model.is_none() {
        return Err(FalsifyError::MissingModel);
    }
    let start = Instant::now();
    let mut s = Search {
        system,
        cfg,
        model,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        history: Vec::new(),
        unknown: 0,
    };
    let mut out = FalsificationOutcome {
        algorithm,
        success: false,
        falsifying_input: None,
        robustness_history: Vec::new(),
        simulations: 0,
        wall_time: 0.0,
        enqueued: 0,
        unknown_checkpoints: 0,
        enqueue_log: Vec::new(),
        dequeue_log: Vec::new(),
    };
    let found = match algorithm {
        Algorithm::Random => {
            let mut found = None;
            for _ in 0..cfg.max_simulations() {
                let x = s.random();
                if let Eval::Falsified = s.simulate(&x, false)? {
                    found = Some(x);
                    break;
                }
            }
            found
        }
        Algorithm::OptOnly => opt_only(&mut s)?,
        Algorithm::Mosaic | Algorithm::MosaicRand => queue_search(&mut s, algorithm, &mut out)?,
    };
    out.simulations = s.history.len();
    out.robustness_history = s.history;
    out.unknown_checkpoints = s.unknown;
    out.success = found.is_some();
    out.falsifying_input = found;
    out.wall_time = start.elapsed().as_secs_f64();
    Ok(out)
}

fn opt_only<S: System>(s: &mut Search<'_, S>) -> Result<Option<InputSignal>, FalsifyError> {
    for _ in 0..s.cfg.global_budget {
        let x = s.random();
        let Eval::Value(v, _) = s.simulate(&x, false)? else {
            return Ok(Some(x));
        };
        let mut hc = HillClimber::new(x, v, s.cfg.hill);
        for _ in 1..s.cfg.local_budget {
            let cand = hc.propose(&mut s.rng);
            match s.simulate(&cand, false)? {
                Eval::Falsified => return Ok(Some(cand)),
                Eval::Value(v, _) => {
                    hc.observe(cand, v);
                }
            }
        }
    }
    Ok(None)
}

fn queue_search<S: System>(
    s: &mut Search<'_, S>,
    algorithm: Algorithm,
    out: &mut FalsificationOutcome,
) -> Result<Option<InputSignal>, FalsifyError> {
    let guided = algorithm == Algorithm::Mosaic;
    let mut next_id = 0usize;
    let mut queue: VecDeque<(usize, InputSignal)> = VecDeque::new();
    for _ in 0..s.cfg.seeds {
        let x = s.random();
        queue.push_back((next_id, x));
        out.enqueue_log.push(next_id);
        next_id += 1;
    }
    for _ in 0..s.cfg.global_budget {
        let (first_id, first) = match queue.pop_front() {
            Some((id, x)) => {
                out.dequeue_log.push(id);
                (id, x)
            }
            None => {
                next_id += 1;
                (next_id - 1, s.random())
            }
        };
        let mut hc: Option<HillClimber> = None;
        let mut candidate = (first_id, first);
        for i in 0..s.cfg.local_budget {
            if i > 0 {
                let h = hc.as_ref().expect("climber starts after the first candidate");
                candidate = (next_id, h.propose(&mut s.rng));
                next_id += 1;
            }
            let (id, x) = candidate.clone();
            let (value, flag) = match s.simulate(&x, guided)? {
                Eval::Falsified => return Ok(Some(x)),
                Eval::Value(v, f) => (v, f),
            };
            if guided {
                if flag {
                    queue.push_back((id, x.clone()));
                    out.enqueue_log.push(id);
                    out.enqueued += 1;
                }
            } else {
                let fresh = s.random();
                queue.push_back((next_id, fresh));
                out.enqueue_log.push(next_id);
                out.enqueued += 1;
                next_id += 1;
            }
            match hc.as_mut() {
                None => hc = Some(HillClimber::new(x, value, s.cfg.hill)),
                Some(h) => {
                    h.observe(x, value);
                }
            }
        }
    }
    Ok(None)
}

/// Model-guided search; see the module docs.
pub fn mosaic_falsify<S: System>(system: &S, model: &AbstractMdp, cfg: &FalsifyConfig) -> Result<FalsificationOutcome, FalsifyError> {
    run_falsifier(Algorithm::Mosaic, system, Some(model), cfg)
}

pub fn run_baseline<S: System>(algorithm: Algorithm, system: &S, cfg: &FalsifyConfig) -> Result<FalsificationOutcome, FalsifyError> {
    run_falsifier(algorithm, system, None, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub trials: usize,
    /// Number of successful trials.
    pub fsr: usize,
    pub mean_time: Option<f64>,
    pub mean_simulations: Option<f64>,
}

pub fn trial_stats(outcomes: &[FalsificationOutcome]) -> TrialStats {
    let ok: Vec<&FalsificationOutcome> = outcomes.iter().filter(|o| o.success).collect();
    let n = ok.len();
    let mean = |f: &dyn Fn(&FalsificationOutcome) -> f64| (n > 0).then(|| ok.iter().map(|o| f(o)).sum::<f64>() / n as f64);
    TrialStats {
        trials: outcomes.len(),
        fsr: n,
        mean_time: mean(&|o| o.wall_time),
        mean_simulations: mean(&|o| o.simulations as f64),
    }
}
