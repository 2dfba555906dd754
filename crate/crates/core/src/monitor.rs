//! Runtime switching between an AI controller and a safety controller.
//!
//! Every `period` seconds of simulated time (starting at `t = 0`) the
//! current observation is mapped into the abstract model and a safety query
//! is checked from that state. The query asks whether unsafe states are
//! likely to be reached, so a query that *holds* yields
//! [`SafetyVerdict::Unsafe`] and hands control to the safety controller.
//! A later [`SafetyVerdict::Safe`] hands it back when `switch_back` is set.
//!
//! Observations that map to no abstract state follow [`UnknownPolicy`]:
//! `Safe` treats them as unsafe, `Ai` leaves the active controller as it is.
//! The controller that takes over is reset first, so a PID does not resume
//! with a stale integral.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{AbstractMdp, AbstractionError};
use crate::controllers::{ControllerError, ControllerHandle};
use crate::plants::{simulate, PlantModel, SimConfig, SimError};
use crate::pmc::{check, parse_pctl, path_prob, sat_set, PctlFormula, PmcError, Quantifier};
use crate::signals::{InputSignal, Trace};
use crate::stl::{robustness_signal, StlError, StlFormula};

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("invalid monitor config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Pmc(#[from] PmcError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error("metric specification must be G[a,b](p) with a non-temporal p, got {0}")]
    NotAPattern(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnknownPolicy {
    /// Treat unknown states as unsafe and switch to the safety controller.
    #[default]
    Safe,
    /// Keep the active controller.
    Ai,
}

impl std::str::FromStr for UnknownPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "safe" => Ok(UnknownPolicy::Safe),
            "ai" => Ok(UnknownPolicy::Ai),
            other => Err(format!("unknown policy {other:?} (expected safe or ai)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorConfig {
    pub query: PctlFormula,
    /// Seconds of simulated time between queries.
    pub period: f64,
    pub unknown_policy: UnknownPolicy,
    pub switch_back: bool,
    pub quantifier: Quantifier,
}

/// Query of the reach-unsafe safety check used by default.
pub const DEFAULT_QUERY: &str = r#"P>0.8 [ F<=10 "rob=-1" ]"#;

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            query: parse_pctl(DEFAULT_QUERY).expect("default query parses"),
            period: 5.0,
            unknown_policy: UnknownPolicy::Safe,
            switch_back: true,
            quantifier: Quantifier::Max,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self, sim: &SimConfig) -> Result<(), MonitorError> {
        let ratio = self.period / sim.control_period;
        if !(self.period > 0.0) || (ratio - ratio.round()).abs() > 1e-6 || ratio.round() < 1.0 {
            return Err(MonitorError::InvalidConfig(format!(
                "period {} is not a positive multiple of the control period {}",
                self.period, sim.control_period
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SafetyVerdict {
    Safe,
    Unsafe,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub verdict: SafetyVerdict,
    pub state: Option<usize>,
    pub probability: Option<f64>,
}

/// Query verdicts for every abstract state, from one model-checking run.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryTable {
    holds: Vec<bool>,
    probability: Option<Vec<f64>>,
}

impl QueryTable {
    pub fn new(model: &AbstractMdp, query: &PctlFormula, quantifier: Quantifier) -> Result<Self, PmcError> {
        let mdp = &model.mdp;
        Ok(match query {
            PctlFormula::Prob { cmp, bound, path } => {
                let probs = path_prob(mdp, path, quantifier)?;
                Self {
                    holds: probs.iter().map(|&p| cmp.holds(p, *bound)).collect(),
                    probability: Some(probs),
                }
            }
            f => Self {
                holds: sat_set(mdp, f, quantifier)?,
                probability: None,
            },
        })
    }

    pub fn holds(&self, s: usize) -> bool {
        self.holds[s]
    }

    pub fn probability(&self, s: usize) -> Option<f64> {
        self.probability.as_ref().map(|p| p[s])
    }
}

fn unknown_outcome(config: &MonitorConfig) -> QueryOutcome {
    let verdict = match config.unknown_policy {
        UnknownPolicy::Safe => SafetyVerdict::Unsafe,
        UnknownPolicy::Ai => SafetyVerdict::Unknown,
    };
    QueryOutcome {
        verdict,
        state: None,
        probability: None,
    }
}

fn verdict_of(holds: bool) -> SafetyVerdict {
    if holds {
        SafetyVerdict::Unsafe
    } else {
        SafetyVerdict::Safe
    }
}

/// Checks the safety query from the abstract state of `q`.
pub fn monitor_step(model: &AbstractMdp, config: &MonitorConfig, q: &[f64]) -> Result<QueryOutcome, MonitorError> {
    let Some(s) = model.abstract_state_of(q)? else {
        return Ok(unknown_outcome(config));
    };
    let v = check(&model.mdp, s, &config.query, config.quantifier)?;
    Ok(QueryOutcome {
        verdict: verdict_of(v.holds),
        state: Some(s),
        probability: v.probability,
    })
}

/// [`monitor_step`] against precomputed verdicts.
pub fn monitor_step_with(
    model: &AbstractMdp,
    table: &QueryTable,
    config: &MonitorConfig,
    q: &[f64],
) -> Result<QueryOutcome, MonitorError> {
    let Some(s) = model.abstract_state_of(q)? else {
        return Ok(unknown_outcome(config));
    };
    Ok(QueryOutcome {
        verdict: verdict_of(table.holds(s)),
        state: Some(s),
        probability: table.probability(s),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Active {
    Ai,
    Safety,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub t: f64,
    pub outcome: QueryOutcome,
    /// Controller selected for the following period.
    pub selected: Active,
    /// Wall-clock seconds spent mapping the state and checking the query.
    pub wall_time: f64,
}

/// A controller that consults the abstract model to pick between two others.
#[derive(Debug, Clone)]
pub struct SwitchedController {
    pub ai: ControllerHandle,
    pub safety: ControllerHandle,
    pub model: Arc<AbstractMdp>,
    pub config: MonitorConfig,
    active: Active,
    next_query: f64,
    queries: Vec<QueryRecord>,
    decisions: Vec<(f64, Active)>,
    table: Option<Arc<QueryTable>>,
}

impl SwitchedController {
    pub fn new(ai: ControllerHandle, safety: ControllerHandle, model: Arc<AbstractMdp>, config: MonitorConfig) -> Self {
        Self {
            ai,
            safety,
            model,
            config,
            active: Active::Ai,
            next_query: 0.0,
            queries: Vec::new(),
            decisions: Vec::new(),
            table: None,
        }
    }

    /// Reuses verdicts computed by an earlier controller on the same model and query.
    pub fn with_table(mut self, table: Arc<QueryTable>) -> Self {
        self.table = Some(table);
        self
    }

    pub fn table(&self) -> Option<&Arc<QueryTable>> {
        self.table.as_ref()
    }

    pub fn reset(&mut self) {
        self.ai.reset();
        self.safety.reset();
        self.active = Active::Ai;
        self.next_query = 0.0;
        self.queries.clear();
        self.decisions.clear();
    }

    pub fn active(&self) -> Active {
        self.active
    }

    pub fn queries(&self) -> &[QueryRecord] {
        &self.queries
    }

    /// `(t, controller)` for every control decision so far.
    pub fn decisions(&self) -> &[(f64, Active)] {
        &self.decisions
    }

    fn query(&mut self, obs: &[f64], t: f64) -> Result<(), ControllerError> {
        let start = Instant::now();
        let err = |e: MonitorError| ControllerError::Monitor(e.to_string());
        if self.table.is_none() {
            let t = QueryTable::new(&self.model, &self.config.query, self.config.quantifier)
                .map_err(|e| err(e.into()))?;
            self.table = Some(Arc::new(t));
        }
        let table = self.table.as_deref().expect("table built above");
        let outcome = monitor_step_with(&self.model, table, &self.config, obs).map_err(err)?;
        let wall_time = start.elapsed().as_secs_f64();
        let next = match outcome.verdict {
            SafetyVerdict::Unsafe => Active::Safety,
            SafetyVerdict::Safe if self.config.switch_back => Active::Ai,
            SafetyVerdict::Safe | SafetyVerdict::Unknown => self.active,
        };
        if next != self.active {
            match next {
                Active::Ai => self.ai.reset(),
                Active::Safety => self.safety.reset(),
            }
            self.active = next;
        }
        self.queries.push(QueryRecord {
            t,
            outcome,
            selected: next,
            wall_time,
        });
        Ok(())
    }

    pub fn act(&mut self, obs: &[f64], t: f64, dt: f64) -> Result<f64, ControllerError> {
        if t >= self.next_query - 1e-9 {
            self.query(obs, t)?;
            self.next_query += self.config.period;
        }
        self.decisions.push((t, self.active));
        match self.active {
            Active::Ai => self.ai.act(obs, t, dt),
            Active::Safety => self.safety.act(obs, t, dt),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitoredTrace {
    pub trace: Trace,
    /// Controller applying the action held at each sample.
    pub tags: Vec<Active>,
    pub queries: Vec<QueryRecord>,
    /// Wall-clock seconds for the whole simulation, queries included.
    pub wall_time: f64,
    /// Verdict table the run consulted, for reuse in later runs.
    pub table: Option<Arc<QueryTable>>,
}

impl MonitoredTrace {
    pub fn query_time(&self) -> f64 {
        self.queries.iter().map(|q| q.wall_time).sum()
    }

    /// Share of the simulation wall time spent on safety queries.
    pub fn overhead_ratio(&self) -> f64 {
        if self.wall_time > 0.0 {
            self.query_time() / self.wall_time
        } else {
            0.0
        }
    }

    pub fn safety_controller_fraction(&self) -> f64 {
        if self.tags.is_empty() {
            return 0.0;
        }
        self.tags.iter().filter(|t| **t == Active::Safety).count() as f64 / self.tags.len() as f64
    }
}

/// Closed-loop simulation with model-based switching.
#[allow(clippy::too_many_arguments)]
pub fn run_monitored(
    plant: &PlantModel,
    ai: ControllerHandle,
    safety: ControllerHandle,
    model: Arc<AbstractMdp>,
    config: &MonitorConfig,
    input: &InputSignal,
    sim: &SimConfig,
) -> Result<MonitoredTrace, MonitorError> {
    run_monitored_with(plant, ai, safety, model, config, input, sim, None)
}

/// [`run_monitored`] starting from a verdict table built by an earlier run.
#[allow(clippy::too_many_arguments)]
pub fn run_monitored_with(
    plant: &PlantModel,
    ai: ControllerHandle,
    safety: ControllerHandle,
    model: Arc<AbstractMdp>,
    config: &MonitorConfig,
    input: &InputSignal,
    sim: &SimConfig,
    table: Option<Arc<QueryTable>>,
) -> Result<MonitoredTrace, MonitorError> {
    config.validate(sim)?;
    let mut switched = SwitchedController::new(ai, safety, model, config.clone());
    if let Some(t) = table {
        switched = switched.with_table(t);
    }
    let mut handle = ControllerHandle::Switched(Box::new(switched));
    let start = Instant::now();
    let trace = simulate(plant, &mut handle, input, sim)?;
    let wall_time = start.elapsed().as_secs_f64();
    let ControllerHandle::Switched(s) = handle else {
        unreachable!("handle was built as switched")
    };
    let mut tags = Vec::with_capacity(trace.len());
    let mut d = 0;
    let decisions = s.decisions();
    for i in 0..trace.len() {
        let t = i as f64 * trace.dt;
        while d + 1 < decisions.len() && decisions[d + 1].0 <= t + 1e-9 {
            d += 1;
        }
        tags.push(decisions.get(d).map_or(Active::Ai, |x| x.1));
    }
    Ok(MonitoredTrace {
        trace,
        tags,
        queries: s.queries().to_vec(),
        wall_time,
        table: s.table().cloned(),
    })
}

/// Fraction of grid times in the window of `G[a,b](p)` at which `p` holds.
pub fn pattern_fraction(trace: &Trace, spec: &StlFormula) -> Result<f64, MonitorError> {
    let StlFormula::Always(iv, inner) = spec else {
        return Err(MonitorError::NotAPattern(spec.to_string()));
    };
    if inner.horizon() > 0.0 || has_temporal(inner) {
        return Err(MonitorError::NotAPattern(spec.to_string()));
    }
    let rob = robustness_signal(trace, inner)?;
    let (first, last) = iv.offsets(trace.dt);
    let last = last.min(trace.len().saturating_sub(1));
    if first > last {
        return Ok(0.0);
    }
    let hits = (first..=last).filter(|&i| rob[i] >= 0.0).count();
    Ok(hits as f64 / (last - first + 1) as f64)
}

fn has_temporal(f: &StlFormula) -> bool {
    match f {
        StlFormula::Always(..) | StlFormula::Eventually(..) | StlFormula::Until(..) => true,
        StlFormula::True | StlFormula::False | StlFormula::Pred { .. } => false,
        StlFormula::Not(a) => has_temporal(a),
        StlFormula::And(a, b) | StlFormula::Or(a, b) | StlFormula::Implies(a, b) => has_temporal(a) || has_temporal(b),
    }
}

/// Per-step `(safety, performance)` fractions of a trace.
pub fn eval_metrics(trace: &Trace, safety: &StlFormula, performance: &StlFormula) -> Result<(f64, f64), MonitorError> {
    Ok((pattern_fraction(trace, safety)?, pattern_fraction(trace, performance)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{build_abstraction, AbstractionConfig, LabeledTrace};
    use crate::controllers::PidController;
    use crate::signals::make_input;
    use crate::stl::parse_stl;

    /// Lattice wide enough that every runtime tank state lands in a visited cell.
    fn tank_model(label_all_unsafe: bool) -> AbstractMdp {
        let rob = if label_all_unsafe { -1.0 } else { 1.0 };
        let mut states = Vec::new();
        for i in -2..=2 {
            for j in -2..=2 {
                states.push(vec![5.0 * i as f64, 2.0 * j as f64]);
            }
        }
        let n = states.len();
        let t = LabeledTrace {
            states,
            actions: vec![0.0; n],
            robustness: vec![rob; n],
        };
        let cfg = AbstractionConfig {
            k: 2,
            c: 2,
            bounds: Some(vec![(-100.0, 100.0); 2]),
            ..Default::default()
        };
        build_abstraction(&[t], &cfg).unwrap()
    }

    /// Model of the constant-inflow tank labeled unsafe above 2.2 m.
    fn simulated_model() -> AbstractMdp {
        let plant = PlantModel::watertank();
        let sim = plant.default_sim_config();
        let mut traces = Vec::new();
        for u in [0.6, 0.7, 0.8, 0.9] {
            let tr = simulate(&plant, &mut ControllerHandle::Constant(u), &tank_input(), &sim).unwrap();
            let states: Vec<Vec<f64>> = tr.outputs.iter().map(|o| vec![o[0], o[1]]).collect();
            let robustness = states.iter().map(|s| 2.2 - s[0]).collect();
            traces.push(LabeledTrace {
                states,
                actions: tr.actions.clone(),
                robustness,
            });
        }
        let cfg = AbstractionConfig {
            k: 2,
            c: 10,
            ..Default::default()
        };
        build_abstraction(&traces, &cfg).unwrap()
    }

    fn tank_input() -> InputSignal {
        let plant = PlantModel::watertank();
        make_input(plant.default_input_spec(), vec![vec![2.0, 1.5, 2.5, 2.0]]).unwrap()
    }

    #[test]
    fn table_matches_direct_checks() {
        let model = simulated_model();
        let cfg = MonitorConfig::default();
        let table = QueryTable::new(&model, &cfg.query, cfg.quantifier).unwrap();
        for h in [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 50.0] {
            let q = [h, 2.0];
            assert_eq!(
                monitor_step(&model, &cfg, &q).unwrap(),
                monitor_step_with(&model, &table, &cfg, &q).unwrap()
            );
        }
    }

    #[test]
    fn verdicts() {
        let cfg = MonitorConfig::default();
        let bad = tank_model(true);
        assert_eq!(monitor_step(&bad, &cfg, &[1.0, 2.0]).unwrap().verdict, SafetyVerdict::Unsafe);
        let good = tank_model(false);
        let out = monitor_step(&good, &cfg, &[1.0, 2.0]).unwrap();
        assert_eq!(out.verdict, SafetyVerdict::Safe);
        assert_eq!(out.probability, Some(0.0));
        // Far outside the fixed bounds: never observed.
        let far = [1e4, 1e4];
        assert_eq!(monitor_step(&good, &cfg, &far).unwrap().verdict, SafetyVerdict::Unsafe);
        let stay = MonitorConfig {
            unknown_policy: UnknownPolicy::Ai,
            ..MonitorConfig::default()
        };
        assert_eq!(monitor_step(&good, &stay, &far).unwrap().verdict, SafetyVerdict::Unknown);
    }

    fn pid() -> ControllerHandle {
        ControllerHandle::Pid(PidController::for_plant(&PlantModel::watertank()))
    }

    #[test]
    fn all_safe_matches_ai_only() {
        let plant = PlantModel::watertank();
        let sim = plant.default_sim_config();
        let input = tank_input();
        let ai = ControllerHandle::Constant(0.8);
        let m = run_monitored(&plant, ai.clone(), pid(), Arc::new(tank_model(false)), &MonitorConfig::default(), &input, &sim).unwrap();
        let plain = simulate(&plant, &mut ai.clone(), &input, &sim).unwrap();
        assert_eq!(m.trace, plain);
        assert!(m.tags.iter().all(|t| *t == Active::Ai));
        assert_eq!(m.queries.len(), 4);
    }

    #[test]
    fn all_unsafe_matches_safety_only() {
        let plant = PlantModel::watertank();
        let sim = plant.default_sim_config();
        let input = tank_input();
        let m = run_monitored(
            &plant,
            ControllerHandle::Constant(0.8),
            pid(),
            Arc::new(tank_model(true)),
            &MonitorConfig::default(),
            &input,
            &sim,
        )
        .unwrap();
        let plain = simulate(&plant, &mut pid(), &input, &sim).unwrap();
        assert_eq!(m.trace, plain);
        assert!(m.tags.iter().all(|t| *t == Active::Safety));
        let again = run_monitored(
            &plant,
            ControllerHandle::Constant(0.8),
            pid(),
            Arc::new(tank_model(true)),
            &MonitorConfig::default(),
            &input,
            &sim,
        )
        .unwrap();
        assert_eq!(again.trace, m.trace);
        assert_eq!(again.tags, m.tags);
    }

    #[test]
    fn tags_only_change_at_query_instants() {
        let plant = PlantModel::watertank();
        let sim = plant.default_sim_config();
        let cfg = MonitorConfig {
            unknown_policy: UnknownPolicy::Safe,
            ..MonitorConfig::default()
        };
        let model = Arc::new(simulated_model());
        let m = run_monitored(&plant, ControllerHandle::Constant(0.9), pid(), model, &cfg, &tank_input(), &sim).unwrap();
        assert_eq!(m.queries.len(), 4);
        assert_eq!(m.tags.len(), m.trace.len());
        let per_query = (cfg.period / sim.dt).round() as usize;
        for i in 1..m.tags.len() {
            if m.tags[i] != m.tags[i - 1] {
                assert_eq!(i % per_query, 0, "switch at sample {i}");
            }
        }
    }

    #[test]
    fn rejects_bad_period() {
        let plant = PlantModel::watertank();
        let sim = plant.default_sim_config();
        let cfg = MonitorConfig {
            period: 0.15,
            ..MonitorConfig::default()
        };
        assert!(cfg.validate(&sim).is_err());
    }

    fn ramp_trace() -> Trace {
        let n = 11;
        Trace {
            dt: 1.0,
            state_names: vec!["x".into()],
            states: (0..n).map(|i| vec![i as f64]).collect(),
            output_names: vec![],
            outputs: vec![vec![]; n],
            actions: vec![0.0; n],
            input_names: vec![],
            inputs: vec![vec![]; n],
            extra_names: vec![],
            extra: vec![],
        }
    }

    #[test]
    fn metric_fractions() {
        let tr = ramp_trace();
        let all = parse_stl("G[0,10](x >= 0)").unwrap();
        let half = parse_stl("G[1,10](x >= 6)").unwrap();
        let (s, p) = eval_metrics(&tr, &all, &half).unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(p, 0.5);
        assert!(pattern_fraction(&tr, &parse_stl("F[0,10](x >= 0)").unwrap()).is_err());
        assert!(pattern_fraction(&tr, &parse_stl("G[0,5](F[0,1](x >= 0))").unwrap()).is_err());
    }
}
