//! Analytic plant models and the closed-loop simulator.
//!
//! Every plant exposes three vectors per sample:
//!
//! * the integrated **state** (what RK4 advances),
//! * derived **outputs** (the channels specifications talk about), and
//! * the **observation** fed to controllers, which is also the concrete state
//!   used by the abstraction. The observation channels are always a subset of
//!   the output channels.
//!
//! | plant | state | observation |
//! |-------|-------|-------------|
//! | `acc` | `x_lead v_lead x_ego v_ego` | `d_rel v_ego v_lead v_err` with `v_err = v_target - v_ego` |
//! | `cstr` | `conc temp` | `conc temp c_ref` |
//! | `watertank` | `h` | `h h_ref` |
//!
//! The simulator samples the observation every `control_period`, asks the
//! controller for one action, and holds it (and the exogenous input sampled at
//! the start of each integration step) while RK4 advances the plant by `dt`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{ControllerError, ControllerHandle};
use crate::signals::{InputSignal, InputSpec, Interpolation, SignalError, Trace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("non-finite plant state at t={t}")]
    NonFinite { t: f64 },
    #[error("numeric blow-up at step {step}; trace truncated")]
    BlowUp { step: usize, partial: Box<Trace> },
    #[error("controller failed at t={t}: {source}")]
    Controller { t: f64, source: ControllerError },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccParams {
    pub d_default: f64,
    pub t_gap: f64,
    pub v_target: f64,
    pub x_lead0: f64,
    pub v_lead0: f64,
    pub x_ego0: f64,
    pub v_ego0: f64,
    pub lead_accel_min: f64,
    pub lead_accel_max: f64,
    pub ego_accel_min: f64,
    pub ego_accel_max: f64,
}

impl Default for AccParams {
    fn default() -> Self {
        Self {
            d_default: 10.0,
            t_gap: 1.4,
            v_target: 30.0,
            x_lead0: 100.0,
            v_lead0: 25.0,
            x_ego0: 0.0,
            v_ego0: 20.0,
            lead_accel_min: -2.0,
            lead_accel_max: 2.0,
            ego_accel_min: -3.0,
            ego_accel_max: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CstrParams {
    /// Residence time θ.
    pub theta: f64,
    pub k0: f64,
    /// Activation temperature E (kelvin).
    pub activation: f64,
    pub k1: f64,
    pub k2: f64,
    pub c_feed: f64,
    pub t_feed: f64,
    pub c0: f64,
    pub temp0: f64,
    /// Setpoint ramps linearly from `c_ref_low` to `c_ref_high` on `[ramp_start, ramp_end]`.
    pub c_ref_low: f64,
    pub c_ref_high: f64,
    pub ramp_start: f64,
    pub ramp_end: f64,
    pub coolant_min: f64,
    pub coolant_max: f64,
}

impl Default for CstrParams {
    fn default() -> Self {
        Self {
            theta: 1.0,
            k0: 34_930_800.0,
            activation: 5963.6,
            k1: 11.92,
            k2: 0.3,
            c_feed: 10.0,
            t_feed: 298.15,
            c0: 8.5698,
            temp0: 311.2639,
            c_ref_low: 8.57,
            c_ref_high: 2.0,
            ramp_start: 5.0,
            ramp_end: 20.0,
            coolant_min: 280.0,
            coolant_max: 320.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TankParams {
    /// Cross-section area A.
    pub area: f64,
    /// Outflow coefficient a.
    pub outflow: f64,
    pub h0: f64,
    pub inflow_max: f64,
}

impl Default for TankParams {
    fn default() -> Self {
        Self {
            area: 1.0,
            outflow: 0.5,
            h0: 1.0,
            inflow_max: 2.0,
        }
    }
}

/// One of the three analytic plants, with its constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum PlantModel {
    Acc(AccParams),
    Cstr(CstrParams),
    Watertank(TankParams),
}

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl PlantModel {
    pub fn acc() -> Self {
        PlantModel::Acc(AccParams::default())
    }

    pub fn cstr() -> Self {
        PlantModel::Cstr(CstrParams::default())
    }

    pub fn watertank() -> Self {
        PlantModel::Watertank(TankParams::default())
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "acc" => Some(Self::acc()),
            "cstr" => Some(Self::cstr()),
            "watertank" => Some(Self::watertank()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PlantModel::Acc(_) => "acc",
            PlantModel::Cstr(_) => "cstr",
            PlantModel::Watertank(_) => "watertank",
        }
    }

    pub fn state_names(&self) -> Vec<String> {
        match self {
            PlantModel::Acc(_) => names(&["x_lead", "v_lead", "x_ego", "v_ego"]),
            PlantModel::Cstr(_) => names(&["conc", "temp"]),
            PlantModel::Watertank(_) => names(&["h"]),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_names().len()
    }

    pub fn output_names(&self) -> Vec<String> {
        match self {
            PlantModel::Acc(_) => names(&["d_rel", "d_safe", "v_ego", "v_lead", "v_target", "v_err"]),
            PlantModel::Cstr(_) => names(&["conc", "temp", "c_ref", "error"]),
            PlantModel::Watertank(_) => names(&["h", "h_ref", "error"]),
        }
    }

    pub fn observation_names(&self) -> Vec<String> {
        match self {
            PlantModel::Acc(_) => names(&["d_rel", "v_ego", "v_lead", "v_err"]),
            PlantModel::Cstr(_) => names(&["conc", "temp", "c_ref"]),
            PlantModel::Watertank(_) => names(&["h", "h_ref"]),
        }
    }

    pub fn input_names(&self) -> Vec<String> {
        match self {
            PlantModel::Acc(_) => names(&["a_lead"]),
            PlantModel::Cstr(_) => names(&["t_feed_dev"]),
            PlantModel::Watertank(_) => names(&["h_ref"]),
        }
    }

    pub fn exogenous_dim(&self) -> usize {
        self.input_names().len()
    }

    pub fn control_range(&self) -> (f64, f64) {
        match self {
            PlantModel::Acc(p) => (p.ego_accel_min, p.ego_accel_max),
            PlantModel::Cstr(p) => (p.coolant_min, p.coolant_max),
            PlantModel::Watertank(p) => (0.0, p.inflow_max),
        }
    }

    pub fn initial_state(&self) -> Vec<f64> {
        match self {
            PlantModel::Acc(p) => vec![p.x_lead0, p.v_lead0, p.x_ego0, p.v_ego0],
            PlantModel::Cstr(p) => vec![p.c0, p.temp0],
            PlantModel::Watertank(p) => vec![p.h0],
        }
    }

    /// Default exogenous input space and nominal timing for the plant.
    pub fn default_input_spec(&self) -> InputSpec {
        let (ranges, points, duration) = match self {
            PlantModel::Acc(p) => (vec![(p.lead_accel_min, p.lead_accel_max)], 5, 50.0),
            PlantModel::Cstr(_) => (vec![(-5.0, 5.0)], 3, 30.0),
            PlantModel::Watertank(_) => (vec![(1.0, 3.0)], 4, 20.0),
        };
        InputSpec::new(ranges, points, duration, Interpolation::PiecewiseConstant)
            .expect("plant defaults are valid")
    }

    pub fn default_sim_config(&self) -> SimConfig {
        match self {
            PlantModel::Acc(_) => SimConfig::new(0.1, 50.0, 0.1),
            PlantModel::Cstr(_) => SimConfig::new(0.02, 30.0, 0.1),
            PlantModel::Watertank(_) => SimConfig::new(0.05, 20.0, 0.1),
        }
        .expect("plant defaults are valid")
    }

    fn c_ref(p: &CstrParams, t: f64) -> f64 {
        if t <= p.ramp_start {
            p.c_ref_low
        } else if t >= p.ramp_end {
            p.c_ref_high
        } else {
            let frac = (t - p.ramp_start) / (p.ramp_end - p.ramp_start);
            p.c_ref_low + frac * (p.c_ref_high - p.c_ref_low)
        }
    }

    /// Right-hand side of the plant ODE. `control` is clamped to the control range.
    pub fn derivative(&self, state: &[f64], control: f64, exo: &[f64]) -> Result<Vec<f64>, SimError> {
        if state.iter().any(|v| !v.is_finite()) || !control.is_finite() {
            return Err(SimError::NonFinite { t: f64::NAN });
        }
        let (lo, hi) = self.control_range();
        let u = control.clamp(lo, hi);
        let d = match self {
            PlantModel::Acc(p) => {
                let a_lead = exo.first().copied().unwrap_or(0.0).clamp(p.lead_accel_min, p.lead_accel_max);
                let (v_l, v_e) = (state[1], state[3]);
                // Vehicles do not reverse: braking stops at standstill.
                let dv_l = if v_l <= 0.0 && a_lead < 0.0 { 0.0 } else { a_lead };
                let dv_e = if v_e <= 0.0 && u < 0.0 { 0.0 } else { u };
                vec![v_l, dv_l, v_e, dv_e]
            }
            PlantModel::Cstr(p) => {
                let (c, temp) = (state[0], state[1]);
                let t_feed = p.t_feed + exo.first().copied().unwrap_or(0.0);
                let rate = p.k0 * (-p.activation / temp).exp() * c;
                vec![
                    (p.c_feed - c) / p.theta - rate,
                    (t_feed - temp) / p.theta + p.k1 * rate + p.k2 * (u - temp),
                ]
            }
            PlantModel::Watertank(p) => {
                let h = state[0];
                vec![(u - p.outflow * h.max(0.0).sqrt()) / p.area]
            }
        };
        if d.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { t: f64::NAN });
        }
        Ok(d)
    }

    /// Projects an integrated state back onto the physical domain: speeds and
    /// water levels cannot go negative. A no-op for states already inside it.
    pub fn project(&self, state: &mut [f64]) {
        match self {
            PlantModel::Acc(_) => {
                state[1] = state[1].max(0.0);
                state[3] = state[3].max(0.0);
            }
            PlantModel::Cstr(_) => {}
            PlantModel::Watertank(_) => state[0] = state[0].max(0.0),
        }
    }

    /// Derived output channels at time `t`.
    pub fn outputs(&self, state: &[f64], t: f64, exo: &[f64]) -> Vec<f64> {
        match self {
            PlantModel::Acc(p) => {
                let d_rel = state[0] - state[2];
                let v_ego = state[3];
                vec![
                    d_rel,
                    p.d_default + p.t_gap * v_ego,
                    v_ego,
                    state[1],
                    p.v_target,
                    p.v_target - v_ego,
                ]
            }
            PlantModel::Cstr(p) => {
                let c_ref = Self::c_ref(p, t);
                vec![state[0], state[1], c_ref, state[0] - c_ref]
            }
            PlantModel::Watertank(_) => {
                let h_ref = exo.first().copied().unwrap_or(0.0);
                vec![state[0], h_ref, state[0] - h_ref]
            }
        }
    }

    /// Observation vector (controller input and concrete abstraction state).
    pub fn observe(&self, state: &[f64], t: f64, exo: &[f64]) -> Vec<f64> {
        let out = self.outputs(state, t, exo);
        match self {
            PlantModel::Acc(_) => vec![out[0], out[2], out[3], out[5]],
            PlantModel::Cstr(_) => vec![out[0], out[1], out[2]],
            PlantModel::Watertank(_) => vec![out[0], out[1]],
        }
    }

    /// Scalar tracking error a PID safety controller regulates to zero.
    ///
    /// * `acc`: `min(v_target - v_ego, gap_gain*(d_rel - d_ref) + (v_lead - v_ego))`
    ///   with `d_ref = d_default + 2*t_gap*v_ego + margin`, i.e. keep the
    ///   braking-distance requirement plus a margin and otherwise cruise.
    /// * `cstr`: `conc - c_ref` (more coolant temperature raises conversion).
    /// * `watertank`: `h_ref - h`.
    pub fn tracking_error(&self, obs: &[f64]) -> f64 {
        match self {
            PlantModel::Acc(p) => {
                let (d_rel, v_ego, v_lead, v_err) = (obs[0], obs[1], obs[2], obs[3]);
                let d_ref = p.d_default + 2.0 * p.t_gap * v_ego + ACC_SPACING_MARGIN;
                v_err.min(ACC_GAP_GAIN * (d_rel - d_ref) + (v_lead - v_ego))
            }
            PlantModel::Cstr(_) => obs[0] - obs[2],
            PlantModel::Watertank(_) => obs[1] - obs[0],
        }
    }

    /// Output offset the PID adds to its feedback term (nominal actuation).
    pub fn nominal_control(&self) -> f64 {
        match self {
            PlantModel::Acc(_) => 0.0,
            PlantModel::Cstr(_) => 298.0,
            PlantModel::Watertank(p) => p.outflow * 2.0f64.sqrt(),
        }
    }

    /// Default STL safety specification used for labeling and falsification.
    pub fn default_spec(&self) -> &'static str {
        match self {
            PlantModel::Acc(_) => "G[0,50](d_rel - (d_safe + 1.4*v_ego) >= 0)",
            PlantModel::Cstr(_) => "G[27,30](abs(error) <= 0.35)",
            PlantModel::Watertank(_) => "G[10,20](abs(error) <= 0.3)",
        }
    }

    /// Default per-step safety and performance specifications (`G_I(p)` patterns).
    pub fn default_metric_specs(&self) -> (&'static str, &'static str) {
        match self {
            PlantModel::Acc(_) => ("G[0,50](d_rel >= d_safe)", "G[0,50](abs(v_ego - v_target) <= 0.2)"),
            PlantModel::Cstr(_) => ("G[25,30](abs(error) <= 0.3)", "G[25,30](abs(error) <= 0.24)"),
            PlantModel::Watertank(_) => ("G[10,20](abs(error) <= 0.3)", "G[10,20](abs(error) <= 0.1)"),
        }
    }
}

/// Extra spacing the ACC safety controller keeps beyond the requirement (m).
pub const ACC_SPACING_MARGIN: f64 = 10.0;
/// Distance-to-speed gain of the ACC spacing policy (1/s).
pub const ACC_GAP_GAIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub control_period: f64,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, control_period: f64) -> Result<Self, SimError> {
        let cfg = Self {
            dt,
            horizon,
            control_period,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        let ratio = self.control_period / self.dt;
        if !(ratio >= 1.0 - 1e-9) || (ratio - ratio.round()).abs() > 1e-6 {
            return Err(SimError::InvalidConfig(format!(
                "control_period {} is not an integer multiple of dt {}",
                self.control_period, self.dt
            )));
        }
        if self.horizon < self.control_period - 1e-12 {
            return Err(SimError::InvalidConfig("horizon must be at least one control period".into()));
        }
        Ok(())
    }

    /// Integration steps per control period.
    pub fn steps_per_control(&self) -> usize {
        (self.control_period / self.dt).round() as usize
    }

    /// Number of integration steps; the trace has one more sample.
    pub fn num_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step(plant: &PlantModel, state: &[f64], control: f64, exo: &[f64], dt: f64) -> Result<Vec<f64>, SimError> {
    let axpy = |x: &[f64], k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    let k1 = plant.derivative(state, control, exo)?;
    let k2 = plant.derivative(&axpy(state, &k1, dt / 2.0), control, exo)?;
    let k3 = plant.derivative(&axpy(state, &k2, dt / 2.0), control, exo)?;
    let k4 = plant.derivative(&axpy(state, &k3, dt), control, exo)?;
    let mut next: Vec<f64> = (0..state.len())
        .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    plant.project(&mut next);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite { t: f64::NAN });
    }
    Ok(next)
}

/// Closed-loop simulation of `plant` under `controller` driven by `input`.
///
/// The returned trace has `num_steps + 1` samples. `actions[i]` is the action
/// held over `[t_i, t_{i+1})` (the last entry repeats the final held action).
pub fn simulate(
    plant: &PlantModel,
    controller: &mut ControllerHandle,
    input: &InputSignal,
    cfg: &SimConfig,
) -> Result<Trace, SimError> {
    cfg.validate()?;
    if input.spec.duration + 1e-9 < cfg.horizon {
        return Err(SimError::InvalidConfig(format!(
            "input duration {} is shorter than the horizon {}",
            input.spec.duration, cfg.horizon
        )));
    }
    if input.spec.dims() != plant.exogenous_dim() {
        return Err(SimError::InvalidConfig(format!(
            "plant `{}` takes {} exogenous channels, input has {}",
            plant.name(),
            plant.exogenous_dim(),
            input.spec.dims()
        )));
    }
    let n = cfg.num_steps();
    let per_control = cfg.steps_per_control();
    let (lo, hi) = plant.control_range();
    let mut trace = Trace {
        dt: cfg.dt,
        state_names: plant.state_names(),
        states: Vec::with_capacity(n + 1),
        output_names: plant.output_names(),
        outputs: Vec::with_capacity(n + 1),
        actions: Vec::with_capacity(n + 1),
        input_names: plant.input_names(),
        inputs: Vec::with_capacity(n + 1),
        extra_names: vec![],
        extra: vec![],
    };
    controller.reset();
    let mut state = plant.initial_state();
    let mut action = 0.0;
    for i in 0..=n {
        let t = i as f64 * cfg.dt;
        let exo = input.sample(t.min(input.spec.duration))?;
        if i % per_control == 0 && i < n {
            let obs = plant.observe(&state, t, &exo);
            action = controller
                .act(&obs, t, cfg.control_period)
                .map_err(|source| SimError::Controller { t, source })?
                .clamp(lo, hi);
        }
        trace.outputs.push(plant.outputs(&state, t, &exo));
        trace.states.push(state.clone());
        trace.actions.push(action);
        trace.inputs.push(exo.clone());
        if i == n {
            break;
        }
        state = match rk4_step(plant, &state, action, &exo, cfg.dt) {
            Ok(s) => s,
            Err(_) => {
                return Err(SimError::BlowUp {
                    step: i,
                    partial: Box::new(trace),
                })
            }
        };
    }
    Ok(trace)
}
