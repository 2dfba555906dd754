//! Glue between simulation, labeling and learning.
//!
//! # Random streams
//!
//! Every random draw derives from one root seed. [`stream_rng`] keys a
//! ChaCha8 generator by the root seed and selects the stream
//! `(purpose << 32) | index`, so trace 17 of a collection run never shares
//! randomness with trial 17 of a falsification run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::abstraction::LabeledTrace;
use crate::controllers::{train_bc, ControllerError, ControllerHandle, MlpNet, PidController, TrainConfig};
use crate::plants::{simulate, PlantModel, SimConfig, SimError};
use crate::signals::{InputSignal, InputSpec, Trace};
use crate::stl::{robustness_signal, StlError, StlFormula};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

/// Stream purposes for [`stream_rng`].
pub mod streams {
    pub const COLLECT: u64 = 1;
    pub const FRESH: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const MONITOR: u64 = 4;
    pub const FALSIFY: u64 = 5;
    pub const CORRUPT: u64 = 6;
}

pub fn stream_rng(root: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream((purpose << 32) | (index & 0xffff_ffff));
    rng
}

/// A 64-bit seed drawn from a stream, for APIs that take plain seeds.
pub fn stream_seed(root: u64, purpose: u64, index: u64) -> u64 {
    use rand::Rng;
    stream_rng(root, purpose, index).random()
}

/// Observation vector at every sample of `trace`.
pub fn observations(plant: &PlantModel, trace: &Trace) -> Vec<Vec<f64>> {
    (0..trace.len())
        .map(|i| plant.observe(&trace.states[i], i as f64 * trace.dt, &trace.inputs[i]))
        .collect()
}

/// Pairs each observation with the suffix robustness of `spec` at that step.
pub fn label_trace(plant: &PlantModel, trace: &Trace, spec: &StlFormula) -> Result<LabeledTrace, PipelineError> {
    Ok(LabeledTrace {
        states: observations(plant, trace),
        actions: trace.actions.clone(),
        robustness: robustness_signal(trace, spec)?,
    })
}

/// Simulates `n` random inputs drawn from streams `first..first + n`.
pub fn collect_traces(
    plant: &PlantModel,
    controller: &ControllerHandle,
    input_spec: &InputSpec,
    sim: &SimConfig,
    n: usize,
    root: u64,
    purpose: u64,
) -> Result<Vec<(InputSignal, Trace)>, PipelineError> {
    (0..n)
        .map(|i| {
            let input = input_spec.random(&mut stream_rng(root, purpose, i as u64));
            let trace = simulate(plant, &mut controller.clone(), &input, sim)?;
            Ok((input, trace))
        })
        .collect()
}

/// `(observation, action)` pairs at the control instants of `trace`.
pub fn control_pairs(plant: &PlantModel, trace: &Trace, sim: &SimConfig) -> Vec<(Vec<f64>, f64)> {
    let per = sim.steps_per_control();
    let obs = observations(plant, trace);
    (0..trace.len().saturating_sub(1))
        .step_by(per)
        .map(|i| (obs[i].clone(), trace.actions[i]))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloneConfig {
    pub traces: usize,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for CloneConfig {
    fn default() -> Self {
        Self {
            traces: 60,
            hidden: vec![16, 16],
            train: TrainConfig {
                lr: 3e-3,
                epochs: 60,
                batch: 64,
                seed: 0,
                ..TrainConfig::default()
            },
        }
    }
}

/// Fits a network to the plant's PID controller by behavior cloning.
pub fn clone_pid(
    plant: &PlantModel,
    input_spec: &InputSpec,
    sim: &SimConfig,
    cfg: &CloneConfig,
    root: u64,
) -> Result<(MlpNet, f64), PipelineError> {
    let teacher = ControllerHandle::Pid(PidController::for_plant(plant));
    let runs = collect_traces(plant, &teacher, input_spec, sim, cfg.traces, root, streams::TRAIN)?;
    let data: Vec<(Vec<f64>, f64)> = runs.iter().flat_map(|(_, t)| control_pairs(plant, t, sim)).collect();
    let mut arch = vec![plant.observation_names().len()];
    arch.extend(&cfg.hidden);
    arch.push(1);
    let trained = train_bc(&data, &arch, &cfg.train)?;
    Ok((trained.net.with_output_range(plant.control_range()), trained.final_loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: u64 = stream_rng(7, streams::COLLECT, 0).random();
        let b: u64 = stream_rng(7, streams::COLLECT, 1).random();
        let c: u64 = stream_rng(7, streams::FRESH, 0).random();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, stream_rng(7, streams::COLLECT, 0).random::<u64>());
    }

    #[test]
    fn labels_every_step() {
        let plant = PlantModel::watertank();
        let sim = plant.default_sim_config();
        let spec = crate::stl::parse_stl(plant.default_spec()).unwrap();
        let pid = ControllerHandle::Pid(PidController::for_plant(&plant));
        let runs = collect_traces(&plant, &pid, &plant.default_input_spec(), &sim, 2, 1, streams::COLLECT).unwrap();
        let l = label_trace(&plant, &runs[0].1, &spec).unwrap();
        assert_eq!(l.states.len(), runs[0].1.len());
        assert_eq!(l.robustness.len(), l.states.len());
        assert_eq!(l.states[0].len(), plant.observation_names().len());
        let pairs = control_pairs(&plant, &runs[0].1, &sim);
        assert_eq!(pairs.len(), sim.num_steps() / sim.steps_per_control());
    }
}
