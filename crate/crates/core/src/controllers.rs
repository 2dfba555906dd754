//! Controllers: a small feed-forward network, a PID safety controller, and
//! the handle the simulator drives.
//!
//! The network maps a normalized observation through `tanh` hidden layers to
//! a single affine output, then rescales it to plant units and optionally
//! clamps it to the control range. [`train_bc`] fits a network to
//! `(observation, action)` pairs by mini-batch gradient descent on the mean
//! squared error, which is how the AI controllers in this crate are obtained
//! from a traditional controller.
//!
//! # Weight file format
//!
//! ```text
//! mlp 1
//! layers 4 32 32 1
//! input_offset <in values>
//! input_scale <in values>
//! output <offset> <scale> <lo> <hi>        # lo/hi are `none` when unclamped
//! weights 0
//! <row 0 of the 32x4 matrix>
//! ...
//! bias 0
//! <32 values>
//! weights 1
//! ...
//! ```

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::monitor::SwitchedController;
use crate::plants::PlantModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("observation has {got} entries, network expects {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("non-finite network parameter in layer {layer}")]
    NonFiniteParameter { layer: usize },
    #[error("non-finite controller input")]
    NonFiniteInput,
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("empty training dataset")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("weight file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("safety monitor: {0}")]
    Monitor(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out x in`, row-major.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn outputs(&self) -> usize {
        self.bias.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNet {
    pub layers: Vec<Layer>,
    pub input_offset: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_offset: f64,
    pub output_scale: f64,
    pub output_range: Option<(f64, f64)>,
}

impl MlpNet {
    /// Network with the given layer sizes (`[inputs, hidden.., 1]`), identity
    /// normalization, and all parameters zero.
    pub fn zeros(sizes: &[usize]) -> Result<Self, ControllerError> {
        check_arch(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weights: vec![vec![0.0; w[0]]; w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self {
            layers,
            input_offset: vec![0.0; sizes[0]],
            input_scale: vec![1.0; sizes[0]],
            output_offset: 0.0,
            output_scale: 1.0,
            output_range: None,
        })
    }

    /// Xavier-uniform initialization.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self, ControllerError> {
        let mut net = Self::zeros(sizes)?;
        for layer in &mut net.layers {
            let bound = (6.0 / (layer.inputs() + layer.outputs()) as f64).sqrt();
            for row in &mut layer.weights {
                for w in row.iter_mut() {
                    *w = rng.random_range(-bound..bound);
                }
            }
        }
        Ok(net)
    }

    pub fn with_output_range(mut self, range: (f64, f64)) -> Self {
        self.output_range = Some(range);
        self
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(Layer::outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter()
            .zip(&self.input_offset)
            .zip(&self.input_scale)
            .map(|((x, o), s)| (x - o) * s)
            .collect()
    }

    /// Output of the last affine layer, in normalized units.
    fn raw(&self, x: Vec<f64>) -> f64 {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if i != last {
                h.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        h[0]
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        check_arch(&self.sizes())?;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 && layer.inputs() != self.layers[i - 1].outputs() {
                return Err(ControllerError::InvalidArchitecture(format!("layer {i} input width mismatch")));
            }
            if layer.weights.iter().any(|r| r.len() != layer.inputs()) {
                return Err(ControllerError::InvalidArchitecture(format!("layer {i} is ragged")));
            }
            let finite = layer.weights.iter().flatten().chain(&layer.bias).all(|v| v.is_finite());
            if !finite {
                return Err(ControllerError::NonFiniteParameter { layer: i });
            }
        }
        let n = self.input_dim();
        if self.input_offset.len() != n || self.input_scale.len() != n {
            return Err(ControllerError::InvalidArchitecture("normalization width mismatch".into()));
        }
        Ok(())
    }

    /// Forward pass in plant units, clamped to `output_range` when set.
    pub fn forward(&self, obs: &[f64]) -> Result<f64, ControllerError> {
        if obs.len() != self.input_dim() {
            return Err(ControllerError::DimensionMismatch {
                got: obs.len(),
                want: self.input_dim(),
            });
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(ControllerError::NonFiniteInput);
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weights.iter().flatten().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(ControllerError::NonFiniteParameter { layer: i });
            }
        }
        let y = self.output_offset + self.output_scale * self.raw(self.normalize(obs));
        Ok(match self.output_range {
            Some((lo, hi)) => y.clamp(lo, hi),
            None => y,
        })
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.outputs() * (l.inputs() + 1)).sum()
    }

    /// All weights and biases, layer by layer (weights row-major, then bias).
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            p.extend(l.weights.iter().flatten());
            p.extend(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params(), "parameter vector length");
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut().flatten() {
                *w = p[k];
                k += 1;
            }
            for b in &mut l.bias {
                *b = p[k];
                k += 1;
            }
        }
    }

    /// Mean squared error over `batch` in normalized target units, and its
    /// gradient with respect to [`MlpNet::params`].
    pub fn loss_and_gradient(&self, batch: &[(Vec<f64>, f64)]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.num_params()];
        let mut loss = 0.0;
        let last = self.layers.len() - 1;
        let scale = 1.0 / batch.len() as f64;
        for (obs, target) in batch {
            // forward, keeping every activation
            let mut acts = vec![self.normalize(obs)];
            for (i, layer) in self.layers.iter().enumerate() {
                let mut h = layer.apply(acts.last().expect("nonempty"));
                if i != last {
                    h.iter_mut().for_each(|v| *v = v.tanh());
                }
                acts.push(h);
            }
            let y = (target - self.output_offset) / self.output_scale;
            let err = acts[last + 1][0] - y;
            loss += err * err * scale;
            // backward
            let mut delta = vec![2.0 * err * scale];
            let mut offset = grad.len();
            for i in (0..self.layers.len()).rev() {
                let layer = &self.layers[i];
                let (nin, nout) = (layer.inputs(), layer.outputs());
                offset -= nout * (nin + 1);
                let input = &acts[i];
                for o in 0..nout {
                    for j in 0..nin {
                        grad[offset + o * nin + j] += delta[o] * input[j];
                    }
                    grad[offset + nout * nin + o] += delta[o];
                }
                if i > 0 {
                    let mut next = vec![0.0; nin];
                    for o in 0..nout {
                        for (j, n) in next.iter_mut().enumerate() {
                            *n += layer.weights[o][j] * delta[o];
                        }
                    }
                    for (n, a) in next.iter_mut().zip(input) {
                        *n *= 1.0 - a * a;
                    }
                    delta = next;
                }
            }
        }
        (loss, grad)
    }

    /// Adds independent `N(0, magnitude^2)` noise to every weight and bias.
    pub fn corrupt(&self, magnitude: f64, seed: u64) -> MlpNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, magnitude.max(0.0)).expect("finite std");
        let mut net = self.clone();
        let p: Vec<f64> = net.params().into_iter().map(|v| v + normal.sample(&mut rng)).collect();
        net.set_params(&p);
        net
    }

    /// Upper bound on the Lipschitz constant of [`MlpNet::forward`] in the
    /// Euclidean norm: product of the layers' Frobenius norms, times the
    /// input and output scaling.
    pub fn lipschitz_bound(&self) -> f64 {
        let weights: f64 = self
            .layers
            .iter()
            .map(|l| l.weights.iter().flatten().map(|w| w * w).sum::<f64>().sqrt())
            .product();
        let in_scale = self.input_scale.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        weights * in_scale * self.output_scale.abs()
    }

    pub fn to_text(&self) -> String {
        let join = |xs: &[f64]| xs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
        let mut s = String::from("mlp 1\n");
        let sizes: Vec<String> = self.sizes().iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "layers {}", sizes.join(" "));
        let _ = writeln!(s, "input_offset {}", join(&self.input_offset));
        let _ = writeln!(s, "input_scale {}", join(&self.input_scale));
        match self.output_range {
            Some((lo, hi)) => {
                let _ = writeln!(s, "output {} {} {lo} {hi}", self.output_offset, self.output_scale);
            }
            None => {
                let _ = writeln!(s, "output {} {} none none", self.output_offset, self.output_scale);
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            let _ = writeln!(s, "weights {i}");
            for row in &l.weights {
                let _ = writeln!(s, "{}", join(row));
            }
            let _ = writeln!(s, "bias {i}");
            let _ = writeln!(s, "{}", join(&l.bias));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ControllerError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| ControllerError::Parse {
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            })
        };
        let nums = |line: usize, xs: &[&str]| -> Result<Vec<f64>, ControllerError> {
            xs.iter()
                .map(|v| {
                    v.parse::<f64>().map_err(|e| ControllerError::Parse {
                        line,
                        msg: format!("bad number `{v}`: {e}"),
                    })
                })
                .collect()
        };
        let keyed = |line: usize, l: &'_ str, key: &str| -> Result<Vec<String>, ControllerError> {
            let mut it = l.split_whitespace();
            if it.next() != Some(key) {
                return Err(ControllerError::Parse {
                    line,
                    msg: format!("expected `{key}`"),
                });
            }
            Ok(it.map(str::to_string).collect())
        };
        let (ln, l) = next("header")?;
        if keyed(ln, l, "mlp")? != ["1"] {
            return Err(ControllerError::Parse {
                line: ln,
                msg: "unsupported format version".into(),
            });
        }
        let (ln, l) = next("layers")?;
        let sizes: Vec<usize> = keyed(ln, l, "layers")?
            .iter()
            .map(|v| v.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| ControllerError::Parse {
                line: ln,
                msg: e.to_string(),
            })?;
        let mut net = MlpNet::zeros(&sizes)?;
        let (ln, l) = next("input_offset")?;
        let v = keyed(ln, l, "input_offset")?;
        net.input_offset = nums(ln, &v.iter().map(String::as_str).collect::<Vec<_>>())?;
        let (ln, l) = next("input_scale")?;
        let v = keyed(ln, l, "input_scale")?;
        net.input_scale = nums(ln, &v.iter().map(String::as_str).collect::<Vec<_>>())?;
        let (ln, l) = next("output")?;
        let out = keyed(ln, l, "output")?;
        if out.len() != 4 {
            return Err(ControllerError::Parse {
                line: ln,
                msg: "output needs offset, scale, lo, hi".into(),
            });
        }
        let os = nums(ln, &[&out[0], &out[1]])?;
        net.output_offset = os[0];
        net.output_scale = os[1];
        net.output_range = if out[2] == "none" {
            None
        } else {
            let r = nums(ln, &[&out[2], &out[3]])?;
            Some((r[0], r[1]))
        };
        for i in 0..net.layers.len() {
            let (ln, l) = next("weights")?;
            keyed(ln, l, "weights")?;
            let nout = net.layers[i].outputs();
            for o in 0..nout {
                let (ln, l) = next("weight row")?;
                let row = nums(ln, &l.split_whitespace().collect::<Vec<_>>())?;
                if row.len() != net.layers[i].inputs() {
                    return Err(ControllerError::Parse {
                        line: ln,
                        msg: format!("row has {} values, expected {}", row.len(), net.layers[i].inputs()),
                    });
                }
                net.layers[i].weights[o] = row;
            }
            let (ln, l) = next("bias")?;
            keyed(ln, l, "bias")?;
            let (ln, l) = next("bias values")?;
            let b = nums(ln, &l.split_whitespace().collect::<Vec<_>>())?;
            if b.len() != nout {
                return Err(ControllerError::Parse {
                    line: ln,
                    msg: format!("bias has {} values, expected {nout}", b.len()),
                });
            }
            net.layers[i].bias = b;
        }
        net.validate()?;
        Ok(net)
    }
}

fn check_arch(sizes: &[usize]) -> Result<(), ControllerError> {
    if sizes.len() < 2 {
        return Err(ControllerError::InvalidArchitecture("need at least input and output sizes".into()));
    }
    if sizes.contains(&0) {
        return Err(ControllerError::InvalidArchitecture("layer sizes must be positive".into()));
    }
    if *sizes.last().expect("nonempty") != 1 {
        return Err(ControllerError::InvalidArchitecture("output layer must have one unit".into()));
    }
    Ok(())
}

pub fn mlp_forward(net: &MlpNet, obs: &[f64]) -> Result<f64, ControllerError> {
    net.forward(obs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 50,
            batch: 64,
            seed: 0,
            optimizer: Optimizer::Adam,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedNet {
    pub net: MlpNet,
    /// Mean squared error on the whole dataset, normalized target units.
    pub final_loss: f64,
}

/// Behavior cloning: fits `arch` (`[inputs, hidden.., 1]`) to the dataset.
///
/// Inputs and targets are standardized with the dataset statistics, which
/// are stored in the network. With `epochs = 0` the seeded initialization is
/// returned unchanged.
pub fn train_bc(dataset: &[(Vec<f64>, f64)], arch: &[usize], hyper: &TrainConfig) -> Result<TrainedNet, ControllerError> {
    if dataset.is_empty() {
        return Err(ControllerError::EmptyDataset);
    }
    check_arch(arch)?;
    let dim = arch[0];
    if let Some((obs, _)) = dataset.iter().find(|(o, _)| o.len() != dim) {
        return Err(ControllerError::DimensionMismatch { got: obs.len(), want: dim });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut net = MlpNet::random(arch, &mut rng)?;
    let n = dataset.len() as f64;
    for j in 0..dim {
        let mean = dataset.iter().map(|(o, _)| o[j]).sum::<f64>() / n;
        let var = dataset.iter().map(|(o, _)| (o[j] - mean).powi(2)).sum::<f64>() / n;
        net.input_offset[j] = mean;
        net.input_scale[j] = if var > 1e-16 { 1.0 / var.sqrt() } else { 1.0 };
    }
    let mean = dataset.iter().map(|(_, y)| y).sum::<f64>() / n;
    let var = dataset.iter().map(|(_, y)| (y - mean).powi(2)).sum::<f64>() / n;
    net.output_offset = mean;
    net.output_scale = if var > 1e-16 { var.sqrt() } else { 1.0 };

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let batch_size = hyper.batch.max(1);
    let mut params = net.params();
    let (mut m, mut v) = (vec![0.0; params.len()], vec![0.0; params.len()]);
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut step = 0i32;
    let mut batch: Vec<(Vec<f64>, f64)> = Vec::with_capacity(batch_size);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset[i].clone()));
            let (loss, grad) = net.loss_and_gradient(&batch);
            if !loss.is_finite() {
                return Err(ControllerError::Diverged { epoch, loss });
            }
            step += 1;
            match hyper.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in params.iter_mut().zip(&grad) {
                        *p -= hyper.lr * g;
                    }
                }
                Optimizer::Adam => {
                    let c1 = 1.0 - beta1.powi(step);
                    let c2 = 1.0 - beta2.powi(step);
                    for k in 0..params.len() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * grad[k];
                        v[k] = beta2 * v[k] + (1.0 - beta2) * grad[k] * grad[k];
                        params[k] -= hyper.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                    }
                }
            }
            net.set_params(&params);
        }
    }
    let (final_loss, _) = net.loss_and_gradient(dataset);
    if !final_loss.is_finite() {
        return Err(ControllerError::Diverged {
            epoch: hyper.epochs,
            loss: final_loss,
        });
    }
    Ok(TrainedNet { net, final_loss })
}

/// Discrete PID with output offset, clamping, and integral anti-windup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PidController {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Added to the feedback term (nominal actuation).
    pub offset: f64,
    pub output_range: (f64, f64),
    /// Anti-windup bound on `|integral|`.
    pub integral_limit: f64,
    /// Plant whose tracking error the controller regulates.
    pub plant: Option<PlantModel>,
    #[serde(skip)]
    integral: f64,
    #[serde(skip)]
    prev_error: Option<f64>,
}

impl PidController {
    pub fn new(kp: f64, ki: f64, kd: f64, output_range: (f64, f64), integral_limit: f64) -> Self {
        Self {
            kp,
            ki,
            kd,
            offset: 0.0,
            output_range,
            integral_limit,
            plant: None,
            integral: 0.0,
            prev_error: None,
        }
    }

    /// Gains tuned for each analytic plant.
    pub fn for_plant(plant: &PlantModel) -> Self {
        let (kp, ki, kd, limit) = match plant {
            PlantModel::Acc(_) => (1.0, 0.05, 0.0, 20.0),
            PlantModel::Cstr(_) => (4.0, 3.0, 0.0, 10.0),
            PlantModel::Watertank(_) => (1.5, 0.4, 0.0, 2.0),
        };
        let mut pid = Self::new(kp, ki, kd, plant.control_range(), limit);
        pid.offset = plant.nominal_control();
        pid.plant = Some(plant.clone());
        pid
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    /// `offset + kp*e + ki*∫e + kd*de/dt`, clamped. The first call after a
    /// reset has zero derivative.
    pub fn act(&mut self, error: f64, dt: f64) -> Result<f64, ControllerError> {
        if !error.is_finite() || !(dt > 0.0) {
            return Err(ControllerError::NonFiniteInput);
        }
        let lim = self.integral_limit.abs();
        self.integral = (self.integral + error * dt).clamp(-lim, lim);
        let deriv = self.prev_error.map_or(0.0, |p| (error - p) / dt);
        self.prev_error = Some(error);
        let u = self.offset + self.kp * error + self.ki * self.integral + self.kd * deriv;
        Ok(u.clamp(self.output_range.0, self.output_range.1))
    }
}

pub fn pid_act(pid: &mut PidController, error: f64, dt: f64) -> Result<f64, ControllerError> {
    pid.act(error, dt)
}

/// The controller driven by the simulator.
#[derive(Debug, Clone)]
pub enum ControllerHandle {
    Mlp(MlpNet),
    Pid(PidController),
    Switched(Box<SwitchedController>),
    /// Emits the same action forever; used for stubs and tests.
    Constant(f64),
}

impl ControllerHandle {
    pub fn reset(&mut self) {
        match self {
            ControllerHandle::Pid(p) => p.reset(),
            ControllerHandle::Switched(s) => s.reset(),
            ControllerHandle::Mlp(_) | ControllerHandle::Constant(_) => {}
        }
    }

    /// One decision from observation `obs` at time `t`; `dt` is the control period.
    pub fn act(&mut self, obs: &[f64], t: f64, dt: f64) -> Result<f64, ControllerError> {
        match self {
            ControllerHandle::Mlp(net) => net.forward(obs),
            ControllerHandle::Pid(pid) => {
                let e = match &pid.plant {
                    Some(p) => p.tracking_error(obs),
                    None => obs.first().copied().unwrap_or(0.0),
                };
                pid.act(e, dt)
            }
            ControllerHandle::Switched(s) => s.act(obs, t, dt),
            ControllerHandle::Constant(u) => Ok(*u),
        }
    }
}
