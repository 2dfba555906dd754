//! Exogenous input signals and sampled closed-loop traces.
//!
//! An [`InputSignal`] is a small matrix of control values, one row per input
//! channel, turned into a function of time by an [`Interpolation`] rule. This
//! matrix is the search space of the falsifier. A [`Trace`] is the dense
//! record a closed-loop simulation produces, sampled every `dt` seconds.
//!
//! # Trace text format
//!
//! Traces are written as whitespace-separated columns:
//!
//! ```text
//! # dt=0.1
//! # any other comment lines are kept verbatim
//! t x_lead v_lead x_ego v_ego | d_rel d_safe | action | a_lead
//! 0 100 25 0 20 | 100 38 | 0.5 | -1
//! ...
//! ```
//!
//! The header has four groups separated by `|`: plant states, derived
//! outputs, the controller action, and exogenous inputs. Extra columns
//! registered with [`Trace::with_extra`] follow as a fifth group. Numbers use
//! the shortest representation that round-trips exactly.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("invalid input spec: {0}")]
    InvalidSpec(String),
    #[error("control matrix has shape {got_rows}x{got_cols}, expected {want_rows}x{want_cols}")]
    ShapeMismatch {
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("control value {value} on channel {channel}, point {index} is outside [{lo}, {hi}]")]
    OutOfRange {
        channel: usize,
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("time {t} is outside [0, {end}]")]
    TimeOutOfRange { t: f64, end: f64 },
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("trace parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    PiecewiseConstant,
    PiecewiseLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    /// Closed interval per channel, in channel units.
    pub ranges: Vec<(f64, f64)>,
    pub num_control_points: usize,
    /// Seconds.
    pub duration: f64,
    pub interpolation: Interpolation,
}

impl InputSpec {
    pub fn new(
        ranges: Vec<(f64, f64)>,
        num_control_points: usize,
        duration: f64,
        interpolation: Interpolation,
    ) -> Result<Self, SignalError> {
        let spec = Self {
            ranges,
            num_control_points,
            duration,
            interpolation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if self.num_control_points < 1 {
            return Err(SignalError::InvalidSpec("num_control_points must be >= 1".into()));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(SignalError::InvalidSpec(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        for (i, &(lo, hi)) in self.ranges.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(SignalError::InvalidSpec(format!(
                    "channel {i} has empty range [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.ranges.len()
    }

    /// Draws every control value uniformly from its channel range.
    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> InputSignal {
        let values = self
            .ranges
            .iter()
            .map(|&(lo, hi)| {
                (0..self.num_control_points)
                    .map(|_| rng.random_range(lo..=hi))
                    .collect()
            })
            .collect();
        InputSignal {
            spec: self.clone(),
            control_values: values,
        }
    }
}

/// A parameterized exogenous signal: `control_values[channel][point]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSignal {
    pub spec: InputSpec,
    pub control_values: Vec<Vec<f64>>,
}

/// Builds a signal, checking the matrix shape and every value against its range.
pub fn make_input(spec: InputSpec, control_values: Vec<Vec<f64>>) -> Result<InputSignal, SignalError> {
    spec.validate()?;
    let rows = control_values.len();
    let bad_cols = control_values
        .iter()
        .map(Vec::len)
        .find(|&c| c != spec.num_control_points);
    if rows != spec.dims() || bad_cols.is_some() {
        return Err(SignalError::ShapeMismatch {
            got_rows: rows,
            got_cols: bad_cols.unwrap_or(spec.num_control_points),
            want_rows: spec.dims(),
            want_cols: spec.num_control_points,
        });
    }
    for (channel, row) in control_values.iter().enumerate() {
        let (lo, hi) = spec.ranges[channel];
        for (index, &value) in row.iter().enumerate() {
            if !(lo..=hi).contains(&value) {
                return Err(SignalError::OutOfRange {
                    channel,
                    index,
                    value,
                    lo,
                    hi,
                });
            }
        }
    }
    Ok(InputSignal {
        spec,
        control_values,
    })
}

impl InputSignal {
    /// Value of every channel at time `t`.
    ///
    /// Piecewise-constant signals hold control point `i` on the segment
    /// `[i*T/n, (i+1)*T/n)`, with `t = T` returning the last point.
    /// Piecewise-linear signals place the `n` points at `i*T/(n-1)` and
    /// interpolate between them; a single point is a constant.
    pub fn sample(&self, t: f64) -> Result<Vec<f64>, SignalError> {
        let duration = self.spec.duration;
        if !(0.0..=duration).contains(&t) {
            return Err(SignalError::TimeOutOfRange { t, end: duration });
        }
        let n = self.spec.num_control_points;
        let out = match self.spec.interpolation {
            Interpolation::PiecewiseConstant => {
                let idx = ((t / duration * n as f64).floor() as usize).min(n - 1);
                self.control_values.iter().map(|row| row[idx]).collect()
            }
            Interpolation::PiecewiseLinear => {
                if n == 1 {
                    self.control_values.iter().map(|row| row[0]).collect()
                } else {
                    let pos = t / duration * (n - 1) as f64;
                    let idx = (pos.floor() as usize).min(n - 2);
                    let frac = pos - idx as f64;
                    self.control_values
                        .iter()
                        .map(|row| row[idx] + frac * (row[idx + 1] - row[idx]))
                        .collect()
                }
            }
        };
        Ok(out)
    }

    /// All control values in row-major order.
    pub fn flat(&self) -> Vec<f64> {
        self.control_values.iter().flatten().copied().collect()
    }

    /// Rebuilds a signal of the same spec from a row-major vector, clamping
    /// each value into its range.
    pub fn from_flat_clamped(spec: &InputSpec, flat: &[f64]) -> InputSignal {
        let n = spec.num_control_points;
        let control_values = spec
            .ranges
            .iter()
            .enumerate()
            .map(|(c, &(lo, hi))| flat[c * n..(c + 1) * n].iter().map(|v| v.clamp(lo, hi)).collect())
            .collect();
        InputSignal {
            spec: spec.clone(),
            control_values,
        }
    }
}

/// Sampled record of one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub dt: f64,
    pub state_names: Vec<String>,
    pub states: Vec<Vec<f64>>,
    pub output_names: Vec<String>,
    pub outputs: Vec<Vec<f64>>,
    pub actions: Vec<f64>,
    pub input_names: Vec<String>,
    pub inputs: Vec<Vec<f64>>,
    #[serde(default)]
    pub extra_names: Vec<String>,
    #[serde(default)]
    pub extra: Vec<Vec<f64>>,
}

/// Reserved column name for the controller output.
pub const ACTION_CHANNEL: &str = "action";

impl Trace {
    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.dt > 0.0) {
            return Err(SignalError::InvalidTrace(format!("dt must be positive, got {}", self.dt)));
        }
        let n = self.states.len();
        if n == 0 {
            return Err(SignalError::InvalidTrace("trace is empty".into()));
        }
        let widths = [
            ("states", &self.states, self.state_names.len()),
            ("outputs", &self.outputs, self.output_names.len()),
            ("inputs", &self.inputs, self.input_names.len()),
        ];
        for (what, rows, width) in widths {
            if rows.len() != n {
                return Err(SignalError::InvalidTrace(format!(
                    "{what} has {} rows, states has {n}",
                    rows.len()
                )));
            }
            if rows.iter().any(|r| r.len() != width) {
                return Err(SignalError::InvalidTrace(format!("{what} rows must have {width} columns")));
            }
        }
        if self.actions.len() != n {
            return Err(SignalError::InvalidTrace(format!(
                "actions has {} rows, states has {n}",
                self.actions.len()
            )));
        }
        if !self.extra_names.is_empty()
            && (self.extra.len() != n || self.extra.iter().any(|r| r.len() != self.extra_names.len()))
        {
            return Err(SignalError::InvalidTrace("extra columns are ragged".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        (self.len() - 1) as f64 * self.dt
    }

    /// Appends one extra column (e.g. per-step robustness).
    pub fn with_extra(mut self, name: &str, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.len(), "extra column length");
        if self.extra.is_empty() {
            self.extra = vec![Vec::new(); self.len()];
        }
        self.extra_names.push(name.to_string());
        for (row, v) in self.extra.iter_mut().zip(values) {
            row.push(v);
        }
        self
    }

    /// Resolves a channel name to a column accessor.
    pub fn channel(&self, name: &str) -> Result<Channel<'_>, SignalError> {
        let find = |names: &[String]| names.iter().position(|n| n == name);
        let col = if let Some(i) = find(&self.state_names) {
            Column::State(i)
        } else if let Some(i) = find(&self.output_names) {
            Column::Output(i)
        } else if name == ACTION_CHANNEL {
            Column::Action
        } else if let Some(i) = find(&self.input_names) {
            Column::Input(i)
        } else if let Some(i) = find(&self.extra_names) {
            Column::Extra(i)
        } else {
            return Err(SignalError::UnknownChannel(name.to_string()));
        };
        Ok(Channel { trace: self, col })
    }

    pub fn has_channel(&self, name: &str) -> bool {
        self.channel(name).is_ok()
    }

    /// Value of `channel` at the sample nearest to `t`, i.e. index `floor(t/dt + 0.5)`.
    pub fn value(&self, channel: &str, t: f64) -> Result<f64, SignalError> {
        let ch = self.channel(channel)?;
        let end = self.end_time();
        if !(0.0..=end + 1e-9 * self.dt).contains(&t) {
            return Err(SignalError::TimeOutOfRange { t, end });
        }
        let idx = ((t / self.dt + 0.5).floor() as usize).min(self.len() - 1);
        Ok(ch.at(idx))
    }

    /// Index of the sample nearest to `t`, clamped into the trace.
    pub fn index_at(&self, t: f64) -> usize {
        (((t / self.dt) + 0.5).floor().max(0.0) as usize).min(self.len() - 1)
    }

    pub fn to_text(&self, comments: &[String]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# dt={}", self.dt);
        for c in comments {
            let _ = writeln!(s, "# {c}");
        }
        s.push('t');
        let groups: [&[String]; 3] = [&self.state_names, &self.output_names, &[]];
        for (gi, names) in groups.iter().enumerate() {
            if gi > 0 {
                s.push_str(" |");
            }
            for n in names.iter() {
                s.push(' ');
                s.push_str(n);
            }
            if gi == 2 {
                s.push(' ');
                s.push_str(ACTION_CHANNEL);
            }
        }
        s.push_str(" |");
        for n in &self.input_names {
            s.push(' ');
            s.push_str(n);
        }
        if !self.extra_names.is_empty() {
            s.push_str(" |");
            for n in &self.extra_names {
                s.push(' ');
                s.push_str(n);
            }
        }
        s.push('\n');
        for i in 0..self.len() {
            let _ = write!(s, "{}", i as f64 * self.dt);
            for v in &self.states[i] {
                let _ = write!(s, " {v}");
            }
            s.push_str(" |");
            for v in &self.outputs[i] {
                let _ = write!(s, " {v}");
            }
            let _ = write!(s, " | {}", self.actions[i]);
            s.push_str(" |");
            for v in &self.inputs[i] {
                let _ = write!(s, " {v}");
            }
            if !self.extra_names.is_empty() {
                s.push_str(" |");
                for v in &self.extra[i] {
                    let _ = write!(s, " {v}");
                }
            }
            s.push('\n');
        }
        s
    }

    /// Parses the text format. Comment lines other than `dt=` are returned.
    pub fn from_text(text: &str) -> Result<(Trace, Vec<String>), SignalError> {
        let mut dt = None;
        let mut comments = Vec::new();
        let mut header: Option<Vec<Vec<String>>> = None;
        let mut trace = Trace {
            dt: 0.0,
            state_names: vec![],
            states: vec![],
            output_names: vec![],
            outputs: vec![],
            actions: vec![],
            input_names: vec![],
            inputs: vec![],
            extra_names: vec![],
            extra: vec![],
        };
        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                let c = c.trim();
                if let Some(v) = c.strip_prefix("dt=") {
                    dt = Some(v.parse::<f64>().map_err(|e| SignalError::Parse {
                        line: line_no,
                        msg: format!("bad dt: {e}"),
                    })?);
                } else {
                    comments.push(c.to_string());
                }
                continue;
            }
            let groups: Vec<Vec<&str>> = line
                .split('|')
                .map(|g| g.split_whitespace().collect())
                .collect();
            match &header {
                None => {
                    if groups.len() < 4 || groups[0].first() != Some(&"t") {
                        return Err(SignalError::Parse {
                            line: line_no,
                            msg: "expected header `t <states> | <outputs> | action | <inputs>`".into(),
                        });
                    }
                    let mut h: Vec<Vec<String>> = groups
                        .iter()
                        .map(|g| g.iter().map(|s| s.to_string()).collect())
                        .collect();
                    h[0].remove(0);
                    header = Some(h);
                }
                Some(h) => {
                    if groups.len() != h.len() {
                        return Err(SignalError::Parse {
                            line: line_no,
                            msg: format!("expected {} column groups, found {}", h.len(), groups.len()),
                        });
                    }
                    let mut nums = Vec::with_capacity(groups.len());
                    for (gi, g) in groups.iter().enumerate() {
                        let want = h[gi].len() + usize::from(gi == 0);
                        if g.len() != want {
                            return Err(SignalError::Parse {
                                line: line_no,
                                msg: format!("group {gi} has {} values, expected {want}", g.len()),
                            });
                        }
                        let vals = g
                            .iter()
                            .map(|v| {
                                v.parse::<f64>().map_err(|e| SignalError::Parse {
                                    line: line_no,
                                    msg: format!("bad number `{v}`: {e}"),
                                })
                            })
                            .collect::<Result<Vec<f64>, _>>()?;
                        nums.push(vals);
                    }
                    trace.states.push(nums[0][1..].to_vec());
                    trace.outputs.push(nums[1].clone());
                    trace.actions.push(nums[2][0]);
                    trace.inputs.push(nums[3].clone());
                    if nums.len() > 4 {
                        trace.extra.push(nums[4].clone());
                    }
                }
            }
        }
        let h = header.ok_or_else(|| SignalError::Parse {
            line: 0,
            msg: "missing header".into(),
        })?;
        if h[2] != [ACTION_CHANNEL] {
            return Err(SignalError::Parse {
                line: 0,
                msg: "third column group must be `action`".into(),
            });
        }
        trace.dt = dt.ok_or_else(|| SignalError::Parse {
            line: 0,
            msg: "missing `# dt=` line".into(),
        })?;
        trace.state_names = h[0].clone();
        trace.output_names = h[1].clone();
        trace.input_names = h[3].clone();
        if h.len() > 4 {
            trace.extra_names = h[4].clone();
        }
        trace.validate()?;
        Ok((trace, comments))
    }
}

#[derive(Debug, Clone, Copy)]
enum Column {
    State(usize),
    Output(usize),
    Action,
    Input(usize),
    Extra(usize),
}

/// A resolved column of a [`Trace`].
#[derive(Debug, Clone, Copy)]
pub struct Channel<'a> {
    trace: &'a Trace,
    col: Column,
}

impl Channel<'_> {
    #[inline]
    pub fn at(&self, idx: usize) -> f64 {
        let t = self.trace;
        match self.col {
            Column::State(c) => t.states[idx][c],
            Column::Output(c) => t.outputs[idx][c],
            Column::Action => t.actions[idx],
            Column::Input(c) => t.inputs[idx][c],
            Column::Extra(c) => t.extra[idx][c],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec1(interp: Interpolation) -> InputSpec {
        InputSpec::new(vec![(0.0, 10.0)], 2, 10.0, interp).unwrap()
    }

    pub(crate) fn small_trace() -> Trace {
        Trace {
            dt: 0.1,
            state_names: vec!["x".into()],
            states: vec![vec![0.0], vec![1.0], vec![2.0]],
            output_names: vec!["y".into()],
            outputs: vec![vec![5.0], vec![6.0], vec![7.0]],
            actions: vec![0.5, 0.25, 0.125],
            input_names: vec!["u".into()],
            inputs: vec![vec![-1.0], vec![-2.0], vec![-3.0]],
            extra_names: vec![],
            extra: vec![],
        }
    }

    #[test]
    fn piecewise_constant_segments() {
        let s = make_input(spec1(Interpolation::PiecewiseConstant), vec![vec![3.0, 7.0]]).unwrap();
        assert_eq!(s.sample(2.0).unwrap(), vec![3.0]);
        assert_eq!(s.sample(7.5).unwrap(), vec![7.0]);
        assert_eq!(s.sample(0.0).unwrap(), vec![3.0]);
        assert_eq!(s.sample(5.0).unwrap(), vec![7.0]);
        assert_eq!(s.sample(10.0).unwrap(), vec![7.0]);
    }

    #[test]
    fn piecewise_linear_ramps() {
        let s = make_input(spec1(Interpolation::PiecewiseLinear), vec![vec![0.0, 10.0]]).unwrap();
        assert_eq!(s.sample(5.0).unwrap(), vec![5.0]);
        assert_eq!(s.sample(10.0).unwrap(), vec![10.0]);
        let s = make_input(spec1(Interpolation::PiecewiseLinear), vec![vec![2.0, 4.0]]).unwrap();
        assert_eq!(s.sample(2.5).unwrap(), vec![2.5]);
        assert_eq!(s.sample(0.0).unwrap(), vec![2.0]);
    }

    #[test]
    fn make_input_errors() {
        let spec = spec1(Interpolation::PiecewiseConstant);
        assert!(matches!(
            make_input(spec.clone(), vec![vec![1.0]]),
            Err(SignalError::ShapeMismatch { .. })
        ));
        assert_eq!(
            make_input(spec.clone(), vec![vec![1.0, 11.0]]),
            Err(SignalError::OutOfRange {
                channel: 0,
                index: 1,
                value: 11.0,
                lo: 0.0,
                hi: 10.0
            })
        );
        let s = make_input(spec, vec![vec![1.0, 2.0]]).unwrap();
        assert!(matches!(s.sample(10.5), Err(SignalError::TimeOutOfRange { .. })));
        assert!(matches!(s.sample(-0.1), Err(SignalError::TimeOutOfRange { .. })));
        assert!(InputSpec::new(vec![(1.0, 1.0)], 2, 1.0, Interpolation::PiecewiseLinear).is_err());
        assert!(InputSpec::new(vec![(0.0, 1.0)], 0, 1.0, Interpolation::PiecewiseLinear).is_err());
        assert!(InputSpec::new(vec![(0.0, 1.0)], 2, 0.0, Interpolation::PiecewiseLinear).is_err());
    }

    #[test]
    fn trace_value_nearest_index() {
        let tr = small_trace();
        assert_eq!(tr.value("x", 0.1).unwrap(), 1.0);
        assert_eq!(tr.value("x", 0.14).unwrap(), 1.0);
        assert_eq!(tr.value("y", 0.2).unwrap(), 7.0);
        assert_eq!(tr.value("action", 0.0).unwrap(), 0.5);
        assert_eq!(tr.value("u", 0.1).unwrap(), -2.0);
        assert!(matches!(tr.value("x", 0.5), Err(SignalError::TimeOutOfRange { .. })));
        assert!(matches!(tr.value("nope", 0.0), Err(SignalError::UnknownChannel(_))));
    }

    #[test]
    fn trace_text_round_trip() {
        let tr = small_trace().with_extra("rob", vec![0.1, -0.2, 1.0 / 3.0]);
        let text = tr.to_text(&["seed=7".to_string()]);
        let (back, comments) = Trace::from_text(&text).unwrap();
        assert_eq!(back, tr);
        assert_eq!(comments, vec!["seed=7".to_string()]);
    }

    #[test]
    fn trace_text_rejects_ragged_rows() {
        let text = "# dt=0.1\nt x | y | action | u\n0 1 | 2 | 3\n";
        assert!(matches!(Trace::from_text(text), Err(SignalError::Parse { line: 3, .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn constant_signal_takes_only_control_values(
                vals in proptest::collection::vec(-5.0f64..5.0, 1..6),
                t in 0.0f64..1.0,
            ) {
                let n = vals.len();
                let spec = InputSpec::new(vec![(-5.0, 5.0)], n, 3.0, Interpolation::PiecewiseConstant).unwrap();
                let s = make_input(spec, vec![vals.clone()]).unwrap();
                let v = s.sample(t * 3.0).unwrap()[0];
                prop_assert!(vals.contains(&v));
                // re-serialization does not change sampling
                let json = serde_json::to_string(&s).unwrap();
                let back: InputSignal = serde_json::from_str(&json).unwrap();
                prop_assert_eq!(back.sample(t * 3.0).unwrap()[0], v);
            }

            #[test]
            fn grid_times_return_stored_samples(i in 0usize..3) {
                let tr = small_trace();
                prop_assert_eq!(tr.value("x", i as f64 * tr.dt).unwrap(), tr.states[i][0]);
            }
        }
    }
}
