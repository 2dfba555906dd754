//! One function per subcommand. Each returns the process exit code.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cpsafe::abstraction::{build_abstraction, refine, Region, Side};
use cpsafe::falsify::{run_falsifier, trial_stats, Algorithm, ClosedLoop, FalsifyConfig};
use cpsafe::monitor::{eval_metrics, run_monitored_with, Active, MonitorConfig, SafetyVerdict};
use cpsafe::pipeline::{clone_pid, stream_rng, stream_seed, streams, CloneConfig};
use cpsafe::plants::{simulate, SimError};
use cpsafe::pmc::{check, parse_pctl, Quantifier};
use cpsafe::stl::{parse_stl, robustness, robustness_signal, StlFormula};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::files::{
    load_controller, load_trace_set, read, to_json, write_atomic, Failure, Manifest, ManifestEntry,
    ModelFile, MANIFEST, ROBUSTNESS_COLUMN,
};
use crate::CliError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VIOLATED: u8 = 3;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn stl(text: &str) -> Result<StlFormula, CliError> {
    parse_stl(text).map_err(|e| usage(format!("specification `{text}`: {e}")))
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<u8, CliError> {
    let plant = &cfg.plant;
    let t = &cfg.train;
    let clone = CloneConfig {
        traces: t.traces,
        hidden: t.hidden.clone(),
        train: cpsafe::controllers::TrainConfig {
            lr: t.lr,
            epochs: t.epochs,
            batch: t.batch,
            seed: stream_seed(cfg.seed, streams::TRAIN, u32::MAX as u64),
            ..Default::default()
        },
    };
    let (net, loss) = clone_pid(plant, &plant.default_input_spec(), &cfg.sim(), &clone, cfg.seed).map_err(runtime)?;
    let net = if t.corrupt > 0.0 {
        net.corrupt(t.corrupt, stream_seed(cfg.seed, streams::CORRUPT, 0))
    } else {
        net
    };
    let mut text = format!("# config_hash={}\n", cfg.hash());
    text.push_str(&net.to_text());
    write_atomic(out, &text)?;
    println!("trained {:?} on {} PID runs, final loss {loss:.6}", net.sizes(), t.traces);
    if t.corrupt > 0.0 {
        println!("weights corrupted with noise of standard deviation {}", t.corrupt);
    }
    Ok(EXIT_OK)
}

pub fn collect(cfg: &RunConfig, out: &Path) -> Result<u8, CliError> {
    let plant = &cfg.plant;
    let sim = cfg.sim();
    let spec_text = cfg.spec_text();
    let spec = stl(&spec_text)?;
    let controller = load_controller(&cfg.collect.controller, plant)?;
    let input_spec = plant.default_input_spec();
    let hash = cfg.hash();
    let mut manifest = Manifest {
        config_hash: hash.clone(),
        seed: cfg.seed,
        plant: plant.clone(),
        sim,
        spec: spec_text,
        controller: cfg.collect.controller.clone(),
        traces: Vec::new(),
        failures: Vec::new(),
    };
    let mut violated = 0usize;
    let comments = |i: u64| vec![format!("config_hash={hash}"), format!("seed={} stream={i}", cfg.seed)];
    for i in 0..cfg.collect.traces as u64 {
        let input = input_spec.random(&mut stream_rng(cfg.seed, streams::COLLECT, i));
        let file = format!("trace_{i:05}.txt");
        match simulate(plant, &mut controller.clone(), &input, &sim) {
            Ok(trace) => {
                let rob = robustness_signal(&trace, &spec).map_err(runtime)?;
                // The first sample covers the whole trace.
                violated += usize::from(rob.first().is_some_and(|r| *r < 0.0));
                let trace = trace.with_extra(ROBUSTNESS_COLUMN, rob);
                write_atomic(&out.join(&file), &trace.to_text(&comments(i)))?;
                manifest.traces.push(ManifestEntry {
                    file,
                    stream: i,
                    input: input.control_values.clone(),
                });
            }
            Err(e) => {
                let partial_file = match &e {
                    SimError::BlowUp { partial, .. } => {
                        let name = format!("trace_{i:05}.partial.txt");
                        write_atomic(&out.join(&name), &partial.to_text(&comments(i)))?;
                        Some(name)
                    }
                    _ => None,
                };
                log::error!("trace {i}: {e}");
                manifest.failures.push(Failure {
                    stream: i,
                    error: e.to_string(),
                    partial_file,
                });
            }
        }
    }
    write_atomic(&out.join(MANIFEST), &to_json(&manifest))?;
    println!(
        "{} traces written to {} ({violated} violate the specification)",
        manifest.traces.len(),
        out.display()
    );
    if manifest.failures.is_empty() {
        Ok(EXIT_OK)
    } else {
        Err(runtime(format!("{} simulations failed; see the manifest", manifest.failures.len())))
    }
}

pub fn build(cfg: &RunConfig, traces: &Path, out: &Path) -> Result<u8, CliError> {
    let (manifest, labeled) = load_trace_set(traces)?;
    let model = build_abstraction(&labeled, &cfg.abstraction).map_err(runtime)?;
    println!(
        "built model from {} traces: {} states, {} transitions",
        labeled.len(),
        model.num_states(),
        model.num_transitions()
    );
    ModelFile {
        config_hash: cfg.hash(),
        traces_hash: manifest.config_hash,
        plant: manifest.plant,
        spec: manifest.spec,
        model,
    }
    .save(out)?;
    Ok(EXIT_OK)
}

pub fn refine_cmd(cfg: &RunConfig, model_path: &Path, traces: &Path, out: &Path) -> Result<u8, CliError> {
    let file = ModelFile::load(model_path)?;
    let (manifest, labeled) = load_trace_set(traces)?;
    if manifest.plant.name() != file.plant.name() {
        return Err(runtime(format!(
            "traces come from `{}` but the model from `{}`",
            manifest.plant.name(),
            file.plant.name()
        )));
    }
    let refined = refine(&file.model, &labeled, &cfg.abstraction).map_err(runtime)?;
    println!(
        "refined model: {} -> {} states, {} -> {} transitions",
        file.model.num_states(),
        refined.num_states(),
        file.model.num_transitions(),
        refined.num_transitions()
    );
    ModelFile {
        config_hash: cfg.hash(),
        model: refined,
        ..file
    }
    .save(out)?;
    Ok(EXIT_OK)
}

/// Where `check` evaluates the query.
pub enum StateRef {
    Id(usize),
    Concrete(PathBuf),
}

pub fn check_cmd(
    query: &str,
    quantifier: Quantifier,
    model_path: &Path,
    state: &StateRef,
    assert: bool,
) -> Result<u8, CliError> {
    let file = ModelFile::load(model_path)?;
    let model = &file.model;
    let f = parse_pctl(query).map_err(|e| usage(format!("query `{query}`: {e}")))?;
    let s = match state {
        StateRef::Id(id) => *id,
        StateRef::Concrete(path) => {
            let text = read(path)?;
            let q: Vec<f64> = text
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|e| runtime(format!("{}: `{t}`: {e}", path.display()))))
                .collect::<Result<_, _>>()?;
            model
                .abstract_state_of(&q)
                .map_err(runtime)?
                .ok_or_else(|| runtime("the concrete state maps to no abstract state of the model"))?
        }
    };
    let Some(info) = model.states.get(s) else {
        return Err(runtime(format!("unknown state id {s}; the model has {} states", model.num_states())));
    };
    let verdict = check(&model.mdp, s, &f, quantifier).map_err(runtime)?;
    let region = match info.region {
        Region::Initial => "initial".to_string(),
        Region::OutOfBounds => "out of bounds".to_string(),
        Region::Cell(id) => format!("cell {id}"),
    };
    let path: String = info
        .path
        .iter()
        .map(|s| match s {
            Side::Negative => '-',
            Side::Positive => '+',
        })
        .collect();
    let path = if path.is_empty() { String::new() } else { format!(" side {path}") };
    println!("state {s}: {region}{path}, label {}", info.label.as_ap());
    println!("query {f} under {quantifier:?} scheduler");
    println!("result {}", if verdict.holds { "holds" } else { "does not hold" });
    if let Some(p) = verdict.probability {
        println!("probability {p}");
    }
    Ok(if assert && !verdict.holds { EXIT_VIOLATED } else { EXIT_OK })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRun {
    pub stream: u64,
    pub ai_safety: f64,
    pub ai_performance: f64,
    pub monitored_safety: f64,
    pub monitored_performance: f64,
    pub queries: usize,
    pub unsafe_verdicts: usize,
    pub unknown_states: usize,
    pub switches: usize,
    pub safety_controller_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorSummary {
    pub kind: String,
    pub config_hash: String,
    pub query: String,
    pub runs: Vec<MonitorRun>,
    pub mean_ai_safety: f64,
    pub mean_ai_performance: f64,
    pub mean_monitored_safety: f64,
    pub mean_monitored_performance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorTiming {
    pub config_hash: String,
    /// Per run: seconds spent on queries and on the whole monitored simulation.
    pub query_seconds: Vec<f64>,
    pub simulation_seconds: Vec<f64>,
    pub overhead_ratio: f64,
    pub median_query_latency: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn monitor_cmd(cfg: &RunConfig, model_path: &Path, out: Option<&Path>) -> Result<u8, CliError> {
    let file = ModelFile::load(model_path)?;
    let plant = &cfg.plant;
    if plant.name() != file.plant.name() {
        return Err(usage(format!(
            "config plant `{}` does not match the model's `{}`",
            plant.name(),
            file.plant.name()
        )));
    }
    let m = &cfg.monitor;
    let sim = cfg.sim();
    let (default_safety, default_perf) = plant.default_metric_specs();
    let safety_spec = stl(m.safety_spec.as_deref().unwrap_or(default_safety))?;
    let perf_spec = stl(m.performance_spec.as_deref().unwrap_or(default_perf))?;
    let mc = MonitorConfig {
        query: parse_pctl(&m.query).map_err(|e| usage(format!("query `{}`: {e}", m.query)))?,
        period: m.period,
        unknown_policy: m.unknown_policy,
        switch_back: m.switch_back,
        quantifier: m.quantifier,
    };
    mc.validate(&sim).map_err(usage)?;
    let ai = load_controller(&m.ai, plant)?;
    let safety = load_controller(&m.safety, plant)?;
    let model = Arc::new(file.model);
    let input_spec = plant.default_input_spec();
    let hash = cfg.hash();
    let mut runs = Vec::with_capacity(m.runs);
    let (mut query_seconds, mut simulation_seconds, mut latencies) = (Vec::new(), Vec::new(), Vec::new());
    // built during the first run's first query and timed there
    let mut table = None;
    for i in 0..m.runs as u64 {
        let input = input_spec.random(&mut stream_rng(cfg.seed, streams::MONITOR, i));
        let plain = simulate(plant, &mut ai.clone(), &input, &sim).map_err(runtime)?;
        let (ai_safety, ai_performance) = eval_metrics(&plain, &safety_spec, &perf_spec).map_err(runtime)?;
        let mt = run_monitored_with(plant, ai.clone(), safety.clone(), model.clone(), &mc, &input, &sim, table.take())
            .map_err(runtime)?;
        table = mt.table.clone();
        let (monitored_safety, monitored_performance) =
            eval_metrics(&mt.trace, &safety_spec, &perf_spec).map_err(runtime)?;
        let switches = mt.tags.windows(2).filter(|w| w[0] != w[1]).count();
        runs.push(MonitorRun {
            stream: i,
            ai_safety,
            ai_performance,
            monitored_safety,
            monitored_performance,
            queries: mt.queries.len(),
            unsafe_verdicts: mt.queries.iter().filter(|q| q.outcome.verdict == SafetyVerdict::Unsafe).count(),
            unknown_states: mt.queries.iter().filter(|q| q.outcome.state.is_none()).count(),
            switches,
            safety_controller_fraction: mt.safety_controller_fraction(),
        });
        query_seconds.push(mt.query_time());
        simulation_seconds.push(mt.wall_time);
        latencies.extend(mt.queries.iter().map(|q| q.wall_time));
        if let Some(dir) = out {
            let tags: Vec<f64> = mt.tags.iter().map(|t| if *t == Active::Safety { 1.0 } else { 0.0 }).collect();
            let trace = mt.trace.clone().with_extra("safety_active", tags);
            let comments = vec![format!("config_hash={hash}"), format!("seed={} stream={i}", cfg.seed)];
            write_atomic(&dir.join(format!("run_{i:05}.txt")), &trace.to_text(&comments))?;
        }
    }
    let summary = MonitorSummary {
        kind: "monitor".into(),
        config_hash: hash.clone(),
        query: mc.query.to_string(),
        mean_ai_safety: mean(runs.iter().map(|r| r.ai_safety)),
        mean_ai_performance: mean(runs.iter().map(|r| r.ai_performance)),
        mean_monitored_safety: mean(runs.iter().map(|r| r.monitored_safety)),
        mean_monitored_performance: mean(runs.iter().map(|r| r.monitored_performance)),
        runs,
    };
    let total_sim: f64 = simulation_seconds.iter().sum();
    let total_query: f64 = query_seconds.iter().sum();
    let timing = MonitorTiming {
        config_hash: hash,
        overhead_ratio: if total_sim > 0.0 { total_query / total_sim } else { 0.0 },
        median_query_latency: median(latencies),
        query_seconds,
        simulation_seconds,
    };
    if let Some(dir) = out {
        write_atomic(&dir.join("summary.json"), &to_json(&summary))?;
        write_atomic(&dir.join("timing.json"), &to_json(&timing))?;
    }
    println!("{} runs, query {}", summary.runs.len(), summary.query);
    println!("{:<10} {:>11} {:>10}", "", "safety_frac", "perf_frac");
    println!(
        "{:<10} {:>11.4} {:>10.4}",
        "ai-only", summary.mean_ai_safety, summary.mean_ai_performance
    );
    println!(
        "{:<10} {:>11.4} {:>10.4}",
        "monitored", summary.mean_monitored_safety, summary.mean_monitored_performance
    );
    println!(
        "overhead {:.4} ({total_query:.6} s of queries in {total_sim:.6} s of simulation), median query {:.1} us",
        timing.overhead_ratio,
        timing.median_query_latency * 1e6
    );
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsifyTrial {
    pub algorithm: Algorithm,
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub simulations: usize,
    pub min_robustness: f64,
    pub enqueued: usize,
    pub unknown_checkpoints: usize,
    pub falsifying_input: Option<Vec<Vec<f64>>>,
    /// Robustness of the falsifying input, re-simulated from scratch.
    pub replayed_robustness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsifyRow {
    pub algorithm: Algorithm,
    pub trials: usize,
    pub fsr: usize,
    pub mean_simulations: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsifySummary {
    pub kind: String,
    pub config_hash: String,
    pub spec: String,
    pub query: String,
    pub rows: Vec<FalsifyRow>,
    pub trials: Vec<FalsifyTrial>,
}

pub fn parse_algorithms(list: &str) -> Result<Vec<Algorithm>, CliError> {
    let algos: Vec<Algorithm> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Algorithm>().map_err(usage))
        .collect::<Result<_, _>>()?;
    if algos.is_empty() {
        return Err(usage("no falsification algorithm given"));
    }
    Ok(algos)
}

pub fn falsify_cmd(cfg: &RunConfig, model_path: Option<&Path>, out: Option<&Path>) -> Result<u8, CliError> {
    let f = &cfg.falsify;
    let plant = &cfg.plant;
    let algos = parse_algorithms(&f.algo)?;
    let needs_model = algos.contains(&Algorithm::Mosaic);
    let model = match model_path {
        Some(p) => Some(ModelFile::load(p)?),
        None if needs_model => return Err(usage("model-guided falsification needs --model")),
        None => None,
    };
    let spec_text = cfg.spec_text();
    let spec = stl(&spec_text)?;
    let query = parse_pctl(&f.query).map_err(|e| usage(format!("query `{}`: {e}", f.query)))?;
    let system = ClosedLoop {
        plant: plant.clone(),
        controller: load_controller(&f.controller, plant)?,
        sim: cfg.sim(),
        input_spec: plant.default_input_spec(),
    };
    let mut base = FalsifyConfig::new(spec.clone(), query.clone());
    base.quantifier = f.quantifier;
    base.seeds = f.seeds;
    base.global_budget = f.global_budget;
    base.local_budget = f.local_budget;
    base.checkpoint_time = f.checkpoint_time;
    base.hill = f.hill;
    base.validate(system.input_spec.duration).map_err(usage)?;
    let mut rows = Vec::new();
    let mut trials = Vec::new();
    let mut times = Vec::new();
    for &algo in &algos {
        let mut outcomes = Vec::with_capacity(f.trials);
        for t in 0..f.trials {
            let seed = stream_seed(cfg.seed, streams::FALSIFY, t as u64);
            let tc = FalsifyConfig { seed, ..base.clone() };
            let o = run_falsifier(algo, &system, model.as_ref().map(|m| &m.model), &tc).map_err(runtime)?;
            let replayed_robustness = match &o.falsifying_input {
                Some(input) => {
                    let trace = simulate(plant, &mut system.controller.clone(), input, &system.sim).map_err(runtime)?;
                    Some(robustness(&trace, &spec, 0.0).map_err(runtime)?)
                }
                None => None,
            };
            trials.push(FalsifyTrial {
                algorithm: algo,
                trial: t,
                seed,
                success: o.success,
                simulations: o.simulations,
                min_robustness: o.min_robustness(),
                enqueued: o.enqueued,
                unknown_checkpoints: o.unknown_checkpoints,
                falsifying_input: o.falsifying_input.as_ref().map(|i| i.control_values.clone()),
                replayed_robustness,
            });
            times.push(o.wall_time);
            outcomes.push(o);
        }
        let st = trial_stats(&outcomes);
        rows.push((
            FalsifyRow {
                algorithm: algo,
                trials: st.trials,
                fsr: st.fsr,
                mean_simulations: st.mean_simulations,
            },
            st.mean_time,
        ));
    }
    let hash = cfg.hash();
    let summary = FalsifySummary {
        kind: "falsify".into(),
        config_hash: hash.clone(),
        spec: spec.to_string(),
        query: query.to_string(),
        rows: rows.iter().map(|(r, _)| r.clone()).collect(),
        trials,
    };
    if let Some(dir) = out {
        write_atomic(&dir.join("results.json"), &to_json(&summary))?;
        #[derive(Serialize)]
        struct Timing<'a> {
            config_hash: &'a str,
            trial_seconds: &'a [f64],
        }
        write_atomic(
            &dir.join("timing.json"),
            &to_json(&Timing {
                config_hash: &hash,
                trial_seconds: &times,
            }),
        )?;
    }
    println!("specification {}", summary.spec);
    println!("{:<12} {:>7} {:>10} {:>8}", "algorithm", "FSR", "time (s)", "#sim");
    for (r, time) in &rows {
        let fmt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |v| format!("{v:.p$}"));
        println!(
            "{:<12} {:>7} {:>10} {:>8}",
            r.algorithm.to_string(),
            format!("{}/{}", r.fsr, r.trials),
            fmt(*time, 3),
            fmt(r.mean_simulations, 1)
        );
    }
    let unsound: Vec<usize> = summary
        .trials
        .iter()
        .filter(|t| t.success && !t.replayed_robustness.is_some_and(|r| r < 0.0))
        .map(|t| t.trial)
        .collect();
    if !unsound.is_empty() {
        return Err(runtime(format!("falsifying inputs of trials {unsound:?} did not reproduce on replay")));
    }
    Ok(EXIT_OK)
}

/// Summary files `report` knows how to read.
enum Artifact {
    Monitor(MonitorSummary),
    Falsify(FalsifySummary),
    Manifest(Manifest),
    Model(ModelFile),
}

fn artifact(path: &Path) -> Result<Artifact, CliError> {
    let not_summary = || runtime(format!("{}: not a run summary", path.display()));
    let text = read(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|_| not_summary())?;
    let parsed = match value.get("kind").and_then(|k| k.as_str()) {
        Some("monitor") => serde_json::from_str(&text).map(Artifact::Monitor),
        Some("falsify") => serde_json::from_str(&text).map(Artifact::Falsify),
        _ if value.get("model").is_some() => serde_json::from_str(&text).map(Artifact::Model),
        _ if value.get("failures").is_some() => serde_json::from_str(&text).map(Artifact::Manifest),
        _ => return Err(not_summary()),
    };
    parsed.map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn artifacts(input: &Path) -> Result<Vec<(PathBuf, Artifact)>, CliError> {
    let candidates: Vec<PathBuf> = if input.is_dir() {
        ["summary.json", "results.json", MANIFEST]
            .iter()
            .map(|n| input.join(n))
            .filter(|p| p.exists())
            .collect()
    } else {
        vec![input.to_path_buf()]
    };
    if candidates.is_empty() {
        return Err(runtime(format!("{}: no run summary found", input.display())));
    }
    candidates
        .into_iter()
        .map(|p| {
            let a = artifact(&p)?;
            Ok((p, a))
        })
        .collect()
}

pub fn report(inputs: &[PathBuf], out: Option<&Path>) -> Result<u8, CliError> {
    let mut doc = String::from("# Run report\n");
    for input in inputs {
        for (path, a) in artifacts(input)? {
            let _ = writeln!(doc, "\n## {}\n", path.display());
            match a {
                Artifact::Manifest(m) => {
                    let _ = writeln!(doc, "Trace set for `{}` with controller `{}`.\n", m.plant.name(), m.controller);
                    let _ = writeln!(doc, "| traces | failures | seed | config |\n|---|---|---|---|");
                    let _ = writeln!(
                        doc,
                        "| {} | {} | {} | `{}` |",
                        m.traces.len(),
                        m.failures.len(),
                        m.seed,
                        &m.config_hash[..12]
                    );
                }
                Artifact::Model(m) => {
                    let refined: usize = m.model.classifiers.values().map(|t| t.num_splits()).sum();
                    let _ = writeln!(doc, "Abstract model of `{}` for `{}`.\n", m.plant.name(), m.spec);
                    let _ = writeln!(doc, "| states | transitions | splits | k | c |\n|---|---|---|---|---|");
                    let _ = writeln!(
                        doc,
                        "| {} | {} | {refined} | {} | {} |",
                        m.model.num_states(),
                        m.model.num_transitions(),
                        m.model.config.k,
                        m.model.config.c
                    );
                }
                Artifact::Monitor(s) => {
                    let _ = writeln!(doc, "Monitoring over {} runs with `{}`.\n", s.runs.len(), s.query);
                    let _ = writeln!(doc, "| controller | safety | performance |\n|---|---|---|");
                    let _ = writeln!(doc, "| AI only | {:.4} | {:.4} |", s.mean_ai_safety, s.mean_ai_performance);
                    let _ = writeln!(
                        doc,
                        "| monitored | {:.4} | {:.4} |",
                        s.mean_monitored_safety, s.mean_monitored_performance
                    );
                }
                Artifact::Falsify(s) => {
                    let _ = writeln!(doc, "Falsification of `{}`.\n", s.spec);
                    let _ = writeln!(doc, "| algorithm | FSR | mean #sim |\n|---|---|---|");
                    for r in &s.rows {
                        let sims = r.mean_simulations.map_or("-".to_string(), |v| format!("{v:.1}"));
                        let _ = writeln!(doc, "| {} | {}/{} | {sims} |", r.algorithm, r.fsr, r.trials);
                    }
                }
            }
        }
    }
    match out {
        Some(p) => write_atomic(p, &doc)?,
        None => print!("{doc}"),
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_mean() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(vec![]), 0.0);
        assert_eq!(mean([1.0, 2.0].into_iter()), 1.5);
    }

    #[test]
    fn algorithm_lists() {
        assert_eq!(
            parse_algorithms("mosaic, random").unwrap(),
            vec![Algorithm::Mosaic, Algorithm::Random]
        );
        assert!(parse_algorithms("").is_err());
        assert!(parse_algorithms("annealing").is_err());
    }
}
