//! `cpsafe`: collect traces, build abstract models, and use them to monitor
//! and falsify closed-loop controllers.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 the checked
//! property does not hold (`check --assert`).

mod commands;
mod config;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cpsafe::monitor::UnknownPolicy;
use cpsafe::plants::PlantModel;
use cpsafe::pmc::Quantifier;

use commands::StateRef;
use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "cpsafe", version, about = "Abstraction-based safety analysis for closed-loop controllers")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Plant: acc, cstr or watertank (default parameters).
    #[arg(long, global = true)]
    plant: Option<String>,
    /// Safety specification (STL).
    #[arg(long, global = true)]
    spec: Option<String>,
    /// Log more (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Clone the plant's PID controller into a network, optionally corrupting it.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        traces: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Standard deviation of weight noise added after training.
        #[arg(long)]
        corrupt: Option<f64>,
    },
    /// Simulate random inputs and write labeled traces with a manifest.
    Collect {
        #[arg(long)]
        out: PathBuf,
        /// pid, constant:<u> or mlp:<weights file>.
        #[arg(long)]
        controller: Option<String>,
        #[arg(long)]
        traces: Option<usize>,
    },
    /// Build an abstract model from a trace set.
    Build {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        abs: AbstractionArgs,
    },
    /// Split mixed states of a model with linear classifiers.
    Refine {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        traces: PathBuf,
        /// Output model; rewrites the input model when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        abs: AbstractionArgs,
        #[arg(long)]
        passes: Option<usize>,
    },
    /// Check a PCTL formula at one state of a model.
    Check {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = cpsafe::monitor::DEFAULT_QUERY)]
        query: String,
        /// Abstract state id.
        #[arg(long, conflicts_with = "concrete", required_unless_present = "concrete")]
        state: Option<usize>,
        /// File holding a concrete observation vector.
        #[arg(long)]
        concrete: Option<PathBuf>,
        #[arg(long, default_value = "max")]
        quantifier: Quantifier,
        /// Exit with status 3 when the formula does not hold.
        #[arg(long)]
        assert: bool,
    },
    /// Compare an AI controller with and without model-based switching.
    Monitor {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        ai: Option<String>,
        #[arg(long)]
        safety: Option<String>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        query: Option<String>,
        /// Seconds between safety queries.
        #[arg(long)]
        period: Option<f64>,
        #[arg(long)]
        unknown_policy: Option<UnknownPolicy>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search for inputs that violate the safety specification.
    Falsify {
        /// Required by the model-guided algorithm.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        controller: Option<String>,
        /// Comma-separated: mosaic, random, opt, mosaic-rand.
        #[arg(long)]
        algo: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        query: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize run outputs into one Markdown document.
    Report {
        /// Output directories or summary files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct AbstractionArgs {
    /// Reduced dimension.
    #[arg(long)]
    k: Option<usize>,
    /// Intervals per reduced dimension.
    #[arg(long)]
    c: Option<usize>,
    #[arg(long)]
    label_threshold: Option<f64>,
    #[arg(long)]
    variance_threshold: Option<f64>,
}

impl AbstractionArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let a = &mut cfg.abstraction;
        set(&mut a.k, self.k);
        set(&mut a.c, self.c);
        set(&mut a.label_threshold, self.label_threshold);
        set(&mut a.variance_threshold, self.variance_threshold);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn effective_config(global: &GlobalArgs, command: &Command) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(global.config.as_deref())?;
    set(&mut cfg.seed, global.seed);
    if let Some(name) = &global.plant {
        cfg.plant = PlantModel::by_name(name).ok_or_else(|| CliError::Usage(format!("unknown plant `{name}`")))?;
    }
    if let Some(spec) = &global.spec {
        cfg.spec = Some(spec.clone());
    }
    match command {
        Command::Train {
            traces,
            epochs,
            corrupt,
            ..
        } => {
            set(&mut cfg.train.traces, *traces);
            set(&mut cfg.train.epochs, *epochs);
            set(&mut cfg.train.corrupt, *corrupt);
        }
        Command::Collect { controller, traces, .. } => {
            set(&mut cfg.collect.controller, controller.clone());
            set(&mut cfg.collect.traces, *traces);
        }
        Command::Build { abs, .. } => abs.apply(&mut cfg),
        Command::Refine { abs, passes, .. } => {
            abs.apply(&mut cfg);
            set(&mut cfg.abstraction.refine_passes, *passes);
        }
        Command::Monitor {
            ai,
            safety,
            runs,
            query,
            period,
            unknown_policy,
            ..
        } => {
            let m = &mut cfg.monitor;
            set(&mut m.ai, ai.clone());
            set(&mut m.safety, safety.clone());
            set(&mut m.runs, *runs);
            set(&mut m.query, query.clone());
            set(&mut m.period, *period);
            set(&mut m.unknown_policy, *unknown_policy);
        }
        Command::Falsify {
            controller,
            algo,
            trials,
            query,
            ..
        } => {
            let f = &mut cfg.falsify;
            set(&mut f.controller, controller.clone());
            set(&mut f.algo, algo.clone());
            set(&mut f.trials, *trials);
            set(&mut f.query, query.clone());
        }
        Command::Check { .. } | Command::Report { .. } => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let cfg = effective_config(&cli.global, &cli.command)?;
    log::debug!("config hash {}", cfg.hash());
    match &cli.command {
        Command::Train { out, .. } => commands::train(&cfg, out),
        Command::Collect { out, .. } => commands::collect(&cfg, out),
        Command::Build { traces, out, .. } => commands::build(&cfg, traces, out),
        Command::Refine {
            model, traces, out, ..
        } => commands::refine_cmd(&cfg, model, traces, out.as_ref().unwrap_or(model)),
        Command::Check {
            model,
            query,
            state,
            concrete,
            quantifier,
            assert,
        } => {
            let at = match (state, concrete) {
                (Some(id), _) => StateRef::Id(*id),
                (None, Some(p)) => StateRef::Concrete(p.clone()),
                (None, None) => return Err(CliError::Usage("give --state or --concrete".into())),
            };
            commands::check_cmd(query, *quantifier, model, &at, *assert)
        }
        Command::Monitor { model, out, .. } => commands::monitor_cmd(&cfg, model, out.as_deref()),
        Command::Falsify { model, out, .. } => commands::falsify_cmd(&cfg, model.as_deref(), out.as_deref()),
        Command::Report { inputs, out } => commands::report(inputs, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
