//! Run configuration: one TOML file with a section per command.
//!
//! ```toml
//! seed = 7
//!
//! [plant]
//! name = "acc"
//! v_target = 28.0
//!
//! [collect]
//! traces = 2000
//! controller = "mlp:ai.weights"
//!
//! [abstraction]
//! k = 3
//! c = 10
//! ```
//!
//! Command-line flags override file values. The effective configuration is
//! hashed (SHA-256 over its canonical JSON form) and the hash is written into
//! every output file.

use cpsafe::abstraction::AbstractionConfig;
use cpsafe::falsify::HillClimbConfig;
use cpsafe::monitor::UnknownPolicy;
use cpsafe::plants::{PlantModel, SimConfig};
use cpsafe::pmc::Quantifier;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every random draw derives from it.
    pub seed: u64,
    pub plant: PlantModel,
    /// Plant timing; the plant's defaults when absent.
    pub sim: Option<SimConfig>,
    /// Safety specification; the plant's default when absent.
    pub spec: Option<String>,
    pub collect: CollectSection,
    pub abstraction: AbstractionConfig,
    pub monitor: MonitorSection,
    pub falsify: FalsifySection,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            plant: PlantModel::acc(),
            sim: None,
            spec: None,
            collect: CollectSection::default(),
            abstraction: AbstractionConfig::default(),
            monitor: MonitorSection::default(),
            falsify: FalsifySection::default(),
            train: TrainSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectSection {
    pub traces: usize,
    /// `pid`, `constant:<u>`, `mlp:<weights file>`.
    pub controller: String,
}

impl Default for CollectSection {
    fn default() -> Self {
        Self {
            traces: 2000,
            controller: "pid".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSection {
    pub ai: String,
    pub safety: String,
    pub query: String,
    /// Seconds between queries.
    pub period: f64,
    pub unknown_policy: UnknownPolicy,
    pub switch_back: bool,
    pub quantifier: Quantifier,
    pub runs: usize,
    /// Per-step safety pattern; the plant's default when absent.
    pub safety_spec: Option<String>,
    /// Per-step performance pattern; the plant's default when absent.
    pub performance_spec: Option<String>,
}

impl Default for MonitorSection {
    fn default() -> Self {
        Self {
            ai: "mlp:ai.weights".into(),
            safety: "pid".into(),
            query: cpsafe::monitor::DEFAULT_QUERY.into(),
            period: 5.0,
            unknown_policy: UnknownPolicy::default(),
            switch_back: true,
            quantifier: Quantifier::Max,
            runs: 20,
            safety_spec: None,
            performance_spec: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FalsifySection {
    pub controller: String,
    /// Comma-separated algorithm names.
    pub algo: String,
    pub trials: usize,
    pub query: String,
    pub quantifier: Quantifier,
    pub seeds: usize,
    pub global_budget: usize,
    pub local_budget: usize,
    pub checkpoint_time: f64,
    pub hill: HillClimbConfig,
}

impl Default for FalsifySection {
    fn default() -> Self {
        Self {
            controller: "mlp:ai.weights".into(),
            algo: "mosaic".into(),
            trials: 10,
            query: cpsafe::monitor::DEFAULT_QUERY.into(),
            quantifier: Quantifier::Max,
            seeds: 10,
            global_budget: 20,
            local_budget: 10,
            checkpoint_time: 5.0,
            hill: HillClimbConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// PID demonstration runs.
    pub traces: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Standard deviation of the weight noise added after training; 0 keeps the clone intact.
    pub corrupt: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let clone = cpsafe::pipeline::CloneConfig::default();
        Self {
            traces: clone.traces,
            hidden: clone.hidden,
            epochs: clone.train.epochs,
            lr: clone.train.lr,
            batch: clone.train.batch,
            corrupt: 0.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&std::path::Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn sim(&self) -> SimConfig {
        self.sim.unwrap_or_else(|| self.plant.default_sim_config())
    }

    pub fn spec_text(&self) -> String {
        self.spec.clone().unwrap_or_else(|| self.plant.default_spec().to_string())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Cross-field checks shared by every command.
    pub fn validate(&self) -> Result<(), CliError> {
        let sim = self.sim();
        sim.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.abstraction.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let input = self.plant.default_input_spec();
        if sim.horizon > input.duration + 1e-9 {
            return Err(CliError::Usage(format!(
                "horizon {} exceeds the input duration {}",
                sim.horizon, input.duration
            )));
        }
        if !(self.monitor.period > 0.0) {
            return Err(CliError::Usage("monitor period must be positive".into()));
        }
        if !(self.train.corrupt >= 0.0) {
            return Err(CliError::Usage("corruption magnitude must be nonnegative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_override_defaults() {
        let cfg: RunConfig = toml::from_str(
            r#"
seed = 3
[plant]
name = "watertank"
[abstraction]
c = 4
[monitor]
runs = 2
unknown_policy = "ai"
"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.plant.name(), "watertank");
        assert_eq!(cfg.abstraction.c, 4);
        assert_eq!(cfg.abstraction.k, 3);
        assert_eq!(cfg.monitor.runs, 2);
        assert_eq!(cfg.monitor.unknown_policy, UnknownPolicy::Ai);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[collect]\ntrace = 3").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
