//! On-disk formats: trace sets with a manifest, model files, controllers.

use std::fs;
use std::path::{Path, PathBuf};

use cpsafe::abstraction::{AbstractMdp, LabeledTrace};
use cpsafe::controllers::{ControllerHandle, MlpNet, PidController};
use cpsafe::plants::{PlantModel, SimConfig};
use cpsafe::signals::Trace;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Extra trace column holding the per-step robustness used for labeling.
pub const ROBUSTNESS_COLUMN: &str = "rob";
pub const MANIFEST: &str = "manifest.json";

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output types serialize");
    s.push('\n');
    s
}

pub fn from_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub plant: PlantModel,
    pub sim: SimConfig,
    pub spec: String,
    pub controller: String,
    pub traces: Vec<ManifestEntry>,
    /// Runs that failed; a truncated trace is kept when the simulator produced one.
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    /// Index of the random stream the input was drawn from.
    pub stream: u64,
    pub input: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stream: u64,
    pub error: String,
    pub partial_file: Option<String>,
}

/// A manifest and its traces, labeled from the stored robustness column.
pub fn load_trace_set(dir: &Path) -> Result<(Manifest, Vec<LabeledTrace>), CliError> {
    let manifest: Manifest = from_json(&dir.join(MANIFEST))?;
    if manifest.traces.is_empty() {
        return Err(CliError::Runtime(format!("{}: manifest lists no traces", dir.display())));
    }
    let mut out = Vec::with_capacity(manifest.traces.len());
    for entry in &manifest.traces {
        let path = dir.join(&entry.file);
        let (trace, _) =
            Trace::from_text(&read(&path)?).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        out.push(labeled(&manifest.plant, &trace, &path)?);
    }
    Ok((manifest, out))
}

fn labeled(plant: &PlantModel, trace: &Trace, path: &Path) -> Result<LabeledTrace, CliError> {
    let col = trace
        .extra_names
        .iter()
        .position(|n| n == ROBUSTNESS_COLUMN)
        .ok_or_else(|| CliError::Runtime(format!("{}: no `{ROBUSTNESS_COLUMN}` column", path.display())))?;
    let states = cpsafe::pipeline::observations(plant, trace);
    if states.first().map(Vec::len) != Some(plant.observation_names().len()) {
        return Err(CliError::Runtime(format!(
            "{}: trace does not match plant `{}`",
            path.display(),
            plant.name()
        )));
    }
    Ok(LabeledTrace {
        states,
        actions: trace.actions.clone(),
        robustness: trace.extra.iter().map(|row| row[col]).collect(),
    })
}

/// Model JSON with the context it was built in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub config_hash: String,
    /// Hash stored in the manifest of the traces the model was built from.
    pub traces_hash: String,
    pub plant: PlantModel,
    pub spec: String,
    pub model: AbstractMdp,
}

impl ModelFile {
    /// Writes the JSON file and the `.tra`/`.lab` exports next to it.
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_atomic(path, &to_json(self))?;
        write_atomic(&path.with_extension("tra"), &self.model.mdp.to_tra())?;
        write_atomic(&path.with_extension("lab"), &self.model.mdp.to_lab())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        from_json(path)
    }
}

/// Parses `pid`, `constant:<u>` or `mlp:<weights file>`.
pub fn load_controller(spec: &str, plant: &PlantModel) -> Result<ControllerHandle, CliError> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "pid" if arg.is_empty() => Ok(ControllerHandle::Pid(PidController::for_plant(plant))),
        "constant" => arg
            .parse::<f64>()
            .ok()
            .filter(|u| u.is_finite())
            .map(ControllerHandle::Constant)
            .ok_or_else(|| CliError::Usage(format!("bad constant controller `{spec}`"))),
        "mlp" if !arg.is_empty() => {
            let path = Path::new(arg);
            let net = MlpNet::from_text(&read(path)?)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            let want = plant.observation_names().len();
            if net.input_dim() != want {
                return Err(CliError::Runtime(format!(
                    "{}: network takes {} inputs but `{}` observes {want}",
                    path.display(),
                    net.input_dim(),
                    plant.name()
                )));
            }
            Ok(ControllerHandle::Mlp(net))
        }
        _ => Err(CliError::Usage(format!(
            "unknown controller `{spec}` (expected pid, constant:<u> or mlp:<file>)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn controller_specs() {
        let plant = PlantModel::acc();
        assert!(matches!(load_controller("pid", &plant), Ok(ControllerHandle::Pid(_))));
        assert!(matches!(load_controller("constant:0.5", &plant), Ok(ControllerHandle::Constant(u)) if u == 0.5));
        assert!(matches!(load_controller("constant:x", &plant), Err(CliError::Usage(_))));
        assert!(matches!(load_controller("lqr", &plant), Err(CliError::Usage(_))));
        assert!(matches!(load_controller("mlp:/nonexistent/w", &plant), Err(CliError::Runtime(_))));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(read(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
