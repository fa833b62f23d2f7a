//! Experiment configuration file (JSON, `format: 1`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::circuit::BenchmarkFamily;
use crate::decompose::IntervalMode;
use crate::noise::NoiseProfile;
use crate::predictor::TrainConfig;
use crate::sim::{PerfMode, SimOptions};

pub const CONFIG_FORMAT: u32 = 1;

/// Which circuit to run: a benchmark family or a circuit file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qubits: Option<usize>,
    /// Drives randomized circuit structure (RB sequence, QAOA graph, VQE angles).
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

/// Synthetic noise (`length` snapshots from `profile`) or a saved trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub length: usize,
    pub profile: NoiseProfile,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_file: Option<PathBuf>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            length: 2800,
            profile: NoiseProfile::default(),
            trace_file: None,
        }
    }
}

/// Tracked quantities. Without `keys`, probability mode tracks the most
/// likely ideal bitstring(s) and observable mode tracks `Z` on every qubit.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementConfig {
    pub mode: Option<PerfMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keys: Option<Vec<String>>,
}

impl MeasurementConfig {
    pub fn mode(&self) -> PerfMode {
        self.mode.unwrap_or(PerfMode::Probability)
    }
}

/// Repeated-simulation reference bounds at held-out snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub runs: usize,
    /// Number of held-out snapshots (earliest first) to compare against.
    pub snapshots: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { runs: 400, snapshots: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub circuit: CircuitSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub measurement: MeasurementConfig,
    #[serde(default = "default_shots")]
    pub shots: u32,
    #[serde(default)]
    pub sim: SimOptions,
    #[serde(default = "default_dp")]
    pub dp: usize,
    #[serde(default = "default_cl")]
    pub cl: f64,
    /// Further confidence levels evaluated from the same trained model.
    #[serde(default)]
    pub extra_cls: Vec<f64>,
    #[serde(default)]
    pub interval_mode: IntervalMode,
    /// Widens the offsets to undo the shrinkage of residual spread caused by
    /// the moving average (see `residual_variance_factor`).
    #[serde(default = "default_true")]
    pub correct_residual_shrinkage: bool,
    /// Adds the predictor's estimated error variance (from its fit on the
    /// training entries) to the spread behind the offsets.
    #[serde(default = "default_true")]
    pub include_model_error: bool,
    #[serde(default)]
    pub include_readout: bool,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    /// Not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_true() -> bool {
    true
}

fn default_shots() -> u32 {
    2000
}

fn default_dp() -> usize {
    7
}

fn default_cl() -> f64 {
    0.9
}

fn default_test_size() -> usize {
    200
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl ExperimentConfig {
    /// A config for a benchmark family with every other field at its default.
    pub fn benchmark(family: BenchmarkFamily, qubits: usize) -> Self {
        ExperimentConfig {
            format: CONFIG_FORMAT,
            name: None,
            seed: 0,
            circuit: CircuitSpec {
                family: Some(family.name().to_string()),
                qubits: Some(qubits),
                seed: 0,
                params: None,
                file: None,
            },
            noise: NoiseSpec::default(),
            measurement: MeasurementConfig::default(),
            shots: default_shots(),
            sim: SimOptions::default(),
            dp: default_dp(),
            cl: default_cl(),
            extra_cls: Vec::new(),
            interval_mode: IntervalMode::default(),
            correct_residual_shrinkage: true,
            include_model_error: true,
            include_readout: false,
            test_size: default_test_size(),
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
            output_dir: None,
            base_dir: PathBuf::from("."),
        }
    }

    /// Parses and validates a config; relative paths resolve against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let version: serde_json::Value = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        match version.get("format").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(CONFIG_FORMAT) => {}
            Some(v) => return Err(invalid(format!("unsupported config format {v} (expected {CONFIG_FORMAT})"))),
            None => return Err(invalid("missing `format` field")),
        }
        let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn family(&self) -> Result<Option<BenchmarkFamily>, PipelineError> {
        self.circuit
            .family
            .as_deref()
            .map(|f| f.parse().map_err(|e: crate::circuit::CircuitError| invalid(e.to_string())))
            .transpose()
    }

    /// Name used in reports: `name`, else `<FAMILY>-<n>`, else the circuit file stem.
    pub fn display_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match (&self.circuit.family, self.circuit.qubits, &self.circuit.file) {
            (Some(f), Some(q), _) => format!("{}-{q}", f.to_uppercase()),
            (_, _, Some(file)) => file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            _ => "experiment".into(),
        }
    }

    /// All evaluated confidence levels, the primary one first.
    pub fn confidence_levels(&self) -> Vec<f64> {
        let mut cls = vec![self.cl];
        for &c in &self.extra_cls {
            if !cls.contains(&c) {
                cls.push(c);
            }
        }
        cls
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.format != CONFIG_FORMAT {
            return Err(invalid(format!("unsupported config format {}", self.format)));
        }
        for &cl in std::iter::once(&self.cl).chain(&self.extra_cls) {
            if !(cl > 0.0 && cl < 1.0) {
                return Err(invalid(format!("confidence level must lie in (0, 1), got {cl}")));
            }
        }
        if self.dp < 2 {
            return Err(invalid(format!("dp must be at least 2, got {}", self.dp)));
        }
        if self.shots == 0 {
            return Err(invalid("shots must be positive"));
        }
        if self.test_size == 0 {
            return Err(invalid("test_size must be positive"));
        }
        if self.baseline.runs < 2 {
            return Err(invalid("baseline.runs must be at least 2"));
        }
        self.sim.validate().map_err(|e| invalid(e.to_string()))?;
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        let c = &self.circuit;
        match (&c.family, &c.file) {
            (Some(_), Some(_)) => return Err(invalid("circuit: give either `family` or `file`, not both")),
            (None, None) => return Err(invalid("circuit: one of `family` or `file` is required")),
            (Some(_), None) => {
                self.family()?;
                if c.qubits.is_none() {
                    return Err(invalid("circuit: `qubits` is required with `family`"));
                }
            }
            (None, Some(file)) => {
                if c.qubits.is_some() || c.params.is_some() {
                    return Err(invalid("circuit: `qubits`/`params` only apply to `family`"));
                }
                let p = self.resolve(file);
                if !p.is_file() {
                    return Err(invalid(format!("circuit file {} not found", p.display())));
                }
            }
        }
        match &self.noise.trace_file {
            Some(f) => {
                let p = self.resolve(f);
                if !p.is_file() {
                    return Err(invalid(format!("noise trace file {} not found", p.display())));
                }
            }
            None => {
                self.noise.profile.validate().map_err(|e| invalid(e.to_string()))?;
                let min = self.test_size + 2 * self.dp + 2;
                if self.noise.length < min {
                    return Err(invalid(format!(
                        "noise.length {} is too short for test_size {} and dp {} (need at least {min})",
                        self.noise.length, self.test_size, self.dp
                    )));
                }
            }
        }
        if let Some(keys) = &self.measurement.keys {
            if keys.is_empty() {
                return Err(invalid("measurement.keys must not be empty"));
            }
            if let Some(q) = c.qubits {
                let spec = crate::sim::MeasurementSpec {
                    mode: self.measurement.mode(),
                    keys: keys.clone(),
                };
                spec.validate(q).map_err(|e| invalid(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, excluding `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let canonical = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
