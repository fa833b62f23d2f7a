//! Noisy statevector simulation: ideal distributions, Monte-Carlo trajectory
//! runs under a noise snapshot, performance traces and the repeated-simulation
//! baseline bounds.

mod ideal;
mod noisy;
pub(crate) mod state;
mod trace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::NoiseError;

pub use ideal::{fidelity, ideal_probabilities, observable_expectation, MAX_STATEVECTOR_QUBITS};
pub use noisy::{noisy_run, noisy_sim_bounds, noisy_sim_bounds_with_seeds, NoisySimBounds};
pub use trace::{
    generate_performance_trace, load_performance_trace, meta_path, save_performance_trace, PerformanceTrace,
    TRACE_FORMAT,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("statevector simulation supports at most {limit} qubits, circuit has {qubits}")]
    TooManyQubits { qubits: usize, limit: usize },
    #[error("noise snapshot covers {snapshot} qubit(s), circuit needs {circuit}")]
    QubitMismatch { circuit: usize, snapshot: usize },
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("invalid tracked key `{key}`: {reason}")]
    BadKey { key: String, reason: String },
    #[error("at least one tracked key is required")]
    NoKeys,
    #[error("shots must be at least 1")]
    NoShots,
    #[error("the baseline needs at least 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),
    #[error("invalid simulation options: {0}")]
    InvalidOptions(String),
    #[error("performance trace {path}: {reason}")]
    Parse { path: String, reason: String },
}

/// What a performance value measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerfMode {
    /// Probability of a computational basis bitstring.
    Probability,
    /// Expectation value of a Pauli string.
    Observable,
}

impl PerfMode {
    /// Legal value range of the mode.
    pub fn range(self) -> (f64, f64) {
        match self {
            PerfMode::Probability => (0.0, 1.0),
            PerfMode::Observable => (-1.0, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PerfMode::Probability => "probability",
            PerfMode::Observable => "observable",
        }
    }
}

/// The tracked quantities of a run: bitstrings (probability mode, character
/// `i` is qubit `i`) or Pauli strings over `IXYZ` (observable mode).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementSpec {
    pub mode: PerfMode,
    pub keys: Vec<String>,
}

impl MeasurementSpec {
    pub fn probability<S: Into<String>>(keys: impl IntoIterator<Item = S>) -> Self {
        MeasurementSpec {
            mode: PerfMode::Probability,
            keys: keys.into_iter().map(Into::into).collect(),
        }
    }

    pub fn observable<S: Into<String>>(keys: impl IntoIterator<Item = S>) -> Self {
        MeasurementSpec {
            mode: PerfMode::Observable,
            keys: keys.into_iter().map(Into::into).collect(),
        }
    }

    /// Checks every key against an `m`-qubit register.
    pub fn validate(&self, m: usize) -> Result<(), SimError> {
        if self.keys.is_empty() {
            return Err(SimError::NoKeys);
        }
        let alphabet: &[char] = match self.mode {
            PerfMode::Probability => &['0', '1'],
            PerfMode::Observable => &['I', 'X', 'Y', 'Z'],
        };
        for key in &self.keys {
            let bad = |reason: String| SimError::BadKey {
                key: key.clone(),
                reason,
            };
            if key.chars().count() != m {
                return Err(bad(format!("expected {m} characters")));
            }
            if let Some(c) = key.chars().find(|c| !alphabet.contains(c)) {
                return Err(bad(format!("character `{c}` not allowed in {} mode", self.mode.name())));
            }
        }
        Ok(())
    }
}

/// Basis-state index of a bitstring key (character `i` is bit `i`).
pub fn key_index(key: &str) -> usize {
    key.bytes()
        .enumerate()
        .filter(|(_, b)| *b == b'1')
        .fold(0, |acc, (i, _)| acc | (1 << i))
}

/// Bitstring key of a basis-state index.
pub fn index_key(index: usize, m: usize) -> String {
    (0..m).map(|q| if index >> q & 1 == 1 { '1' } else { '0' }).collect()
}

/// Performance value(s) of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceSample {
    pub timestamp: u64,
    /// Aligned with the [`MeasurementSpec`] keys of the run.
    pub values: Vec<f64>,
    pub shots: u32,
}

/// Channel timing and sampling knobs of the trajectory simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    /// Duration of a stage holding only single-qubit gates, microseconds.
    pub single_qubit_stage_us: f64,
    /// Duration of a stage holding any two-qubit gate, microseconds.
    pub two_qubit_stage_us: f64,
    /// Measurement shots drawn from each simulated trajectory. 1 makes every
    /// shot an independent trajectory.
    pub shots_per_trajectory: u32,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            single_qubit_stage_us: 0.035,
            two_qubit_stage_us: 0.3,
            shots_per_trajectory: 1,
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = |d: f64| d.is_finite() && d >= 0.0;
        if !ok(self.single_qubit_stage_us) || !ok(self.two_qubit_stage_us) {
            return Err(SimError::InvalidOptions("stage durations must be finite and non-negative".into()));
        }
        if self.shots_per_trajectory == 0 {
            return Err(SimError::InvalidOptions("shots_per_trajectory must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_index_round_trip() {
        assert_eq!(key_index("000"), 0);
        assert_eq!(key_index("100"), 1);
        assert_eq!(key_index("011"), 6);
        for i in 0..16 {
            assert_eq!(key_index(&index_key(i, 4)), i);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(MeasurementSpec::probability(["000"]).validate(3).is_ok());
        assert!(MeasurementSpec::probability(["00"]).validate(3).is_err());
        assert!(MeasurementSpec::probability(["0Z0"]).validate(3).is_err());
        assert!(MeasurementSpec::observable(["XZI"]).validate(3).is_ok());
        assert!(MeasurementSpec::observable(["X0I"]).validate(3).is_err());
        assert!(MeasurementSpec::observable(Vec::<String>::new()).validate(3).is_err());
    }
}
