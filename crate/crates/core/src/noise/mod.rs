//! Device noise model: per-timestamp snapshots of T1/T2, gate errors and
//! readout errors, and time-ordered traces of them.

mod io;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::circuit::{Gate, GateKind, QuantumCircuit};

pub use io::{load_noise_trace, noise_trace_from_json, noise_trace_to_json, save_noise_trace, NOISE_FORMAT};
pub use synth::{synth_noise_trace, NoiseProfile, WalkParam};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("snapshot {index}: {reason}")]
    InvalidSnapshot { index: usize, reason: String },
    #[error("snapshot {index}: timestamp {timestamp} does not increase on {previous}")]
    Ordering { index: usize, timestamp: u64, previous: u64 },
    #[error("snapshot index {index} out of range for trace of length {len}")]
    OutOfRange { index: usize, len: usize },
    #[error("noise snapshot has no gate error for `{0}`")]
    MissingGateError(String),
    #[error("invalid noise profile: {0}")]
    InvalidProfile(String),
    #[error("noise trace must contain at least one snapshot")]
    Empty,
    #[error("noise trace file {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("malformed gate key `{0}`")]
    BadKey(String),
}

/// Gate-error key: gate kind plus its ordered operand tuple, written `CNOT:0,1`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GateKey {
    pub kind: GateKind,
    pub operands: Vec<usize>,
}

impl GateKey {
    pub fn new(kind: GateKind, operands: &[usize]) -> Self {
        GateKey {
            kind,
            operands: operands.to_vec(),
        }
    }

    pub fn of(gate: &Gate) -> Self {
        GateKey::new(gate.kind, &gate.operands)
    }

    /// Keys of every non-identity gate in `circuit`.
    pub fn required_by(circuit: &QuantumCircuit) -> BTreeSet<GateKey> {
        circuit
            .gates()
            .iter()
            .filter(|g| g.kind != GateKind::I)
            .map(GateKey::of)
            .collect()
    }

    pub fn involves(&self, qubit: usize) -> bool {
        self.operands.contains(&qubit)
    }
}

impl fmt::Display for GateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.kind)?;
        for (i, q) in self.operands.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{q}")?;
        }
        Ok(())
    }
}

impl FromStr for GateKey {
    type Err = NoiseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || NoiseError::BadKey(s.to_string());
        let (kind, ops) = s.split_once(':').ok_or_else(bad)?;
        let kind: GateKind = kind.parse().map_err(|_| bad())?;
        let operands = ops
            .split(',')
            .map(|q| q.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?;
        if operands.len() != kind.arity() {
            return Err(bad());
        }
        Ok(GateKey { kind, operands })
    }
}

impl Serialize for GateKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GateKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Device noise at one timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSnapshot {
    /// Monotone sample index.
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock: Option<String>,
    /// Per-qubit relaxation time, microseconds.
    pub t1: Vec<f64>,
    /// Per-qubit dephasing time, microseconds.
    pub t2: Vec<f64>,
    pub gate_error: BTreeMap<GateKey, f64>,
    #[serde(default)]
    pub readout_error: Vec<f64>,
}

fn is_probability(p: f64) -> bool {
    p.is_finite() && (0.0..=1.0).contains(&p)
}

impl NoiseSnapshot {
    pub fn num_qubits(&self) -> usize {
        self.t1.len()
    }

    /// Readout error of `qubit`, 0 when the snapshot carries none.
    pub fn readout(&self, qubit: usize) -> f64 {
        self.readout_error.get(qubit).copied().unwrap_or(0.0)
    }

    /// Error probability for `gate`. Identities default to 0 when the
    /// snapshot has no `I:q` entry; every other gate must have a key.
    pub fn gate_error_for(&self, gate: &Gate) -> Result<f64, NoiseError> {
        let key = GateKey::of(gate);
        match self.gate_error.get(&key) {
            Some(&p) => Ok(p),
            None if gate.kind == GateKind::I => Ok(0.0),
            None => Err(NoiseError::MissingGateError(key.to_string())),
        }
    }

    /// Checks physicality and probability ranges.
    pub fn check(&self) -> Result<(), String> {
        let n = self.t1.len();
        if n == 0 {
            return Err("no qubits".into());
        }
        if self.t2.len() != n {
            return Err(format!("t2 has {} entries, t1 has {n}", self.t2.len()));
        }
        if !self.readout_error.is_empty() && self.readout_error.len() != n {
            return Err(format!("readout_error has {} entries, t1 has {n}", self.readout_error.len()));
        }
        for q in 0..n {
            let (t1, t2) = (self.t1[q], self.t2[q]);
            if !(t1.is_finite() && t1 > 0.0) || !(t2.is_finite() && t2 > 0.0) {
                return Err(format!("qubit {q}: t1/t2 must be positive, got {t1}/{t2}"));
            }
            if t2 > 2.0 * t1 {
                return Err(format!("qubit {q}: t2 = {t2} exceeds 2*t1 = {}", 2.0 * t1));
            }
        }
        for (key, &p) in &self.gate_error {
            if !is_probability(p) {
                return Err(format!("gate error {key} = {p} outside [0, 1]"));
            }
            if key.operands.iter().any(|&q| q >= n) {
                return Err(format!("gate error key {key} references a qubit beyond {n}"));
            }
        }
        if let Some((q, p)) = self.readout_error.iter().enumerate().find(|(_, &p)| !is_probability(p)) {
            return Err(format!("readout error of qubit {q} = {p} outside [0, 1]"));
        }
        Ok(())
    }

    /// Flat feature vector: t1, t2, gate errors in key order, readout errors.
    pub fn flatten(&self) -> Vec<f64> {
        let n = self.num_qubits();
        let mut v = Vec::with_capacity(3 * n + self.gate_error.len());
        v.extend_from_slice(&self.t1);
        v.extend_from_slice(&self.t2);
        v.extend(self.gate_error.values().copied());
        v.extend((0..n).map(|q| self.readout(q)));
        v
    }
}

/// Time-ordered noise snapshots, `trN = { N_t }`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrace {
    num_qubits: usize,
    samples_per_day: u32,
    snapshots: Vec<NoiseSnapshot>,
}

impl NoiseTrace {
    pub fn new(num_qubits: usize, samples_per_day: u32, mut snapshots: Vec<NoiseSnapshot>) -> Result<Self, NoiseError> {
        if snapshots.is_empty() {
            return Err(NoiseError::Empty);
        }
        let first_keys: Vec<&GateKey> = snapshots[0].gate_error.keys().collect();
        for (index, snap) in snapshots.iter().enumerate() {
            snap.check().map_err(|reason| NoiseError::InvalidSnapshot { index, reason })?;
            if snap.num_qubits() != num_qubits {
                return Err(NoiseError::InvalidSnapshot {
                    index,
                    reason: format!("covers {} qubit(s), trace has {num_qubits}", snap.num_qubits()),
                });
            }
            if !snap.gate_error.keys().eq(first_keys.iter().copied()) {
                return Err(NoiseError::InvalidSnapshot {
                    index,
                    reason: "gate-error key set differs from snapshot 0".into(),
                });
            }
            if index > 0 {
                let previous = snapshots[index - 1].timestamp;
                if snap.timestamp <= previous {
                    return Err(NoiseError::Ordering {
                        index,
                        timestamp: snap.timestamp,
                        previous,
                    });
                }
            }
        }
        for snap in &mut snapshots {
            if snap.readout_error.is_empty() {
                snap.readout_error = vec![0.0; num_qubits];
            }
        }
        Ok(NoiseTrace {
            num_qubits,
            samples_per_day,
            snapshots,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn samples_per_day(&self) -> u32 {
        self.samples_per_day
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> &[NoiseSnapshot] {
        &self.snapshots
    }

    /// The `t`-th snapshot.
    pub fn snapshot_at(&self, t: usize) -> Result<&NoiseSnapshot, NoiseError> {
        self.snapshots.get(t).ok_or(NoiseError::OutOfRange {
            index: t,
            len: self.snapshots.len(),
        })
    }

    /// Position of the snapshot with `timestamp`, if present.
    pub fn position_of(&self, timestamp: u64) -> Option<usize> {
        self.snapshots.binary_search_by_key(&timestamp, |s| s.timestamp).ok()
    }

    pub fn keys(&self) -> impl Iterator<Item = &GateKey> {
        self.snapshots[0].gate_error.keys()
    }
}
