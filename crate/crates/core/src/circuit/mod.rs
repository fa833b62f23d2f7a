//! Quantum circuit representation.
//!
//! A circuit is a qubit count plus an ordered gate list. Each gate records the
//! stage (`step`) it occupies on its operands' timelines; [`QuantumCircuit::push`]
//! assigns steps as-soon-as-possible.

mod benchmarks;
mod io;
mod staging;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use benchmarks::{build_benchmark, build_rb, qaoa_graph, BenchmarkFamily, RB_DEFAULT_LAYERS};
pub use io::{load_circuit, parse_circuit, save_circuit, to_json, CIRCUIT_FORMAT};
pub use staging::{stage_circuit, StageSlot, StagedCircuit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("gate {index}: {reason}")]
    InvalidGate { index: usize, reason: String },
    #[error("circuit must have at least one qubit")]
    NoQubits,
    #[error("unsupported benchmark: {0}")]
    Unsupported(String),
    #[error("unknown gate kind `{0}`")]
    UnknownKind(String),
    #[error("circuit file {path}: {reason}")]
    Parse { path: String, reason: String },
}

/// The fixed gate vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GateKind {
    I,
    H,
    X,
    Y,
    Z,
    SX,
    Rx,
    Ry,
    Rz,
    CNOT,
    CZ,
}

impl GateKind {
    /// Enumeration order; also fixes the encoder's gate-id table.
    pub const ALL: [GateKind; 11] = [
        GateKind::I,
        GateKind::H,
        GateKind::X,
        GateKind::Y,
        GateKind::Z,
        GateKind::SX,
        GateKind::Rx,
        GateKind::Ry,
        GateKind::Rz,
        GateKind::CNOT,
        GateKind::CZ,
    ];

    pub fn arity(self) -> usize {
        match self {
            GateKind::CNOT | GateKind::CZ => 2,
            _ => 1,
        }
    }

    pub fn is_parameterized(self) -> bool {
        matches!(self, GateKind::Rx | GateKind::Ry | GateKind::Rz)
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::I => "I",
            GateKind::H => "H",
            GateKind::X => "X",
            GateKind::Y => "Y",
            GateKind::Z => "Z",
            GateKind::SX => "SX",
            GateKind::Rx => "Rx",
            GateKind::Ry => "Ry",
            GateKind::Rz => "Rz",
            GateKind::CNOT => "CNOT",
            GateKind::CZ => "CZ",
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GateKind {
    type Err = CircuitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GateKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| CircuitError::UnknownKind(s.to_string()))
    }
}

/// One gate application: kind, rotation angle, operands and stage index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub kind: GateKind,
    #[serde(rename = "param")]
    pub param: f64,
    pub operands: Vec<usize>,
    pub step: usize,
}

impl Gate {
    pub fn identity(qubit: usize, step: usize) -> Self {
        Gate {
            kind: GateKind::I,
            param: 0.0,
            operands: vec![qubit],
            step,
        }
    }

    /// The inverse gate, up to global phase.
    pub fn inverse(&self) -> Gate {
        let (kind, param) = match self.kind {
            GateKind::Rx | GateKind::Ry | GateKind::Rz => (self.kind, -self.param),
            // SX^dagger = Rx(-pi/2) up to a global phase.
            GateKind::SX => (GateKind::Rx, -std::f64::consts::FRAC_PI_2),
            k => (k, 0.0),
        };
        Gate {
            kind,
            param,
            operands: self.operands.clone(),
            step: 0,
        }
    }

    fn check(&self, num_qubits: usize) -> Result<(), String> {
        if self.operands.len() != self.kind.arity() {
            return Err(format!(
                "{} expects {} operand(s), got {}",
                self.kind,
                self.kind.arity(),
                self.operands.len()
            ));
        }
        if let Some(&q) = self.operands.iter().find(|&&q| q >= num_qubits) {
            return Err(format!("operand {q} out of range for {num_qubits} qubit(s)"));
        }
        if self.operands.len() == 2 && self.operands[0] == self.operands[1] {
            return Err("operands must be distinct".into());
        }
        if self.kind.is_parameterized() {
            if !self.param.is_finite() {
                return Err(format!("{} parameter must be finite", self.kind));
            }
        } else if self.param != 0.0 {
            return Err(format!("{} carries parameter {} but takes none", self.kind, self.param));
        }
        Ok(())
    }
}

/// A circuit `C = <Q, G>`: a qubit count and an ordered gate list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumCircuit {
    num_qubits: usize,
    gates: Vec<Gate>,
    label: String,
}

impl QuantumCircuit {
    pub fn new(num_qubits: usize, label: impl Into<String>) -> Result<Self, CircuitError> {
        if num_qubits == 0 {
            return Err(CircuitError::NoQubits);
        }
        Ok(QuantumCircuit {
            num_qubits,
            gates: Vec::new(),
            label: label.into(),
        })
    }

    /// Builds a circuit from explicit gates (steps included) and validates it.
    pub fn from_gates(
        num_qubits: usize,
        label: impl Into<String>,
        gates: Vec<Gate>,
    ) -> Result<Self, CircuitError> {
        let mut c = QuantumCircuit::new(num_qubits, label)?;
        c.gates = gates;
        c.validate()?;
        Ok(c)
    }

    /// Appends a gate at the earliest stage after its operands' previous gates.
    pub fn push(&mut self, kind: GateKind, param: f64, operands: &[usize]) -> Result<(), CircuitError> {
        let step = operands
            .iter()
            .map(|&q| self.next_free_step(q))
            .max()
            .unwrap_or(0);
        let gate = Gate {
            kind,
            param,
            operands: operands.to_vec(),
            step,
        };
        gate.check(self.num_qubits).map_err(|reason| CircuitError::InvalidGate {
            index: self.gates.len(),
            reason,
        })?;
        self.gates.push(gate);
        Ok(())
    }

    fn next_free_step(&self, qubit: usize) -> usize {
        self.gates
            .iter()
            .rev()
            .find(|g| g.operands.contains(&qubit))
            .map_or(0, |g| g.step + 1)
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn set_label(&mut self, label: impl Into<String>) {
        self.label = label.into();
    }

    /// `1 + max step`, or 0 for an empty circuit.
    pub fn depth(&self) -> usize {
        self.gates.iter().map(|g| g.step + 1).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        if self.num_qubits == 0 {
            return Err(CircuitError::NoQubits);
        }
        let mut last_step: Vec<Option<usize>> = vec![None; self.num_qubits];
        for (index, gate) in self.gates.iter().enumerate() {
            gate.check(self.num_qubits)
                .map_err(|reason| CircuitError::InvalidGate { index, reason })?;
            for &q in &gate.operands {
                if let Some(prev) = last_step[q] {
                    if gate.step <= prev {
                        return Err(CircuitError::InvalidGate {
                            index,
                            reason: format!(
                                "step {} on qubit {q} does not follow previous step {prev}",
                                gate.step
                            ),
                        });
                    }
                }
                last_step[q] = Some(gate.step);
            }
        }
        Ok(())
    }
}

/// Returns `circuit` followed by its inverse, so the ideal output is `|0...0>`.
pub fn append_inverse(circuit: &QuantumCircuit) -> QuantumCircuit {
    let mut out = circuit.clone();
    for gate in circuit.gates.iter().rev() {
        let inv = gate.inverse();
        out.push(inv.kind, inv.param, &inv.operands)
            .expect("inverse of a valid gate is valid");
    }
    if !circuit.label.is_empty() {
        out.label = format!("{}+inv", circuit.label);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn push_assigns_asap_steps() {
        let mut c = QuantumCircuit::new(3, "t").unwrap();
        c.push(GateKind::H, 0.0, &[0]).unwrap();
        c.push(GateKind::CNOT, 0.0, &[0, 1]).unwrap();
        c.push(GateKind::X, 0.0, &[2]).unwrap();
        c.push(GateKind::CNOT, 0.0, &[1, 2]).unwrap();
        let steps: Vec<_> = c.gates().iter().map(|g| g.step).collect();
        assert_eq!(steps, vec![0, 1, 0, 2]);
        assert_eq!(c.depth(), 3);
    }

    #[test]
    fn rejects_bad_gates() {
        let mut c = QuantumCircuit::new(2, "t").unwrap();
        assert!(c.push(GateKind::CNOT, 0.0, &[0, 0]).is_err());
        assert!(c.push(GateKind::H, 0.0, &[2]).is_err());
        assert!(c.push(GateKind::CNOT, 0.5, &[0, 1]).is_err());
        assert!(c.push(GateKind::Rx, f64::NAN, &[0]).is_err());
        assert!(c.push(GateKind::H, 0.0, &[0, 1]).is_err());
        assert!(QuantumCircuit::new(0, "").is_err());
    }

    #[test]
    fn validate_catches_non_increasing_steps() {
        let gates = vec![
            Gate { kind: GateKind::H, param: 0.0, operands: vec![0], step: 1 },
            Gate { kind: GateKind::X, param: 0.0, operands: vec![0], step: 1 },
        ];
        assert!(QuantumCircuit::from_gates(1, "bad", gates).is_err());
    }

    #[test]
    fn inverse_of_rotation_negates_angle() {
        let mut c = QuantumCircuit::new(1, "rx").unwrap();
        c.push(GateKind::Rx, PI / 3.0, &[0]).unwrap();
        let inv = append_inverse(&c);
        assert_eq!(inv.gates().len(), 2);
        assert_eq!(inv.gates()[1].kind, GateKind::Rx);
        assert_eq!(inv.gates()[1].param, -PI / 3.0);
    }

    #[test]
    fn inverse_of_empty_is_empty() {
        let c = QuantumCircuit::new(2, "").unwrap();
        assert!(append_inverse(&c).gates().is_empty());
    }

    #[test]
    fn inverse_at_most_doubles_depth() {
        for n in 2..6 {
            for family in BenchmarkFamily::ALL {
                let c = build_benchmark(family, n, 3, None).unwrap();
                assert!(append_inverse(&c).depth() <= 2 * c.depth());
            }
        }
    }

    #[test]
    fn gate_kind_round_trips_through_name() {
        for k in GateKind::ALL {
            assert_eq!(k.name().parse::<GateKind>().unwrap(), k);
        }
        assert!("Toffoli".parse::<GateKind>().is_err());
    }
}
