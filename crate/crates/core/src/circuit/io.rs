//! JSON circuit files.
//!
//! ```json
//! {"format": 1, "num_qubits": 3, "label": "GHZ-3",
//!  "gates": [{"kind": "H", "param": 0.0, "operands": [0], "step": 0}, ...]}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CircuitError, Gate, QuantumCircuit};
use crate::error::{io_err, Result};

pub const CIRCUIT_FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CircuitFile {
    format: u32,
    num_qubits: usize,
    #[serde(default)]
    label: String,
    gates: Vec<Gate>,
}

pub fn to_json(circuit: &QuantumCircuit) -> String {
    let file = CircuitFile {
        format: CIRCUIT_FORMAT,
        num_qubits: circuit.num_qubits(),
        label: circuit.label().to_string(),
        gates: circuit.gates().to_vec(),
    };
    serde_json::to_string_pretty(&file).expect("circuit serializes")
}

/// Parses and validates a circuit document; `origin` names it in errors.
pub fn parse_circuit(text: &str, origin: &str) -> std::result::Result<QuantumCircuit, CircuitError> {
    let parse_err = |reason: String| CircuitError::Parse {
        path: origin.to_string(),
        reason,
    };
    let file: CircuitFile = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    if file.format != CIRCUIT_FORMAT {
        return Err(parse_err(format!(
            "unsupported format {} (expected {CIRCUIT_FORMAT})",
            file.format
        )));
    }
    QuantumCircuit::from_gates(file.num_qubits, file.label, file.gates)
        .map_err(|e| parse_err(e.to_string()))
}

pub fn save_circuit(circuit: &QuantumCircuit, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(circuit)).map_err(|e| io_err(path, e))
}

pub fn load_circuit(path: &Path) -> Result<QuantumCircuit> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(parse_circuit(&text, &path.display().to_string())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_benchmark, BenchmarkFamily};

    #[test]
    fn round_trip_preserves_circuit() {
        for family in BenchmarkFamily::ALL {
            let c = build_benchmark(family, 3, 11, None).unwrap();
            let back = parse_circuit(&to_json(&c), "mem").unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ghz.json");
        let c = build_benchmark(BenchmarkFamily::Ghz, 3, 0, None).unwrap();
        save_circuit(&c, &path).unwrap();
        assert_eq!(load_circuit(&path).unwrap(), c);
    }

    #[test]
    fn rejects_out_of_range_operand() {
        let text = r#"{"format":1,"num_qubits":2,"label":"x",
            "gates":[{"kind":"H","param":0.0,"operands":[2],"step":0}]}"#;
        let err = parse_circuit(text, "bad.json").unwrap_err().to_string();
        assert!(err.contains("gate 0"), "{err}");
        assert!(err.contains("out of range"), "{err}");
    }

    #[test]
    fn rejects_parameterized_cnot() {
        let text = r#"{"format":1,"num_qubits":2,"label":"x",
            "gates":[{"kind":"CNOT","param":0.5,"operands":[0,1],"step":0}]}"#;
        assert!(parse_circuit(text, "bad.json").is_err());
    }

    #[test]
    fn malformed_json_reports_position() {
        let text = "{\"format\":1,\n\"num_qubits\": \"three\"}";
        let err = parse_circuit(text, "bad.json").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn rejects_unknown_format() {
        let text = r#"{"format":2,"num_qubits":1,"label":"","gates":[]}"#;
        assert!(parse_circuit(text, "x").is_err());
    }
}
