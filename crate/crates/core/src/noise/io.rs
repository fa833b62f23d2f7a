//! JSON noise-trace files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NoiseError, NoiseSnapshot, NoiseTrace};
use crate::error::{io_err, Result};

pub const NOISE_FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseFile {
    format: u32,
    num_qubits: usize,
    samples_per_day: u32,
    snapshots: Vec<NoiseSnapshot>,
}

pub fn noise_trace_to_json(trace: &NoiseTrace) -> String {
    let file = NoiseFile {
        format: NOISE_FORMAT,
        num_qubits: trace.num_qubits(),
        samples_per_day: trace.samples_per_day(),
        snapshots: trace.snapshots().to_vec(),
    };
    serde_json::to_string(&file).expect("noise trace serializes")
}

/// Parses and validates a noise trace; `origin` names it in errors.
pub fn noise_trace_from_json(text: &str, origin: &str) -> std::result::Result<NoiseTrace, NoiseError> {
    let parse_err = |reason: String| NoiseError::Parse {
        path: origin.to_string(),
        reason,
    };
    let file: NoiseFile = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    if file.format != NOISE_FORMAT {
        return Err(parse_err(format!(
            "unsupported format {} (expected {NOISE_FORMAT})",
            file.format
        )));
    }
    NoiseTrace::new(file.num_qubits, file.samples_per_day, file.snapshots).map_err(|e| parse_err(e.to_string()))
}

pub fn save_noise_trace(trace: &NoiseTrace, path: &Path) -> Result<()> {
    std::fs::write(path, noise_trace_to_json(trace)).map_err(|e| io_err(path, e))
}

pub fn load_noise_trace(path: &Path) -> Result<NoiseTrace> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(noise_trace_from_json(&text, &path.display().to_string())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{synth_noise_trace, NoiseProfile};

    #[test]
    fn json_round_trip_is_exact() {
        let p = NoiseProfile { outlier_rate: 0.1, ..Default::default() };
        let tr = synth_noise_trace(3, 64, 5, &p).unwrap();
        let back = noise_trace_from_json(&noise_trace_to_json(&tr), "mem").unwrap();
        assert_eq!(back, tr);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("noise.json");
        let tr = synth_noise_trace(2, 10, 1, &NoiseProfile::default()).unwrap();
        save_noise_trace(&tr, &path).unwrap();
        assert_eq!(load_noise_trace(&path).unwrap(), tr);
    }

    #[test]
    fn invalid_snapshot_is_named() {
        let tr = synth_noise_trace(2, 4, 1, &NoiseProfile::default()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&noise_trace_to_json(&tr)).unwrap();
        v["snapshots"][2]["t1"][0] = serde_json::json!(-1.0);
        let err = noise_trace_from_json(&v.to_string(), "n.json").unwrap_err().to_string();
        assert!(err.contains("snapshot 2"), "{err}");
        assert!(err.contains("n.json"), "{err}");
    }

    #[test]
    fn bad_gate_key_is_rejected() {
        let text = r#"{"format":1,"num_qubits":1,"samples_per_day":4,"snapshots":[
            {"timestamp":0,"t1":[100.0],"t2":[90.0],"gate_error":{"CNOT:0":0.01}}]}"#;
        let err = noise_trace_from_json(text, "n.json").unwrap_err().to_string();
        assert!(err.contains("CNOT:0"), "{err}");
    }
}
