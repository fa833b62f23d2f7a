//! Performance traces: one noisy run per noise snapshot, stored as CSV
//! (`timestamp,<key...>,shots`) plus a JSON metadata sidecar.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::noisy::Runner;
use super::{MeasurementSpec, PerfMode, PerformanceSample, SimError, SimOptions};
use crate::circuit::QuantumCircuit;
use crate::error::{io_err, Result};
use crate::noise::NoiseTrace;
use crate::rng;

pub const TRACE_FORMAT: u32 = 1;

/// Time-ordered performance values of one circuit under a noise trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceTrace {
    pub circuit_label: String,
    /// Free-form reference to the noise trace the samples were produced under.
    #[serde(default)]
    pub noise_ref: String,
    pub spec: MeasurementSpec,
    pub shots: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(skip)]
    pub samples: Vec<PerformanceSample>,
}

impl PerformanceTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn timestamps(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.timestamp).collect()
    }

    /// Values of the `key`-th tracked quantity over time.
    pub fn series(&self, key: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.values[key]).collect()
    }

    pub fn mode(&self) -> PerfMode {
        self.spec.mode
    }
}

/// Runs the circuit once per snapshot; snapshot `t` uses the sub-seed
/// `derive_seed(seed, t)`, so the result does not depend on thread count.
pub fn generate_performance_trace(
    circuit: &QuantumCircuit,
    noise: &NoiseTrace,
    shots: u32,
    spec: &MeasurementSpec,
    seed: u64,
    opts: &SimOptions,
) -> std::result::Result<PerformanceTrace, SimError> {
    let runner = Runner::new(circuit, spec, opts)?;
    let samples = noise
        .snapshots()
        .par_iter()
        .enumerate()
        .map(|(t, snap)| runner.run(snap, shots, rng::derive_seed(seed, t as u64)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(PerformanceTrace {
        circuit_label: circuit.label().to_string(),
        noise_ref: String::new(),
        spec: spec.clone(),
        shots,
        seed,
        config_hash: None,
        samples,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceMeta {
    format: u32,
    #[serde(flatten)]
    trace: PerformanceTrace,
}

/// Sidecar path for a trace CSV: `perf.csv` -> `perf.meta.json`.
pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

pub fn save_performance_trace(trace: &PerformanceTrace, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(trace.spec.keys.iter().cloned());
    header.push("shots".into());
    w.write_record(&header).map_err(|e| csv_io(path, e))?;
    for s in &trace.samples {
        let mut row = vec![s.timestamp.to_string()];
        row.extend(s.values.iter().map(|v| v.to_string()));
        row.push(s.shots.to_string());
        w.write_record(&row).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    let meta = TraceMeta {
        format: TRACE_FORMAT,
        trace: PerformanceTrace {
            samples: Vec::new(),
            ..trace.clone()
        },
    };
    let mp = meta_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("trace metadata serializes");
    std::fs::write(&mp, text).map_err(|e| io_err(&mp, e))
}

fn csv_io(path: &Path, e: csv::Error) -> crate::Error {
    io_err(path, std::io::Error::other(e.to_string()))
}

pub fn load_performance_trace(path: &Path) -> Result<PerformanceTrace> {
    let origin = path.display().to_string();
    let parse = |reason: String| SimError::Parse {
        path: origin.clone(),
        reason,
    };
    let mp = meta_path(path);
    let meta_text = std::fs::read_to_string(&mp).map_err(|e| io_err(&mp, e))?;
    let meta: TraceMeta = serde_json::from_str(&meta_text).map_err(|e| parse(format!("metadata: {e}")))?;
    if meta.format != TRACE_FORMAT {
        return Err(parse(format!("unsupported format {}", meta.format)).into());
    }
    let mut trace = meta.trace;
    let (lo, hi) = trace.spec.mode.range();
    let k = trace.spec.keys.len();

    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| parse(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut expected = vec!["timestamp".to_string()];
    expected.extend(trace.spec.keys.iter().cloned());
    expected.push("shots".into());
    if header != expected {
        return Err(parse(format!("header {header:?} does not match metadata keys")).into());
    }
    for (line, rec) in r.records().enumerate() {
        let row = line + 2;
        let rec = rec.map_err(|e| parse(format!("row {row}: {e}")))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let timestamp: u64 = field(0)
            .parse()
            .map_err(|_| parse(format!("row {row}: bad timestamp `{}`", field(0))))?;
        let mut values = Vec::with_capacity(k);
        for j in 0..k {
            let v: f64 = field(j + 1)
                .parse()
                .map_err(|_| parse(format!("row {row}: bad value `{}`", field(j + 1))))?;
            if !(lo..=hi).contains(&v) {
                return Err(parse(format!("row {row}: value {v} outside [{lo}, {hi}]")).into());
            }
            values.push(v);
        }
        let shots: u32 = field(k + 1)
            .parse()
            .map_err(|_| parse(format!("row {row}: bad shots `{}`", field(k + 1))))?;
        if let Some(prev) = trace.samples.last() {
            if timestamp <= prev.timestamp {
                return Err(parse(format!("row {row}: timestamps must increase")).into());
            }
        }
        trace.samples.push(PerformanceSample {
            timestamp,
            values,
            shots,
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_benchmark, BenchmarkFamily};
    use crate::noise::{synth_noise_trace, NoiseProfile};

    fn small_trace() -> PerformanceTrace {
        let c = build_benchmark(BenchmarkFamily::Ghz, 3, 0, None).unwrap();
        let noise = synth_noise_trace(3, 12, 1, &NoiseProfile::default()).unwrap();
        let spec = MeasurementSpec::probability(["000", "111"]);
        generate_performance_trace(&c, &noise, 200, &spec, 4, &SimOptions::default()).unwrap()
    }

    #[test]
    fn one_sample_per_snapshot() {
        let t = small_trace();
        assert_eq!(t.len(), 12);
        assert_eq!(t.timestamps(), (0..12).collect::<Vec<u64>>());
        assert_eq!(t.circuit_label, "GHZ-3");
    }

    #[test]
    fn single_snapshot_trace() {
        let c = build_benchmark(BenchmarkFamily::Ghz, 3, 0, None).unwrap();
        let noise = synth_noise_trace(3, 1, 1, &NoiseProfile::default()).unwrap();
        let t = generate_performance_trace(&c, &noise, 10, &MeasurementSpec::probability(["000"]), 0, &SimOptions::default())
            .unwrap();
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("perf.csv");
        let mut t = small_trace();
        t.config_hash = Some("abc".into());
        save_performance_trace(&t, &path).unwrap();
        assert!(dir.path().join("perf.meta.json").exists());
        assert_eq!(load_performance_trace(&path).unwrap(), t);
    }

    #[test]
    fn out_of_range_value_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("perf.csv");
        save_performance_trace(&small_trace(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        lines[3] = "2,1.5,0.0,200".into();
        std::fs::write(&path, lines.join("\n")).unwrap();
        let err = load_performance_trace(&path).unwrap_err().to_string();
        assert!(err.contains("row 4"), "{err}");
    }
}
