//! Per-stage feature sequences built from a staged circuit and a noise
//! snapshot.
//!
//! Every stage is the concatenation over qubits of a tuple
//! `(gate_id, angle, t1, t2, gate_error[, readout_error])`. The gate id is the
//! kind's position in [`GateKind::ALL`] scaled to `[0, 1]`; the angle is
//! wrapped to `[-pi, pi]` and divided by `pi`. Noise fields are min-max
//! normalized per column by a [`FeatureNormalizer`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{GateKind, StagedCircuit};
use crate::noise::{NoiseError, NoiseSnapshot};

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("cannot fit a normalizer on an empty corpus")]
    EmptyCorpus,
    #[error("shape mismatch: normalizer expects {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("noise snapshot covers {snapshot} qubit(s), circuit needs {circuit}")]
    QubitMismatch { circuit: usize, snapshot: usize },
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

pub const BASE_TUPLE_WIDTH: usize = 5;

const GATE_ID: usize = 0;
const ANGLE: usize = 1;

/// Evenly spaced scalar in `[0, 1]` for a gate kind.
pub fn gate_id(kind: GateKind) -> f64 {
    kind.index() as f64 / (GateKind::ALL.len() - 1) as f64
}

/// Angle wrapped to `[-pi, pi]` and scaled to `[-1, 1]`.
pub fn scaled_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let w = theta - 2.0 * PI * (theta / (2.0 * PI)).round();
    (w / PI).clamp(-1.0, 1.0)
}

/// A `(num_stages, num_qubits * tuple_width)` row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    pub num_stages: usize,
    pub num_qubits: usize,
    pub tuple_width: usize,
    pub data: Vec<f64>,
}

impl EncodedSequence {
    pub fn stage_width(&self) -> usize {
        self.num_qubits * self.tuple_width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.num_stages, self.stage_width())
    }

    pub fn stage(&self, s: usize) -> &[f64] {
        let w = self.stage_width();
        &self.data[s * w..(s + 1) * w]
    }

    pub fn tuple(&self, s: usize, q: usize) -> &[f64] {
        let start = s * self.stage_width() + q * self.tuple_width;
        &self.data[start..start + self.tuple_width]
    }
}

fn check_cover(staged: &StagedCircuit, snapshot: &NoiseSnapshot) -> Result<(), EncodeError> {
    if snapshot.num_qubits() < staged.num_qubits() {
        return Err(EncodeError::QubitMismatch {
            circuit: staged.num_qubits(),
            snapshot: snapshot.num_qubits(),
        });
    }
    Ok(())
}

/// Unnormalized features: raw microseconds and error probabilities.
pub fn encode_raw(
    staged: &StagedCircuit,
    snapshot: &NoiseSnapshot,
    include_readout: bool,
) -> Result<EncodedSequence, EncodeError> {
    check_cover(staged, snapshot)?;
    let m = staged.num_qubits();
    let stages = staged.num_stages();
    let tw = BASE_TUPLE_WIDTH + usize::from(include_readout);
    let mut data = Vec::with_capacity(stages * m * tw);
    for s in 0..stages {
        for q in 0..m {
            let g = staged.gate_at(s, q);
            let angle = if g.kind.is_parameterized() { scaled_angle(g.param) } else { 0.0 };
            data.extend_from_slice(&[
                gate_id(g.kind),
                angle,
                snapshot.t1[q],
                snapshot.t2[q],
                snapshot.gate_error_for(&g)?,
            ]);
            if include_readout {
                data.push(if s + 1 == stages { snapshot.readout(q) } else { 0.0 });
            }
        }
    }
    Ok(EncodedSequence {
        num_stages: stages,
        num_qubits: m,
        tuple_width: tw,
        data,
    })
}

/// Per-column min/max of the noise fields over a training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub num_stages: usize,
    pub num_qubits: usize,
    pub include_readout: bool,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn tuple_width(&self) -> usize {
        BASE_TUPLE_WIDTH + usize::from(self.include_readout)
    }

    fn is_noise_column(&self, col: usize) -> bool {
        let field = col % self.tuple_width();
        field != GATE_ID && field != ANGLE
    }

    /// Maps raw values in place; gate id and angle columns pass through and
    /// degenerate noise columns map to 0.5.
    pub fn apply(&self, seq: &mut EncodedSequence) -> Result<(), EncodeError> {
        self.check_shape(seq)?;
        for (col, v) in seq.data.iter_mut().enumerate() {
            if !self.is_noise_column(col) {
                continue;
            }
            let (lo, hi) = (self.min[col], self.max[col]);
            *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.5 };
        }
        Ok(())
    }

    /// Inverse of [`apply`](Self::apply) on non-degenerate columns.
    pub fn invert(&self, seq: &mut EncodedSequence) -> Result<(), EncodeError> {
        self.check_shape(seq)?;
        for (col, v) in seq.data.iter_mut().enumerate() {
            if !self.is_noise_column(col) {
                continue;
            }
            let (lo, hi) = (self.min[col], self.max[col]);
            *v = if hi > lo { lo + *v * (hi - lo) } else { lo };
        }
        Ok(())
    }

    fn check_shape(&self, seq: &EncodedSequence) -> Result<(), EncodeError> {
        let want = (self.num_stages, self.num_qubits, self.tuple_width());
        let got = (seq.num_stages, seq.num_qubits, seq.tuple_width);
        if want != got {
            return Err(EncodeError::Shape {
                expected: format!("(stages, qubits, width) = {want:?}"),
                got: format!("{got:?}"),
            });
        }
        Ok(())
    }
}

/// Fits column ranges over `(circuit, snapshot)` pairs of identical shape.
pub fn fit_normalizer(
    corpus: &[(&StagedCircuit, &NoiseSnapshot)],
    include_readout: bool,
) -> Result<FeatureNormalizer, EncodeError> {
    let (first, rest) = corpus.split_first().ok_or(EncodeError::EmptyCorpus)?;
    let seq = encode_raw(first.0, first.1, include_readout)?;
    let mut norm = FeatureNormalizer {
        num_stages: seq.num_stages,
        num_qubits: seq.num_qubits,
        include_readout,
        min: seq.data.clone(),
        max: seq.data,
    };
    for (staged, snap) in rest {
        let seq = encode_raw(staged, snap, include_readout)?;
        norm.check_shape(&seq)?;
        for (col, v) in seq.data.iter().enumerate() {
            norm.min[col] = norm.min[col].min(*v);
            norm.max[col] = norm.max[col].max(*v);
        }
    }
    Ok(norm)
}

/// [`fit_normalizer`] for one circuit under many snapshots.
pub fn fit_normalizer_for(
    staged: &StagedCircuit,
    snapshots: &[NoiseSnapshot],
    include_readout: bool,
) -> Result<FeatureNormalizer, EncodeError> {
    let corpus: Vec<(&StagedCircuit, &NoiseSnapshot)> = snapshots.iter().map(|s| (staged, s)).collect();
    fit_normalizer(&corpus, include_readout)
}

/// Normalized feature sequence for `staged` under `snapshot`.
pub fn encode(
    staged: &StagedCircuit,
    snapshot: &NoiseSnapshot,
    normalizer: &FeatureNormalizer,
) -> Result<EncodedSequence, EncodeError> {
    let mut seq = encode_raw(staged, snapshot, normalizer.include_readout)?;
    normalizer.apply(&mut seq)?;
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_benchmark, stage_circuit, BenchmarkFamily, QuantumCircuit};
    use crate::noise::{synth_noise_trace, GateKey, NoiseProfile};
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;
    use std::f64::consts::PI;

    fn snapshot(t1: [f64; 3]) -> NoiseSnapshot {
        let mut gate_error = BTreeMap::new();
        gate_error.insert(GateKey::new(GateKind::Rx, &[0]), 2e-3);
        gate_error.insert(GateKey::new(GateKind::CNOT, &[0, 1]), 1e-2);
        NoiseSnapshot {
            timestamp: 0,
            wall_clock: None,
            t1: t1.to_vec(),
            t2: t1.iter().map(|t| t * 0.8).collect(),
            gate_error,
            readout_error: vec![0.01, 0.02, 0.03],
        }
    }

    #[test]
    fn rotation_stage_tuples() {
        let mut c = QuantumCircuit::new(3, "").unwrap();
        c.push(GateKind::Rx, PI / 3.0, &[0]).unwrap();
        let staged = stage_circuit(&c);
        let seq = encode_raw(&staged, &snapshot([100.0, 110.0, 120.0]), false).unwrap();
        assert_eq!(seq.dims(), (1, 15));
        assert_eq!(seq.tuple(0, 0), &[gate_id(GateKind::Rx), 1.0 / 3.0, 100.0, 80.0, 2e-3]);
        assert_eq!(seq.tuple(0, 1), &[0.0, 0.0, 110.0, 88.0, 0.0]);
        assert_eq!(seq.tuple(0, 2), &[0.0, 0.0, 120.0, 96.0, 0.0]);
    }

    #[test]
    fn cnot_tuples_differ_only_in_t1_t2() {
        let mut c = QuantumCircuit::new(3, "").unwrap();
        c.push(GateKind::CNOT, 0.0, &[0, 1]).unwrap();
        let staged = stage_circuit(&c);
        let seq = encode_raw(&staged, &snapshot([100.0, 110.0, 120.0]), false).unwrap();
        let (a, b) = (seq.tuple(0, 0), seq.tuple(0, 1));
        assert_eq!((a[0], a[1], a[4]), (b[0], b[1], b[4]));
        assert_ne!((a[2], a[3]), (b[2], b[3]));
    }

    #[test]
    fn readout_field_only_on_final_stage() {
        let c = build_benchmark(BenchmarkFamily::Ghz, 3, 0, None).unwrap();
        let staged = stage_circuit(&c);
        let tr = synth_noise_trace(3, 1, 0, &NoiseProfile::default()).unwrap();
        let seq = encode_raw(&staged, &tr.snapshots()[0], true).unwrap();
        assert_eq!(seq.dims(), (3, 18));
        for q in 0..3 {
            assert_eq!(seq.tuple(0, q)[5], 0.0);
            assert_eq!(seq.tuple(2, q)[5], tr.snapshots()[0].readout_error[q]);
        }
    }

    #[test]
    fn ghz3_dims() {
        let c = build_benchmark(BenchmarkFamily::Ghz, 3, 0, None).unwrap();
        let tr = synth_noise_trace(3, 1, 0, &NoiseProfile::default()).unwrap();
        let seq = encode_raw(&stage_circuit(&c), &tr.snapshots()[0], false).unwrap();
        assert_eq!(seq.dims(), (3, 15));
    }

    #[test]
    fn gate_ids_are_distinct() {
        let mut ids: Vec<f64> = GateKind::ALL.iter().map(|k| gate_id(*k)).collect();
        ids.dedup();
        assert_eq!(ids.len(), GateKind::ALL.len());
        assert_eq!(ids[0], 0.0);
        assert_eq!(*ids.last().unwrap(), 1.0);
    }

    #[test]
    fn angles_wrap() {
        assert_abs_diff_eq!(scaled_angle(PI / 2.0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(scaled_angle(-PI / 2.0), -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(scaled_angle(2.5 * PI), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(scaled_angle(1.5 * PI), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn single_sample_normalizer_is_degenerate() {
        let c = build_benchmark(BenchmarkFamily::Ghz, 3, 0, None).unwrap();
        let staged = stage_circuit(&c);
        let snap = snapshot([100.0, 110.0, 120.0]);
        let mut s2 = snap.clone();
        s2.gate_error.clear();
        s2.gate_error.insert(GateKey::new(GateKind::H, &[0]), 1e-3);
        s2.gate_error.insert(GateKey::new(GateKind::CNOT, &[0, 1]), 1e-2);
        s2.gate_error.insert(GateKey::new(GateKind::CNOT, &[1, 2]), 1e-2);
        let norm = fit_normalizer(&[(&staged, &s2)], false).unwrap();
        let seq = encode(&staged, &s2, &norm).unwrap();
        for s in 0..seq.num_stages {
            for q in 0..3 {
                assert_eq!(&seq.tuple(s, q)[2..], &[0.5, 0.5, 0.5]);
            }
        }
    }

    #[test]
    fn endpoints_map_to_zero_and_one() {
        let mut c = QuantumCircuit::new(3, "").unwrap();
        c.push(GateKind::Rx, 0.2, &[0]).unwrap();
        let staged = stage_circuit(&c);
        let lo = snapshot([25.0, 25.0, 25.0]);
        let hi = snapshot([200.0, 200.0, 200.0]);
        let norm = fit_normalizer(&[(&staged, &lo), (&staged, &hi)], false).unwrap();
        assert_eq!(encode(&staged, &lo, &norm).unwrap().tuple(0, 1)[2], 0.0);
        assert_eq!(encode(&staged, &hi, &norm).unwrap().tuple(0, 1)[2], 1.0);
        let again = fit_normalizer(&[(&staged, &lo), (&staged, &hi)], false).unwrap();
        assert_eq!(norm, again);
    }

    #[test]
    fn apply_then_invert_is_identity() {
        let c = build_benchmark(BenchmarkFamily::Vqe, 4, 0, None).unwrap();
        let staged = stage_circuit(&c);
        let tr = synth_noise_trace(4, 100, 0, &NoiseProfile::default()).unwrap();
        let norm = fit_normalizer_for(&staged, tr.snapshots(), true).unwrap();
        let raw = encode_raw(&staged, &tr.snapshots()[37], true).unwrap();
        let mut x = raw.clone();
        norm.apply(&mut x).unwrap();
        norm.invert(&mut x).unwrap();
        for (col, (a, b)) in x.data.iter().zip(&raw.data).enumerate() {
            if norm.max[col] > norm.min[col] || !norm.is_noise_column(col) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let g3 = stage_circuit(&build_benchmark(BenchmarkFamily::Ghz, 3, 0, None).unwrap());
        let g4 = stage_circuit(&build_benchmark(BenchmarkFamily::Ghz, 4, 0, None).unwrap());
        let tr = synth_noise_trace(4, 2, 0, &NoiseProfile::default()).unwrap();
        let norm = fit_normalizer_for(&g3, tr.snapshots(), false).unwrap();
        assert!(matches!(encode(&g4, &tr.snapshots()[0], &norm), Err(EncodeError::Shape { .. })));
        assert!(matches!(fit_normalizer(&[], false), Err(EncodeError::EmptyCorpus)));
    }
}
