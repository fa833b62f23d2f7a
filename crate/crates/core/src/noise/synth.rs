//! Synthetic noise traces from bounded random walks.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GateKey, NoiseError, NoiseSnapshot, NoiseTrace};
use crate::circuit::GateKind;
use crate::rng;

/// A reflecting random walk: starts at `mean`, Gaussian increments with
/// standard deviation `step`, confined to `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkParam {
    pub mean: f64,
    pub step: f64,
    pub min: f64,
    pub max: f64,
}

impl WalkParam {
    pub const fn new(mean: f64, step: f64, min: f64, max: f64) -> Self {
        WalkParam { mean, step, min, max }
    }

    fn check(&self, name: &str) -> Result<(), NoiseError> {
        let ok = [self.mean, self.step, self.min, self.max].iter().all(|v| v.is_finite())
            && self.min < self.max
            && self.step >= 0.0
            && (self.min..=self.max).contains(&self.mean);
        if ok {
            Ok(())
        } else {
            Err(NoiseError::InvalidProfile(format!("{name}: {self:?}")))
        }
    }

    fn advance<R: Rng>(&self, x: f64, r: &mut R) -> f64 {
        let z: f64 = r.sample(StandardNormal);
        reflect(x + self.step * z, self.min, self.max)
    }
}

/// Folds `x` back into `[lo, hi]` by mirror reflection at both walls.
pub(crate) fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    if (lo..=hi).contains(&x) {
        return x;
    }
    let width = hi - lo;
    let period = 2.0 * width;
    let mut y = (x - lo).rem_euclid(period);
    if y > width {
        y = period - y;
    }
    (lo + y).clamp(lo, hi)
}

/// Generator configuration for [`synth_noise_trace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseProfile {
    /// Relaxation time, microseconds.
    pub t1: WalkParam,
    /// T2 as a fraction of T1; the product is clamped to `2 * T1`.
    pub t2_fraction: WalkParam,
    pub single_qubit_error: WalkParam,
    pub two_qubit_error: WalkParam,
    pub readout_error: WalkParam,
    /// Per-snapshot probability of a "broken qubit" sample.
    pub outlier_rate: f64,
    /// Error probability assigned to every gate and the readout of a broken qubit.
    pub outlier_error: f64,
    pub samples_per_day: u32,
    /// Gate-error keys to carry. `None` means every single-qubit kind on every
    /// qubit plus CNOT/CZ on nearest-neighbour pairs in both orientations.
    pub gate_keys: Option<Vec<GateKey>>,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        NoiseProfile {
            t1: WalkParam::new(100.0, 2.0, 25.0, 200.0),
            t2_fraction: WalkParam::new(0.9, 0.01, 0.3, 1.8),
            single_qubit_error: WalkParam::new(1e-3, 1e-4, 1e-4, 1e-2),
            two_qubit_error: WalkParam::new(1.5e-2, 1e-3, 5e-3, 5e-2),
            readout_error: WalkParam::new(1.5e-2, 1e-3, 1e-3, 5e-2),
            outlier_rate: 0.0,
            outlier_error: 0.3,
            samples_per_day: 4,
            gate_keys: None,
        }
    }
}

impl NoiseProfile {
    pub fn validate(&self) -> Result<(), NoiseError> {
        self.t1.check("t1")?;
        self.t2_fraction.check("t2_fraction")?;
        self.single_qubit_error.check("single_qubit_error")?;
        self.two_qubit_error.check("two_qubit_error")?;
        self.readout_error.check("readout_error")?;
        for (name, w) in [
            ("single_qubit_error", &self.single_qubit_error),
            ("two_qubit_error", &self.two_qubit_error),
            ("readout_error", &self.readout_error),
        ] {
            if w.min < 0.0 || w.max > 1.0 {
                return Err(NoiseError::InvalidProfile(format!("{name} range must lie in [0, 1]")));
            }
        }
        if self.t1.min <= 0.0 || self.t2_fraction.min <= 0.0 {
            return Err(NoiseError::InvalidProfile("t1 and t2_fraction must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) || !(0.0..=1.0).contains(&self.outlier_error) {
            return Err(NoiseError::InvalidProfile("outlier rate/error must lie in [0, 1]".into()));
        }
        if self.samples_per_day == 0 {
            return Err(NoiseError::InvalidProfile("samples_per_day must be positive".into()));
        }
        Ok(())
    }

    fn keys(&self, num_qubits: usize) -> Result<Vec<GateKey>, NoiseError> {
        if let Some(keys) = &self.gate_keys {
            if let Some(k) = keys.iter().find(|k| k.operands.iter().any(|&q| q >= num_qubits)) {
                return Err(NoiseError::InvalidProfile(format!("key {k} beyond {num_qubits} qubit(s)")));
            }
            let mut keys = keys.clone();
            keys.sort();
            keys.dedup();
            return Ok(keys);
        }
        let mut keys = Vec::new();
        for q in 0..num_qubits {
            for kind in GateKind::ALL.iter().filter(|k| k.arity() == 1 && **k != GateKind::I) {
                keys.push(GateKey::new(*kind, &[q]));
            }
        }
        for q in 0..num_qubits.saturating_sub(1) {
            for kind in [GateKind::CNOT, GateKind::CZ] {
                keys.push(GateKey::new(kind, &[q, q + 1]));
                keys.push(GateKey::new(kind, &[q + 1, q]));
            }
        }
        keys.sort();
        Ok(keys)
    }
}

/// Generates `length` snapshots whose parameters follow independent bounded
/// random walks. Fully determined by `(num_qubits, length, seed, profile)`.
pub fn synth_noise_trace(
    num_qubits: usize,
    length: usize,
    seed: u64,
    profile: &NoiseProfile,
) -> Result<NoiseTrace, NoiseError> {
    if length == 0 {
        return Err(NoiseError::Empty);
    }
    if num_qubits == 0 {
        return Err(NoiseError::InvalidProfile("num_qubits must be positive".into()));
    }
    profile.validate()?;
    let keys = profile.keys(num_qubits)?;
    let mut r = rng::stream(rng::derive_seed(seed, 0x4E4F));

    let mut t1 = vec![profile.t1.mean; num_qubits];
    let mut frac = vec![profile.t2_fraction.mean; num_qubits];
    let mut readout = vec![profile.readout_error.mean; num_qubits];
    let walk_for = |k: &GateKey| {
        if k.operands.len() == 2 {
            profile.two_qubit_error
        } else {
            profile.single_qubit_error
        }
    };
    let mut errors: Vec<f64> = keys.iter().map(|k| walk_for(k).mean).collect();

    let mut snapshots = Vec::with_capacity(length);
    for t in 0..length {
        if t > 0 {
            for q in 0..num_qubits {
                t1[q] = profile.t1.advance(t1[q], &mut r);
                frac[q] = profile.t2_fraction.advance(frac[q], &mut r);
            }
            for (e, k) in errors.iter_mut().zip(&keys) {
                *e = walk_for(k).advance(*e, &mut r);
            }
            for ro in readout.iter_mut() {
                *ro = profile.readout_error.advance(*ro, &mut r);
            }
        }
        let mut gate_error: BTreeMap<GateKey, f64> = keys.iter().cloned().zip(errors.iter().copied()).collect();
        let mut readout_error = readout.clone();
        if profile.outlier_rate > 0.0 && r.random_bool(profile.outlier_rate) {
            let broken = r.random_range(0..num_qubits);
            for (k, e) in gate_error.iter_mut() {
                if k.involves(broken) {
                    *e = profile.outlier_error;
                }
            }
            readout_error[broken] = profile.outlier_error;
        }
        let t2 = t1.iter().zip(&frac).map(|(&a, &f)| (f * a).min(2.0 * a)).collect();
        snapshots.push(NoiseSnapshot {
            timestamp: t as u64,
            wall_clock: None,
            t1: t1.clone(),
            t2,
            gate_error,
            readout_error,
        });
    }
    NoiseTrace::new(num_qubits, profile.samples_per_day, snapshots)
}
