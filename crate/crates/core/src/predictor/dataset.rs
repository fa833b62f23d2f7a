//! Training pairs: encoded (circuit, snapshot) sequences labelled with the
//! trend of the performance trace at the same timestamp.

use ndarray::Array2;
use rand::seq::SliceRandom;

use super::PredictorError;
use crate::circuit::StagedCircuit;
use crate::decompose::DecompositionResult;
use crate::encode::{encode, EncodedSequence, FeatureNormalizer};
use crate::noise::NoiseTrace;
use crate::rng;
use crate::sim::PerfMode;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingEntry {
    pub timestamp: u64,
    /// Position of the snapshot in the noise trace.
    pub position: usize,
    pub features: EncodedSequence,
    /// Trend values in the mode's natural range.
    pub label: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDataset {
    pub entries: Vec<TrainingEntry>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub keys: Vec<String>,
    pub mode: PerfMode,
}

/// Number of held-out entries for a test fraction.
pub fn test_count(len: usize, test_fraction: f64) -> usize {
    ((len as f64 * test_fraction).round() as usize).min(len)
}

impl TrainingDataset {
    /// Assembles a dataset from prepared entries and a seeded random split.
    pub fn from_entries(
        entries: Vec<TrainingEntry>,
        keys: Vec<String>,
        mode: PerfMode,
        test_fraction: f64,
        seed: u64,
    ) -> Result<Self, PredictorError> {
        if entries.is_empty() {
            return Err(PredictorError::EmptyDataset);
        }
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(PredictorError::InvalidConfig(format!(
                "test_fraction must lie in [0, 1), got {test_fraction}"
            )));
        }
        if let Some(e) = entries.iter().find(|e| e.label.len() != keys.len() || e.label.iter().any(|v| !v.is_finite())) {
            return Err(PredictorError::InvalidConfig(format!(
                "label at timestamp {} is not a finite {}-vector",
                e.timestamp,
                keys.len()
            )));
        }
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.shuffle(&mut rng::stream(rng::derive_seed(seed, 0x5B11)));
        let n_test = test_count(entries.len(), test_fraction);
        let mut test = order[..n_test].to_vec();
        let mut train = order[n_test..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        Ok(TrainingDataset {
            entries,
            train,
            test,
            keys,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_stages(&self) -> usize {
        self.entries[0].features.num_stages
    }

    pub fn input_width(&self) -> usize {
        self.entries[0].features.stage_width()
    }

    /// Per-step input matrices (`batch x width`) for the given entries.
    pub(crate) fn batch_inputs(&self, idx: &[usize]) -> Vec<Array2<f64>> {
        let w = self.input_width();
        (0..self.num_stages())
            .map(|t| {
                let mut x = Array2::zeros((idx.len(), w));
                for (r, &i) in idx.iter().enumerate() {
                    x.row_mut(r)
                        .as_slice_mut()
                        .expect("row-major")
                        .copy_from_slice(self.entries[i].features.stage(t));
                }
                x
            })
            .collect()
    }

    /// Label matrix in model space (observables mapped to `[0, 1]`).
    pub(crate) fn batch_targets(&self, idx: &[usize]) -> Array2<f64> {
        let k = self.keys.len();
        let mut y = Array2::zeros((idx.len(), k));
        for (r, &i) in idx.iter().enumerate() {
            for (j, &v) in self.entries[i].label.iter().enumerate() {
                y[[r, j]] = to_model_space(self.mode, v);
            }
        }
        y
    }
}

pub(crate) fn to_model_space(mode: PerfMode, v: f64) -> f64 {
    match mode {
        PerfMode::Probability => v,
        PerfMode::Observable => (v + 1.0) / 2.0,
    }
}

pub(crate) fn from_model_space(mode: PerfMode, v: f64) -> f64 {
    match mode {
        PerfMode::Probability => v.clamp(0.0, 1.0),
        PerfMode::Observable => (2.0 * v - 1.0).clamp(-1.0, 1.0),
    }
}

/// One entry per timestamp at which every key has a trend value.
pub fn build_dataset(
    staged: &StagedCircuit,
    noise: &NoiseTrace,
    decomposition: &DecompositionResult,
    normalizer: &FeatureNormalizer,
    mode: PerfMode,
    test_fraction: f64,
    seed: u64,
) -> Result<TrainingDataset, PredictorError> {
    let labelled = decomposition.labelled_positions();
    if labelled.is_empty() {
        return Err(PredictorError::EmptyDataset);
    }
    let mut entries = Vec::with_capacity(labelled.len());
    for (i, label) in labelled {
        let timestamp = decomposition.timestamps[i];
        let position = noise
            .position_of(timestamp)
            .ok_or(PredictorError::Misaligned { timestamp })?;
        let snap = &noise.snapshots()[position];
        entries.push(TrainingEntry {
            timestamp,
            position,
            features: encode(staged, snap, normalizer)?,
            label,
        });
    }
    TrainingDataset::from_entries(entries, decomposition.key_names(), mode, test_fraction, seed)
}
