//! Recurrent regressor from encoded (circuit, noise) sequences to the trend
//! of the tracked performance values.

mod checkpoint;
mod dataset;
mod fdiff;
mod network;
mod train;

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{stage_circuit, QuantumCircuit, StagedCircuit};
use crate::encode::{encode, EncodeError, EncodedSequence, FeatureNormalizer};
use crate::error::{io_err, Result};
use crate::noise::NoiseSnapshot;
use crate::sim::PerfMode;

pub use checkpoint::{checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_MAGIC};
pub use dataset::{build_dataset, test_count, TrainingDataset, TrainingEntry};
pub use network::Loss;
pub use train::{gradient_check, kink_free_probe, synthetic_probe, train, GradientReport};

pub(crate) use network::Params;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("decomposition timestamp {timestamp} has no matching noise snapshot")]
    Misaligned { timestamp: u64 },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("model/circuit shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub patience: usize,
    pub min_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_size: usize,
    /// Widths of the hidden fc layers; a linear layer sized to the output
    /// keys is appended.
    pub fc_dims: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub loss: Loss,
    pub seed: u64,
    /// Stops when the monitored loss (test if available, else train) has not
    /// improved by `min_delta` for `patience` epochs.
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_size: 64,
            fc_dims: vec![128, 64],
            dropout: 0.2,
            learning_rate: 0.008,
            batch_size: 64,
            max_epochs: 200,
            loss: Loss::Msle,
            seed: 0,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> std::result::Result<(), PredictorError> {
        let bad = |m: &str| Err(PredictorError::InvalidConfig(m.into()));
        if self.hidden_size == 0 || self.fc_dims.contains(&0) {
            return bad("layer sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

/// A trained model with everything needed to encode new inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub(crate) params: Params,
    pub normalizer: FeatureNormalizer,
    pub config: TrainConfig,
    pub output_keys: Vec<String>,
    pub mode: PerfMode,
    pub training_log: Vec<EpochLog>,
}

/// Predicted performance and the time taken to produce it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub values: Vec<f64>,
    pub latency_seconds: f64,
}

impl PredictorModel {
    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    fn check_staged(&self, staged: &StagedCircuit) -> std::result::Result<(), PredictorError> {
        let n = &self.normalizer;
        if staged.num_qubits() != n.num_qubits || staged.num_stages() != n.num_stages {
            return Err(PredictorError::Shape(format!(
                "model expects {} qubit(s) x {} stage(s), circuit has {} x {}",
                n.num_qubits,
                n.num_stages,
                staged.num_qubits(),
                staged.num_stages()
            )));
        }
        Ok(())
    }

    /// Forward pass on an already encoded sequence.
    pub fn predict_encoded(&self, seq: &EncodedSequence) -> Vec<f64> {
        let w = seq.stage_width();
        let xs: Vec<Array2<f64>> = (0..seq.num_stages)
            .map(|t| Array2::from_shape_vec((1, w), seq.stage(t).to_vec()).expect("stage width"))
            .collect();
        self.forward_model_space(xs)
            .row(0)
            .iter()
            .map(|&v| dataset::from_model_space(self.mode, v))
            .collect()
    }

    fn forward_model_space(&self, xs: Vec<Array2<f64>>) -> Array2<f64> {
        let cache = network::lstm_forward(&self.params, xs);
        let hidden = self.params.fc.len() - 1;
        network::head_forward(&self.params, cache.last_hidden(), vec![None; hidden]).out
    }

    /// Encodes and predicts for a staged circuit under one snapshot.
    pub fn predict_staged(&self, staged: &StagedCircuit, snapshot: &NoiseSnapshot) -> std::result::Result<Prediction, PredictorError> {
        let start = Instant::now();
        self.check_staged(staged)?;
        let seq = encode(staged, snapshot, &self.normalizer)?;
        let values = self.predict_encoded(&seq);
        Ok(Prediction {
            values,
            latency_seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Stages, encodes and predicts.
    pub fn predict(&self, circuit: &QuantumCircuit, snapshot: &NoiseSnapshot) -> std::result::Result<Prediction, PredictorError> {
        let start = Instant::now();
        let staged = stage_circuit(circuit);
        let mut p = self.predict_staged(&staged, snapshot)?;
        p.latency_seconds = start.elapsed().as_secs_f64();
        Ok(p)
    }

    /// Batched prediction for dataset entries, in natural value range.
    pub fn predict_entries(&self, dataset: &TrainingDataset, idx: &[usize]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(idx.len());
        for chunk in idx.chunks(256) {
            let y = self.forward_model_space(dataset.batch_inputs(chunk));
            for row in y.rows() {
                out.push(row.iter().map(|&v| dataset::from_model_space(self.mode, v)).collect());
            }
        }
        out
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.training_log.last().map(|l| l.train_loss)
    }
}

/// Writes the per-epoch loss log as CSV `epoch,train_loss,test_loss`.
pub fn save_training_log(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut text = String::from("epoch,train_loss,test_loss\n");
    for l in log {
        let test = l.test_loss.map(|v| v.to_string()).unwrap_or_default();
        text.push_str(&format!("{},{},{}\n", l.epoch, l.train_loss, test));
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}
