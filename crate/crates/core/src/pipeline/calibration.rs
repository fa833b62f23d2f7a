//! Error variance of a trained predictor, used to widen bound offsets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::decompose::{residual_variance_factor, trend_variance_factor, DecompositionResult};
use crate::error::{io_err, Result};
use crate::metrics::MetricsError;
use crate::predictor::{PredictorModel, TrainingDataset};

pub const MODEL_ERROR_FORMAT: u32 = 1;

/// Per-key estimate of `E[(prediction - expected value)^2]`.
///
/// The trend labels are themselves moving averages of noisy samples, so the
/// squared error against them overstates the error against the expected
/// value by the label's own sampling variance, which is subtracted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelErrorEstimate {
    pub format: u32,
    pub config_hash: String,
    pub seed: u64,
    pub keys: Vec<String>,
    /// Training entries the estimate is computed over.
    pub entries: usize,
    /// Mean squared difference between predictions and trend labels.
    pub label_mse: Vec<f64>,
    /// Sampling variance of a trend label.
    pub label_variance: Vec<f64>,
    /// `max(0, label_mse - label_variance)`.
    pub variance: Vec<f64>,
}

impl ModelErrorEstimate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("estimate serializes") + "\n"
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_json(&text).map_err(|e| crate::error::Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Estimates the predictor's error variance from its fit on the training entries.
pub fn estimate_model_error(
    cfg: &ExperimentConfig,
    decomposition: &DecompositionResult,
    dataset: &TrainingDataset,
    model: &PredictorModel,
) -> Result<ModelErrorEstimate> {
    if dataset.train.is_empty() {
        return Err(MetricsError::Empty("training entries").into());
    }
    let k = decomposition.keys.len();
    let preds = model.predict_entries(dataset, &dataset.train);
    let mut mse = vec![0.0; k];
    for (p, &i) in preds.iter().zip(&dataset.train) {
        for (q, m) in mse.iter_mut().enumerate() {
            *m += (p[q] - dataset.entries[i].label[q]).powi(2);
        }
    }
    let n = dataset.train.len() as f64;
    mse.iter_mut().for_each(|m| *m /= n);
    let shrink = residual_variance_factor(decomposition.dp);
    let smooth = trend_variance_factor(decomposition.dp);
    let label_variance: Vec<f64> = decomposition
        .keys
        .iter()
        .map(|kd| kd.offsets.std * kd.offsets.std / shrink * smooth)
        .collect();
    let variance = mse.iter().zip(&label_variance).map(|(m, l)| (m - l).max(0.0)).collect();
    Ok(ModelErrorEstimate {
        format: MODEL_ERROR_FORMAT,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        keys: decomposition.keys.iter().map(|kd| kd.key.clone()).collect(),
        entries: dataset.train.len(),
        label_mse: mse,
        label_variance,
        variance,
    })
}
