//! Checkpoint files: a magic line followed by one JSON document holding the
//! weights, normalizer, configuration and output keys. Floats are written in
//! shortest round-trip form, so a reload predicts bit-identically.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::Params;
use super::{EpochLog, PredictorError, PredictorModel, TrainConfig};
use crate::encode::FeatureNormalizer;
use crate::error::{io_err, Result};
use crate::sim::PerfMode;

pub const CHECKPOINT_MAGIC: &str = "PERFBOUND-CHECKPOINT";
pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Body {
    format: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    mode: PerfMode,
    output_keys: Vec<String>,
    config: TrainConfig,
    normalizer: FeatureNormalizer,
    params: Params,
    training_log: Vec<EpochLog>,
}

pub fn checkpoint_to_string(model: &PredictorModel, config_hash: Option<&str>) -> String {
    let body = Body {
        format: CHECKPOINT_FORMAT,
        config_hash: config_hash.map(str::to_string),
        mode: model.mode,
        output_keys: model.output_keys.clone(),
        config: model.config.clone(),
        normalizer: model.normalizer.clone(),
        params: model.params.clone(),
        training_log: model.training_log.clone(),
    };
    let json = serde_json::to_string(&body).expect("checkpoint serializes");
    format!("{CHECKPOINT_MAGIC}\n{json}\n")
}

fn check_shapes(b: &Body) -> std::result::Result<(), String> {
    let p = &b.params;
    let n = &b.normalizer;
    let input = n.num_qubits * n.tuple_width();
    let h = p.wh.nrows();
    if p.wx.dim() != (input, 4 * h) {
        return Err(format!("input weights {:?}, expected ({input}, {})", p.wx.dim(), 4 * h));
    }
    if p.wh.dim() != (h, 4 * h) || p.b.len() != 4 * h {
        return Err("recurrent weight shapes are inconsistent".into());
    }
    if p.fc.is_empty() {
        return Err("missing output layer".into());
    }
    let mut fan_in = h;
    for (i, d) in p.fc.iter().enumerate() {
        if d.w.nrows() != fan_in || d.w.ncols() != d.b.len() {
            return Err(format!("fc layer {i} has shape {:?} after width {fan_in}", d.w.dim()));
        }
        fan_in = d.b.len();
    }
    if fan_in != b.output_keys.len() {
        return Err(format!("{fan_in} outputs for {} keys", b.output_keys.len()));
    }
    let cols = n.num_stages * input;
    if n.min.len() != cols || n.max.len() != cols {
        return Err("normalizer column count does not match its shape".into());
    }
    if !p.all_finite() {
        return Err("non-finite weights".into());
    }
    Ok(())
}

pub fn checkpoint_from_str(text: &str, origin: &str) -> std::result::Result<PredictorModel, PredictorError> {
    let bad = |reason: String| PredictorError::Checkpoint {
        path: origin.to_string(),
        reason,
    };
    let (magic, json) = text.split_once('\n').ok_or_else(|| bad("missing header line".into()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic line)".into()));
    }
    let version: serde_json::Value = serde_json::from_str(json).map_err(|e| bad(e.to_string()))?;
    match version.get("format").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(CHECKPOINT_FORMAT) => {}
        other => return Err(bad(format!("unsupported format {other:?} (expected {CHECKPOINT_FORMAT})"))),
    }
    let body: Body = serde_json::from_str(json).map_err(|e| bad(e.to_string()))?;
    check_shapes(&body).map_err(bad)?;
    Ok(PredictorModel {
        params: body.params,
        normalizer: body.normalizer,
        config: body.config,
        output_keys: body.output_keys,
        mode: body.mode,
        training_log: body.training_log,
    })
}

pub fn save_checkpoint(model: &PredictorModel, path: &Path, config_hash: Option<&str>) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(model, config_hash)).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<PredictorModel> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(checkpoint_from_str(&text, &path.display().to_string())?)
}
