//! Decomposition report: CSV rows `timestamp,key,cleaned,trend,residual`
//! (empty fields where undefined) plus an offsets JSON sidecar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DecomposeError, DecompositionResult, IntervalMode, KeyDecomposition, Offsets};
use crate::error::{io_err, Result};

pub const DECOMPOSITION_FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
struct KeyOffsets {
    key: String,
    mu: f64,
    sigma: f64,
    n: usize,
    #[serde(rename = "L")]
    low: f64,
    #[serde(rename = "U")]
    up: f64,
    fences: (f64, f64),
    removed: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OffsetsFile {
    format: u32,
    cl: f64,
    dp: usize,
    interval_mode: IntervalMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    keys: Vec<KeyOffsets>,
}

/// Sidecar path for a report CSV: `decomp.csv` -> `decomp.offsets.json`.
pub fn offsets_path(csv: &Path) -> PathBuf {
    csv.with_extension("offsets.json")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the report and its sidecar. `provenance` is `(config hash, seed)`.
pub fn save_decomposition(d: &DecompositionResult, path: &Path, provenance: Option<(&str, u64)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["timestamp", "key", "cleaned", "trend", "residual"])
        .map_err(|e| csv_io(path, e))?;
    for (i, ts) in d.timestamps.iter().enumerate() {
        for k in &d.keys {
            w.write_record([ts.to_string(), k.key.clone(), opt(k.cleaned[i]), opt(k.trend[i]), opt(k.residual[i])])
                .map_err(|e| csv_io(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))?;
    let file = OffsetsFile {
        format: DECOMPOSITION_FORMAT,
        cl: d.cl,
        dp: d.dp,
        interval_mode: d.interval_mode,
        config_hash: provenance.map(|p| p.0.to_string()),
        seed: provenance.map(|p| p.1),
        keys: d
            .keys
            .iter()
            .map(|k| KeyOffsets {
                key: k.key.clone(),
                mu: k.offsets.mean,
                sigma: k.offsets.std,
                n: k.offsets.n,
                low: k.offsets.low,
                up: k.offsets.up,
                fences: k.fences,
                removed: k.removed.clone(),
            })
            .collect(),
    };
    let op = offsets_path(path);
    std::fs::write(&op, serde_json::to_string_pretty(&file).expect("offsets serialize")).map_err(|e| io_err(&op, e))
}

fn csv_io(path: &Path, e: csv::Error) -> crate::Error {
    io_err(path, std::io::Error::other(e.to_string()))
}

pub fn load_decomposition(path: &Path) -> Result<DecompositionResult> {
    let origin = path.display().to_string();
    let parse = |reason: String| DecomposeError::Parse {
        path: origin.clone(),
        reason,
    };
    let op = offsets_path(path);
    let text = std::fs::read_to_string(&op).map_err(|e| io_err(&op, e))?;
    let file: OffsetsFile = serde_json::from_str(&text).map_err(|e| parse(format!("offsets: {e}")))?;
    if file.format != DECOMPOSITION_FORMAT {
        return Err(parse(format!("unsupported format {}", file.format)).into());
    }
    let nk = file.keys.len();
    if nk == 0 {
        return Err(parse("no keys".into()).into());
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut timestamps = Vec::new();
    let mut cols: Vec<[Vec<Option<f64>>; 3]> = (0..nk).map(|_| Default::default()).collect();
    for (line, rec) in r.records().enumerate() {
        let row = line + 2;
        let rec = rec.map_err(|e| parse(format!("row {row}: {e}")))?;
        let ki = line % nk;
        let ts: u64 = rec
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|_| parse(format!("row {row}: bad timestamp")))?;
        if rec.get(1) != Some(file.keys[ki].key.as_str()) {
            return Err(parse(format!("row {row}: expected key `{}`", file.keys[ki].key)).into());
        }
        if ki == 0 {
            timestamps.push(ts);
        } else if timestamps.last() != Some(&ts) {
            return Err(parse(format!("row {row}: timestamp {ts} breaks the key grouping")).into());
        }
        for (c, col) in cols[ki].iter_mut().enumerate() {
            let f = rec.get(c + 2).unwrap_or("");
            let v = if f.is_empty() {
                None
            } else {
                Some(f.parse::<f64>().map_err(|_| parse(format!("row {row}: bad number `{f}`")))?)
            };
            col.push(v);
        }
    }
    if cols.iter().any(|c| c[0].len() != timestamps.len()) {
        return Err(parse("incomplete final timestamp group".into()).into());
    }
    let keys = file
        .keys
        .into_iter()
        .zip(cols)
        .map(|(k, [cleaned, trend, residual])| KeyDecomposition {
            key: k.key,
            cleaned,
            trend,
            residual,
            fences: k.fences,
            removed: k.removed,
            offsets: Offsets {
                mean: k.mu,
                std: k.sigma,
                n: k.n,
                low: k.low,
                up: k.up,
            },
        })
        .collect();
    Ok(DecompositionResult {
        timestamps,
        keys,
        cl: file.cl,
        dp: file.dp,
        interval_mode: file.interval_mode,
    })
}
