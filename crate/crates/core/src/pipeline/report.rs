//! Evaluation report (CSV + JSON), timing file and plots of a run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Evaluation, Stage};
use crate::decompose::{DecompositionResult, IntervalMode};
use crate::error::Result;
use crate::metrics::{LatencyStats, RegressionMetrics};
use crate::plot::{write_chart, Chart, Series, SeriesStyle};
use crate::predictor::PredictorModel;
use crate::sim::{PerfMode, PerformanceTrace};

pub const REPORT_FORMAT: u32 = 1;

pub const REPORT_CSV_HEADER: &str = "circuit,key,cl,interval_mode,timestamp,LB,UB,Value,Measured,Baseline,Baseline_LB,Baseline_UB,Diff1,Diff2,Range,Baseline_Range,BCR,within,total,config_hash,seed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetRow {
    pub cl: f64,
    pub key: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    /// Offsets applied to predictions, after any shrinkage correction.
    pub low: f64,
    pub up: f64,
}

/// Bound compliance over every held-out snapshot and key at one confidence level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceRow {
    pub cl: f64,
    pub total: usize,
    pub within: usize,
    pub bcr: f64,
    pub mean_range: Vec<f64>,
}

/// Comparison against repeated noisy simulation at one held-out snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub timestamp: u64,
    pub key: String,
    pub pred: f64,
    pub measured: f64,
    /// `(cl, low, up)` per evaluated confidence level.
    pub bounds: Vec<(f64, f64, f64)>,
    pub noisysim_low: f64,
    pub noisysim_up: f64,
    pub noisysim_mean: f64,
    pub noisysim_runs: usize,
    pub diff1: f64,
    pub diff2: f64,
}

impl BaselineRow {
    pub fn noisysim_range(&self) -> f64 {
        self.noisysim_up - self.noisysim_low
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    pub format: u32,
    pub config_hash: String,
    pub seed: u64,
    pub circuit: String,
    pub mode: PerfMode,
    pub keys: Vec<String>,
    pub interval_mode: IntervalMode,
    pub dp: usize,
    pub shots: u32,
    pub snapshots: usize,
    pub dataset_entries: usize,
    pub train_entries: usize,
    pub test_entries: usize,
    pub outliers_removed: usize,
    pub epochs: usize,
    pub final_train_loss: Option<f64>,
    pub final_test_loss: Option<f64>,
    pub offsets: Vec<OffsetRow>,
    /// Estimated predictor error standard deviation per key, if it widened the offsets.
    pub model_error_std: Option<Vec<f64>>,
    pub compliance: Vec<ComplianceRow>,
    /// Held-out predictions against the trend labels.
    pub regression: RegressionMetrics,
    /// Same, for the linear-regression baseline (absent if it could not be fitted).
    pub linreg: Option<RegressionMetrics>,
    pub baseline: Vec<BaselineRow>,
    pub pca_explained: Vec<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvaluationReport {
    pub fn compliance_at(&self, cl: f64) -> Option<&ComplianceRow> {
        self.compliance.iter().find(|c| c.cl == cl)
    }

    /// One row per confidence level, key and compared snapshot.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for (ci, c) in self.compliance.iter().enumerate() {
            for (k, key) in self.keys.iter().enumerate() {
                let rows: Vec<&BaselineRow> = self.baseline.iter().filter(|b| &b.key == key).collect();
                let mut line = |ts: Option<u64>, b: Option<&BaselineRow>| {
                    let (lb, ub) = match b {
                        Some(b) => (Some(b.bounds[ci].1), Some(b.bounds[ci].2)),
                        None => (None, None),
                    };
                    let range = match (lb, ub) {
                        (Some(l), Some(u)) => u - l,
                        _ => c.mean_range[k],
                    };
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                        self.circuit,
                        key,
                        c.cl,
                        self.interval_mode.name(),
                        ts.map(|t| t.to_string()).unwrap_or_default(),
                        opt(lb),
                        opt(ub),
                        opt(b.map(|b| b.pred)),
                        opt(b.map(|b| b.measured)),
                        opt(b.map(|b| b.noisysim_mean)),
                        opt(b.map(|b| b.noisysim_low)),
                        opt(b.map(|b| b.noisysim_up)),
                        opt(b.map(|b| b.diff1)),
                        opt(b.map(|b| b.diff2)),
                        range,
                        opt(b.map(|b| b.noisysim_range())),
                        c.bcr,
                        c.within,
                        c.total,
                        self.config_hash,
                        self.seed
                    );
                };
                if rows.is_empty() {
                    line(None, None);
                }
                for b in rows {
                    line(Some(b.timestamp), Some(b));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Wall-clock measurements of a run; kept apart from the report so that the
/// report is reproducible byte for byte.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub stages: Vec<(Stage, f64)>,
    pub prediction_latency: Option<LatencyStats>,
    /// Wall clock of each repeated-simulation baseline.
    pub noisysim_seconds: Vec<f64>,
    /// First baseline wall clock over the median prediction latency.
    pub speedup: Option<f64>,
}

impl TimingReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("timing serializes") + "\n"
    }
}

fn file_key(key: &str) -> String {
    key.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

const MAX_PLOTTED_KEYS: usize = 4;

pub(super) fn write_plots(
    dir: &Path,
    trace: &PerformanceTrace,
    decomposition: &DecompositionResult,
    model: &PredictorModel,
    eval: &Evaluation,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let value_label = trace.mode().name();
    for (k, kd) in decomposition.keys.iter().enumerate().take(MAX_PLOTTED_KEYS) {
        let ts = &decomposition.timestamps;
        let raw: Vec<(f64, f64)> = ts.iter().zip(trace.series(k)).map(|(&t, v)| (t as f64, v)).collect();
        let trend: Vec<(f64, f64)> = ts
            .iter()
            .zip(&kd.trend)
            .filter_map(|(&t, v)| v.map(|v| (t as f64, v)))
            .collect();
        let chart = Chart::new(format!("{} trace, key {}", trace.circuit_label, kd.key), "timestamp", value_label)
            .with(Series::new("measured", raw, SeriesStyle::Markers))
            .with(Series::new("trend", trend, SeriesStyle::Line));
        written.extend(write_chart(&chart, &dir.join(format!("trace_{}", file_key(&kd.key))))?);

        let pick = |f: &dyn Fn(usize) -> f64| -> Vec<(f64, f64)> {
            eval.timestamps.iter().enumerate().map(|(i, &t)| (t as f64, f(i))).collect()
        };
        let cl = eval.bounds.first().map(|b| b.cl).unwrap_or(0.0);
        let chart = Chart::new(
            format!("{} held-out bounds at CL {}, key {}", trace.circuit_label, cl, kd.key),
            "timestamp",
            value_label,
        )
        .with(Series::new("measured", pick(&|i| eval.measured[i][k]), SeriesStyle::Markers))
        .with(Series::new("predicted", pick(&|i| eval.bounds[i].pred[k]), SeriesStyle::Line))
        .with(Series::new("lower bound", pick(&|i| eval.bounds[i].low[k]), SeriesStyle::Dashed))
        .with(Series::new("upper bound", pick(&|i| eval.bounds[i].up[k]), SeriesStyle::Dashed));
        written.extend(write_chart(&chart, &dir.join(format!("bounds_{}", file_key(&kd.key))))?);
    }

    let log = &model.training_log;
    let mut chart = Chart::new("training loss", "epoch", "loss").with(Series::new(
        "train",
        log.iter().map(|l| (l.epoch as f64, l.train_loss)).collect(),
        SeriesStyle::Line,
    ));
    let test: Vec<(f64, f64)> = log.iter().filter_map(|l| l.test_loss.map(|v| (l.epoch as f64, v))).collect();
    if !test.is_empty() {
        chart = chart.with(Series::new("test", test, SeriesStyle::Line));
    }
    written.extend(write_chart(&chart, &dir.join("training_loss"))?);

    if !eval.pca.is_empty() {
        let split = |held: bool| -> Vec<(f64, f64)> {
            eval.pca
                .iter()
                .filter(|(h, _)| *h == held)
                .map(|(_, c)| (c[0], c.get(1).copied().unwrap_or(0.0)))
                .collect()
        };
        let chart = Chart::new("noise snapshots, first two principal components", "PC1", "PC2")
            .with(Series::new("training", split(false), SeriesStyle::Markers))
            .with(Series::new("held-out", split(true), SeriesStyle::Markers));
        written.extend(write_chart(&chart, &dir.join("noise_pca"))?);
    }
    Ok(written)
}
