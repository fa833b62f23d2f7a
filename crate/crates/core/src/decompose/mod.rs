//! Trend/residual decomposition of performance traces and the bound offsets
//! derived from the residual distribution.
//!
//! Per tracked key: IQR outlier removal, a centered moving average of period
//! `dp` as the trend, residual = cleaned - trend, and confidence offsets from
//! the residual mean and sample standard deviation.

mod io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::PerformanceTrace;
use crate::stats;

pub use io::{load_decomposition, offsets_path, save_decomposition, DECOMPOSITION_FORMAT};

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("series too short: {len} point(s), need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("key `{key}`: {len} point(s) left after outlier removal, need at least {min} for dp = {dp}")]
    InsufficientAfterCleaning { key: String, len: usize, min: usize, dp: usize },
    #[error("decomposition period must be at least 2, got {0}")]
    BadPeriod(usize),
    #[error("confidence level must lie strictly between 0 and 1, got {0}")]
    BadConfidence(f64),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("series lengths disagree: {0}")]
    Misaligned(String),
    #[error("decomposition report {path}: {reason}")]
    Parse { path: String, reason: String },
}

/// How residual spread is turned into bound offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMode {
    /// `mu -/+ z * sigma`: covers an individual future observation.
    #[default]
    PredictionInterval,
    /// `mu -/+ z * sigma / sqrt(n)`: covers the residual mean.
    MeanInterval,
}

impl IntervalMode {
    pub fn name(self) -> &'static str {
        match self {
            IntervalMode::PredictionInterval => "prediction_interval",
            IntervalMode::MeanInterval => "mean_interval",
        }
    }
}

/// Result of [`remove_outliers_iqr`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierRemoval {
    /// Surviving values in original order.
    pub cleaned: Vec<f64>,
    /// Original positions of the surviving values.
    pub kept: Vec<usize>,
    /// Original positions of the dropped values.
    pub removed: Vec<usize>,
    /// `(Q1 - 1.5 IQR, Q3 + 1.5 IQR)`; values equal to a fence are kept.
    pub fences: (f64, f64),
}

/// Drops points strictly outside the Tukey fences. Quartiles use linear
/// interpolation at position `(len - 1) q`.
pub fn remove_outliers_iqr(series: &[f64]) -> Result<OutlierRemoval, DecomposeError> {
    if series.len() < 4 {
        return Err(DecomposeError::TooShort { len: series.len(), min: 4 });
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(DecomposeError::NonFinite(i));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = stats::quantile_sorted(&sorted, 0.25);
    let q3 = stats::quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let fences = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let mut out = OutlierRemoval {
        cleaned: Vec::with_capacity(series.len()),
        kept: Vec::with_capacity(series.len()),
        removed: Vec::new(),
        fences,
    };
    for (i, &v) in series.iter().enumerate() {
        if v < fences.0 || v > fences.1 {
            out.removed.push(i);
        } else {
            out.cleaned.push(v);
            out.kept.push(i);
        }
    }
    Ok(out)
}

/// Number of leading (and trailing) points without a full window.
pub fn edge_width(dp: usize) -> usize {
    dp / 2
}

/// Centered moving average of period `dp`. Even periods use the 2 x dp
/// convention (window of dp + 1 with half weights at both ends). Positions
/// without a full window are `None`.
pub fn moving_average(values: &[f64], dp: usize) -> Vec<Option<f64>> {
    let h = edge_width(dp);
    let n = values.len();
    let mut out = vec![None; n];
    if n < 2 * h + 1 {
        return out;
    }
    let dpf = dp as f64;
    for (i, slot) in out.iter_mut().enumerate().take(n - h).skip(h) {
        // Deviations from the center value keep constant windows exact.
        let c = values[i];
        let t = if dp % 2 == 1 {
            c + values[i - h..=i + h].iter().map(|v| v - c).sum::<f64>() / dpf
        } else {
            let inner: f64 = values[i - h + 1..i + h].iter().map(|v| v - c).sum();
            c + (0.5 * (values[i - h] - c) + inner + 0.5 * (values[i + h] - c)) / dpf
        };
        *slot = Some(t);
    }
    out
}

/// Tap weights of [`moving_average`], from the earliest sample to the latest.
pub fn moving_average_weights(dp: usize) -> Vec<f64> {
    let dpf = dp as f64;
    if dp % 2 == 1 {
        vec![1.0 / dpf; dp]
    } else {
        let mut w = vec![1.0 / dpf; dp + 1];
        w[0] = 0.5 / dpf;
        w[dp] = 0.5 / dpf;
        w
    }
}

/// Variance of `x - moving_average(x)` relative to the variance of `x` for
/// independent, identically distributed samples: `1 - 2 w0 + sum(w^2)` with
/// `w0` the centre weight. Residual spread underestimates per-sample noise
/// by the square root of this factor.
pub fn residual_variance_factor(dp: usize) -> f64 {
    let w = moving_average_weights(dp);
    let w0 = w[edge_width(dp)];
    1.0 - 2.0 * w0 + w.iter().map(|v| v * v).sum::<f64>()
}

/// Variance of a moving average relative to the variance of its iid
/// inputs: `sum(w^2)`.
pub fn trend_variance_factor(dp: usize) -> f64 {
    moving_average_weights(dp).iter().map(|v| v * v).sum()
}

/// `cleaned - trend`, nudged by at most a few ulps so that
/// `trend + residual` reproduces `cleaned` exactly when representable.
pub fn additive_residual(cleaned: f64, trend: f64) -> f64 {
    let mut r = cleaned - trend;
    for _ in 0..8 {
        let s = trend + r;
        if s == cleaned {
            break;
        }
        r = if s < cleaned { r.next_up() } else { r.next_down() };
    }
    if trend + r == cleaned {
        r
    } else {
        cleaned - trend
    }
}

/// Two-sided standard-normal critical value for confidence level `cl`.
pub fn z_score(cl: f64) -> f64 {
    stats::inverse_normal_cdf((1.0 + cl) / 2.0)
}

/// Residual summary and offsets `(L, U)` around the residual mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Offsets {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub low: f64,
    pub up: f64,
}

/// Confidence offsets from residuals. A zero spread collapses to `(mu, mu)`.
pub fn bound_offsets(residuals: &[f64], cl: f64, mode: IntervalMode) -> Result<Offsets, DecomposeError> {
    if residuals.len() < 2 {
        return Err(DecomposeError::TooShort {
            len: residuals.len(),
            min: 2,
        });
    }
    if !(cl > 0.0 && cl < 1.0) {
        return Err(DecomposeError::BadConfidence(cl));
    }
    let mean = stats::mean(residuals);
    let std = stats::sample_std(residuals);
    let n = residuals.len();
    let half = match mode {
        IntervalMode::PredictionInterval => z_score(cl) * std,
        IntervalMode::MeanInterval => z_score(cl) * std / (n as f64).sqrt(),
    };
    Ok(Offsets {
        mean,
        std,
        n,
        low: mean - half,
        up: mean + half,
    })
}

/// Decomposition of one tracked key, aligned to the trace timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyDecomposition {
    pub key: String,
    /// Input value, `None` where removed as an outlier.
    pub cleaned: Vec<Option<f64>>,
    pub trend: Vec<Option<f64>>,
    pub residual: Vec<Option<f64>>,
    pub fences: (f64, f64),
    /// Timestamps dropped by outlier removal.
    pub removed: Vec<u64>,
    pub offsets: Offsets,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    pub timestamps: Vec<u64>,
    pub keys: Vec<KeyDecomposition>,
    pub cl: f64,
    pub dp: usize,
    pub interval_mode: IntervalMode,
}

impl DecompositionResult {
    pub fn key_names(&self) -> Vec<String> {
        self.keys.iter().map(|k| k.key.clone()).collect()
    }

    /// Per-key `(L, U)`.
    pub fn offsets(&self) -> Vec<(f64, f64)> {
        self.keys.iter().map(|k| (k.offsets.low, k.offsets.up)).collect()
    }

    /// Positions where every key has a trend, with the trend vector there.
    pub fn labelled_positions(&self) -> Vec<(usize, Vec<f64>)> {
        (0..self.timestamps.len())
            .filter_map(|i| {
                self.keys
                    .iter()
                    .map(|k| k.trend[i])
                    .collect::<Option<Vec<f64>>>()
                    .map(|v| (i, v))
            })
            .collect()
    }

    /// Per-key `(L, U)` with the spread around the residual mean widened by
    /// `1 / sqrt(residual_variance_factor(dp))`, i.e. scaled to the noise of
    /// a single fresh observation.
    pub fn noise_level_offsets(&self) -> Vec<(f64, f64)> {
        self.observation_offsets(true, &vec![0.0; self.keys.len()])
    }

    /// Per-key `(L, U)` around the residual mean for a spread of
    /// `sqrt(std^2 / f + extra_variance[k])`, where `f` is
    /// [`residual_variance_factor`] when `correct_shrinkage` is set and 1
    /// otherwise. The interval mode and confidence level are those of `self`.
    pub fn observation_offsets(&self, correct_shrinkage: bool, extra_variance: &[f64]) -> Vec<(f64, f64)> {
        let f = if correct_shrinkage { residual_variance_factor(self.dp) } else { 1.0 };
        let z = z_score(self.cl);
        self.keys
            .iter()
            .zip(extra_variance)
            .map(|(k, &extra)| {
                let o = &k.offsets;
                let sigma = (o.std * o.std / f + extra.max(0.0)).sqrt();
                let half = match self.interval_mode {
                    IntervalMode::PredictionInterval => z * sigma,
                    IntervalMode::MeanInterval => z * sigma / (o.n as f64).sqrt(),
                };
                (o.mean - half, o.mean + half)
            })
            .collect()
    }

    /// Offsets recomputed at another confidence level from the stored residuals.
    pub fn with_confidence(&self, cl: f64, mode: IntervalMode) -> Result<DecompositionResult, DecomposeError> {
        let mut out = self.clone();
        out.cl = cl;
        out.interval_mode = mode;
        for k in &mut out.keys {
            let r: Vec<f64> = k.residual.iter().flatten().copied().collect();
            k.offsets = bound_offsets(&r, cl, mode)?;
        }
        Ok(out)
    }
}

/// Decomposes each key's series independently.
pub fn decompose(
    timestamps: &[u64],
    keys: &[String],
    series: &[Vec<f64>],
    dp: usize,
    cl: f64,
    mode: IntervalMode,
) -> Result<DecompositionResult, DecomposeError> {
    if dp < 2 {
        return Err(DecomposeError::BadPeriod(dp));
    }
    if !(cl > 0.0 && cl < 1.0) {
        return Err(DecomposeError::BadConfidence(cl));
    }
    if keys.len() != series.len() {
        return Err(DecomposeError::Misaligned(format!("{} keys, {} series", keys.len(), series.len())));
    }
    let len = timestamps.len();
    let mut out = Vec::with_capacity(keys.len());
    for (key, values) in keys.iter().zip(series) {
        if values.len() != len {
            return Err(DecomposeError::Misaligned(format!(
                "key `{key}` has {} values for {len} timestamps",
                values.len()
            )));
        }
        let min = dp + 1;
        if len < min.max(4) {
            return Err(DecomposeError::TooShort { len, min: min.max(4) });
        }
        let cleaned = remove_outliers_iqr(values)?;
        if cleaned.cleaned.len() < min {
            return Err(DecomposeError::InsufficientAfterCleaning {
                key: key.clone(),
                len: cleaned.cleaned.len(),
                min,
                dp,
            });
        }
        let ma = moving_average(&cleaned.cleaned, dp);
        let mut c_al = vec![None; len];
        let mut t_al = vec![None; len];
        let mut r_al = vec![None; len];
        let mut residuals = Vec::with_capacity(ma.len());
        for ((&pos, &c), t) in cleaned.kept.iter().zip(&cleaned.cleaned).zip(&ma) {
            c_al[pos] = Some(c);
            if let Some(t) = *t {
                let r = additive_residual(c, t);
                t_al[pos] = Some(t);
                r_al[pos] = Some(r);
                residuals.push(r);
            }
        }
        if residuals.len() < 2 {
            return Err(DecomposeError::InsufficientAfterCleaning {
                key: key.clone(),
                len: cleaned.cleaned.len(),
                min: dp + 2,
                dp,
            });
        }
        let offsets = bound_offsets(&residuals, cl, mode)?;
        out.push(KeyDecomposition {
            key: key.clone(),
            cleaned: c_al,
            trend: t_al,
            residual: r_al,
            fences: cleaned.fences,
            removed: cleaned.removed.iter().map(|&i| timestamps[i]).collect(),
            offsets,
        });
    }
    Ok(DecompositionResult {
        timestamps: timestamps.to_vec(),
        keys: out,
        cl,
        dp,
        interval_mode: mode,
    })
}

/// [`decompose`] over every tracked key of a performance trace.
pub fn decompose_trace(
    trace: &PerformanceTrace,
    dp: usize,
    cl: f64,
    mode: IntervalMode,
) -> Result<DecompositionResult, DecomposeError> {
    let series: Vec<Vec<f64>> = (0..trace.spec.keys.len()).map(|k| trace.series(k)).collect();
    decompose(&trace.timestamps(), &trace.spec.keys, &series, dp, cl, mode)
}
