//! Bound assembly and evaluation metrics.

mod baseline;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::IntervalMode;
use crate::sim::PerfMode;
use crate::stats;

pub use baseline::{fit_linear, linreg_baseline, project_noise_pca, LinearModel, PcaProjection, RIDGE_LAMBDA};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{what}: expected {expected} value(s), got {got}")]
    Misaligned {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("lower bound {lb} exceeds upper bound {ub}")]
    InvertedBounds { lb: f64, ub: f64 },
    #[error("terms mix confidence levels {0} and {1}")]
    MixedConfidence(f64, f64),
    #[error("terms mix interval modes")]
    MixedIntervalMode,
    #[error("need at least {need} samples, got {have}")]
    TooFewSamples { have: usize, need: usize },
    #[error("normal equations are singular even with ridge regularization")]
    Singular,
    #[error("{0}: non-finite input")]
    NonFinite(&'static str),
}

type Result<T> = std::result::Result<T, MetricsError>;

/// Point prediction with lower/upper performance bounds per key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundPrediction {
    pub keys: Vec<String>,
    pub pred: Vec<f64>,
    pub low: Vec<f64>,
    pub up: Vec<f64>,
    pub cl: f64,
    pub interval_mode: IntervalMode,
    pub latency_seconds: f64,
}

impl BoundPrediction {
    /// A value known exactly, e.g. the identity term of an observable sum.
    pub fn exact(key: impl Into<String>, value: f64, cl: f64, interval_mode: IntervalMode) -> Self {
        BoundPrediction {
            keys: vec![key.into()],
            pred: vec![value],
            low: vec![value],
            up: vec![value],
            cl,
            interval_mode,
            latency_seconds: 0.0,
        }
    }

    /// `up - low` per key.
    pub fn range(&self) -> Vec<f64> {
        self.up.iter().zip(&self.low).map(|(u, l)| u - l).collect()
    }

    pub fn contains(&self, k: usize, value: f64) -> bool {
        self.low[k] <= value && value <= self.up[k]
    }
}

/// `low = pred + L`, `up = pred + U`, both clamped to the mode's value range.
pub fn assemble_bounds(
    keys: &[String],
    pred: &[f64],
    offsets: &[(f64, f64)],
    cl: f64,
    interval_mode: IntervalMode,
    mode: PerfMode,
    latency_seconds: f64,
) -> Result<BoundPrediction> {
    if pred.len() != keys.len() {
        return Err(MetricsError::Misaligned {
            what: "predictions",
            expected: keys.len(),
            got: pred.len(),
        });
    }
    if offsets.len() != keys.len() {
        return Err(MetricsError::Misaligned {
            what: "offsets",
            expected: keys.len(),
            got: offsets.len(),
        });
    }
    if let Some(&(l, u)) = offsets.iter().find(|(l, u)| l > u) {
        return Err(MetricsError::InvertedBounds { lb: l, ub: u });
    }
    if pred.iter().chain(offsets.iter().flat_map(|(l, u)| [l, u])).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite("assemble_bounds"));
    }
    let (lo, hi) = mode.range();
    Ok(BoundPrediction {
        keys: keys.to_vec(),
        pred: pred.to_vec(),
        low: pred.iter().zip(offsets).map(|(p, (l, _))| (p + l).clamp(lo, hi)).collect(),
        up: pred.iter().zip(offsets).map(|(p, (_, u))| (p + u).clamp(lo, hi)).collect(),
        cl,
        interval_mode,
        latency_seconds,
    })
}

/// Bound-compliance rate in percent; endpoints count as inside.
pub fn bcr(samples: &[f64], bounds: &[(f64, f64)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(MetricsError::Empty("bcr"));
    }
    if samples.len() != bounds.len() {
        return Err(MetricsError::Misaligned {
            what: "bounds",
            expected: samples.len(),
            got: bounds.len(),
        });
    }
    let inside = samples
        .iter()
        .zip(bounds)
        .filter(|(v, (l, u))| *l <= **v && **v <= *u)
        .count();
    Ok(inside as f64 / samples.len() as f64 * 100.0)
}

/// `(diff1, diff2)`: distance of `value` outside `[lb, ub]` and its distance
/// from `baseline`.
pub fn diff_metrics(value: f64, lb: f64, ub: f64, baseline: f64) -> Result<(f64, f64)> {
    if lb > ub {
        return Err(MetricsError::InvertedBounds { lb, ub });
    }
    let diff1 = if (lb..=ub).contains(&value) {
        0.0
    } else {
        (value - lb).abs().min((value - ub).abs())
    };
    Ok((diff1, (value - baseline).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Mean absolute percentage error in percent, over entries with
    /// `|truth| >= 1e-9`.
    pub mape: f64,
    pub mape_skipped: usize,
    pub r2: f64,
}

const MAPE_GUARD: f64 = 1e-9;

pub fn regression_metrics(pred: &[f64], truth: &[f64]) -> Result<RegressionMetrics> {
    if truth.is_empty() {
        return Err(MetricsError::Empty("regression_metrics"));
    }
    if pred.len() != truth.len() {
        return Err(MetricsError::Misaligned {
            what: "predictions",
            expected: truth.len(),
            got: pred.len(),
        });
    }
    let n = truth.len() as f64;
    let mae = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    let rmse = (ss_res / n).sqrt();
    let mut skipped = 0;
    let mut ape = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        if t.abs() < MAPE_GUARD {
            skipped += 1;
        } else {
            ape += ((p - t) / t).abs();
        }
    }
    let counted = truth.len() - skipped;
    let mape = if counted == 0 { f64::NAN } else { ape / counted as f64 * 100.0 };
    let mu = stats::mean(truth);
    let ss_tot: f64 = truth.iter().map(|t| (t - mu) * (t - mu)).sum();
    let r2 = if ss_tot == 0.0 {
        if ss_res == 0.0 { 1.0 } else { f64::NEG_INFINITY }
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(RegressionMetrics {
        mae,
        rmse,
        mape,
        mape_skipped: skipped,
        r2,
    })
}

/// Weighted sum of per-observable bounds. A negative coefficient maps a
/// term's upper bound onto the lower bound of the sum and vice versa.
pub fn sum_observable_bounds(terms: &[(f64, BoundPrediction)]) -> Result<BoundPrediction> {
    let (_, first) = terms.first().ok_or(MetricsError::Empty("sum_observable_bounds"))?;
    let width = first.pred.len();
    let mut out = BoundPrediction {
        keys: vec![String::new(); width],
        pred: vec![0.0; width],
        low: vec![0.0; width],
        up: vec![0.0; width],
        cl: first.cl,
        interval_mode: first.interval_mode,
        latency_seconds: 0.0,
    };
    for (c, b) in terms {
        if b.cl != first.cl {
            return Err(MetricsError::MixedConfidence(first.cl, b.cl));
        }
        if b.interval_mode != first.interval_mode {
            return Err(MetricsError::MixedIntervalMode);
        }
        if b.pred.len() != width {
            return Err(MetricsError::Misaligned {
                what: "observable terms",
                expected: width,
                got: b.pred.len(),
            });
        }
        if !c.is_finite() {
            return Err(MetricsError::NonFinite("coefficient"));
        }
        for k in 0..width {
            out.pred[k] += c * b.pred[k];
            let (lo, hi) = if *c >= 0.0 { (b.low[k], b.up[k]) } else { (b.up[k], b.low[k]) };
            out.low[k] += c * lo;
            out.up[k] += c * hi;
            if !out.keys[k].is_empty() {
                out.keys[k].push_str(" + ");
            }
            out.keys[k].push_str(&format!("{c}*{}", b.keys[k]));
        }
        out.latency_seconds += b.latency_seconds;
    }
    Ok(out)
}

/// Compliance of runtime measurements against per-sample bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEvaluation {
    pub total: usize,
    pub within: usize,
    pub bcr: f64,
    /// Mean `up - low` per key.
    pub mean_range: Vec<f64>,
}

/// Every (sample, key) pair counts as one measurement.
pub fn evaluate_bounds(bounds: &[BoundPrediction], measured: &[Vec<f64>]) -> Result<BoundEvaluation> {
    if bounds.is_empty() {
        return Err(MetricsError::Empty("evaluate_bounds"));
    }
    if bounds.len() != measured.len() {
        return Err(MetricsError::Misaligned {
            what: "measurements",
            expected: bounds.len(),
            got: measured.len(),
        });
    }
    let width = bounds[0].pred.len();
    let mut samples = Vec::with_capacity(bounds.len() * width);
    let mut intervals = Vec::with_capacity(bounds.len() * width);
    let mut range_sum = vec![0.0; width];
    for (b, m) in bounds.iter().zip(measured) {
        if b.pred.len() != width || m.len() != width {
            return Err(MetricsError::Misaligned {
                what: "keys",
                expected: width,
                got: m.len().min(b.pred.len()),
            });
        }
        for k in 0..width {
            samples.push(m[k]);
            intervals.push((b.low[k], b.up[k]));
            range_sum[k] += b.up[k] - b.low[k];
        }
    }
    let rate = bcr(&samples, &intervals)?;
    let within = samples
        .iter()
        .zip(&intervals)
        .filter(|(v, (l, u))| *l <= **v && **v <= *u)
        .count();
    Ok(BoundEvaluation {
        total: samples.len(),
        within,
        bcr: rate,
        mean_range: range_sum.iter().map(|s| s / bounds.len() as f64).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl LatencyStats {
    pub fn from_samples(seconds: &[f64]) -> Result<Self> {
        if seconds.is_empty() {
            return Err(MetricsError::Empty("latency"));
        }
        let mut sorted = seconds.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(LatencyStats {
            count: sorted.len(),
            median: stats::quantile_sorted(&sorted, 0.5),
            mean: stats::mean(&sorted),
            max: sorted[sorted.len() - 1],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn keys(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("k{i}")).collect()
    }

    #[test]
    fn assemble_adds_offsets() {
        let b = assemble_bounds(
            &keys(1),
            &[0.9178],
            &[(-0.0198, 0.0197)],
            0.95,
            IntervalMode::PredictionInterval,
            PerfMode::Probability,
            0.0,
        )
        .unwrap();
        assert_abs_diff_eq!(b.low[0], 0.8980, epsilon = 1e-12);
        assert_abs_diff_eq!(b.up[0], 0.9375, epsilon = 1e-12);
        assert_eq!(b.pred[0], 0.9178);
    }

    #[test]
    fn assemble_degenerate_and_clamped() {
        let b = assemble_bounds(&keys(1), &[0.4], &[(0.0, 0.0)], 0.9, IntervalMode::PredictionInterval, PerfMode::Probability, 0.0).unwrap();
        assert_eq!((b.low[0], b.up[0]), (0.4, 0.4));
        let b = assemble_bounds(&keys(1), &[0.99], &[(-0.05, 0.05)], 0.9, IntervalMode::PredictionInterval, PerfMode::Probability, 0.0).unwrap();
        assert_eq!(b.up[0], 1.0);
        let b = assemble_bounds(&keys(1), &[-0.98], &[(-0.05, 0.05)], 0.9, IntervalMode::PredictionInterval, PerfMode::Observable, 0.0).unwrap();
        assert_eq!(b.low[0], -1.0);
    }

    #[test]
    fn assemble_rejects_misaligned() {
        let e = assemble_bounds(&keys(2), &[0.5], &[(0.0, 0.0)], 0.9, IntervalMode::PredictionInterval, PerfMode::Probability, 0.0);
        assert!(matches!(e, Err(MetricsError::Misaligned { .. })));
        let e = assemble_bounds(&keys(1), &[0.5], &[], 0.9, IntervalMode::PredictionInterval, PerfMode::Probability, 0.0);
        assert!(matches!(e, Err(MetricsError::Misaligned { .. })));
    }

    #[test]
    fn bcr_counts_inclusively() {
        let s: Vec<f64> = (0..80).map(|i| i as f64).collect();
        let inside: Vec<(f64, f64)> = s.iter().map(|&v| (v, v)).collect();
        assert_eq!(bcr(&s, &inside).unwrap(), 100.0);
        let mut b = inside.clone();
        for bound in b.iter_mut().take(9) {
            *bound = (1e3, 2e3);
        }
        assert_eq!(bcr(&s, &b).unwrap(), 88.75);
        let none: Vec<(f64, f64)> = s.iter().map(|&v| (v + 1.0, v + 2.0)).collect();
        assert_eq!(bcr(&s, &none).unwrap(), 0.0);
        assert!(bcr(&[], &[]).is_err());
    }

    #[test]
    fn diff_metrics_examples() {
        let (d1, d2) = diff_metrics(0.9546, 0.8955, 0.9345, 0.9162).unwrap();
        assert_abs_diff_eq!(d1, 0.0201, epsilon = 1e-12);
        assert_abs_diff_eq!(d2, 0.0384, epsilon = 1e-12);
        let (d1, _) = diff_metrics(0.80, 0.8955, 0.9345, 0.9162).unwrap();
        assert_abs_diff_eq!(d1, 0.0955, epsilon = 1e-12);
        assert_eq!(diff_metrics(0.9, 0.8955, 0.9345, 0.9).unwrap(), (0.0, 0.0));
        assert!(diff_metrics(0.9, 0.95, 0.9, 0.9).is_err());
    }

    #[test]
    fn regression_metric_identities() {
        let t = [0.1, 0.4, 0.35, 0.8];
        let m = regression_metrics(&t, &t).unwrap();
        assert_eq!((m.mae, m.rmse, m.mape, m.r2), (0.0, 0.0, 0.0, 1.0));
        let mu = stats::mean(&t);
        let m = regression_metrics(&[mu; 4], &t).unwrap();
        assert_abs_diff_eq!(m.r2, 0.0, epsilon = 1e-12);
        let m = regression_metrics(&[0.1, 0.2], &[0.0, 0.1]).unwrap();
        assert_eq!(m.mape_skipped, 1);
        assert_abs_diff_eq!(m.mape, 100.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m.rmse, 0.1, epsilon = 1e-12);
        assert!(regression_metrics(&[], &[]).is_err());
    }

    fn scalar(key: &str, pred: f64, low: f64, up: f64) -> BoundPrediction {
        BoundPrediction {
            keys: vec![key.into()],
            pred: vec![pred],
            low: vec![low],
            up: vec![up],
            cl: 0.9,
            interval_mode: IntervalMode::PredictionInterval,
            latency_seconds: 0.001,
        }
    }

    #[test]
    fn observable_sum_rules() {
        let a = scalar("ZI", 0.5, 0.4, 0.6);
        let s = sum_observable_bounds(&[(1.0, a.clone())]).unwrap();
        assert_eq!((s.pred[0], s.low[0], s.up[0]), (0.5, 0.4, 0.6));
        let b = scalar("IZ", 0.2, 0.1, 0.35);
        let s = sum_observable_bounds(&[(1.0, a.clone()), (-1.0, b)]).unwrap();
        assert_abs_diff_eq!(s.low[0], 0.4 - 0.35, epsilon = 1e-15);
        assert_abs_diff_eq!(s.up[0], 0.6 - 0.1, epsilon = 1e-15);
        let mut c = a.clone();
        c.cl = 0.95;
        assert!(matches!(sum_observable_bounds(&[(1.0, a), (1.0, c)]), Err(MetricsError::MixedConfidence(..))));
        assert!(sum_observable_bounds(&[]).is_err());
    }

    #[test]
    fn hydrogen_terms_with_identity_shift() {
        let coeffs = [
            ("II", -1.052373245772859),
            ("IZ", 0.39793742484318045),
            ("ZI", -0.39793742484318045),
            ("ZZ", -0.01128010425623538),
            ("XX", 0.18093119978423156),
        ];
        let terms: Vec<(f64, BoundPrediction)> = coeffs
            .iter()
            .map(|&(k, c)| {
                let b = if k == "II" {
                    BoundPrediction::exact(k, 1.0, 0.9, IntervalMode::PredictionInterval)
                } else {
                    scalar(k, 0.1, 0.0, 0.2)
                };
                (c, b)
            })
            .collect();
        let s = sum_observable_bounds(&terms).unwrap();
        let rest: f64 = coeffs[1..].iter().map(|(_, c)| c * 0.1).sum();
        assert_abs_diff_eq!(s.pred[0], -1.052373245772859 + rest, epsilon = 1e-12);
        assert!(s.low[0] <= s.pred[0] && s.pred[0] <= s.up[0]);
        assert!(s.keys[0].starts_with("-1.052373245772859*II"));
    }

    #[test]
    fn latency_median() {
        let l = LatencyStats::from_samples(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!((l.median, l.max, l.count), (2.0, 3.0, 3));
    }

    proptest! {
        #[test]
        fn diff1_zero_iff_inside(v in -2.0f64..2.0, a in -2.0f64..2.0, w in 0.0f64..1.0) {
            let (d1, _) = diff_metrics(v, a, a + w, 0.0).unwrap();
            prop_assert_eq!(d1 == 0.0, a <= v && v <= a + w);
            prop_assert!(d1 >= 0.0);
        }

        #[test]
        fn bcr_monotone_in_width(
            pts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 0.0f64..0.5), 1..40),
            extra in 0.0f64..0.5,
        ) {
            let s: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let narrow: Vec<(f64, f64)> = pts.iter().map(|p| (p.1 - p.2, p.1 + p.2)).collect();
            let wide: Vec<(f64, f64)> = narrow.iter().map(|(l, u)| (l - extra, u + extra)).collect();
            prop_assert!(bcr(&s, &wide).unwrap() >= bcr(&s, &narrow).unwrap());
        }

        #[test]
        fn assembled_range_is_nonnegative(p in 0.0f64..1.0, l in -0.3f64..0.0, u in 0.0f64..0.3) {
            let b = assemble_bounds(&keys(1), &[p], &[(l, u)], 0.9, IntervalMode::PredictionInterval, PerfMode::Probability, 0.0).unwrap();
            prop_assert!(b.range()[0] >= 0.0);
            prop_assert!(b.range()[0] <= u - l + 1e-15);
        }

        #[test]
        fn observable_sum_is_sound(terms in proptest::collection::vec((-2.0f64..2.0, -1.0f64..1.0, 0.0f64..0.3, 0.0f64..0.3, 0.0f64..1.0), 1..8)) {
            let mut truth = 0.0;
            let bounds: Vec<(f64, BoundPrediction)> = terms
                .iter()
                .map(|&(c, center, dl, du, frac)| {
                    let (lo, hi) = (center - dl, center + du);
                    let v = lo + frac * (hi - lo);
                    truth += c * v;
                    (c, scalar("P", center, lo, hi))
                })
                .collect();
            let s = sum_observable_bounds(&bounds).unwrap();
            prop_assert!(s.low[0] - 1e-12 <= truth && truth <= s.up[0] + 1e-12);
        }
    }
}
