//! Linear-regression baseline and PCA of noise vectors.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};
use crate::encode::EncodedSequence;
use crate::predictor::TrainingDataset;

/// Ridge term added to the normal equations when they are singular.
pub const RIDGE_LAMBDA: f64 = 1e-8;

/// Relative pivot size below which the plain normal equations count as singular.
const PIVOT_TOL: f64 = 1e-12;

/// Least-squares model on flattened feature sequences, one column of
/// coefficients per output key; the last coefficient is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub keys: Vec<String>,
    pub num_features: usize,
    /// `coef[k]` has `num_features + 1` entries.
    pub coef: Vec<Vec<f64>>,
    pub ridge: bool,
}

impl LinearModel {
    pub fn predict_flat(&self, x: &[f64]) -> Vec<f64> {
        self.coef
            .iter()
            .map(|c| c[..self.num_features].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + c[self.num_features])
            .collect()
    }

    pub fn predict(&self, seq: &EncodedSequence) -> Vec<f64> {
        self.predict_flat(&seq.data)
    }
}

fn cholesky_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, check_pivots: bool) -> Option<DMatrix<f64>> {
    let chol = a.clone().cholesky()?;
    if check_pivots {
        let scale = a.diagonal().iter().cloned().fold(0.0, f64::max);
        let l = chol.l_dirty();
        let min_pivot = (0..a.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if !(min_pivot > PIVOT_TOL * scale) {
            return None;
        }
    }
    let x = chol.solve(b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Fits `y ~ X b + c` from flattened rows by the normal equations, falling
/// back to a ridge-regularized solve when `XᵀX` is singular.
pub fn fit_linear(rows: &[&[f64]], targets: &[&[f64]], keys: Vec<String>) -> Result<LinearModel> {
    let n = rows.len();
    let d = rows.first().ok_or(MetricsError::Empty("fit_linear"))?.len();
    let k = keys.len();
    if targets.len() != n {
        return Err(MetricsError::Misaligned {
            what: "targets",
            expected: n,
            got: targets.len(),
        });
    }
    if n < d {
        return Err(MetricsError::TooFewSamples { have: n, need: d });
    }
    if rows.iter().any(|r| r.len() != d) || targets.iter().any(|t| t.len() != k) {
        return Err(MetricsError::Misaligned {
            what: "row width",
            expected: d,
            got: rows.iter().map(|r| r.len()).find(|&w| w != d).unwrap_or(d),
        });
    }
    if rows.iter().chain(targets).any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(MetricsError::NonFinite("fit_linear"));
    }
    let x = DMatrix::from_fn(n, d + 1, |i, j| if j < d { rows[i][j] } else { 1.0 });
    let y = DMatrix::from_fn(n, k, |i, j| targets[i][j]);
    let xt = x.transpose();
    let a = &xt * &x;
    let b = &xt * &y;
    let (beta, ridge) = match cholesky_solve(&a, &b, true) {
        Some(beta) => (beta, false),
        None => {
            let reg = &a + DMatrix::identity(d + 1, d + 1) * RIDGE_LAMBDA;
            (cholesky_solve(&reg, &b, false).ok_or(MetricsError::Singular)?, true)
        }
    };
    Ok(LinearModel {
        keys,
        num_features: d,
        coef: (0..k).map(|j| beta.column(j).iter().copied().collect()).collect(),
        ridge,
    })
}

/// Fits on the training split and predicts every held-out entry.
pub fn linreg_baseline(dataset: &TrainingDataset) -> Result<(LinearModel, Vec<Vec<f64>>)> {
    let rows: Vec<&[f64]> = dataset.train.iter().map(|&i| dataset.entries[i].features.data.as_slice()).collect();
    let targets: Vec<&[f64]> = dataset.train.iter().map(|&i| dataset.entries[i].label.as_slice()).collect();
    let model = fit_linear(&rows, &targets, dataset.keys.clone())?;
    let preds = dataset.test.iter().map(|&i| model.predict(&dataset.entries[i].features)).collect();
    Ok((model, preds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// Unit principal axes, largest variance first.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    /// Share of the total variance per retained axis.
    pub explained_ratio: Vec<f64>,
    /// Projected coordinates of the fitted samples.
    pub coords: Vec<Vec<f64>>,
}

impl PcaProjection {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((a, v), m)| a * (v - m)).sum())
            .collect()
    }
}

pub fn project_noise_pca(samples: &[Vec<f64>], dims: usize) -> Result<PcaProjection> {
    let n = samples.len();
    if dims == 0 {
        return Err(MetricsError::Empty("pca dimensions"));
    }
    if n < dims {
        return Err(MetricsError::TooFewSamples { have: n, need: dims });
    }
    let d = samples[0].len();
    if let Some(s) = samples.iter().find(|s| s.len() != d) {
        return Err(MetricsError::Misaligned {
            what: "noise vector",
            expected: d,
            got: s.len(),
        });
    }
    if d < dims {
        return Err(MetricsError::Misaligned {
            what: "noise vector dimensions",
            expected: dims,
            got: d,
        });
    }
    if samples.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(MetricsError::NonFinite("project_noise_pca"));
    }
    let mean: Vec<f64> = (0..d).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| samples[i][j] - mean[j]);
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = (centered.transpose() * &centered) / denom;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut components = Vec::with_capacity(dims);
    let mut variance = Vec::with_capacity(dims);
    for &j in order.iter().take(dims) {
        let mut axis: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        let lead = axis.iter().cloned().fold(0.0, |m: f64, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(axis);
        variance.push(eig.eigenvalues[j].max(0.0));
    }
    let ratio = variance.iter().map(|v| if total > 0.0 { v / total } else { 0.0 }).collect();
    let mut pca = PcaProjection {
        mean,
        components,
        explained_variance: variance,
        explained_ratio: ratio,
        coords: Vec::new(),
    };
    pca.coords = samples.iter().map(|s| pca.project(s)).collect();
    Ok(pca)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    use crate::rng;

    #[test]
    fn exact_linear_labels_are_recovered() {
        let mut r = rng::stream(5);
        let truth = [0.3, -1.2, 0.05, 2.0];
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| r.random::<f64>()).collect()).collect();
        let ys: Vec<Vec<f64>> = rows
            .iter()
            .map(|x| vec![truth[0] * x[0] + truth[1] * x[1] + truth[2] * x[2] + truth[3]])
            .collect();
        let rr: Vec<&[f64]> = rows.iter().map(|v| v.as_slice()).collect();
        let yr: Vec<&[f64]> = ys.iter().map(|v| v.as_slice()).collect();
        let m = fit_linear(&rr, &yr, vec!["y".into()]).unwrap();
        assert!(!m.ridge);
        for (c, t) in m.coef[0].iter().zip(truth) {
            assert_abs_diff_eq!(*c, t, epsilon = 1e-6);
        }
        for (x, y) in rows.iter().zip(&ys) {
            assert_abs_diff_eq!(m.predict_flat(x)[0], y[0], epsilon = 1e-10);
        }
    }

    #[test]
    fn collinear_columns_use_ridge() {
        let mut r = rng::stream(6);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let a = r.random::<f64>();
                vec![a, 0.5, 2.0 * a]
            })
            .collect();
        let ys: Vec<Vec<f64>> = rows.iter().map(|x| vec![3.0 * x[0] + 1.0]).collect();
        let rr: Vec<&[f64]> = rows.iter().map(|v| v.as_slice()).collect();
        let yr: Vec<&[f64]> = ys.iter().map(|v| v.as_slice()).collect();
        let m = fit_linear(&rr, &yr, vec!["y".into()]).unwrap();
        assert!(m.ridge);
        for (x, y) in rows.iter().zip(&ys) {
            assert_abs_diff_eq!(m.predict_flat(x)[0], y[0], epsilon = 1e-5);
        }
    }

    #[test]
    fn too_few_rows_rejected() {
        let rows = [[1.0, 2.0, 3.0].as_slice()];
        let ys = [[1.0].as_slice()];
        assert!(matches!(fit_linear(&rows, &ys, vec!["y".into()]), Err(MetricsError::TooFewSamples { .. })));
    }

    #[test]
    fn line_in_high_dimensions_has_one_component() {
        let dir = [0.1, -0.7, 0.3, 0.5, 0.2];
        let s: Vec<Vec<f64>> = (0..25).map(|i| dir.iter().map(|d| 1.0 + d * i as f64).collect()).collect();
        let p = project_noise_pca(&s, 2).unwrap();
        assert_abs_diff_eq!(p.explained_ratio[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.explained_ratio[1], 0.0, epsilon = 1e-12);
        let lead = p.components[0].iter().cloned().fold(0.0, |m: f64, v| if v.abs() > m.abs() { v } else { m });
        assert!(lead > 0.0);
    }

    #[test]
    fn spectrum_is_rotation_invariant() {
        let mut r = rng::stream(9);
        let s: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![r.random::<f64>() * 3.0, r.random::<f64>(), r.random::<f64>() * 0.2])
            .collect();
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 0.7);
        let rotated: Vec<Vec<f64>> = s
            .iter()
            .map(|v| (rot * nalgebra::Vector3::new(v[0], v[1], v[2])).iter().copied().collect())
            .collect();
        let a = project_noise_pca(&s, 3).unwrap();
        let b = project_noise_pca(&rotated, 3).unwrap();
        for (x, y) in a.explained_variance.iter().zip(&b.explained_variance) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-10);
        }
    }

    #[test]
    fn pca_needs_enough_samples() {
        assert!(matches!(project_noise_pca(&[vec![1.0, 2.0]], 2), Err(MetricsError::TooFewSamples { .. })));
    }
}
