use nalgebra::DMatrix;

use super::{class_counts, EstimatorScore, Method};
use crate::error::{Error, Result};

const PINV_RTOL: f64 = 1e-10;

/// H-Score: `tr(pinv(cov(F)) · cov(G))`, with `G` the features replaced row by
/// row with their class mean. Both covariances use `N - 1` normalisation.
pub fn h_score(features: &DMatrix<f64>, labels: &[usize]) -> Result<EstimatorScore> {
    let n = features.nrows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} feature rows but {} labels", labels.len())));
    }
    let counts = class_counts(labels);
    if counts.len() < 2 || counts.iter().any(|&c| c == 0) {
        return Err(Error::Degenerate("h-score needs at least 2 non-empty classes".into()));
    }
    let d = features.ncols();
    let mut means = DMatrix::<f64>::zeros(counts.len(), d);
    for (i, &y) in labels.iter().enumerate() {
        let mut row = means.row_mut(y);
        row += features.row(i);
    }
    for (c, &k) in counts.iter().enumerate() {
        means.row_mut(c).unscale_mut(k as f64);
    }
    let class_means = DMatrix::from_fn(n, d, |i, j| means[(labels[i], j)]);

    let cov_f = covariance(features);
    let cov_g = covariance(&class_means);
    let value = (pseudo_inverse(cov_f) * cov_g).trace();
    EstimatorScore::exact(Method::HScore, value)
}

pub(crate) fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    centered.tr_mul(&centered) / ((n.max(2) - 1) as f64)
}

/// Moore–Penrose inverse dropping singular values below `1e-10 · σ_max`.
fn pseudo_inverse(m: DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    let svd = m.svd(true, true);
    let sigma_max = svd.singular_values.max();
    if sigma_max <= 0.0 {
        return DMatrix::zeros(cols, rows);
    }
    let cutoff = PINV_RTOL * sigma_max;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let inv_s = svd.singular_values.map(|s| if s > cutoff { 1.0 / s } else { 0.0 });
    v_t.transpose() * DMatrix::from_diagonal(&inv_s) * u.transpose()
}
