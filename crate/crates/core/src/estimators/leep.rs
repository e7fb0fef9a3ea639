use nalgebra::DMatrix;

use super::{EstimatorScore, Method};
use crate::error::{Error, Result};

const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// Log expected empirical prediction.
///
/// Builds the soft joint `P(z, y)` from the source head, turns it into the
/// conditional `P(y | z)`, and averages `log Σ_z P(y_i | z) p_i(z)` over samples.
pub fn leep(source_probs: &DMatrix<f64>, labels: &[usize]) -> Result<EstimatorScore> {
    let (n, zs) = source_probs.shape();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} probability rows but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::Degenerate("leep needs at least one sample".into()));
    }
    for (i, row) in source_probs.row_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Validation(vec![format!(
                "source_probs row {i} is not a probability vector (sum {sum})"
            )]));
        }
    }
    let ys = labels.iter().max().unwrap() + 1;
    let nf = n as f64;
    let mut joint = DMatrix::<f64>::zeros(zs, ys);
    for (i, &y) in labels.iter().enumerate() {
        for z in 0..zs {
            joint[(z, y)] += source_probs[(i, z)] / nf;
        }
    }
    let marginal: Vec<f64> = (0..zs).map(|z| joint.row(z).sum()).collect();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let mut expected = 0.0;
        for z in 0..zs {
            if marginal[z] > 0.0 {
                expected += joint[(z, y)] / marginal[z] * source_probs[(i, z)];
            }
        }
        total += expected.ln();
    }
    EstimatorScore::exact(Method::Leep, total / nf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn one_hot_matching_head_is_zero() {
        let p = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(leep(&p, &[0, 1, 0, 1]).unwrap().value, 0.0);
    }

    #[test]
    fn uniform_head_balanced_binary() {
        let p = DMatrix::from_element(6, 3, 1.0 / 3.0);
        let v = leep(&p, &[0, 1, 0, 1, 1, 0]).unwrap().value;
        assert!((v + LN_2).abs() < 1e-12);
    }

    #[test]
    fn mixed_instance_matches_double_loop() {
        let rows = [[0.9, 0.1], [0.6, 0.4], [0.3, 0.7], [0.2, 0.8], [0.55, 0.45], [0.05, 0.95]];
        let y = [0usize, 0, 1, 1, 0, 1];
        let p = DMatrix::from_fn(6, 2, |i, j| rows[i][j]);

        let mut oracle = 0.0;
        for i in 0..6 {
            let mut s = 0.0f64;
            for z in 0..2 {
                let (mut pzy, mut pz) = (0.0, 0.0);
                for k in 0..6 {
                    pz += rows[k][z] / 6.0;
                    if y[k] == y[i] {
                        pzy += rows[k][z] / 6.0;
                    }
                }
                s += pzy / pz * rows[i][z];
            }
            oracle += s.ln() / 6.0;
        }
        let v = leep(&p, &y).unwrap().value;
        assert!((v - oracle).abs() < 1e-10, "{v} vs {oracle}");
        assert!(v < 0.0);
    }

    #[test]
    fn empty_source_bins_are_skipped() {
        let p = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(leep(&p, &[0, 1]).unwrap().value, 0.0);
    }

    #[test]
    fn non_stochastic_row_rejected() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.5, 0.5]);
        assert!(matches!(leep(&p, &[0, 1]), Err(Error::Validation(_))));
    }
}
