use nalgebra::DMatrix;

use super::{EstimatorScore, Method};
use crate::error::{Error, Result};

/// Hard source predictions: row argmax, first index on ties.
pub fn pseudo_labels(source_probs: &DMatrix<f64>) -> Vec<usize> {
    source_probs
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Negative conditional entropy `-H(Y | Z)` of the empirical joint.
pub fn nce(source_labels: &[usize], labels: &[usize]) -> Result<EstimatorScore> {
    let n = labels.len();
    if source_labels.len() != n {
        return Err(Error::Shape(format!(
            "{} pseudo-labels but {n} labels",
            source_labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::Degenerate("nce needs at least one sample".into()));
    }
    let zs = source_labels.iter().max().unwrap() + 1;
    let ys = labels.iter().max().unwrap() + 1;
    let mut joint = vec![0usize; zs * ys];
    let mut marginal = vec![0usize; zs];
    for (&z, &y) in source_labels.iter().zip(labels) {
        joint[z * ys + y] += 1;
        marginal[z] += 1;
    }
    let nf = n as f64;
    let mut value = 0.0;
    for z in 0..zs {
        for y in 0..ys {
            let count = joint[z * ys + y];
            if count > 0 {
                let p = count as f64 / nf;
                value += p * (count as f64 / marginal[z] as f64).ln();
            }
        }
    }
    EstimatorScore::exact(Method::Nce, value)
}
