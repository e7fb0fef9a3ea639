//! Task tokens (per-class feature centres) and learnable model tokens.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_bank::{read_matrix, write_matrix, FeatureBank, Matrix32};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenKind {
    /// Centres of the shared probe encoder's features.
    General,
    /// Centres of one model's own features, projected into the token space.
    Specific(String),
}

/// A `d × C` matrix with one column per class, ordered by ascending class id.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskToken {
    pub centers: DMatrix<f64>,
    pub class_ids: Vec<u32>,
    pub kind: TokenKind,
}

impl TaskToken {
    pub fn dim(&self) -> usize {
        self.centers.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.centers.ncols()
    }

    pub fn is_general(&self) -> bool {
        self.kind == TokenKind::General
    }
}

/// Per-class mean of the bank's feature rows, as a `feat_dim × C` matrix.
pub fn class_centers(bank: &FeatureBank) -> Result<DMatrix<f64>> {
    let c = bank.n_classes();
    let d = bank.feat_dim();
    let mut sums = DMatrix::<f64>::zeros(d, c);
    let mut counts = vec![0usize; c];
    for (i, &label) in bank.labels.iter().enumerate() {
        let label = label as usize;
        if label >= c {
            return Err(Error::Shape(format!("label {label} at row {i} exceeds {c} classes")));
        }
        counts[label] += 1;
        for (j, &v) in bank.features.row(i).iter().enumerate() {
            sums[(j, label)] += f64::from(v);
        }
    }
    for (class, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(Error::Degenerate(format!("class {class} has no samples")));
        }
        sums.column_mut(class).unscale_mut(n as f64);
    }
    Ok(sums)
}

pub fn build_task_token(probe_bank: &FeatureBank) -> Result<TaskToken> {
    Ok(TaskToken {
        centers: class_centers(probe_bank)?,
        class_ids: (0..probe_bank.n_classes() as u32).collect(),
        kind: TokenKind::General,
    })
}

/// `Pᵀ · centres(bank)`, landing a model's own class centres in the token space.
pub fn build_specific_token(model_bank: &FeatureBank, projection: &DMatrix<f64>) -> Result<TaskToken> {
    if projection.nrows() != model_bank.feat_dim() {
        return Err(Error::Shape(format!(
            "projection has {} rows but model {} has {} features",
            projection.nrows(),
            model_bank.model_id(),
            model_bank.feat_dim()
        )));
    }
    let centers = class_centers(model_bank)?;
    Ok(TaskToken {
        centers: projection.tr_mul(&centers),
        class_ids: (0..model_bank.n_classes() as u32).collect(),
        kind: TokenKind::Specific(model_bank.model_id().to_string()),
    })
}

/// Row `m` of `theta` is the token of model `model_ids[m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelTokens {
    pub theta: DMatrix<f64>,
    pub model_ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenManifest {
    d: usize,
    m: usize,
    model_ids: Vec<String>,
}

impl ModelTokens {
    /// Gaussian tokens with standard deviation `1 / sqrt(d)`.
    pub fn init(model_ids: Vec<String>, d: usize, seed: u64) -> Result<Self> {
        if model_ids.is_empty() || d == 0 {
            return Err(Error::Config("model tokens need M >= 1 and d >= 1".into()));
        }
        let distinct: HashSet<&String> = model_ids.iter().collect();
        if distinct.len() != model_ids.len() {
            return Err(Error::Config("model ids must be distinct".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive std");
        let theta = DMatrix::from_fn(model_ids.len(), d, |_, _| normal.sample(&mut rng));
        Ok(ModelTokens { theta, model_ids })
    }

    pub fn len(&self) -> usize {
        self.model_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.theta.ncols()
    }

    pub fn index_of(&self, model_id: &str) -> Option<usize> {
        self.model_ids.iter().position(|id| id == model_id)
    }

    /// Writes `tokens.json` and `theta.mat` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let manifest = TokenManifest { d: self.dim(), m: self.len(), model_ids: self.model_ids.clone() };
        let path = dir.join("tokens.json");
        let text = serde_json::to_string_pretty(&manifest).expect("serializable");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        write_matrix(&dir.join("theta.mat"), &Matrix32::from_f64(&self.theta))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("tokens.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: TokenManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let theta_path = dir.join("theta.mat");
        let theta = read_matrix(&theta_path)?;
        if theta.rows() != manifest.m || theta.cols() != manifest.d || manifest.model_ids.len() != manifest.m {
            return Err(Error::format(&theta_path, "dimension mismatch with tokens.json"));
        }
        Ok(ModelTokens { theta: theta.to_f64(), model_ids: manifest.model_ids })
    }
}

pub fn init_model_tokens(m: usize, d: usize, seed: u64) -> Result<ModelTokens> {
    ModelTokens::init((0..m).map(|i| format!("model_{i}")).collect(), d, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank(rows: &[[f32; 2]], labels: &[u32], c: usize) -> FeatureBank {
        let data = rows.iter().flatten().copied().collect();
        let features = Matrix32::new(rows.len(), 2, data).unwrap();
        FeatureBank::from_parts("m", "t", c, features, labels.to_vec(), None, 0).unwrap()
    }

    #[test]
    fn centre_of_two_points() {
        let b = bank(&[[1.0, 2.0], [3.0, 4.0], [0.0, -1.0]], &[0, 0, 1], 2);
        let t = build_task_token(&b).unwrap();
        assert_eq!(t.centers.column(0).as_slice(), [2.0, 3.0]);
        assert_eq!(t.centers.column(1).as_slice(), [0.0, -1.0]);
        assert_eq!(t.class_ids, [0, 1]);
        assert!(t.is_general());
    }

    #[test]
    fn invariant_to_row_permutation_and_duplication() {
        let rows = [[1.0, 2.0], [3.0, 4.0], [0.5, -1.0], [2.0, 2.0]];
        let a = build_task_token(&bank(&rows, &[0, 1, 0, 1], 2)).unwrap();
        let b = build_task_token(&bank(&[rows[3], rows[2], rows[1], rows[0]], &[1, 0, 1, 0], 2)).unwrap();
        assert_eq!(a, b);
        let doubled: Vec<[f32; 2]> = rows.iter().chain(rows.iter()).copied().collect();
        let c = build_task_token(&bank(&doubled, &[0, 1, 0, 1, 0, 1, 0, 1], 2)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn identity_and_zero_projection() {
        let b = bank(&[[1.0, 2.0], [0.0, 1.0], [4.0, 4.0]], &[0, 1, 1], 2);
        let general = build_task_token(&b).unwrap();
        let t = build_specific_token(&b, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(t.centers, general.centers);
        assert_eq!(t.kind, TokenKind::Specific("m".into()));
        let z = build_specific_token(&b, &DMatrix::zeros(2, 5)).unwrap();
        assert_eq!(z.centers, DMatrix::zeros(5, 2));
        assert!(matches!(build_specific_token(&b, &DMatrix::zeros(3, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn projection_matches_dense_multiply() {
        let rows = [[0.3, -1.2], [1.5, 0.7], [-0.4, 0.9], [2.2, 0.1], [0.0, 0.5], [1.1, -0.6]];
        let b = bank(&rows, &[0, 1, 2, 0, 1, 2], 3);
        let p = DMatrix::from_row_slice(2, 3, &[0.5, -1.0, 2.0, 0.25, 0.75, -0.5]);
        let t = build_specific_token(&b, &p).unwrap();
        for c in 0..3 {
            let mu = [
                (f64::from(rows[c][0]) + f64::from(rows[c + 3][0])) / 2.0,
                (f64::from(rows[c][1]) + f64::from(rows[c + 3][1])) / 2.0,
            ];
            for j in 0..3 {
                let expect = p[(0, j)] * mu[0] + p[(1, j)] * mu[1];
                assert!((t.centers[(j, c)] - expect).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn model_tokens_are_seeded() {
        let a = init_model_tokens(4, 16, 3).unwrap();
        assert_eq!(a, init_model_tokens(4, 16, 3).unwrap());
        assert_ne!(a, init_model_tokens(4, 16, 4).unwrap());
        assert_eq!(init_model_tokens(2, 1024, 0).unwrap().dim(), 1024);
    }

    #[test]
    fn row_norms_concentrate_near_one() {
        let norms: Vec<f64> = (0..1000)
            .map(|seed| init_model_tokens(1, 64, seed).unwrap().theta.row(0).norm())
            .collect();
        let inside = norms.iter().filter(|n| (*n - 1.0).abs() < 0.3).count();
        assert!(inside >= 990, "{inside} of 1000 within 1 ± 0.3");
        let mean = norms.iter().sum::<f64>() / 1000.0;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = init_model_tokens(3, 5, 1).unwrap();
        t.save(dir.path()).unwrap();
        let back = ModelTokens::load(dir.path()).unwrap();
        assert_eq!(back.model_ids, t.model_ids);
        assert!((back.theta - t.theta).amax() < 1e-6);
    }
}
