//! Feature banks: the extracted features of one model over one dataset, with
//! labels and (optionally) the model's source-head probabilities.
//!
//! A bank lives on disk as a directory:
//!
//! ```text
//! <path>/manifest.json
//! <path>/features.mat       n_samples × feat_dim
//! <path>/labels.mat         n_samples × 1, exact small integers
//! <path>/source_probs.mat   n_samples × source_dim (optional)
//! ```
//!
//! Every `.mat` file is a 24-byte header (`MSPB`, version `u32 = 1`, rows `u64`,
//! cols `u64`, all little-endian) followed by `rows * cols` little-endian
//! binary32 values in row-major order.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: [u8; 4] = *b"MSPB";
pub const MATRIX_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;
const LABEL_TOLERANCE: f32 = 1e-6;
const ROW_SUM_TOLERANCE: f64 = 1e-5;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_FILE: &str = "features.mat";
pub const LABELS_FILE: &str = "labels.mat";
pub const SOURCE_PROBS_FILE: &str = "source_probs.mat";

/// Dense row-major binary32 matrix, the unit of on-disk storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix32 {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix32 {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        Ok(Matrix32 { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix32 { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Rounds an f64 matrix to binary32.
    pub fn from_f64(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)] as f32);
            }
        }
        Matrix32 { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.rows, self.cols, self.data.iter().map(|&v| v as f64))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix32 { rows: rows.len(), cols: self.cols, data }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&MATRIX_MAGIC);
        out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes the binary format; `file` only labels errors.
    pub fn decode(bytes: &[u8], file: &Path) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(file, "short read: truncated header"));
        }
        if bytes[0..4] != MATRIX_MAGIC {
            return Err(Error::format(file, "magic mismatch"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != MATRIX_VERSION {
            return Err(Error::format(file, format!("unsupported version {version}")));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| Error::format(file, "header dimensions overflow"))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < n {
            return Err(Error::format(
                file,
                format!("short read: expected {n} payload bytes, found {}", payload.len()),
            ));
        }
        if payload.len() > n {
            return Err(Error::format(file, "trailing bytes after payload"));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Matrix32 { rows: rows as usize, cols: cols as usize, data })
    }
}

pub fn write_matrix(path: &Path, m: &Matrix32) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&m.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Matrix32> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Matrix32::decode(&bytes, path)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankManifest {
    pub model_id: String,
    pub dataset_id: String,
    pub n_samples: usize,
    pub feat_dim: usize,
    pub n_classes: usize,
    pub has_source_probs: bool,
    pub source_dim: usize,
    pub seed: u64,
    /// Class name per label index, written by extractors that know them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
}

/// One violated bank invariant.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    TooFewClasses { n_classes: usize },
    FewerSamplesThanClasses { n_samples: usize, n_classes: usize },
    SourceDim { source_dim: usize },
    FeatureShape { rows: usize, cols: usize },
    LabelCount { found: usize },
    NonFiniteFeature { row: usize, col: usize },
    LabelOutOfRange { row: usize, label: u32 },
    EmptyClass { class: usize },
    SourceProbsMissing,
    SourceProbsUnexpected,
    SourceProbsShape { rows: usize, cols: usize },
    NegativeSourceProb { row: usize, col: usize },
    SourceRowSum { row: usize, sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewClasses { n_classes } => {
                write!(f, "n_classes = {n_classes} but at least 2 required")
            }
            Violation::FewerSamplesThanClasses { n_samples, n_classes } => {
                write!(f, "n_samples = {n_samples} smaller than n_classes = {n_classes}")
            }
            Violation::SourceDim { source_dim } => {
                write!(f, "source_dim = {source_dim} inconsistent with has_source_probs")
            }
            Violation::FeatureShape { rows, cols } => {
                write!(f, "features shape {rows}x{cols} disagrees with manifest")
            }
            Violation::LabelCount { found } => {
                write!(f, "labels length {found} disagrees with n_samples")
            }
            Violation::NonFiniteFeature { row, col } => {
                write!(f, "non-finite feature at row {row}, col {col}")
            }
            Violation::LabelOutOfRange { row, label } => {
                write!(f, "label out of range at row {row} (label {label})")
            }
            Violation::EmptyClass { class } => write!(f, "empty class {class}"),
            Violation::SourceProbsMissing => {
                write!(f, "has_source_probs is true but source_probs absent")
            }
            Violation::SourceProbsUnexpected => {
                write!(f, "source_probs present but has_source_probs is false")
            }
            Violation::SourceProbsShape { rows, cols } => {
                write!(f, "source_probs shape {rows}x{cols} disagrees with manifest")
            }
            Violation::NegativeSourceProb { row, col } => {
                write!(f, "negative source probability at row {row}, col {col}")
            }
            Violation::SourceRowSum { row, sum } => {
                write!(f, "source_probs row {row} sums to {sum}, not 1")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    pub manifest: BankManifest,
    pub features: Matrix32,
    pub labels: Vec<u32>,
    pub source_probs: Option<Matrix32>,
}

impl FeatureBank {
    /// Builds a bank with a manifest derived from the data, then validates it.
    pub fn from_parts(
        model_id: impl Into<String>,
        dataset_id: impl Into<String>,
        n_classes: usize,
        features: Matrix32,
        labels: Vec<u32>,
        source_probs: Option<Matrix32>,
        seed: u64,
    ) -> Result<Self> {
        let manifest = BankManifest {
            model_id: model_id.into(),
            dataset_id: dataset_id.into(),
            n_samples: features.rows(),
            feat_dim: features.cols(),
            n_classes,
            has_source_probs: source_probs.is_some(),
            source_dim: source_probs.as_ref().map_or(0, Matrix32::cols),
            seed,
            class_names: None,
        };
        let bank = FeatureBank { manifest, features, labels, source_probs };
        bank.check()?;
        Ok(bank)
    }

    pub fn check(&self) -> Result<()> {
        let report = validate_bank(self);
        if report.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(report.iter().map(ToString::to_string).collect()))
        }
    }

    pub fn model_id(&self) -> &str {
        &self.manifest.model_id
    }

    pub fn n_samples(&self) -> usize {
        self.features.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.manifest.n_classes
    }

    pub fn feat_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features_f64(&self) -> DMatrix<f64> {
        self.features.to_f64()
    }

    pub fn labels_usize(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }

    /// Restricts the bank to `rows`, relabelling with `labels` over `n_classes`.
    pub fn subset(
        &self,
        rows: &[usize],
        labels: Vec<u32>,
        n_classes: usize,
        dataset_id: impl Into<String>,
    ) -> Result<Self> {
        let mut manifest = self.manifest.clone();
        manifest.dataset_id = dataset_id.into();
        manifest.n_samples = rows.len();
        manifest.n_classes = n_classes;
        manifest.class_names = None;
        let bank = FeatureBank {
            manifest,
            features: self.features.select_rows(rows),
            labels,
            source_probs: self.source_probs.as_ref().map(|p| p.select_rows(rows)),
        };
        bank.check()?;
        Ok(bank)
    }
}

/// Lists every violated invariant; an empty report means the bank is valid.
pub fn validate_bank(bank: &FeatureBank) -> Vec<Violation> {
    let mut out = Vec::new();
    let m = &bank.manifest;
    if m.n_classes < 2 {
        out.push(Violation::TooFewClasses { n_classes: m.n_classes });
    }
    if m.n_samples < m.n_classes {
        out.push(Violation::FewerSamplesThanClasses {
            n_samples: m.n_samples,
            n_classes: m.n_classes,
        });
    }
    if m.has_source_probs != (m.source_dim >= 2) {
        out.push(Violation::SourceDim { source_dim: m.source_dim });
    }
    if bank.features.rows() != m.n_samples || bank.features.cols() != m.feat_dim {
        out.push(Violation::FeatureShape {
            rows: bank.features.rows(),
            cols: bank.features.cols(),
        });
    }
    if bank.labels.len() != m.n_samples {
        out.push(Violation::LabelCount { found: bank.labels.len() });
    }
    let cols = bank.features.cols().max(1);
    for (i, v) in bank.features.data().iter().enumerate() {
        if !v.is_finite() {
            out.push(Violation::NonFiniteFeature { row: i / cols, col: i % cols });
        }
    }
    let mut seen = vec![false; m.n_classes];
    for (row, &label) in bank.labels.iter().enumerate() {
        match seen.get_mut(label as usize) {
            Some(s) => *s = true,
            None => out.push(Violation::LabelOutOfRange { row, label }),
        }
    }
    for (class, s) in seen.iter().enumerate() {
        if !s {
            out.push(Violation::EmptyClass { class });
        }
    }
    match (&bank.source_probs, m.has_source_probs) {
        (None, true) => out.push(Violation::SourceProbsMissing),
        (Some(_), false) => out.push(Violation::SourceProbsUnexpected),
        (Some(p), true) => {
            if p.rows() != m.n_samples || p.cols() != m.source_dim {
                out.push(Violation::SourceProbsShape { rows: p.rows(), cols: p.cols() });
            }
            for row in 0..p.rows() {
                let mut sum = 0.0f64;
                for (col, &v) in p.row(row).iter().enumerate() {
                    if !(v >= 0.0) {
                        out.push(Violation::NegativeSourceProb { row, col });
                    }
                    sum += v as f64;
                }
                if !((sum - 1.0).abs() <= ROW_SUM_TOLERANCE) {
                    out.push(Violation::SourceRowSum { row, sum });
                }
            }
        }
        (None, false) => {}
    }
    out
}

pub fn write_bank(bank: &FeatureBank, path: &Path) -> Result<()> {
    bank.check()?;
    match fs::create_dir(path) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists && path.is_dir() => {}
        Err(e) => return Err(Error::io(path, e)),
    }
    let manifest = serde_json::to_string_pretty(&bank.manifest)
        .expect("manifest serialization is infallible");
    let manifest_path = path.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    write_matrix(&path.join(FEATURES_FILE), &bank.features)?;
    let labels = Matrix32 {
        rows: bank.labels.len(),
        cols: 1,
        data: bank.labels.iter().map(|&l| l as f32).collect(),
    };
    write_matrix(&path.join(LABELS_FILE), &labels)?;
    let probs_path = path.join(SOURCE_PROBS_FILE);
    match &bank.source_probs {
        Some(p) => write_matrix(&probs_path, p)?,
        None if probs_path.exists() => {
            fs::remove_file(&probs_path).map_err(|e| Error::io(&probs_path, e))?
        }
        None => {}
    }
    Ok(())
}

pub fn read_bank(path: &Path) -> Result<FeatureBank> {
    let manifest_path = path.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: BankManifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(&manifest_path, e.to_string()))?;

    let features_path = path.join(FEATURES_FILE);
    let features = read_matrix(&features_path)?;
    expect_dims(&features_path, &features, manifest.n_samples, manifest.feat_dim)?;

    let labels_path = path.join(LABELS_FILE);
    let raw = read_matrix(&labels_path)?;
    expect_dims(&labels_path, &raw, manifest.n_samples, 1)?;
    let mut labels = Vec::with_capacity(raw.rows());
    for (row, &v) in raw.data().iter().enumerate() {
        let rounded = v.round();
        if !(v.is_finite() && (v - rounded).abs() <= LABEL_TOLERANCE && rounded >= 0.0) {
            return Err(Error::format(
                &labels_path,
                format!("label at row {row} is not a non-negative integer ({v})"),
            ));
        }
        labels.push(rounded as u32);
    }

    let probs_path = path.join(SOURCE_PROBS_FILE);
    let source_probs = if manifest.has_source_probs {
        let p = read_matrix(&probs_path)?;
        expect_dims(&probs_path, &p, manifest.n_samples, manifest.source_dim)?;
        Some(p)
    } else {
        None
    };

    let bank = FeatureBank { manifest, features, labels, source_probs };
    bank.check()?;
    Ok(bank)
}

fn expect_dims(file: &Path, m: &Matrix32, rows: usize, cols: usize) -> Result<()> {
    if m.rows() != rows || m.cols() != cols {
        return Err(Error::format(
            file,
            format!(
                "dimension mismatch: header says {}x{}, manifest expects {rows}x{cols}",
                m.rows(),
                m.cols()
            ),
        ));
    }
    Ok(())
}
