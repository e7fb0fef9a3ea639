//! Model–task similarity head and zoo ranking.
//!
//! The similarity of model `m` and a task is read off a single residual
//! self-attention block run over the token sequence
//! `[θ_m + p, μ_1 + p, …, μ_C + p]`, where `p` is the token-type prompt
//! (general or specific). The block's output at position 0 goes through an
//! affine head to give a scalar.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_bank::{read_matrix, write_matrix, FeatureBank, Matrix32};
use crate::rank_agg::{dsc_order, Permutation, ScoreVector};
use crate::tokens::{build_specific_token, ModelTokens, TaskToken, TokenKind};
use crate::util::mix_seed;

const PROMPT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct RankerParams {
    pub model_tokens: ModelTokens,
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub fc_w: DVector<f64>,
    pub fc_b: f64,
    pub prompt_general: DVector<f64>,
    pub prompt_specific: DVector<f64>,
    /// `d_m × d` projection per model id.
    pub projections: BTreeMap<String, DMatrix<f64>>,
}

/// Which block of [`RankerParams`] a flat slice belongs to.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamBlock {
    ModelTokens,
    Wq,
    Wk,
    Wv,
    FcW,
    FcB,
    PromptGeneral,
    PromptSpecific,
    Projection(String),
}

impl std::fmt::Display for ParamBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamBlock::ModelTokens => f.write_str("theta"),
            ParamBlock::Wq => f.write_str("wq"),
            ParamBlock::Wk => f.write_str("wk"),
            ParamBlock::Wv => f.write_str("wv"),
            ParamBlock::FcW => f.write_str("fc_w"),
            ParamBlock::FcB => f.write_str("fc_b"),
            ParamBlock::PromptGeneral => f.write_str("prompt_general"),
            ParamBlock::PromptSpecific => f.write_str("prompt_specific"),
            ParamBlock::Projection(id) => write!(f, "projection[{id}]"),
        }
    }
}

/// A parameter block viewed as a column-major `rows × cols` slice.
pub struct BlockView<'a> {
    pub block: ParamBlock,
    pub rows: usize,
    pub data: &'a [f64],
}

pub struct BlockViewMut<'a> {
    pub block: ParamBlock,
    pub rows: usize,
    pub data: &'a mut [f64],
}

impl RankerParams {
    /// Fresh parameters: Gaussian model tokens, attention and head weights with
    /// standard deviation `1/sqrt(d)`, small prompts, `1/sqrt(d_m)` projections.
    pub fn init(model_feat_dims: &[(String, usize)], d: usize, seed: u64) -> Result<Self> {
        let ids: Vec<String> = model_feat_dims.iter().map(|(id, _)| id.clone()).collect();
        let model_tokens = ModelTokens::init(ids, d, mix_seed(seed, &[0]))?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[1]));
        let w = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive std");
        let prompt = Normal::new(0.0, PROMPT_STD).expect("positive std");
        let mut gaussian = |rows, cols, dist: &Normal<f64>| DMatrix::from_fn(rows, cols, |_, _| dist.sample(&mut rng));
        let wq = gaussian(d, d, &w);
        let wk = gaussian(d, d, &w);
        let wv = gaussian(d, d, &w);
        let fc_w = DVector::from_column_slice(gaussian(d, 1, &w).as_slice());
        let prompt_general = DVector::from_column_slice(gaussian(d, 1, &prompt).as_slice());
        let prompt_specific = DVector::from_column_slice(gaussian(d, 1, &prompt).as_slice());
        let mut projections = BTreeMap::new();
        for (id, dm) in model_feat_dims {
            if *dm == 0 {
                return Err(Error::Config(format!("model {id} has zero feature dimension")));
            }
            let p = Normal::new(0.0, 1.0 / (*dm as f64).sqrt()).expect("positive std");
            projections.insert(id.clone(), gaussian(*dm, d, &p));
        }
        Ok(RankerParams {
            model_tokens,
            wq,
            wk,
            wv,
            fc_w,
            fc_b: 0.0,
            prompt_general,
            prompt_specific,
            projections,
        })
    }

    pub fn dim(&self) -> usize {
        self.model_tokens.dim()
    }

    pub fn n_models(&self) -> usize {
        self.model_tokens.len()
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_tokens.model_ids
    }

    pub fn theta(&self, m: usize) -> DVector<f64> {
        self.model_tokens.theta.row(m).transpose()
    }

    pub fn prompt(&self, kind: &TokenKind) -> &DVector<f64> {
        match kind {
            TokenKind::General => &self.prompt_general,
            TokenKind::Specific(_) => &self.prompt_specific,
        }
    }

    pub fn projection(&self, model_id: &str) -> Result<&DMatrix<f64>> {
        self.projections.get(model_id).ok_or_else(|| Error::Capability {
            model_id: model_id.to_string(),
            what: "no projection for specific tokens".into(),
        })
    }

    /// Same shapes, all zeros; used for gradients and optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for b in z.blocks_mut() {
            b.data.fill(0.0);
        }
        z
    }

    pub fn blocks(&self) -> Vec<BlockView<'_>> {
        let mut out = vec![
            BlockView { block: ParamBlock::ModelTokens, rows: self.model_tokens.theta.nrows(), data: self.model_tokens.theta.as_slice() },
            BlockView { block: ParamBlock::Wq, rows: self.wq.nrows(), data: self.wq.as_slice() },
            BlockView { block: ParamBlock::Wk, rows: self.wk.nrows(), data: self.wk.as_slice() },
            BlockView { block: ParamBlock::Wv, rows: self.wv.nrows(), data: self.wv.as_slice() },
            BlockView { block: ParamBlock::FcW, rows: self.fc_w.nrows(), data: self.fc_w.as_slice() },
            BlockView { block: ParamBlock::FcB, rows: 1, data: std::slice::from_ref(&self.fc_b) },
            BlockView { block: ParamBlock::PromptGeneral, rows: self.prompt_general.nrows(), data: self.prompt_general.as_slice() },
            BlockView { block: ParamBlock::PromptSpecific, rows: self.prompt_specific.nrows(), data: self.prompt_specific.as_slice() },
        ];
        for (id, p) in &self.projections {
            out.push(BlockView { block: ParamBlock::Projection(id.clone()), rows: p.nrows(), data: p.as_slice() });
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<BlockViewMut<'_>> {
        let mut out = vec![
            BlockViewMut { block: ParamBlock::ModelTokens, rows: self.model_tokens.theta.nrows(), data: self.model_tokens.theta.as_mut_slice() },
            BlockViewMut { block: ParamBlock::Wq, rows: self.wq.nrows(), data: self.wq.as_mut_slice() },
            BlockViewMut { block: ParamBlock::Wk, rows: self.wk.nrows(), data: self.wk.as_mut_slice() },
            BlockViewMut { block: ParamBlock::Wv, rows: self.wv.nrows(), data: self.wv.as_mut_slice() },
            BlockViewMut { block: ParamBlock::FcW, rows: self.fc_w.nrows(), data: self.fc_w.as_mut_slice() },
            BlockViewMut { block: ParamBlock::FcB, rows: 1, data: std::slice::from_mut(&mut self.fc_b) },
            BlockViewMut { block: ParamBlock::PromptGeneral, rows: self.prompt_general.nrows(), data: self.prompt_general.as_mut_slice() },
            BlockViewMut { block: ParamBlock::PromptSpecific, rows: self.prompt_specific.nrows(), data: self.prompt_specific.as_mut_slice() },
        ];
        for (id, p) in self.projections.iter_mut() {
            out.push(BlockViewMut { block: ParamBlock::Projection(id.clone()), rows: p.nrows(), data: p.as_mut_slice() });
        }
        out
    }

    pub fn n_coordinates(&self) -> usize {
        self.blocks().iter().map(|b| b.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.data.iter().all(|v| v.is_finite()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("projections")).map_err(|e| Error::io(dir, e))?;
        self.model_tokens.save(dir)?;
        let column = |v: &DVector<f64>| Matrix32::from_f64(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()));
        write_matrix(&dir.join("wq.mat"), &Matrix32::from_f64(&self.wq))?;
        write_matrix(&dir.join("wk.mat"), &Matrix32::from_f64(&self.wk))?;
        write_matrix(&dir.join("wv.mat"), &Matrix32::from_f64(&self.wv))?;
        write_matrix(&dir.join("fc_w.mat"), &column(&self.fc_w))?;
        write_matrix(&dir.join("prompt_general.mat"), &column(&self.prompt_general))?;
        write_matrix(&dir.join("prompt_specific.mat"), &column(&self.prompt_specific))?;
        let mut projection_dims = BTreeMap::new();
        for (i, (id, p)) in self.projections.iter().enumerate() {
            write_matrix(&dir.join("projections").join(format!("{i}.mat")), &Matrix32::from_f64(p))?;
            projection_dims.insert(id.clone(), ProjectionEntry { file: format!("{i}.mat"), feat_dim: p.nrows() });
        }
        let manifest = ParamsManifest { d: self.dim(), fc_b: self.fc_b, projections: projection_dims };
        let path = dir.join("params.json");
        let text = serde_json::to_string_pretty(&manifest).expect("serializable");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("params.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ParamsManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let d = manifest.d;
        let model_tokens = ModelTokens::load(dir)?;
        let load = |name: &str, rows: usize, cols: usize| -> Result<DMatrix<f64>> {
            let p = dir.join(name);
            let m = read_matrix(&p)?;
            if m.rows() != rows || m.cols() != cols {
                return Err(Error::format(&p, format!("dimension mismatch: expected {rows}x{cols}")));
            }
            Ok(m.to_f64())
        };
        let vector = |name: &str| -> Result<DVector<f64>> {
            Ok(DVector::from_column_slice(load(name, d, 1)?.as_slice()))
        };
        if model_tokens.dim() != d {
            return Err(Error::format(dir.join("theta.mat"), "token dimension disagrees with params.json"));
        }
        let mut projections = BTreeMap::new();
        for (id, entry) in &manifest.projections {
            let file = format!("projections/{}", entry.file);
            projections.insert(id.clone(), load(&file, entry.feat_dim, d)?);
        }
        Ok(RankerParams {
            model_tokens,
            wq: load("wq.mat", d, d)?,
            wk: load("wk.mat", d, d)?,
            wv: load("wv.mat", d, d)?,
            fc_w: vector("fc_w.mat")?,
            fc_b: manifest.fc_b,
            prompt_general: vector("prompt_general.mat")?,
            prompt_specific: vector("prompt_specific.mat")?,
            projections,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsManifest {
    d: usize,
    fc_b: f64,
    projections: BTreeMap<String, ProjectionEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectionEntry {
    file: String,
    feat_dim: usize,
}

/// Full residual attention over a `d × (1+C)` token matrix (tokens as
/// columns): `z + (softmax(Q Kᵀ / √d) V)ᵀ` with `Q = zᵀWq`, `K = zᵀWk`, `V = zᵀWv`.
pub fn attention_forward(
    z: &DMatrix<f64>,
    wq: &DMatrix<f64>,
    wk: &DMatrix<f64>,
    wv: &DMatrix<f64>,
) -> DMatrix<f64> {
    let d = z.nrows() as f64;
    let zt = z.transpose();
    let q = &zt * wq;
    let k = &zt * wk;
    let v = &zt * wv;
    let mut logits = (q * k.transpose()) / d.sqrt();
    for mut row in logits.row_iter_mut() {
        let max = row.max();
        row.apply(|x| *x = (*x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    z + (logits * v).transpose()
}

/// Intermediates of one similarity evaluation, kept for the backward pass.
///
/// Only position 0 of the attention output is read, so the forward pass
/// computes just that row: `q = Wqᵀ z_0`, logits `z_jᵀ Wk q / √d`,
/// `h = z_0 + Wvᵀ Σ_j a_j z_j`, score `fc_w · h + fc_b`.
pub struct SimilarityTape {
    /// Input sequence, position 0 first.
    pub z: DMatrix<f64>,
    q: DVector<f64>,
    u: DVector<f64>,
    attn: DVector<f64>,
    pooled: DVector<f64>,
    h: DVector<f64>,
    pub score: f64,
}

/// Gradient of the score with respect to the input sequence.
pub struct SequenceGrad {
    pub dz: DMatrix<f64>,
}

impl SimilarityTape {
    pub fn forward(z: DMatrix<f64>, params: &RankerParams) -> Self {
        let scale = (z.nrows() as f64).sqrt();
        let z0 = z.column(0);
        let q = params.wq.tr_mul(&z0);
        let u = &params.wk * &q;
        let mut attn = z.tr_mul(&u) / scale;
        let max = attn.max();
        attn.apply(|x| *x = (*x - max).exp());
        let sum = attn.sum();
        attn /= sum;
        let pooled = &z * &attn;
        let h = z0 + params.wv.tr_mul(&pooled);
        let score = params.fc_w.dot(&h) + params.fc_b;
        SimilarityTape { z, q, u, attn, pooled, h, score }
    }

    /// Accumulates `d_score · ∂score/∂(Wq, Wk, Wv, fc)` into `grads` and
    /// returns `∂score/∂z` scaled by `d_score`.
    pub fn backward(&self, d_score: f64, params: &RankerParams, grads: &mut RankerParams) -> SequenceGrad {
        let z = &self.z;
        let scale = (z.nrows() as f64).sqrt();
        // head
        grads.fc_w.axpy(d_score, &self.h, 1.0);
        grads.fc_b += d_score;
        let dh = &params.fc_w * d_score;
        // h = z0 + Wvᵀ pooled
        grads.wv.ger(1.0, &self.pooled, &dh, 1.0);
        let d_pooled = &params.wv * &dh;
        // pooled = z a
        let mut dz = &d_pooled * self.attn.transpose();
        let d_attn = z.tr_mul(&d_pooled);
        // softmax
        let inner = self.attn.dot(&d_attn);
        let d_logits = self.attn.component_mul(&d_attn.add_scalar(-inner));
        // logits = zᵀ u / √d
        let du = (z * &d_logits) / scale;
        dz.ger(1.0 / scale, &self.u, &d_logits, 1.0);
        // u = Wk q
        grads.wk.ger(1.0, &du, &self.q, 1.0);
        let dq = params.wk.tr_mul(&du);
        // q = Wqᵀ z0, plus the residual path
        let z0 = z.column(0);
        grads.wq.ger(1.0, &z0, &dq, 1.0);
        let mut dz0 = dz.column_mut(0);
        dz0 += &params.wq * &dq;
        dz0 += &dh;
        SequenceGrad { dz }
    }
}

/// Token sequence `[θ + p, centres + p]` for one model and task token.
pub fn token_sequence(theta: &DVector<f64>, token: &TaskToken, prompt: &DVector<f64>) -> DMatrix<f64> {
    let d = theta.len();
    let c = token.n_classes();
    let mut z = DMatrix::zeros(d, 1 + c);
    z.set_column(0, &(theta + prompt));
    for j in 0..c {
        z.set_column(1 + j, &(token.centers.column(j) + prompt));
    }
    z
}

pub fn similarity(theta: &DVector<f64>, token: &TaskToken, params: &RankerParams) -> Result<f64> {
    let d = params.dim();
    if theta.len() != d || token.dim() != d {
        return Err(Error::Shape(format!(
            "ranker dimension {d}, model token {}, task token {}",
            theta.len(),
            token.dim()
        )));
    }
    let z = token_sequence(theta, token, params.prompt(&token.kind));
    Ok(SimilarityTape::forward(z, params).score)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub scores: ScoreVector,
    pub order: Permutation,
    /// Number of top models re-scored with their own features; 0 = general only.
    pub k_used: usize,
    /// Model indices whose scores came from specific tokens.
    pub refreshed: Vec<usize>,
}

pub fn rank_zoo(token: &TaskToken, params: &RankerParams) -> Result<Ranking> {
    if !token.is_general() {
        return Err(Error::Consistency("rank_zoo expects a general task token".into()));
    }
    let values = (0..params.n_models())
        .map(|m| similarity(&params.theta(m), token, params))
        .collect::<Result<Vec<_>>>()?;
    let scores = ScoreVector::new("ranker", values)?;
    let order = dsc_order(&scores);
    Ok(Ranking { scores, order, k_used: 0, refreshed: Vec::new() })
}

/// Re-scores the top `k` of `base` with model-specific task tokens built from
/// each model's own features; other scores are left as they are.
pub fn rerank_top_k(
    base: &Ranking,
    task_banks: &BTreeMap<String, FeatureBank>,
    k: usize,
    params: &RankerParams,
) -> Result<Ranking> {
    let m_total = params.n_models();
    if k > m_total || base.scores.len() != m_total {
        return Err(Error::Config(format!("k = {k} with {m_total} models")));
    }
    let mut values = base.scores.values.clone();
    let top: Vec<usize> = base.order.top(k).to_vec();
    for &m in &top {
        let id = &params.model_ids()[m];
        let bank = task_banks.get(id).ok_or_else(|| Error::Capability {
            model_id: id.clone(),
            what: "no task feature bank for re-ranking".into(),
        })?;
        let token = build_specific_token(bank, params.projection(id)?)?;
        values[m] = similarity(&params.theta(m), &token, params)?;
    }
    let scores = ScoreVector::new("ranker", values)?;
    let order = dsc_order(&scores);
    let mut refreshed = top;
    refreshed.sort_unstable();
    Ok(Ranking { scores, order, k_used: k, refreshed })
}
