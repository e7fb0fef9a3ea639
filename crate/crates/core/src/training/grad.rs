use nalgebra::DMatrix;
use rayon::prelude::*;

use super::loss::{loss_and_grad, LossKind};
use crate::error::{Error, Result};
use crate::ranker::{token_sequence, RankerParams, SimilarityTape};
use crate::tokens::{TaskToken, TokenKind};

/// Everything a training step needs about one task.
#[derive(Clone, Debug)]
pub struct TaskExample {
    pub general: TaskToken,
    /// Class centres in each model's own feature space (`d_m × C`), zoo order.
    pub model_centers: Vec<DMatrix<f64>>,
    /// Supervision values, one per model.
    pub target: Vec<f64>,
}

/// A task plus the models that see their specific token in this step.
#[derive(Clone, Debug)]
pub struct BatchItem<'a> {
    pub example: &'a TaskExample,
    pub specific: Vec<usize>,
    pub tie_seed: u64,
}

#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub items: Vec<BatchItem<'a>>,
    pub loss: LossKind,
}

impl<'a> Batch<'a> {
    /// Every item uses general tokens only.
    pub fn general(examples: &'a [TaskExample], loss: LossKind) -> Self {
        let items = examples.iter().map(|e| BatchItem { example: e, specific: Vec::new(), tie_seed: 0 }).collect();
        Batch { items, loss }
    }
}

fn sequence(params: &RankerParams, item: &BatchItem, m: usize) -> DMatrix<f64> {
    let theta = params.theta(m);
    if item.specific.contains(&m) {
        let id = &params.model_ids()[m];
        let p = &params.projections[id];
        let token = TaskToken {
            centers: p.tr_mul(&item.example.model_centers[m]),
            class_ids: item.example.general.class_ids.clone(),
            kind: TokenKind::Specific(id.clone()),
        };
        token_sequence(&theta, &token, &params.prompt_specific)
    } else {
        token_sequence(&theta, &item.example.general, &params.prompt_general)
    }
}

fn check_item(params: &RankerParams, item: &BatchItem) -> Result<()> {
    let m = params.n_models();
    let ex = item.example;
    if ex.target.len() != m || ex.model_centers.len() != m {
        return Err(Error::Shape(format!("task carries {} targets for {m} models", ex.target.len())));
    }
    if ex.general.dim() != params.dim() {
        return Err(Error::Shape(format!("task token dimension {} vs ranker {}", ex.general.dim(), params.dim())));
    }
    for &s in &item.specific {
        let id = params.model_ids().get(s).ok_or_else(|| Error::Shape(format!("specific model index {s}")))?;
        let p = params.projection(id)?;
        if p.nrows() != ex.model_centers[s].nrows() {
            return Err(Error::Shape(format!("model {id}: projection rows {} vs features {}", p.nrows(), ex.model_centers[s].nrows())));
        }
    }
    Ok(())
}

/// Predicted scores of every model for one batch item.
pub fn item_scores(params: &RankerParams, item: &BatchItem) -> Vec<f64> {
    (0..params.n_models()).map(|m| SimilarityTape::forward(sequence(params, item, m), params).score).collect()
}

fn item_loss_grad(params: &RankerParams, item: &BatchItem, loss: LossKind) -> (f64, RankerParams) {
    let tapes: Vec<SimilarityTape> =
        (0..params.n_models()).map(|m| SimilarityTape::forward(sequence(params, item, m), params)).collect();
    let scores: Vec<f64> = tapes.iter().map(|t| t.score).collect();
    let (value, d_scores) = loss_and_grad(loss, &scores, &item.example.target, item.tie_seed);
    let mut grads = params.zeros_like();
    for (m, tape) in tapes.iter().enumerate() {
        let dz = tape.backward(d_scores[m], params, &mut grads).dz;
        // z_0 = θ_m + p, z_j = token_j + p
        let mut row = grads.model_tokens.theta.row_mut(m);
        row += dz.column(0).transpose();
        let d_prompt = dz.column_sum();
        let d_tokens = dz.columns(1, dz.ncols() - 1);
        if item.specific.contains(&m) {
            grads.prompt_specific += d_prompt;
            let id = &params.model_ids()[m];
            let dp = grads.projections.get_mut(id).expect("checked");
            // token = Pᵀ centres  ⇒  dP = centres · d_tokensᵀ
            dp.gemm(1.0, &item.example.model_centers[m], &d_tokens.transpose(), 1.0);
        } else {
            grads.prompt_general += d_prompt;
        }
    }
    (value, grads)
}

/// Mean batch loss and its exact gradient with respect to every parameter.
pub fn loss_gradient(params: &RankerParams, batch: &Batch) -> Result<(f64, RankerParams)> {
    if batch.items.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    for item in &batch.items {
        check_item(params, item)?;
    }
    let parts: Vec<(f64, RankerParams)> =
        batch.items.par_iter().map(|item| item_loss_grad(params, item, batch.loss)).collect();
    // Summed in item order so the result does not depend on thread count.
    let scale = 1.0 / parts.len() as f64;
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for (value, g) in &parts {
        loss += value;
        for (dst, src) in total.blocks_mut().into_iter().zip(g.blocks()) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += s;
            }
        }
    }
    for b in total.blocks_mut() {
        b.data.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss * scale, total))
}

/// Mean batch loss without gradients.
pub fn batch_loss(params: &RankerParams, batch: &Batch) -> Result<f64> {
    for item in &batch.items {
        check_item(params, item)?;
    }
    let total: f64 = batch
        .items
        .iter()
        .map(|item| loss_and_grad(batch.loss, &item_scores(params, item), &item.example.target, item.tie_seed).0)
        .sum();
    Ok(total / batch.items.len() as f64)
}

pub fn grad_norm(grads: &RankerParams) -> f64 {
    grads.blocks().iter().flat_map(|b| b.data.iter()).map(|v| v * v).sum::<f64>().sqrt()
}
