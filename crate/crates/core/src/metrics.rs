//! Ranking quality: weighted and plain Kendall's τ, top-k overlap, and the
//! per-cluster similarity table behind spider charts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rank_agg::{dsc_order, dsc_order_values, ScoreVector};
use crate::ranker::{similarity, RankerParams};
use crate::tokens::TaskToken;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauResult {
    pub tau_w: f64,
    pub tau: f64,
    pub n_pairs: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauWeighting {
    /// Weights from ground-truth ranks only.
    #[default]
    GroundTruth,
    /// Average of the weights under the ground-truth and the predicted ranks.
    /// Not comparable with the default; kept for cross-checking.
    Symmetric,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Hyperbolic weighted Kendall's τ with weights `1/(r_i+1) + 1/(r_j+1)`,
/// `r` being zero-based ranks under the ground truth.
pub fn weighted_kendall_tau(predicted: &ScoreVector, ground_truth: &ScoreVector) -> Result<TauResult> {
    weighted_kendall_tau_with(predicted, ground_truth, TauWeighting::GroundTruth)
}

pub fn weighted_kendall_tau_with(
    predicted: &ScoreVector,
    ground_truth: &ScoreVector,
    weighting: TauWeighting,
) -> Result<TauResult> {
    let m = ground_truth.len();
    if predicted.len() != m {
        return Err(Error::Shape(format!("{} predicted scores vs {m} ground-truth scores", predicted.len())));
    }
    if m < 2 {
        return Err(Error::Degenerate("kendall tau needs at least 2 models".into()));
    }
    let gt_rank = dsc_order(ground_truth).ranks();
    let pred_rank = dsc_order(predicted).ranks();
    let w = |r: &[usize], i: usize, j: usize| 1.0 / (r[i] + 1) as f64 + 1.0 / (r[j] + 1) as f64;
    let (p, g) = (&predicted.values, &ground_truth.values);
    let (mut num_w, mut den_w, mut num) = (0.0, 0.0, 0.0);
    for i in 0..m {
        for j in (i + 1)..m {
            let weight = match weighting {
                TauWeighting::GroundTruth => w(&gt_rank, i, j),
                TauWeighting::Symmetric => 0.5 * (w(&gt_rank, i, j) + w(&pred_rank, i, j)),
            };
            let agree = sign(p[i] - p[j]) * sign(g[i] - g[j]);
            num_w += weight * agree;
            den_w += weight;
            num += agree;
        }
    }
    let n_pairs = m * (m - 1) / 2;
    Ok(TauResult { tau_w: num_w / den_w, tau: num / n_pairs as f64, n_pairs })
}

/// Shared fraction of the two top-`k` sets.
pub fn topk_overlap(predicted: &ScoreVector, ground_truth: &ScoreVector, k: usize) -> Result<f64> {
    let m = ground_truth.len();
    if predicted.len() != m {
        return Err(Error::Shape(format!("{} predicted scores vs {m} ground-truth scores", predicted.len())));
    }
    if k == 0 || k > m {
        return Err(Error::Config(format!("k = {k} must lie in [1, {m}]")));
    }
    let a = dsc_order_values(&predicted.values);
    let b = dsc_order_values(&ground_truth.values);
    let shared = a.top(k).iter().filter(|x| b.top(k).contains(x)).count();
    Ok(shared as f64 / k as f64)
}

/// `chart[model_id][cluster]` = mean similarity of the model to the cluster's tokens.
pub type SpiderChart = BTreeMap<String, BTreeMap<String, f64>>;

pub fn spider_chart_data(params: &RankerParams, clusters: &BTreeMap<String, Vec<TaskToken>>) -> Result<SpiderChart> {
    for (name, tokens) in clusters {
        if tokens.is_empty() {
            return Err(Error::Degenerate(format!("cluster '{name}' has no tokens")));
        }
        if let Some(t) = tokens.iter().find(|t| !t.is_general()) {
            return Err(Error::Consistency(format!("cluster '{name}' holds a {:?} token", t.kind)));
        }
    }
    let mut chart = SpiderChart::new();
    for (m, id) in params.model_ids().iter().enumerate() {
        let theta = params.theta(m);
        let row = chart.entry(id.clone()).or_default();
        for (name, tokens) in clusters {
            let total = tokens.iter().map(|t| similarity(&theta, t, params)).sum::<Result<f64>>()?;
            row.insert(name.clone(), total / tokens.len() as f64);
        }
    }
    Ok(chart)
}

/// `model_id,cluster,score` lines with a header.
pub fn spider_chart_csv(chart: &SpiderChart) -> String {
    let mut out = String::from("model_id,cluster,score\n");
    for (model, row) in chart {
        for (cluster, score) in row {
            out.push_str(&format!("{model},{cluster},{score}\n"));
        }
    }
    out
}
