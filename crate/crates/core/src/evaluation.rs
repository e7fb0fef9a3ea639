//! Held-out evaluation of estimators, their aggregate and a trained ranker.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimators::{score_zoo, Method};
use crate::metrics::weighted_kendall_tau;
use crate::rank_agg::{copeland_aggregate, ScoreVector};
use crate::ranker::{rank_zoo, rerank_top_k, Ranking, RankerParams};
use crate::synth::{Benchmark, EvalTask};
use crate::tokens::build_task_token;

/// The four estimator score vectors of a task followed by their Copeland aggregate.
pub fn baseline_scores(task: &EvalTask) -> Result<Vec<ScoreVector>> {
    let mut out = Method::ALL.iter().map(|&m| score_zoo(&task.models, m)).collect::<Result<Vec<_>>>()?;
    out.push(copeland_aggregate(&out)?);
    Ok(out)
}

/// Ranker scores for a task, re-ranking the top `k` (clamped to `M`).
pub fn ranker_ranking(task: &EvalTask, params: &RankerParams, k: usize) -> Result<Ranking> {
    let token = build_task_token(&task.probe)?;
    let base = rank_zoo(&token, params)?;
    if k == 0 {
        return Ok(base);
    }
    rerank_top_k(&base, &task.model_bank_map(), k.min(params.n_models()), params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub task_id: String,
    /// One τ_w per report column.
    pub tau_w: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub columns: Vec<String>,
    pub rows: Vec<EvalRow>,
    pub mean: Vec<f64>,
}

impl EvalReport {
    pub fn mean_of(&self, column: &str) -> Option<f64> {
        self.columns.iter().position(|c| c == column).map(|i| self.mean[i])
    }

    /// Header plus one line per task and a final `mean` line.
    pub fn to_csv(&self) -> String {
        let mut out = format!("task_id,{}\n", self.columns.join(","));
        let line = |id: &str, v: &[f64]| {
            format!("{id},{}\n", v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(","))
        };
        for row in &self.rows {
            out.push_str(&line(&row.task_id, &row.tau_w));
        }
        out.push_str(&line("mean", &self.mean));
        out
    }
}

pub fn ranker_column(k: usize) -> String {
    format!("ranker_k{k}")
}

/// τ_w against the oracle for every estimator, RankAgg, the oracle itself
/// and, when `params` is given, the ranker at each re-ranking depth in `ks`.
pub fn evaluate(bench: &Benchmark, params: Option<&RankerParams>, ks: &[usize]) -> Result<EvalReport> {
    let mut columns: Vec<String> = Method::ALL.iter().map(|m| m.as_str().to_string()).collect();
    columns.push("rankagg".into());
    columns.push("oracle".into());
    if params.is_some() {
        columns.extend(ks.iter().map(|&k| ranker_column(k)));
    }
    let rows = bench
        .eval_tasks
        .par_iter()
        .map(|task| {
            let gt = &task.ground_truth;
            let mut tau = Vec::with_capacity(columns.len());
            for s in baseline_scores(task)? {
                tau.push(weighted_kendall_tau(&s, gt)?.tau_w);
            }
            tau.push(weighted_kendall_tau(gt, gt)?.tau_w);
            if let Some(p) = params {
                for &k in ks {
                    tau.push(weighted_kendall_tau(&ranker_ranking(task, p, k)?.scores, gt)?.tau_w);
                }
            }
            Ok(EvalRow { task_id: task.task_id.clone(), tau_w: tau })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len().max(1) as f64;
    let mean = (0..columns.len()).map(|c| rows.iter().map(|r| r.tau_w[c]).sum::<f64>() / n).collect();
    Ok(EvalReport { columns, rows, mean })
}
