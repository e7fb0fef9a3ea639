use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rank_agg::{dsc_order_values, ScoreVector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Plackett–Luce likelihood of the ground-truth order, ties broken by index.
    #[default]
    Rank,
    /// Same likelihood with ground-truth ties broken by a seeded shuffle.
    ListMle,
    /// Squared error against the raw supervision values.
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "rank" => Ok(LossKind::Rank),
            "listmle" => Ok(LossKind::ListMle),
            "mse" => Ok(LossKind::Mse),
            _ => Err(crate::Error::Config(format!("unknown loss '{s}' (rank|listmle|mse)"))),
        }
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Negative log-likelihood of `order` under Plackett–Luce with `scores`,
/// and its gradient with respect to `scores`.
fn plackett_luce(scores: &[f64], order: &[usize]) -> (f64, Vec<f64>) {
    let m = order.len();
    let mut grad = vec![0.0; scores.len()];
    if m == 0 {
        return (0.0, grad);
    }
    // suffix[i] = log Σ_{l ≥ i} exp(s_order[l])
    let mut suffix = vec![0.0; m];
    suffix[m - 1] = scores[order[m - 1]];
    for i in (0..m - 1).rev() {
        suffix[i] = log_add_exp(scores[order[i]], suffix[i + 1]);
    }
    // Term i is softplus(suffix[i + 1] - s_i); written this way it stays
    // positive when the rest of the list is far below s_i.
    let mut loss = 0.0;
    for i in 0..m - 1 {
        let x = suffix[i + 1] - scores[order[i]];
        loss += x.max(0.0) + (-x.abs()).exp().ln_1p();
    }
    for l in 0..m {
        let s = scores[order[l]];
        let mut g = -1.0;
        for &lse in &suffix[..=l] {
            g += (s - lse).exp();
        }
        grad[order[l]] = g;
    }
    (loss, grad)
}

/// The listwise ranking loss: `Σ_m -log softmax over the not-yet-placed
/// models`, following the descending order of `gt`.
pub fn ranking_loss(scores: &ScoreVector, gt: &ScoreVector) -> f64 {
    let order = dsc_order_values(&gt.values).order;
    plackett_luce(&scores.values, &order).0
}

/// Loss and gradient for one list. `tie_seed` only matters for `ListMle`.
pub fn loss_and_grad(kind: LossKind, scores: &[f64], gt: &[f64], tie_seed: u64) -> (f64, Vec<f64>) {
    match kind {
        LossKind::Rank => plackett_luce(scores, &dsc_order_values(gt).order),
        LossKind::ListMle => {
            let mut idx: Vec<usize> = (0..gt.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(tie_seed));
            // Stable sort keeps the shuffled order within ties.
            idx.sort_by(|&a, &b| gt[b].partial_cmp(&gt[a]).unwrap_or(std::cmp::Ordering::Equal));
            plackett_luce(scores, &idx)
        }
        LossKind::Mse => {
            let m = scores.len() as f64;
            let mut loss = 0.0;
            let grad = scores
                .iter()
                .zip(gt)
                .map(|(s, t)| {
                    loss += (s - t) * (s - t) / m;
                    2.0 * (s - t) / m
                })
                .collect();
            (loss, grad)
        }
    }
}
