//! Score vectors, descending orders, and Copeland rank aggregation.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One score per model, higher meaning more transferable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub values: Vec<f64>,
    pub method_tag: String,
}

impl ScoreVector {
    pub fn new(method_tag: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!("non-finite score at index {i}")));
        }
        Ok(ScoreVector { values, method_tag: method_tag.into() })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A bijection on `0..M`; `order[r]` is the model placed at rank `r`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    pub order: Vec<usize>,
}

impl Permutation {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `ranks()[m]` is the zero-based position of model `m`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.order.len()];
        for (r, &m) in self.order.iter().enumerate() {
            ranks[m] = r;
        }
        ranks
    }

    pub fn top(&self, k: usize) -> &[usize] {
        &self.order[..k.min(self.order.len())]
    }
}

/// Indices sorted by descending value, ties by ascending index.
pub fn dsc_order_values(values: &[f64]) -> Permutation {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b].partial_cmp(&values[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    Permutation { order }
}

pub fn dsc_order(scores: &ScoreVector) -> Permutation {
    dsc_order_values(&scores.values)
}

/// Copeland aggregation of several rankings of the same `M` models.
///
/// For every pair, the model preferred by more of the input rankings wins a
/// point; an even split gives both half a point. Exact score ties inside one
/// ranking are a preference for neither side.
pub fn copeland_aggregate(rankings: &[ScoreVector]) -> Result<ScoreVector> {
    let first = rankings
        .first()
        .ok_or_else(|| Error::Shape("copeland aggregation needs at least one ranking".into()))?;
    let m = first.len();
    if let Some(bad) = rankings.iter().find(|r| r.len() != m) {
        return Err(Error::Shape(format!(
            "ranking '{}' has {} entries, expected {m}",
            bad.method_tag,
            bad.len()
        )));
    }
    let mut totals = vec![0.0; m];
    for a in 0..m {
        for b in (a + 1)..m {
            let (mut wins_a, mut wins_b) = (0usize, 0usize);
            for r in rankings {
                match r.values[a].partial_cmp(&r.values[b]) {
                    Some(Ordering::Greater) => wins_a += 1,
                    Some(Ordering::Less) => wins_b += 1,
                    _ => {}
                }
            }
            match wins_a.cmp(&wins_b) {
                Ordering::Greater => totals[a] += 1.0,
                Ordering::Less => totals[b] += 1.0,
                Ordering::Equal => {
                    totals[a] += 0.5;
                    totals[b] += 0.5;
                }
            }
        }
    }
    ScoreVector::new("rankagg", totals)
}
