use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sampling::{TrainTask, TrainingPool};
use crate::error::{Error, Result};
use crate::estimators::{score_zoo, Method};
use crate::feature_bank::FeatureBank;
use crate::rank_agg::{copeland_aggregate, ScoreVector};

/// Which ranking the ranker is trained to reproduce.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupervisionSource {
    #[default]
    RankAgg,
    HScore,
    Nce,
    Leep,
    LogMe,
}

impl SupervisionSource {
    pub const ALL: [SupervisionSource; 5] = [
        SupervisionSource::RankAgg,
        SupervisionSource::HScore,
        SupervisionSource::Nce,
        SupervisionSource::Leep,
        SupervisionSource::LogMe,
    ];

    pub fn method(self) -> Option<Method> {
        match self {
            SupervisionSource::RankAgg => None,
            SupervisionSource::HScore => Some(Method::HScore),
            SupervisionSource::Nce => Some(Method::Nce),
            SupervisionSource::Leep => Some(Method::Leep),
            SupervisionSource::LogMe => Some(Method::LogMe),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self.method() {
            None => "rankagg",
            Some(m) => m.as_str(),
        }
    }
}

impl std::str::FromStr for SupervisionSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SupervisionSource::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown supervision '{s}' (rankagg|hscore|nce|leep|logme)")))
    }
}

/// All four estimator rankings of one class set, plus their Copeland aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct Supervision {
    /// In `Method::ALL` order.
    pub per_method: Vec<ScoreVector>,
    pub aggregate: ScoreVector,
}

impl Supervision {
    pub fn compute(model_banks: &[FeatureBank]) -> Result<Self> {
        let per_method = Method::ALL
            .iter()
            .map(|&m| score_zoo(model_banks, m))
            .collect::<Result<Vec<_>>>()?;
        let aggregate = copeland_aggregate(&per_method)?;
        Ok(Supervision { per_method, aggregate })
    }

    pub fn target(&self, source: SupervisionSource) -> &ScoreVector {
        match source.method() {
            None => &self.aggregate,
            Some(m) => &self.per_method[Method::ALL.iter().position(|&x| x == m).unwrap()],
        }
    }
}

/// Class-set signature → supervision. Tasks over the same classes share one
/// entry, whichever rows they happened to sample.
#[derive(Debug, Default)]
pub struct SupervisionCache {
    entries: Mutex<HashMap<u64, Arc<Supervision>>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl SupervisionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, signature: u64) -> Option<Arc<Supervision>> {
        self.entries.lock().unwrap().get(&signature).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    /// Keeps an existing entry if another caller got there first.
    fn insert(&self, signature: u64, value: Supervision) -> Arc<Supervision> {
        self.entries.lock().unwrap().entry(signature).or_insert_with(|| Arc::new(value)).clone()
    }
}

fn supervise_one(task: &TrainTask, pool: &TrainingPool, cache: &SupervisionCache) -> Result<Arc<Supervision>> {
    if let Some(hit) = cache.get(task.signature) {
        cache.hits.fetch_add(1, Ordering::Relaxed);
        return Ok(hit);
    }
    cache.misses.fetch_add(1, Ordering::Relaxed);
    let banks = task.materialize(pool)?;
    Ok(cache.insert(task.signature, Supervision::compute(&banks.models)?))
}

/// The aggregated ranking `t̄` for `task`, from the cache when possible.
pub fn compute_supervision(task: &TrainTask, pool: &TrainingPool, cache: &SupervisionCache) -> Result<ScoreVector> {
    Ok(supervise_one(task, pool, cache)?.aggregate.clone())
}

/// Supervision for every task. Distinct signatures are scored in parallel;
/// each one is computed from the first task that carries it, so the result
/// does not depend on scheduling.
pub fn supervise_all(tasks: &[TrainTask], pool: &TrainingPool, cache: &SupervisionCache) -> Result<Vec<Arc<Supervision>>> {
    let mut first: Vec<&TrainTask> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for t in tasks {
        if cache.get(t.signature).is_none() && seen.insert(t.signature) {
            first.push(t);
        }
    }
    first.par_iter().map(|t| supervise_one(t, pool, cache).map(|_| ())).collect::<Result<Vec<()>>>()?;
    cache.hits.fetch_add(tasks.len() - first.len(), Ordering::Relaxed);
    Ok(tasks.iter().map(|t| cache.get(t.signature).expect("filled above")).collect())
}
