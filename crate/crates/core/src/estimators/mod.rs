//! Base transferability estimators. Each maps a model's features on a
//! labelled target task to a single number, higher meaning more transferable.

mod hscore;
mod leep;
mod logme;
mod nce;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_bank::FeatureBank;
use crate::rank_agg::ScoreVector;

pub use hscore::h_score;
pub use leep::leep;
pub use logme::{logme, logme_trace, LogMeTrace};
pub use nce::{nce, pseudo_labels};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    HScore,
    Nce,
    Leep,
    LogMe,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::HScore, Method::Nce, Method::Leep, Method::LogMe];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::HScore => "hscore",
            Method::Nce => "nce",
            Method::Leep => "leep",
            Method::LogMe => "logme",
        }
    }

    pub fn needs_source_probs(self) -> bool {
        matches!(self, Method::Nce | Method::Leep)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method '{s}' (hscore|nce|leep|logme)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorScore {
    pub method: Method,
    pub value: f64,
    /// Only LogME iterates; the others are always `true`.
    pub converged: bool,
}

impl EstimatorScore {
    pub(crate) fn exact(method: Method, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Degenerate(format!("{method} produced a non-finite score")));
        }
        Ok(EstimatorScore { method, value, converged: true })
    }
}

/// Runs one estimator on one bank.
pub fn score_bank(bank: &FeatureBank, method: Method) -> Result<EstimatorScore> {
    let labels = bank.labels_usize();
    let probs = || {
        bank.source_probs.as_ref().ok_or_else(|| Error::Capability {
            model_id: bank.model_id().to_string(),
            what: format!("{method} needs source_probs but the bank has none"),
        })
    };
    match method {
        Method::HScore => h_score(&bank.features_f64(), &labels),
        Method::LogMe => logme(&bank.features_f64(), &labels),
        Method::Nce => nce(&pseudo_labels(&probs()?.to_f64()), &labels),
        Method::Leep => leep(&probs()?.to_f64(), &labels),
    }
}

/// Scores every model of a zoo on the same task, preserving input order.
pub fn score_zoo(banks: &[FeatureBank], method: Method) -> Result<ScoreVector> {
    check_same_task(banks)?;
    let values = banks
        .iter()
        .map(|b| score_bank(b, method).map(|s| s.value))
        .collect::<Result<Vec<_>>>()?;
    ScoreVector::new(method.as_str(), values)
}

pub(crate) fn check_same_task(banks: &[FeatureBank]) -> Result<()> {
    let Some(first) = banks.first() else {
        return Err(Error::Consistency("empty model zoo".into()));
    };
    for b in &banks[1..] {
        if b.manifest.dataset_id != first.manifest.dataset_id {
            return Err(Error::Consistency(format!(
                "model {} is on dataset '{}', model {} on '{}'",
                first.model_id(),
                first.manifest.dataset_id,
                b.model_id(),
                b.manifest.dataset_id
            )));
        }
        if b.n_samples() != first.n_samples() || b.labels != first.labels {
            return Err(Error::Consistency(format!(
                "model {} disagrees with model {} on samples or labels",
                b.model_id(),
                first.model_id()
            )));
        }
    }
    Ok(())
}

pub(crate) fn class_counts(labels: &[usize]) -> Vec<usize> {
    let c = labels.iter().max().map_or(0, |&m| m + 1);
    let mut counts = vec![0; c];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}
