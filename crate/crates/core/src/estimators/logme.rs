use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{class_counts, EstimatorScore, Method};
use crate::error::{Error, Result};

const MAX_ITERS: usize = 100;
const REL_TOL: f64 = 1e-6;
const PRECISION_BOUNDS: (f64, f64) = (1e-10, 1e10);

/// Per-target evidence traces produced while fitting LogME.
#[derive(Clone, Debug)]
pub struct LogMeTrace {
    /// Log evidence (not yet divided by `N`) after each accepted iterate,
    /// starting with the initial `α = β = 1`; one trace per target column.
    pub evidence: Vec<Vec<f64>>,
    pub converged: bool,
    pub value: f64,
}

/// LogME: mean over one-hot target columns of the maximised per-sample log
/// evidence of a Bayesian linear regression on the features.
pub fn logme(features: &DMatrix<f64>, labels: &[usize]) -> Result<EstimatorScore> {
    let trace = logme_trace(features, labels)?;
    if !trace.value.is_finite() {
        return Err(Error::Degenerate("logme evidence is not finite".into()));
    }
    Ok(EstimatorScore { method: Method::LogMe, value: trace.value, converged: trace.converged })
}

pub fn logme_trace(features: &DMatrix<f64>, labels: &[usize]) -> Result<LogMeTrace> {
    let (n, d) = features.shape();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} feature rows but {} labels", labels.len())));
    }
    if n < 2 {
        return Err(Error::Degenerate("logme needs at least 2 samples".into()));
    }
    let counts = class_counts(labels);
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::Degenerate("logme needs every class non-empty".into()));
    }
    let svd = features.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let spectrum = Spectrum {
        eig: svd.singular_values.map(|s| s * s),
        n: n as f64,
        d: d as f64,
    };

    let mut traces = Vec::with_capacity(counts.len());
    let mut converged = true;
    let mut total = 0.0;
    for class in 0..counts.len() {
        let y = DVector::from_iterator(n, labels.iter().map(|&l| f64::from(l == class)));
        let proj = u.tr_mul(&y);
        let x2 = proj.map(|v| v * v);
        let perp = (y.norm_squared() - x2.sum()).max(0.0);
        let (trace, ok) = spectrum.maximise(&x2, perp);
        converged &= ok;
        total += trace.last().copied().unwrap() / spectrum.n;
        traces.push(trace);
    }
    Ok(LogMeTrace { evidence: traces, converged, value: total / counts.len() as f64 })
}

/// Squared singular values of the feature matrix plus its shape.
struct Spectrum {
    eig: DVector<f64>,
    n: f64,
    d: f64,
}

/// Sufficient statistics of the posterior at fixed `(α, β)`.
struct Posterior {
    evidence: f64,
    gamma: f64,
    mean_sq: f64,
    resid_sq: f64,
    trace_cov: f64,
    trace_fitted_cov: f64,
}

impl Spectrum {
    /// `x2` holds squared projections of the target on the left singular
    /// vectors, `perp` the squared residual outside their span.
    fn posterior(&self, x2: &DVector<f64>, perp: f64, alpha: f64, beta: f64) -> Posterior {
        let k = self.eig.len() as f64;
        let mut p = Posterior {
            evidence: 0.0,
            gamma: 0.0,
            mean_sq: 0.0,
            resid_sq: perp,
            trace_cov: (self.d - k) / alpha,
            trace_fitted_cov: 0.0,
        };
        let mut log_det = (self.d - k) * alpha.ln();
        for (&s, &x) in self.eig.iter().zip(x2.iter()) {
            let denom = alpha + beta * s;
            log_det += denom.ln();
            p.gamma += beta * s / denom;
            p.mean_sq += beta * beta * s * x / (denom * denom);
            p.resid_sq += x * alpha * alpha / (denom * denom);
            p.trace_cov += 1.0 / denom;
            p.trace_fitted_cov += s / denom;
        }
        p.evidence = 0.5 * self.d * alpha.ln() + 0.5 * self.n * beta.ln()
            - 0.5 * log_det
            - 0.5 * beta * p.resid_sq
            - 0.5 * alpha * p.mean_sq
            - 0.5 * self.n * (2.0 * PI).ln();
        p
    }

    /// Fixed-point maximisation of the evidence over `(α, β)`.
    ///
    /// Each step takes the MacKay update; if that would lower the evidence it
    /// falls back to the EM update, which never does.
    fn maximise(&self, x2: &DVector<f64>, perp: f64) -> (Vec<f64>, bool) {
        let clamp = |v: f64| v.clamp(PRECISION_BOUNDS.0, PRECISION_BOUNDS.1);
        let (mut alpha, mut beta) = (1.0, 1.0);
        let mut post = self.posterior(x2, perp, alpha, beta);
        let mut trace = vec![post.evidence];
        for _ in 0..MAX_ITERS {
            let mackay = (
                clamp(post.gamma / post.mean_sq),
                clamp((self.n - post.gamma) / post.resid_sq),
            );
            let mut next = mackay;
            let mut next_post = self.posterior(x2, perp, next.0, next.1);
            if !(next_post.evidence >= post.evidence) {
                next = (
                    clamp(self.d / (post.mean_sq + post.trace_cov)),
                    clamp(self.n / (post.resid_sq + post.trace_fitted_cov)),
                );
                next_post = self.posterior(x2, perp, next.0, next.1);
                if !(next_post.evidence >= post.evidence) {
                    // Neither step improves: numerically at the optimum.
                    return (trace, true);
                }
            }
            let done = rel_change(alpha, next.0) < REL_TOL && rel_change(beta, next.1) < REL_TOL;
            alpha = next.0;
            beta = next.1;
            post = next_post;
            trace.push(post.evidence);
            if done {
                return (trace, true);
            }
        }
        (trace, false)
    }
}

fn rel_change(old: f64, new: f64) -> f64 {
    (new - old).abs() / old.abs()
}
