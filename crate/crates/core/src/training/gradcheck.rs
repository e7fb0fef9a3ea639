use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::grad::{batch_loss, loss_gradient, Batch, TaskExample};
use crate::error::{Error, Result};
use crate::ranker::RankerParams;
use crate::tokens::{TaskToken, TokenKind};

/// Above this many coordinates a seeded subsample is checked instead.
pub const FULL_CHECK_LIMIT: usize = 10_000;
/// Step sizes at or above this are dominated by truncation error.
pub const DISCRETIZATION_STEP: f64 = 1e-2;
/// Floor of the relative-error denominator, so near-zero derivatives are
/// compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Coordinate {
    pub block: String,
    pub row: usize,
    pub col: usize,
}

impl std::fmt::Display for Coordinate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}[{}, {}]", self.block, self.row, self.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// Large disagreement, but `h` is too coarse for it to mean anything.
    Discretization,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<Coordinate>,
    pub analytic: f64,
    pub numeric: f64,
    pub n_checked: usize,
    pub n_total: usize,
    pub verdict: Verdict,
}

/// Central differences of the batch loss against the analytic gradient.
pub fn finite_diff_check(params: &RankerParams, batch: &Batch, h: f64, tolerance: f64) -> Result<GradCheckReport> {
    let (_, analytic) = loss_gradient(params, batch)?;
    finite_diff_check_against(params, batch, &analytic, h, tolerance, 0)
}

/// As [`finite_diff_check`] but against a caller-supplied gradient; `seed`
/// picks the subsample when there are too many coordinates.
pub fn finite_diff_check_against(
    params: &RankerParams,
    batch: &Batch,
    analytic: &RankerParams,
    h: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite difference step must be positive, got {h}")));
    }
    let layout: Vec<(String, usize, usize)> =
        params.blocks().iter().map(|b| (b.block.to_string(), b.rows, b.data.len())).collect();
    let flat_analytic: Vec<f64> = analytic.blocks().iter().flat_map(|b| b.data.to_vec()).collect();
    let n_total: usize = layout.iter().map(|l| l.2).sum();
    if flat_analytic.len() != n_total {
        return Err(Error::Shape("analytic gradient does not match parameter layout".into()));
    }
    let picks: Vec<usize> = if n_total > FULL_CHECK_LIMIT {
        let mut v = index::sample(&mut ChaCha8Rng::seed_from_u64(seed), n_total, FULL_CHECK_LIMIT).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n_total).collect()
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        n_checked: picks.len(),
        n_total,
        verdict: Verdict::Pass,
    };
    for &flat in &picks {
        let (block, offset) = locate(&layout, flat);
        let original = params.blocks()[block].data[offset];
        set(&mut work, block, offset, original + h);
        let plus = batch_loss(&work, batch)?;
        set(&mut work, block, offset, original - h);
        let minus = batch_loss(&work, batch)?;
        set(&mut work, block, offset, original);
        let numeric = (plus - minus) / (2.0 * h);
        let a = flat_analytic[flat];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if err > report.max_rel_err || report.worst.is_none() {
            let (name, rows, _) = &layout[block];
            report.max_rel_err = err;
            report.worst = Some(Coordinate { block: name.clone(), row: offset % rows, col: offset / rows });
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    if report.max_rel_err >= tolerance {
        report.verdict = if h >= DISCRETIZATION_STEP { Verdict::Discretization } else { Verdict::Fail };
    }
    Ok(report)
}

fn locate(layout: &[(String, usize, usize)], mut flat: usize) -> (usize, usize) {
    for (i, (_, _, len)) in layout.iter().enumerate() {
        if flat < *len {
            return (i, flat);
        }
        flat -= len;
    }
    unreachable!("coordinate beyond parameter layout")
}

fn set(params: &mut RankerParams, block: usize, offset: usize, value: f64) {
    params.blocks_mut()[block].data[offset] = value;
}

/// A random problem for gradient checks: `m` models with feature sizes in
/// `d..=2d`, and `n_tasks` tasks of `c` classes with tie-free targets. Every
/// parameter is perturbed away from its initial value so no block sits at zero.
pub fn random_instance(d: usize, m: usize, c: usize, n_tasks: usize, seed: u64) -> Result<(RankerParams, Vec<TaskExample>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims: Vec<(String, usize)> = (0..m).map(|i| (format!("m{i}"), rng.random_range(d..=2 * d))).collect();
    let mut params = RankerParams::init(&dims, d, rng.random())?;
    for block in params.blocks_mut() {
        for v in block.data.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += 0.5 * e;
        }
    }
    let mut normal = |r: usize, k: usize| DMatrix::from_fn(r, k, |_, _| StandardNormal.sample(&mut rng));
    let examples = (0..n_tasks)
        .map(|_| {
            let general = TaskToken { centers: normal(d, c), class_ids: (0..c as u32).collect(), kind: TokenKind::General };
            let model_centers = dims.iter().map(|(_, dm)| normal(*dm, c)).collect();
            let target = normal(m, 1).as_slice().to_vec();
            TaskExample { general, model_centers, target }
        })
        .collect();
    Ok((params, examples))
}
