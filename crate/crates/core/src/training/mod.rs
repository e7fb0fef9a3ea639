//! Supervision, task sampling, the ranking loss, exact gradients and the
//! optimisation loop that fits [`RankerParams`].

mod grad;
mod gradcheck;
mod loss;
mod optim;
mod sampling;
mod supervision;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranker::RankerParams;
use crate::tokens::{build_task_token, class_centers};
use crate::util::mix_seed;

pub use grad::{batch_loss, grad_norm, item_scores, loss_gradient, Batch, BatchItem, TaskExample};
pub use gradcheck::{
    finite_diff_check, finite_diff_check_against, random_instance, Coordinate, GradCheckReport, Verdict, DISCRETIZATION_STEP,
    FULL_CHECK_LIMIT, REL_FLOOR,
};
pub use loss::{loss_and_grad, ranking_loss, LossKind};
pub use optim::Adam;
pub use sampling::{class_signature, sample_tasks, ClassSamples, SourceDataset, Span, TaskBanks, TrainTask, TrainingPool};
pub use supervision::{compute_supervision, supervise_all, Supervision, SupervisionCache, SupervisionSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_tasks: usize,
    pub classes_per_task: Span,
    pub samples_per_class: Span,
    pub d: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Chance that a task in a batch mixes in specific tokens.
    pub p_spec: f64,
    /// How many models get specific tokens when it does, clamped to the zoo size.
    pub k_spec: Span,
    pub seed: u64,
    pub loss: LossKind,
    pub supervision: SupervisionSource,
    /// Start each projection as the ridge map from the model's features to the
    /// probe features on the source datasets, instead of at random.
    pub align_projections: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_tasks: 256,
            classes_per_task: [4, 8],
            samples_per_class: [10, 25],
            d: 64,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            epochs: 30,
            p_spec: 0.5,
            k_spec: [10, 10],
            seed: 0,
            loss: LossKind::Rank,
            supervision: SupervisionSource::RankAgg,
            align_projections: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        sampling::check_span("classes_per_task", self.classes_per_task)?;
        sampling::check_span("samples_per_class", self.samples_per_class)?;
        sampling::check_span("k_spec", self.k_spec)?;
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(0.0..=1.0).contains(&self.p_spec) {
            return bad("p_spec must lie in [0, 1]");
        }
        if self.n_tasks == 0 || self.batch_size == 0 || self.d == 0 {
            return bad("n_tasks, batch_size and d must be positive");
        }
        if !(self.learning_rate >= 0.0) || !(self.epsilon > 0.0) {
            return bad("learning_rate must be >= 0 and epsilon > 0");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: RankerParams,
    pub initial: RankerParams,
    pub trace: Vec<TraceEntry>,
    pub tasks: Vec<TrainTask>,
}

/// Tokens, per-model centres and the chosen supervision for every task.
pub fn prepare_examples(
    tasks: &[TrainTask],
    pool: &TrainingPool,
    cache: &SupervisionCache,
    source: SupervisionSource,
) -> Result<Vec<TaskExample>> {
    let supervision = supervise_all(tasks, pool, cache)?;
    tasks
        .par_iter()
        .zip(supervision.par_iter())
        .map(|(task, sup)| {
            let banks = task.materialize(pool)?;
            let mut general = build_task_token(&banks.probe)?;
            general.class_ids = task.class_ids.clone();
            let model_centers = banks.models.iter().map(class_centers).collect::<Result<Vec<_>>>()?;
            Ok(TaskExample { general, model_centers, target: sup.target(source).values.clone() })
        })
        .collect()
}

/// Samples tasks, builds supervision and fits a ranker.
pub fn train(pool: &TrainingPool, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_cache(pool, config, &SupervisionCache::new())
}

/// As [`train`], sharing estimator results through `cache` (useful when the
/// same tasks are trained against several supervision sources).
pub fn train_with_cache(pool: &TrainingPool, config: &TrainConfig, cache: &SupervisionCache) -> Result<TrainOutcome> {
    config.validate()?;
    let probe_dim = pool.datasets[0].probe.feat_dim();
    if probe_dim != config.d {
        return Err(Error::Config(format!("d = {} but the probe encoder produces {probe_dim} features", config.d)));
    }
    let tasks = sample_tasks(
        pool,
        config.n_tasks,
        config.classes_per_task,
        config.samples_per_class,
        mix_seed(config.seed, &[0]),
    )?;
    let examples = prepare_examples(&tasks, pool, cache, config.supervision)?;
    let mut initial = RankerParams::init(&pool.model_feat_dims(), config.d, mix_seed(config.seed, &[1]))?;
    if config.align_projections {
        align_projections(&mut initial, pool)?;
    }
    let (params, trace) = fit(initial.clone(), &examples, config)?;
    Ok(TrainOutcome { params, initial, trace, tasks })
}

/// Relative ridge strength for [`align_projections`].
const RIDGE: f64 = 1e-3;

/// Sets every projection to the ridge solution of `centresᵀ_m P ≈ centresᵀ_probe`
/// over the source classes, so a specific token starts out close to the
/// general one. Fitting class centres rather than rows keeps per-sample
/// feature noise from shrinking the map.
pub fn align_projections(params: &mut RankerParams, pool: &TrainingPool) -> Result<()> {
    let probe: Vec<_> = pool.datasets.iter().map(|ds| class_centers(&ds.probe)).collect::<Result<_>>()?;
    for (m, id) in pool.model_ids.iter().enumerate() {
        let dm = pool.datasets[0].models[m].feat_dim();
        let mut gram = nalgebra::DMatrix::<f64>::zeros(dm, dm);
        let mut cross = nalgebra::DMatrix::<f64>::zeros(dm, params.dim());
        for (ds, psi) in pool.datasets.iter().zip(&probe) {
            let phi = class_centers(&ds.models[m])?;
            gram += &phi * phi.transpose();
            cross += &phi * psi.transpose();
        }
        let lambda = RIDGE * gram.trace() / dm as f64;
        for i in 0..dm {
            gram[(i, i)] += lambda.max(f64::MIN_POSITIVE);
        }
        let p = gram
            .cholesky()
            .ok_or_else(|| Error::Degenerate(format!("model {id}: centre Gram matrix is not positive definite")))?
            .solve(&cross);
        params.projections.insert(id.clone(), p);
    }
    Ok(())
}

/// The optimisation loop over prepared examples.
pub fn fit(mut params: RankerParams, examples: &[TaskExample], config: &TrainConfig) -> Result<(RankerParams, Vec<TraceEntry>)> {
    config.validate()?;
    let m = params.n_models();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &[2]));
    let mut adam = Adam::new(&params, config.learning_rate, config.adam_beta1, config.adam_beta2, config.epsilon);
    let mut trace = Vec::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let k_max = config.k_spec[1].min(m);
    let k_min = config.k_spec[0].min(k_max);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let items = chunk
                .iter()
                .map(|&i| {
                    let specific = if k_max > 0 && rng.random_bool(config.p_spec) {
                        let k = rng.random_range(k_min.max(1)..=k_max);
                        let mut s = index::sample(&mut rng, m, k).into_vec();
                        s.sort_unstable();
                        s
                    } else {
                        Vec::new()
                    };
                    BatchItem { example: &examples[i], specific, tie_seed: rng.random() }
                })
                .collect();
            let batch = Batch { items, loss: config.loss };
            let step = trace.len();
            let (loss, grads) = loss_gradient(&params, &batch)?;
            let norm = grad_norm(&grads);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(Error::Training { step, msg: format!("loss {loss}, gradient norm {norm}") });
            }
            adam.step(&mut params, &grads);
            if !params.is_finite() {
                return Err(Error::Training { step, msg: "parameters became non-finite".into() });
            }
            trace.push(TraceEntry { step, epoch, loss, grad_norm: norm });
        }
    }
    Ok((params, trace))
}
