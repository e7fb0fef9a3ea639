use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_bank::FeatureBank;
use crate::util::mix_seed;

/// One labelled source dataset seen through the probe encoder and every zoo model.
#[derive(Clone, Debug)]
pub struct SourceDataset {
    pub name: String,
    /// Global class id of each local label.
    pub class_ids: Vec<u32>,
    pub probe: FeatureBank,
    /// One bank per zoo model, in zoo order, rows aligned with `probe`.
    pub models: Vec<FeatureBank>,
    rows_by_class: Vec<Vec<usize>>,
}

impl SourceDataset {
    pub fn new(name: impl Into<String>, class_ids: Vec<u32>, probe: FeatureBank, models: Vec<FeatureBank>) -> Result<Self> {
        let name = name.into();
        if class_ids.len() != probe.n_classes() {
            return Err(Error::Consistency(format!(
                "dataset {name}: {} class ids for {} classes",
                class_ids.len(),
                probe.n_classes()
            )));
        }
        for bank in &models {
            if bank.labels != probe.labels {
                return Err(Error::Consistency(format!(
                    "dataset {name}: model {} rows are not aligned with the probe bank",
                    bank.model_id()
                )));
            }
        }
        let mut rows_by_class = vec![Vec::new(); class_ids.len()];
        for (row, &label) in probe.labels.iter().enumerate() {
            rows_by_class[label as usize].push(row);
        }
        Ok(SourceDataset { name, class_ids, probe, models, rows_by_class })
    }

    pub fn rows_of(&self, local_class: usize) -> &[usize] {
        &self.rows_by_class[local_class]
    }
}

/// The training split: source datasets that share one model zoo.
#[derive(Clone, Debug)]
pub struct TrainingPool {
    pub model_ids: Vec<String>,
    pub datasets: Vec<SourceDataset>,
}

impl TrainingPool {
    pub fn new(datasets: Vec<SourceDataset>) -> Result<Self> {
        let first = datasets.first().ok_or_else(|| Error::Capacity("no source datasets".into()))?;
        let model_ids: Vec<String> = first.models.iter().map(|b| b.model_id().to_string()).collect();
        if model_ids.is_empty() {
            return Err(Error::Capacity("empty model zoo".into()));
        }
        let mut seen = HashSet::new();
        for ds in &datasets {
            let ids: Vec<&str> = ds.models.iter().map(FeatureBank::model_id).collect();
            if ids != model_ids {
                return Err(Error::Consistency(format!("dataset {} has a different model list", ds.name)));
            }
            for &c in &ds.class_ids {
                if !seen.insert(c) {
                    return Err(Error::Consistency(format!("class {c} appears in more than one dataset")));
                }
            }
        }
        Ok(TrainingPool { model_ids, datasets })
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_classes(&self) -> usize {
        self.datasets.iter().map(|d| d.class_ids.len()).sum()
    }

    /// `(model_id, feat_dim)` for every zoo model.
    pub fn model_feat_dims(&self) -> Vec<(String, usize)> {
        self.datasets[0].models.iter().map(|b| (b.model_id().to_string(), b.feat_dim())).collect()
    }
}

/// Rows of one class of a sampled task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSamples {
    pub dataset: usize,
    pub local_class: usize,
    pub rows: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainTask {
    /// Ascending global class ids; local label `i` is `class_ids[i]`.
    pub class_ids: Vec<u32>,
    pub sample_indices: Vec<ClassSamples>,
    pub signature: u64,
}

/// Order-independent hash of a class set.
pub fn class_signature(class_ids: &[u32]) -> u64 {
    let mut sorted = class_ids.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let path: Vec<u64> = sorted.iter().map(|&c| u64::from(c)).collect();
    mix_seed(path.len() as u64, &path)
}

/// Per-task banks, restricted to the task's rows and relabelled `0..C`.
pub struct TaskBanks {
    pub probe: FeatureBank,
    pub models: Vec<FeatureBank>,
}

impl TrainTask {
    pub fn n_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn materialize(&self, pool: &TrainingPool) -> Result<TaskBanks> {
        let task_id = format!("task_{:016x}", self.signature);
        let extract = |pick: &dyn Fn(&SourceDataset) -> &FeatureBank| -> Result<FeatureBank> {
            let mut parts = Vec::new();
            for (label, cs) in self.sample_indices.iter().enumerate() {
                let bank = pick(&pool.datasets[cs.dataset]);
                parts.push((bank, &cs.rows, label as u32));
            }
            concat_rows(&parts, self.n_classes(), &task_id)
        };
        let probe = extract(&|ds| &ds.probe)?;
        let models = (0..pool.n_models())
            .map(|m| extract(&|ds: &SourceDataset| &ds.models[m]))
            .collect::<Result<Vec<_>>>()?;
        Ok(TaskBanks { probe, models })
    }
}

fn concat_rows(parts: &[(&FeatureBank, &Vec<usize>, u32)], n_classes: usize, task_id: &str) -> Result<FeatureBank> {
    let head = parts[0].0;
    let cols = head.feat_dim();
    let src_cols = head.source_probs.as_ref().map(|p| p.cols());
    let mut features = Vec::new();
    let mut probs = src_cols.map(|_| Vec::new());
    let mut labels = Vec::new();
    for &(bank, rows, label) in parts {
        for &r in rows {
            features.extend_from_slice(bank.features.row(r));
            if let (Some(out), Some(p)) = (probs.as_mut(), bank.source_probs.as_ref()) {
                out.extend_from_slice(p.row(r));
            }
            labels.push(label);
        }
    }
    let n = labels.len();
    let features = crate::feature_bank::Matrix32::new(n, cols, features)?;
    let probs = match (probs, src_cols) {
        (Some(p), Some(c)) => Some(crate::feature_bank::Matrix32::new(n, c, p)?),
        _ => None,
    };
    FeatureBank::from_parts(head.model_id(), task_id, n_classes, features, labels, probs, head.manifest.seed)
}

/// Inclusive `[min, max]` range, serialised as a two-element array.
pub type Span = [usize; 2];

pub(crate) fn check_span(name: &str, span: Span) -> Result<()> {
    if span[0] > span[1] {
        return Err(Error::Config(format!("{name} range [{}, {}] is empty", span[0], span[1])));
    }
    Ok(())
}

/// Samples `n_tasks` training tasks.
///
/// Each task first picks 1 to 4 source datasets (more if the drawn class
/// count does not fit), then classes across them without replacement, then
/// rows per class without replacement.
pub fn sample_tasks(
    pool: &TrainingPool,
    n_tasks: usize,
    classes_per_task: Span,
    samples_per_class: Span,
    seed: u64,
) -> Result<Vec<TrainTask>> {
    check_span("classes_per_task", classes_per_task)?;
    check_span("samples_per_class", samples_per_class)?;
    if classes_per_task[0] < 2 {
        return Err(Error::Config("tasks need at least 2 classes".into()));
    }
    if samples_per_class[0] < 1 {
        return Err(Error::Config("tasks need at least 1 sample per class".into()));
    }
    if pool.n_classes() < classes_per_task[1] {
        return Err(Error::Capacity(format!(
            "{} source classes cannot fill tasks of {} classes",
            pool.n_classes(),
            classes_per_task[1]
        )));
    }
    for ds in &pool.datasets {
        for c in 0..ds.class_ids.len() {
            if ds.rows_of(c).len() < samples_per_class[0] {
                return Err(Error::Capacity(format!(
                    "class {} of {} has {} rows, fewer than {}",
                    ds.class_ids[c],
                    ds.name,
                    ds.rows_of(c).len(),
                    samples_per_class[0]
                )));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_ds = pool.datasets.len();
    let mut tasks = Vec::with_capacity(n_tasks);
    for _ in 0..n_tasks {
        let n_classes = rng.random_range(classes_per_task[0]..=classes_per_task[1]);
        let base = rng.random_range(1..=n_ds.min(4));
        let mut ds_order: Vec<usize> = (0..n_ds).collect();
        ds_order.shuffle(&mut rng);
        let mut chosen = Vec::new();
        let mut available = 0;
        for &ds in &ds_order {
            if chosen.len() >= base && available >= n_classes {
                break;
            }
            chosen.push(ds);
            available += pool.datasets[ds].class_ids.len();
        }
        chosen.sort_unstable();
        let candidates: Vec<(usize, usize)> = chosen
            .iter()
            .flat_map(|&ds| (0..pool.datasets[ds].class_ids.len()).map(move |c| (ds, c)))
            .collect();
        let mut picked: Vec<(u32, ClassSamples)> = index::sample(&mut rng, candidates.len(), n_classes)
            .into_iter()
            .map(|i| {
                let (ds, c) = candidates[i];
                let rows = pool.datasets[ds].rows_of(c);
                let want = rng.random_range(samples_per_class[0]..=samples_per_class[1]).min(rows.len());
                let mut chosen_rows: Vec<usize> =
                    index::sample(&mut rng, rows.len(), want).into_iter().map(|j| rows[j]).collect();
                chosen_rows.sort_unstable();
                (pool.datasets[ds].class_ids[c], ClassSamples { dataset: ds, local_class: c, rows: chosen_rows })
            })
            .collect();
        picked.sort_by_key(|(id, _)| *id);
        let class_ids: Vec<u32> = picked.iter().map(|(id, _)| *id).collect();
        tasks.push(TrainTask {
            signature: class_signature(&class_ids),
            class_ids,
            sample_indices: picked.into_iter().map(|(_, s)| s).collect(),
        });
    }
    Ok(tasks)
}
