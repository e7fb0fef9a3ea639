//! Synthetic model zoo, benchmark generator and probe-accuracy oracle.
//!
//! Classes live in a latent space grouped into domains: each domain has a
//! centre and a low-rank subspace in which its classes vary. A model is a
//! linear extractor whose rows lean toward the span of the classes it was
//! "pre-trained" on, so it separates tasks from those domains better.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_bank::{read_bank, write_bank, FeatureBank, Matrix32};
use crate::rank_agg::ScoreVector;
use crate::training::{SourceDataset, Span, TrainingPool};
use crate::util::mix_seed;

/// Spread of domain centres and of classes within a domain.
const DOMAIN_SCALE: f64 = 2.0;
const CLASS_SCALE: f64 = 1.5;
/// Weight of the source-aligned part of an extractor; the rest is isotropic.
const SOURCE_WEIGHT: f64 = 0.7;
/// Share of a model's source classes taken from its home domain.
const HOME_SHARE: f64 = 1.0;
/// Per-model feature noise is `noise_sigma` times a factor drawn from this range.
const FEATURE_NOISE: (f64, f64) = (0.1, 2.0);
const VAR_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZooConfig {
    pub n_models: usize,
    pub latent_dim: usize,
    pub n_global_classes: usize,
    pub n_domains: usize,
    /// Dimension of the subspace each domain's classes vary in.
    pub domain_rank: usize,
    pub source_classes_per_model: usize,
    pub feat_dim: Span,
    pub probe_dim: usize,
    pub noise_sigma: f64,
    pub n_eval_classes: usize,
    pub n_eval_tasks: usize,
    pub classes_per_eval_task: Span,
    pub train_samples_per_class: usize,
    pub test_samples_per_class: usize,
    pub n_source_datasets: usize,
    pub source_samples_per_class: usize,
    pub seed: u64,
}

impl Default for ZooConfig {
    fn default() -> Self {
        ZooConfig {
            n_models: 10,
            latent_dim: 32,
            n_global_classes: 40,
            n_domains: 4,
            domain_rank: 6,
            source_classes_per_model: 8,
            feat_dim: [16, 64],
            probe_dim: 64,
            noise_sigma: 1.5,
            n_eval_classes: 12,
            n_eval_tasks: 50,
            classes_per_eval_task: [3, 6],
            train_samples_per_class: 10,
            test_samples_per_class: 30,
            n_source_datasets: 4,
            source_samples_per_class: 30,
            seed: 0,
        }
    }
}

impl ZooConfig {
    /// A three-model world that builds in milliseconds, for tests and examples.
    pub fn small() -> Self {
        ZooConfig {
            n_models: 3,
            latent_dim: 12,
            n_global_classes: 16,
            n_domains: 2,
            domain_rank: 3,
            source_classes_per_model: 4,
            feat_dim: [6, 10],
            probe_dim: 8,
            noise_sigma: 1.0,
            n_eval_classes: 4,
            n_eval_tasks: 4,
            classes_per_eval_task: [2, 3],
            train_samples_per_class: 5,
            test_samples_per_class: 5,
            n_source_datasets: 2,
            source_samples_per_class: 12,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let config = |msg: String| Err(Error::Config(msg));
        if self.n_models == 0 || self.latent_dim == 0 || self.probe_dim == 0 || self.n_domains == 0 {
            return config("n_models, latent_dim, probe_dim and n_domains must be positive".into());
        }
        if self.feat_dim[0] == 0 || self.feat_dim[0] > self.feat_dim[1] {
            return config(format!("feat_dim range {:?} is empty or zero", self.feat_dim));
        }
        if self.source_classes_per_model < 2 || self.source_classes_per_model > self.n_global_classes {
            return config(format!(
                "source_classes_per_model = {} must lie in [2, {}]",
                self.source_classes_per_model, self.n_global_classes
            ));
        }
        if self.domain_rank == 0 || self.domain_rank > self.latent_dim {
            return config(format!("domain_rank = {} must lie in [1, latent_dim]", self.domain_rank));
        }
        let [c_lo, c_hi] = self.classes_per_eval_task;
        if c_lo < 2 || c_lo > c_hi {
            return config(format!("classes_per_eval_task {:?} must be a range starting at >= 2", self.classes_per_eval_task));
        }
        if self.latent_dim < c_hi {
            return config(format!("latent_dim {} < classes_per_eval_task max {c_hi}", self.latent_dim));
        }
        if !(self.noise_sigma >= 0.0) {
            return config("noise_sigma must be >= 0".into());
        }
        if self.train_samples_per_class == 0 || self.test_samples_per_class == 0 {
            return config("eval tasks need train and test samples per class".into());
        }
        if self.n_eval_tasks == 0 {
            return config("n_eval_tasks must be positive".into());
        }
        if self.n_eval_classes == 0 || self.n_eval_classes < c_hi {
            return Err(Error::Capacity(format!(
                "{} evaluation classes cannot fill eval tasks of up to {c_hi} classes",
                self.n_eval_classes
            )));
        }
        let n_train = self.n_global_classes.saturating_sub(self.n_eval_classes);
        if self.n_source_datasets == 0 || self.n_source_datasets > self.n_domains || n_train < 2 * self.n_source_datasets {
            return Err(Error::Capacity(format!(
                "{n_train} training classes in {} domains cannot form {} source datasets of >= 2 classes",
                self.n_domains, self.n_source_datasets
            )));
        }
        if self.source_samples_per_class < 2 {
            return config("source_samples_per_class must be >= 2".into());
        }
        Ok(())
    }
}

/// One synthetic pre-trained model.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub id: String,
    pub home_domain: usize,
    pub source_classes: Vec<u32>,
    /// `d_m × D` linear extractor.
    pub extractor: DMatrix<f64>,
    pub feature_noise: f64,
}

/// Latent class structure, the zoo of extractors and the probe encoder.
#[derive(Clone, Debug)]
pub struct Zoo {
    pub config: ZooConfig,
    /// `D × n_global_classes`, one prototype per column.
    pub prototypes: DMatrix<f64>,
    pub class_domain: Vec<usize>,
    pub models: Vec<ModelSpec>,
    /// `probe_dim × D`.
    pub probe: DMatrix<f64>,
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn orthonormal(a: DMatrix<f64>) -> DMatrix<f64> {
    let k = a.ncols().min(a.nrows());
    a.qr().q().columns(0, k).into_owned()
}

pub fn generate_zoo(config: &ZooConfig) -> Result<Zoo> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &[0]));
    let d = config.latent_dim;
    let centres = gaussian(d, config.n_domains, &mut rng) * DOMAIN_SCALE;
    let bases: Vec<DMatrix<f64>> =
        (0..config.n_domains).map(|_| orthonormal(gaussian(d, config.domain_rank, &mut rng))).collect();
    let class_domain: Vec<usize> = (0..config.n_global_classes).map(|c| c % config.n_domains).collect();
    let mut prototypes = DMatrix::zeros(d, config.n_global_classes);
    for (c, &k) in class_domain.iter().enumerate() {
        let v = DVector::from_fn(config.domain_rank, |_, _| StandardNormal.sample(&mut rng)) * CLASS_SCALE;
        prototypes.set_column(c, &(centres.column(k) + &bases[k] * v));
    }

    let mut models = Vec::with_capacity(config.n_models);
    for m in 0..config.n_models {
        let home = m % config.n_domains;
        let s = config.source_classes_per_model;
        let mut home_classes: Vec<u32> = (0..config.n_global_classes as u32).filter(|&c| class_domain[c as usize] == home).collect();
        home_classes.shuffle(&mut rng);
        let n_home = ((s as f64 * HOME_SHARE).round() as usize).min(home_classes.len());
        let mut source: Vec<u32> = home_classes[..n_home].to_vec();
        let mut rest: Vec<u32> = (0..config.n_global_classes as u32).filter(|c| !source.contains(c)).collect();
        rest.shuffle(&mut rng);
        source.extend_from_slice(&rest[..s - n_home]);
        source.sort_unstable();

        let dm = rng.random_range(config.feat_dim[0]..=config.feat_dim[1]);
        let cols: Vec<usize> = source.iter().map(|&c| c as usize).collect();
        let span = orthonormal(prototypes.select_columns(&cols));
        let r = span.ncols();
        let towards = gaussian(dm, r, &mut rng) * span.transpose() / (r as f64).sqrt();
        let iso = gaussian(dm, d, &mut rng) / (d as f64).sqrt();
        let extractor = towards * SOURCE_WEIGHT + iso * (1.0 - SOURCE_WEIGHT);
        let feature_noise = config.noise_sigma * rng.random_range(FEATURE_NOISE.0..=FEATURE_NOISE.1);
        models.push(ModelSpec { id: format!("model_{m:02}"), home_domain: home, source_classes: source, extractor, feature_noise });
    }
    let probe = gaussian(config.probe_dim, d, &mut rng) / (d as f64).sqrt();
    Ok(Zoo { config: config.clone(), prototypes, class_domain, models, probe })
}

/// Latent instances of one labelled set.
pub struct Instances {
    /// `n × D`, one instance per row.
    pub x: DMatrix<f64>,
    /// Local labels `0..C` in `class_ids` order.
    pub labels: Vec<u32>,
    pub class_ids: Vec<u32>,
}

impl Zoo {
    pub fn model_ids(&self) -> Vec<String> {
        self.models.iter().map(|m| m.id.clone()).collect()
    }

    /// `per_class` noisy draws around each class prototype; `class_ids` is sorted.
    pub fn sample_instances(&self, class_ids: &[u32], per_class: usize, seed: u64) -> Instances {
        let mut class_ids = class_ids.to_vec();
        class_ids.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.config.latent_dim;
        let mut x = DMatrix::zeros(class_ids.len() * per_class, d);
        let mut labels = Vec::with_capacity(x.nrows());
        for (local, &c) in class_ids.iter().enumerate() {
            for i in 0..per_class {
                let row = local * per_class + i;
                for j in 0..d {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    x[(row, j)] = self.prototypes[(j, c as usize)] + self.config.noise_sigma * e;
                }
                labels.push(local as u32);
            }
        }
        Instances { x, labels, class_ids }
    }

    pub fn probe_bank(&self, inst: &Instances, dataset_id: &str, seed: u64) -> Result<FeatureBank> {
        let features = Matrix32::from_f64(&(&inst.x * self.probe.transpose()));
        FeatureBank::from_parts("probe", dataset_id, inst.class_ids.len(), features, inst.labels.clone(), None, seed)
    }

    /// Model `m`'s features plus a source head: softmax of negative half
    /// squared distances to its source prototypes in its own feature space.
    pub fn model_bank(&self, m: usize, inst: &Instances, dataset_id: &str, seed: u64) -> Result<FeatureBank> {
        let spec = &self.models[m];
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[m as u64 + 1]));
        let noise = Normal::new(0.0, spec.feature_noise.max(f64::MIN_POSITIVE)).expect("finite std");
        let mut phi = &inst.x * spec.extractor.transpose();
        if spec.feature_noise > 0.0 {
            phi.apply(|v| *v += noise.sample(&mut rng));
        }
        let cols: Vec<usize> = spec.source_classes.iter().map(|&c| c as usize).collect();
        let heads = &spec.extractor * self.prototypes.select_columns(&cols);
        // Per-coordinate feature variance around a class head, floored for the noiseless case.
        let var = (spec.feature_noise.powi(2)
            + self.config.noise_sigma.powi(2) * spec.extractor.norm_squared() / spec.extractor.nrows() as f64)
            .max(VAR_FLOOR);
        let mut probs = DMatrix::zeros(phi.nrows(), heads.ncols());
        for i in 0..phi.nrows() {
            let row = phi.row(i).transpose();
            let logits: Vec<f64> = (0..heads.ncols()).map(|s| -0.5 * (&row - heads.column(s)).norm_squared() / var).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let sum: f64 = exp.iter().sum();
            for (s, e) in exp.iter().enumerate() {
                probs[(i, s)] = e / sum;
            }
        }
        FeatureBank::from_parts(
            spec.id.clone(),
            dataset_id,
            inst.class_ids.len(),
            Matrix32::from_f64(&phi),
            inst.labels.clone(),
            Some(Matrix32::from_f64(&probs)),
            seed,
        )
    }

    /// Probe bank and one bank per model for a fresh draw over `class_ids`.
    pub fn task_banks(&self, class_ids: &[u32], per_class: usize, dataset_id: &str, seed: u64) -> Result<(FeatureBank, Vec<FeatureBank>)> {
        let inst = self.sample_instances(class_ids, per_class, mix_seed(seed, &[0]));
        let probe = self.probe_bank(&inst, dataset_id, seed)?;
        let models = (0..self.models.len()).map(|m| self.model_bank(m, &inst, dataset_id, seed)).collect::<Result<_>>()?;
        Ok((probe, models))
    }
}

/// Nearest-class-mean accuracy on a seeded stratified split.
///
/// Identical rows are grouped before splitting, in first-occurrence order,
/// so duplicating the bank leaves the split, the class means and the
/// accuracy unchanged. A class whose rows are all identical is split row by
/// row. The split seed is the bank manifest's `seed`.
pub fn probe_oracle(bank: &FeatureBank, split_fraction: f64) -> Result<f64> {
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(Error::Config(format!("split_fraction {split_fraction} must lie in (0, 1)")));
    }
    let c = bank.n_classes();
    // unique rows per class, each with its multiplicity's row indices
    let mut units: Vec<Vec<Vec<usize>>> = vec![Vec::new(); c];
    let mut seen: BTreeMap<(u32, Vec<u32>), (usize, usize)> = BTreeMap::new();
    for (i, &label) in bank.labels.iter().enumerate() {
        let key = (label, bank.features.row(i).iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let class_units = &mut units[label as usize];
        match seen.get(&key) {
            Some(&(_, u)) => class_units[u].push(i),
            None => {
                seen.insert(key, (label as usize, class_units.len()));
                class_units.push(vec![i]);
            }
        }
    }
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for (class, mut list) in units.into_iter().enumerate() {
        if list.len() == 1 && list[0].len() >= 2 {
            // Every row is the same point, so any split gives the same class mean.
            list = list[0].iter().map(|&i| vec![i]).collect();
        }
        let n = list.len();
        if n < 2 {
            return Err(Error::Degenerate(format!("class {class} has {n} samples; the split needs 2")));
        }
        list.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(bank.manifest.seed, &[class as u64])));
        let n_train = ((n as f64 * split_fraction).round() as usize).clamp(1, n - 1);
        for (j, unit) in list.into_iter().enumerate() {
            if j < n_train { train_rows.extend(unit) } else { test_rows.extend(unit) }
        }
    }
    let d = bank.feat_dim();
    let mut means = DMatrix::<f64>::zeros(c, d);
    let mut counts = vec![0usize; c];
    for &i in &train_rows {
        let label = bank.labels[i] as usize;
        counts[label] += 1;
        for (j, &v) in bank.features.row(i).iter().enumerate() {
            means[(label, j)] += f64::from(v);
        }
    }
    for (class, &n) in counts.iter().enumerate() {
        means.row_mut(class).unscale_mut(n as f64);
    }
    let correct = test_rows
        .iter()
        .filter(|&&i| {
            let x: Vec<f64> = bank.features.row(i).iter().map(|&v| f64::from(v)).collect();
            let dist = |class: usize| -> f64 { (0..d).map(|j| (x[j] - means[(class, j)]).powi(2)).sum() };
            let best = (0..c).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap();
            best == bank.labels[i] as usize
        })
        .count();
    Ok(correct as f64 / test_rows.len() as f64)
}

/// A held-out task with its banks and oracle ranking.
#[derive(Clone, Debug)]
pub struct EvalTask {
    pub task_id: String,
    pub class_ids: Vec<u32>,
    pub probe: FeatureBank,
    pub models: Vec<FeatureBank>,
    pub ground_truth: ScoreVector,
}

impl EvalTask {
    pub fn model_bank_map(&self) -> BTreeMap<String, FeatureBank> {
        self.models.iter().map(|b| (b.model_id().to_string(), b.clone())).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub config: ZooConfig,
    pub model_ids: Vec<String>,
    pub train_classes: Vec<u32>,
    pub eval_classes: Vec<u32>,
    pub pool: TrainingPool,
    pub eval_tasks: Vec<EvalTask>,
}

impl Benchmark {
    pub fn split_fraction(&self) -> f64 {
        split_fraction(&self.config)
    }
}

fn split_fraction(config: &ZooConfig) -> f64 {
    let tr = config.train_samples_per_class as f64;
    tr / (tr + config.test_samples_per_class as f64)
}

/// Picks classes for an eval task: one or two domains first, more if they
/// hold too few evaluation classes.
fn draw_eval_classes(zoo: &Zoo, eval_classes: &[u32], rng: &mut ChaCha8Rng) -> Vec<u32> {
    let cfg = &zoo.config;
    let want = rng.random_range(cfg.classes_per_eval_task[0]..=cfg.classes_per_eval_task[1]);
    let base = rng.random_range(1..=cfg.n_domains.min(2));
    let mut domains: Vec<usize> = (0..cfg.n_domains).collect();
    domains.shuffle(rng);
    let mut pool: Vec<u32> = Vec::new();
    for (i, &k) in domains.iter().enumerate() {
        if i >= base && pool.len() >= want {
            break;
        }
        pool.extend(eval_classes.iter().filter(|&&c| zoo.class_domain[c as usize] == k));
    }
    let mut picked: Vec<u32> = index::sample(rng, pool.len(), want).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    picked
}

pub fn build_benchmark(config: &ZooConfig) -> Result<Benchmark> {
    let zoo = generate_zoo(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &[1]));
    // Stratify the evaluation-only classes across domains.
    let mut by_domain: Vec<Vec<u32>> = vec![Vec::new(); config.n_domains];
    for c in 0..config.n_global_classes as u32 {
        by_domain[zoo.class_domain[c as usize]].push(c);
    }
    for list in &mut by_domain {
        list.shuffle(&mut rng);
    }
    let mut eval_classes = Vec::new();
    let mut cursor = 0;
    while eval_classes.len() < config.n_eval_classes {
        let list = &mut by_domain[cursor % config.n_domains];
        if let Some(c) = list.pop() {
            eval_classes.push(c);
        }
        cursor += 1;
    }
    eval_classes.sort_unstable();
    let mut train_classes: Vec<u32> = (0..config.n_global_classes as u32).filter(|c| !eval_classes.contains(c)).collect();

    // Each source dataset holds the training classes of whole domains.
    train_classes.shuffle(&mut rng);
    let mut groups: Vec<Vec<u32>> = vec![Vec::new(); config.n_source_datasets];
    for &c in &train_classes {
        groups[zoo.class_domain[c as usize] % config.n_source_datasets].push(c);
    }
    if let Some((i, g)) = groups.iter().enumerate().find(|(_, g)| g.len() < 2) {
        return Err(Error::Capacity(format!("source dataset {i} would hold {} training classes", g.len())));
    }
    train_classes.sort_unstable();
    let datasets = groups
        .into_par_iter()
        .enumerate()
        .map(|(i, mut classes)| {
            classes.sort_unstable();
            let name = format!("source_{i}");
            let seed = mix_seed(config.seed, &[2, i as u64]);
            let (probe, models) = zoo.task_banks(&classes, config.source_samples_per_class, &name, seed)?;
            SourceDataset::new(name, classes, probe, models)
        })
        .collect::<Result<Vec<_>>>()?;
    let pool = TrainingPool::new(datasets)?;

    let task_classes: Vec<Vec<u32>> = (0..config.n_eval_tasks).map(|_| draw_eval_classes(&zoo, &eval_classes, &mut rng)).collect();
    let per_class = config.train_samples_per_class + config.test_samples_per_class;
    let frac = split_fraction(config);
    let eval_tasks = task_classes
        .into_par_iter()
        .enumerate()
        .map(|(t, class_ids)| {
            let task_id = format!("task_{t:03}");
            let seed = mix_seed(config.seed, &[3, t as u64]);
            let (probe, models) = zoo.task_banks(&class_ids, per_class, &task_id, seed)?;
            let acc = models.iter().map(|b| probe_oracle(b, frac)).collect::<Result<Vec<_>>>()?;
            Ok(EvalTask { task_id, class_ids, probe, models, ground_truth: ScoreVector::new("oracle", acc)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Benchmark { config: config.clone(), model_ids: zoo.model_ids(), train_classes, eval_classes, pool, eval_tasks })
}

pub const BENCHMARK_FILE: &str = "benchmark.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchmarkFile {
    config: ZooConfig,
    model_ids: Vec<String>,
    train_classes: Vec<u32>,
    eval_classes: Vec<u32>,
    split_fraction: f64,
    train: Vec<DatasetEntry>,
    eval: Vec<EvalEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetEntry {
    name: String,
    class_ids: Vec<u32>,
    dir: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalEntry {
    task_id: String,
    class_ids: Vec<u32>,
    dir: String,
    ground_truth: Vec<f64>,
}

fn write_group(dir: &Path, probe: &FeatureBank, models: &[FeatureBank]) -> Result<()> {
    fs::create_dir_all(dir.join("models")).map_err(|e| Error::io(dir, e))?;
    write_bank(probe, &dir.join("probe"))?;
    for b in models {
        write_bank(b, &dir.join("models").join(b.model_id()))?;
    }
    Ok(())
}

fn read_group(dir: &Path, model_ids: &[String]) -> Result<(FeatureBank, Vec<FeatureBank>)> {
    let probe = read_bank(&dir.join("probe"))?;
    let models = model_ids.iter().map(|id| read_bank(&dir.join("models").join(id))).collect::<Result<_>>()?;
    Ok((probe, models))
}

impl Benchmark {
    /// Writes `benchmark.json` and every bank under `out`:
    /// `train/<dataset>/{probe, models/<id>}` and `eval/<task>/{probe, models/<id>}`.
    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let train: Vec<DatasetEntry> = self
            .pool
            .datasets
            .iter()
            .map(|ds| DatasetEntry { name: ds.name.clone(), class_ids: ds.class_ids.clone(), dir: format!("train/{}", ds.name) })
            .collect();
        for (ds, entry) in self.pool.datasets.iter().zip(&train) {
            write_group(&out.join(&entry.dir), &ds.probe, &ds.models)?;
        }
        let eval: Vec<EvalEntry> = self
            .eval_tasks
            .iter()
            .map(|t| EvalEntry {
                task_id: t.task_id.clone(),
                class_ids: t.class_ids.clone(),
                dir: format!("eval/{}", t.task_id),
                ground_truth: t.ground_truth.values.clone(),
            })
            .collect();
        for (t, entry) in self.eval_tasks.iter().zip(&eval) {
            write_group(&out.join(&entry.dir), &t.probe, &t.models)?;
        }
        let file = BenchmarkFile {
            config: self.config.clone(),
            model_ids: self.model_ids.clone(),
            train_classes: self.train_classes.clone(),
            eval_classes: self.eval_classes.clone(),
            split_fraction: self.split_fraction(),
            train,
            eval,
        };
        let path = out.join(BENCHMARK_FILE);
        fs::write(&path, serde_json::to_string_pretty(&file).expect("serializable") + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(BENCHMARK_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: BenchmarkFile = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let datasets = file
            .train
            .iter()
            .map(|e| {
                let (probe, models) = read_group(&dir.join(&e.dir), &file.model_ids)?;
                SourceDataset::new(e.name.clone(), e.class_ids.clone(), probe, models)
            })
            .collect::<Result<Vec<_>>>()?;
        let eval_tasks = file
            .eval
            .iter()
            .map(|e| {
                let (probe, models) = read_group(&dir.join(&e.dir), &file.model_ids)?;
                if e.ground_truth.len() != models.len() {
                    return Err(Error::format(&path, format!("{}: ground truth length mismatch", e.task_id)));
                }
                Ok(EvalTask {
                    task_id: e.task_id.clone(),
                    class_ids: e.class_ids.clone(),
                    probe,
                    models,
                    ground_truth: ScoreVector::new("oracle", e.ground_truth.clone())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Benchmark {
            config: file.config,
            model_ids: file.model_ids,
            train_classes: file.train_classes,
            eval_classes: file.eval_classes,
            pool: TrainingPool::new(datasets)?,
            eval_tasks,
        })
    }
}
