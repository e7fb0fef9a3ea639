use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use zoorank::estimators::{score_zoo, Method};
use zoorank::evaluation::{evaluate, ranker_column, EvalReport, EvalRow};
use zoorank::feature_bank::{read_bank, FeatureBank};
use zoorank::metrics::{spider_chart_csv, spider_chart_data, weighted_kendall_tau};
use zoorank::rank_agg::{copeland_aggregate, dsc_order_values, ScoreVector};
use zoorank::ranker::{rank_zoo, rerank_top_k, RankerParams};
use zoorank::synth::{build_benchmark, Benchmark};
use zoorank::tokens::build_task_token;
use zoorank::training::{self, LossKind, SupervisionSource};
use zoorank::Error;

use crate::config::RunConfig;
use crate::output::{emit, json, table, RankFile, ScoreFile, SweepRow};
use crate::GlobalArgs;

pub const EXIT_IO: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_CAPABILITY: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

impl Failure {
    pub fn io(msg: impl Into<String>) -> Self {
        Failure { code: EXIT_IO, msg: msg.into() }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::Format { .. } => EXIT_IO,
            Error::Capability { .. } => EXIT_CAPABILITY,
            _ => EXIT_USAGE,
        };
        Failure { code, msg: e.to_string() }
    }
}

type Outcome = Result<(), Failure>;

fn require_dir(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::io(format!("{what} {} is not a directory", path.display())))
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::io(format!("{what} {} is not a file", path.display())))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn score_rows(ids: &[String], values: &[f64]) -> Vec<Vec<String>> {
    dsc_order_values(values)
        .order
        .iter()
        .enumerate()
        .map(|(r, &i)| vec![(r + 1).to_string(), ids[i].clone(), format!("{:.6}", values[i])])
        .collect()
}

fn print_scores(g: &GlobalArgs, file: &ScoreFile) {
    if g.json {
        print!("{}", json(file));
    } else {
        print!("{}", table(&["rank", "model_id", &file.method], &score_rows(&file.model_ids, &file.scores)));
    }
}

#[derive(Args)]
pub struct SynthZooArgs {
    /// Output directory for banks and benchmark.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct SynthSummary<'a> {
    out: &'a Path,
    n_models: usize,
    n_train_datasets: usize,
    n_eval_tasks: usize,
}

pub fn synth_zoo(g: &GlobalArgs, a: &SynthZooArgs) -> Outcome {
    let mut cfg = RunConfig::load(g.config.as_deref())?.zoo;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let bench = build_benchmark(&cfg)?;
    bench.write(&a.out)?;
    let summary = SynthSummary {
        out: &a.out,
        n_models: bench.model_ids.len(),
        n_train_datasets: bench.pool.datasets.len(),
        n_eval_tasks: bench.eval_tasks.len(),
    };
    if g.json {
        print!("{}", json(&summary));
    } else {
        println!(
            "wrote {} models, {} source datasets and {} eval tasks to {}",
            summary.n_models,
            summary.n_train_datasets,
            summary.n_eval_tasks,
            a.out.display()
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct ScoreArgs {
    /// One of hscore, nce, leep, logme.
    #[arg(long)]
    pub method: Method,
    /// Task directory with `models/<id>/` banks, or a single bank directory.
    #[arg(long)]
    pub task: PathBuf,
    /// Directory of model banks to use instead of `<task>/models`.
    #[arg(long)]
    pub zoo: Option<PathBuf>,
}

/// Every bank below `dir`, ordered by directory name. A directory that is
/// itself a bank counts as a zoo of one.
fn read_zoo(dir: &Path) -> Result<Vec<FeatureBank>, Failure> {
    if dir.join("manifest.json").is_file() {
        return Ok(vec![read_bank(dir)?]);
    }
    let entries = fs::read_dir(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?.path();
        if path.is_dir() {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths.iter().map(|p| read_bank(p)).collect::<zoorank::Result<_>>()?)
}

pub fn score(g: &GlobalArgs, a: &ScoreArgs) -> Outcome {
    require_dir(&a.task, "task")?;
    let zoo_dir = match &a.zoo {
        Some(z) => z.clone(),
        None if a.task.join("manifest.json").is_file() => a.task.clone(),
        None => a.task.join("models"),
    };
    require_dir(&zoo_dir, "zoo")?;
    let banks = read_zoo(&zoo_dir)?;
    let scores = score_zoo(&banks, a.method)?;
    let file = ScoreFile {
        method: a.method.as_str().to_string(),
        model_ids: banks.iter().map(|b| b.model_id().to_string()).collect(),
        scores: scores.values,
    };
    print_scores(g, &file);
    Ok(())
}

#[derive(Args)]
pub struct AggregateArgs {
    /// Score files written by `score --json`.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

pub fn aggregate(g: &GlobalArgs, a: &AggregateArgs) -> Outcome {
    for f in &a.files {
        require_file(f, "score file")?;
    }
    let files: Vec<ScoreFile> = a.files.iter().map(|f| read_json(f)).collect::<Result<_, _>>()?;
    let ids = files[0].model_ids.clone();
    let reference: BTreeSet<&String> = ids.iter().collect();
    let mut vectors = Vec::with_capacity(files.len());
    for (file, path) in files.iter().zip(&a.files) {
        if file.model_ids.len() != file.scores.len() {
            return Err(Failure::io(format!("{}: model_ids and scores differ in length", path.display())));
        }
        let set: BTreeSet<&String> = file.model_ids.iter().collect();
        if set != reference || set.len() != file.model_ids.len() {
            return Err(Failure::usage(format!("{} scores a different model set", path.display())));
        }
        let by_id: BTreeMap<&String, f64> = file.model_ids.iter().zip(&file.scores).map(|(i, &s)| (i, s)).collect();
        let values = ids.iter().map(|id| by_id[id]).collect();
        vectors.push(ScoreVector::new(file.method.clone(), values)?);
    }
    let agg = copeland_aggregate(&vectors)?;
    print_scores(g, &ScoreFile { method: agg.method_tag, model_ids: ids, scores: agg.values });
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    /// Benchmark directory written by `synth-zoo`.
    #[arg(long)]
    pub benchmark: PathBuf,
    /// Output directory for `params/`, `initial/`, `trace.json` and `config.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `train.epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides `train.learning_rate`.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Overrides `train.n_tasks`.
    #[arg(long)]
    pub tasks: Option<usize>,
    /// One of rankagg, hscore, nce, leep, logme.
    #[arg(long)]
    pub supervision: Option<SupervisionSource>,
    /// One of rank, listmle, mse.
    #[arg(long)]
    pub loss: Option<LossKind>,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    out: &'a Path,
    steps: usize,
    final_loss: f64,
}

pub fn train(g: &GlobalArgs, a: &TrainArgs) -> Outcome {
    require_dir(&a.benchmark, "benchmark")?;
    let mut cfg = RunConfig::load(g.config.as_deref())?.train;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.tasks {
        cfg.n_tasks = v;
    }
    if let Some(v) = a.supervision {
        cfg.supervision = v;
    }
    if let Some(v) = a.loss {
        cfg.loss = v;
    }
    cfg.validate()?;
    let bench = Benchmark::read(&a.benchmark)?;
    let outcome = training::train(&bench.pool, &cfg)?;
    outcome.params.save(&a.out.join("params"))?;
    outcome.initial.save(&a.out.join("initial"))?;
    emit(&json(&outcome.trace), Some(&a.out.join("trace.json")))?;
    emit(&json(&cfg), Some(&a.out.join("config.json")))?;
    let summary = TrainSummary {
        out: &a.out,
        steps: outcome.trace.len(),
        final_loss: outcome.trace.last().map_or(f64::NAN, |t| t.loss),
    };
    if g.json {
        print!("{}", json(&summary));
    } else {
        println!("trained {} steps, final loss {:.6}; wrote {}", summary.steps, summary.final_loss, a.out.display());
    }
    Ok(())
}

#[derive(Args)]
pub struct RankArgs {
    /// Task directory with `probe/` and, for re-ranking, `models/<id>/`.
    #[arg(long)]
    pub task: PathBuf,
    /// Parameter directory written by `train`.
    #[arg(long)]
    pub params: PathBuf,
    /// How many top models to re-score with their own features.
    #[arg(long, default_value_t = 0)]
    pub k: usize,
}

pub fn rank(g: &GlobalArgs, a: &RankArgs) -> Outcome {
    require_dir(&a.task, "task")?;
    require_dir(&a.params, "params")?;
    let params = RankerParams::load(&a.params)?;
    let m = params.n_models();
    let mut k = a.k;
    if k > m {
        eprintln!("warning: k = {k} exceeds the {m} models; using {m}");
        k = m;
    }
    let token = build_task_token(&read_bank(&a.task.join("probe"))?)?;
    let mut ranking = rank_zoo(&token, &params)?;
    if k > 0 {
        let mut banks = BTreeMap::new();
        for &i in ranking.order.top(k) {
            let id = &params.model_ids()[i];
            let dir = a.task.join("models").join(id);
            if dir.is_dir() {
                banks.insert(id.clone(), read_bank(&dir)?);
            }
        }
        ranking = rerank_top_k(&ranking, &banks, k, &params)?;
    }
    let ids = params.model_ids();
    if g.json {
        let file = RankFile {
            k: ranking.k_used,
            model_ids: ids,
            scores: &ranking.scores.values,
            refreshed: ranking.refreshed.iter().map(|&i| ids[i].as_str()).collect(),
        };
        print!("{}", json(&file));
    } else {
        let rows: Vec<Vec<String>> = ranking
            .order
            .order
            .iter()
            .enumerate()
            .map(|(r, &i)| {
                let mark = if ranking.refreshed.contains(&i) { "refreshed" } else { "" };
                vec![(r + 1).to_string(), ids[i].clone(), format!("{:.6}", ranking.scores.values[i]), mark.into()]
            })
            .collect();
        print!("{}", table(&["rank", "model_id", "score", "note"], &rows));
    }
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    /// Benchmark directory written by `synth-zoo`.
    #[arg(long)]
    pub benchmark: PathBuf,
    /// Parameter directory written by `train`; adds ranker columns.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Re-ranking depth of the ranker column.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Comma-separated depths; prints mean ranker tau per depth as CSV.
    #[arg(long, value_delimiter = ',')]
    pub k_sweep: Option<Vec<usize>>,
    /// JSON object mapping task ids to score lists, evaluated as a `predictions` column.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Write the output here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn add_predictions(report: &mut EvalReport, bench: &Benchmark, path: &Path) -> Result<(), Failure> {
    let preds: BTreeMap<String, Vec<f64>> = read_json(path)?;
    for (row, task) in report.rows.iter_mut().zip(&bench.eval_tasks) {
        let values = preds
            .get(&task.task_id)
            .ok_or_else(|| Failure::usage(format!("{}: no scores for task {}", path.display(), task.task_id)))?;
        let tau = weighted_kendall_tau(&ScoreVector::new("predictions", values.clone())?, &task.ground_truth)?;
        row.tau_w.push(tau.tau_w);
    }
    let n = report.rows.len().max(1) as f64;
    report.columns.push("predictions".into());
    report.mean.push(report.rows.iter().map(|r| *r.tau_w.last().unwrap()).sum::<f64>() / n);
    Ok(())
}

pub fn eval(g: &GlobalArgs, a: &EvalArgs) -> Outcome {
    require_dir(&a.benchmark, "benchmark")?;
    if let Some(p) = &a.params {
        require_dir(p, "params")?;
    }
    if let Some(p) = &a.predictions {
        require_file(p, "predictions")?;
    }
    if a.k_sweep.is_some() && a.params.is_none() {
        return Err(Failure::usage("--k-sweep needs --params"));
    }
    let bench = Benchmark::read(&a.benchmark)?;
    let params = a.params.as_deref().map(RankerParams::load).transpose()?;
    let out = a.out.as_deref();

    if let Some(ks) = &a.k_sweep {
        let report = evaluate(&bench, params.as_ref(), ks)?;
        let rows: Vec<SweepRow> = ks
            .iter()
            .map(|&k| SweepRow { k, tau_w: report.mean_of(&ranker_column(k)).expect("column present") })
            .collect();
        let text = if g.json {
            json(&rows)
        } else {
            let mut csv = String::from("k,tau_w\n");
            for r in &rows {
                csv.push_str(&format!("{},{:.6}\n", r.k, r.tau_w));
            }
            csv
        };
        return emit(&text, out);
    }

    let mut report = evaluate(&bench, params.as_ref(), &[a.k])?;
    if let Some(p) = &a.predictions {
        add_predictions(&mut report, &bench, p)?;
    }
    let text = if g.json {
        json(&report)
    } else {
        let fmt = |id: &str, v: &[f64]| {
            std::iter::once(id.to_string()).chain(v.iter().map(|x| format!("{x:.4}"))).collect::<Vec<_>>()
        };
        let mut rows: Vec<Vec<String>> = report.rows.iter().map(|EvalRow { task_id, tau_w }| fmt(task_id, tau_w)).collect();
        rows.push(fmt("mean", &report.mean));
        let mut header = vec!["task_id"];
        header.extend(report.columns.iter().map(String::as_str));
        table(&header, &rows)
    };
    emit(&text, out)
}

#[derive(Args)]
pub struct ChartArgs {
    /// Parameter directory written by `train`.
    #[arg(long)]
    pub params: PathBuf,
    /// JSON object mapping cluster names to lists of probe bank directories,
    /// relative to the file.
    #[arg(long)]
    pub clusters: PathBuf,
    /// Write the output here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn chart(g: &GlobalArgs, a: &ChartArgs) -> Outcome {
    require_dir(&a.params, "params")?;
    require_file(&a.clusters, "clusters")?;
    let spec: BTreeMap<String, Vec<PathBuf>> = read_json(&a.clusters)?;
    if spec.is_empty() {
        return Err(Failure::usage(format!("{} names no clusters", a.clusters.display())));
    }
    let base = a.clusters.parent().unwrap_or(Path::new("."));
    let mut dirs = BTreeMap::new();
    for (name, banks) in &spec {
        let resolved: Vec<PathBuf> = banks.iter().map(|b| base.join(b)).collect();
        for d in &resolved {
            require_dir(d, "probe bank")?;
        }
        dirs.insert(name.clone(), resolved);
    }
    let params = RankerParams::load(&a.params)?;
    let mut clusters = BTreeMap::new();
    for (name, banks) in dirs {
        let tokens = banks.iter().map(|d| build_task_token(&read_bank(d)?)).collect::<zoorank::Result<Vec<_>>>()?;
        clusters.insert(name, tokens);
    }
    let chart = spider_chart_data(&params, &clusters)?;
    let text = if g.json { json(&chart) } else { spider_chart_csv(&chart) };
    emit(&text, a.out.as_deref())
}
