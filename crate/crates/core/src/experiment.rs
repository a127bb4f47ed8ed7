//! Reproducible experiment runs: dataset preparation, training with
//! periodic validation, checkpoint evaluation, and the robustness, ablation
//! and hyper-parameter sweeps built on top of single training runs.
//!
//! A training run directory holds:
//!
//! | file | contents |
//! |------|----------|
//! | `config.json` | the resolved [`RunConfig`] |
//! | `run.json` | dataset manifest hash, seed set, best epoch |
//! | `metrics.csv` | `epoch,loss,split,recall@K,ndcg@K` at every evaluation |
//! | `train_log.csv` | `epoch,loss,wall_ms` for every epoch |
//! | `checkpoint.json` | parameters of the best validation epoch |
//! | `metrics.json` | final reports of the best checkpoint |
//! | `eval.csv` | the same reports as `epoch,split,K,recall,ndcg` rows |
//!
//! Everything except the wall-clock column of `train_log.csv` is a pure
//! function of the config and the dataset.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    kcore_filter, load_split, parse_interactions, split_per_user, synthetic_clusters, write_interactions,
    write_split, SplitDataset, SplitManifest, SplitRatios, SyntheticSpec, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::eval::{append_reports_csv, evaluate, write_reports_json, EvalTarget, MetricReport};
use crate::graph::{discard_edges, inject_edges, InteractionSet, NormalizedAdjacency};
use crate::model::{init_params, load_checkpoint, save_checkpoint, ModelConfig, ModelParams, ReadoutKind, Variant};
use crate::seed::{derive_seed, SeedSet};
use crate::train::{TrainConfig, Trainer};

pub const CONFIG_FILE: &str = "config.json";
pub const RUN_FILE: &str = "run.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const EVAL_CSV: &str = "eval.csv";
pub const ROBUSTNESS_CSV: &str = "robustness.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const SWEEP_CSV: &str = "sweep.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Train,
    Eval,
    Robustness,
    Ablation,
    Sweep,
}

/// Everything a run depends on besides the dataset contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    pub dataset: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub topk: Vec<usize>,
    pub eval_interval: usize,
    /// Stop after this many evaluations without a validation improvement.
    pub patience: Option<usize>,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn new(dataset: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            kind: ExperimentKind::Train,
            dataset: dataset.into(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            topk: vec![20],
            eval_interval: 10,
            patience: None,
            out: out.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.topk.is_empty() || self.topk.contains(&0) {
            return Err(Error::Config("--topk needs at least one K ≥ 1".into()));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("--eval-interval must be ≥ 1".into()));
        }
        Ok(())
    }

    fn primary_k(&self) -> usize {
        self.topk[0]
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Parses, k-core filters (skipped for `k_core = 0`), splits and writes a
/// dataset directory.
pub fn cmd_prepare(
    input: impl AsRef<Path>,
    out: impl AsRef<Path>,
    k_core: usize,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitManifest> {
    let raw = parse_interactions(input)?;
    let filtered = if k_core == 0 { raw } else { kcore_filter(&raw, k_core)? };
    let split = split_per_user(&filtered, ratios, seed);
    let manifest = SplitManifest::describe(&split, Some(seed), (k_core > 0).then_some(k_core));
    write_split(out, &split, &manifest)?;
    Ok(manifest)
}

/// Writes a clustered synthetic dataset as `interactions.txt` and prepares
/// it like [`cmd_prepare`] without k-core filtering.
pub fn cmd_synth(
    spec: &SyntheticSpec,
    out: impl AsRef<Path>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitManifest> {
    let out = out.as_ref();
    create_dir(out)?;
    let raw = synthetic_clusters(spec, derive_seed(seed, "synthetic"))?;
    write_interactions(out.join("interactions.txt"), &raw)?;
    let split = split_per_user(&raw, ratios, seed);
    let manifest = SplitManifest::describe(&split, Some(seed), None);
    write_split(out, &split, &manifest)?;
    Ok(manifest)
}

/// SHA-256 of the dataset's `manifest.json`, or of its regenerated
/// description for imported splits without one.
pub fn manifest_hash(dataset: &Path, manifest: &SplitManifest) -> Result<String> {
    let path = dataset.join(MANIFEST_FILE);
    let bytes = if path.exists() {
        fs::read(&path).map_err(|e| Error::io(&path, e))?
    } else {
        serde_json::to_vec_pretty(manifest)?
    };
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub manifest_sha256: String,
    pub seeds: SeedSet,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_edges: usize,
    pub parameter_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub best_epoch: usize,
    pub validation: Vec<MetricReport>,
    pub test: Vec<MetricReport>,
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_params: ModelParams,
    pub metrics: FinalMetrics,
    /// Mean batch loss of every epoch, in order.
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    /// Test metric `name` (`recall` or `ndcg`) at `k`.
    pub fn test_metric(&self, name: &str, k: usize) -> Option<f64> {
        let r = self.metrics.test.iter().find(|r| r.k == k)?;
        match name {
            "recall" => Some(r.recall),
            "ndcg" => Some(r.ndcg),
            _ => None,
        }
    }
}

fn without_per_user(reports: Vec<MetricReport>) -> Vec<MetricReport> {
    reports
        .into_iter()
        .map(|r| MetricReport {
            per_user: Vec::new(),
            ..r
        })
        .collect()
}

/// Loads the dataset and trains on its train split. See [`train_on_graph`].
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (split, manifest) = load_split(&cfg.dataset)?;
    let hash = manifest_hash(&cfg.dataset, &manifest)?;
    train_on_graph(cfg, &split, &split.train, &hash, &cfg.out)
}

/// Trains on `train_graph`, writing a run directory at `out`.
///
/// Validation and test scoring always use `split.train` for propagation and
/// exclusions, so a perturbed `train_graph` changes what the model learns
/// but not how it is judged.
pub fn train_on_graph(
    cfg: &RunConfig,
    split: &SplitDataset,
    train_graph: &InteractionSet,
    manifest_sha256: &str,
    out: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_graph.num_users() != split.num_users() || train_graph.num_items() != split.num_items() {
        return Err(Error::Dimension("training graph disagrees with the split's node counts".into()));
    }
    create_dir(out)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;

    let seeds = SeedSet::from_master(cfg.train.seed);
    let mut params = init_params(&cfg.model, split.num_users(), split.num_items(), seeds.init)?;
    let eval_adj = NormalizedAdjacency::build(&split.train);
    let mut trainer = Trainer::new(&cfg.model, &cfg.train, train_graph, &params)?;

    let mut metrics = csv_writer(&out.join(METRICS_CSV))?;
    let mut header = vec!["epoch".to_string(), "loss".to_string(), "split".to_string()];
    header.extend(cfg.topk.iter().map(|k| format!("recall@{k}")));
    header.extend(cfg.topk.iter().map(|k| format!("ndcg@{k}")));
    metrics.write_record(&header)?;
    let mut log = csv_writer(&out.join(TRAIN_LOG))?;
    log.write_record(["epoch", "loss", "wall_ms"])?;

    let has_validation = split.validation.edge_count() > 0;
    let k0 = cfg.primary_k();
    let mut best: Option<(usize, f64)> = None;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut stale_evals = 0;
    let mut losses = Vec::with_capacity(cfg.train.epochs);

    for epoch in 1..=cfg.train.epochs {
        let started = Instant::now();
        let stats = trainer.train_epoch(&mut params)?;
        losses.push(stats.loss);
        log.write_record([
            epoch.to_string(),
            stats.loss.to_string(),
            started.elapsed().as_millis().to_string(),
        ])?;
        if !params.is_finite() {
            return Err(Error::Input(format!("parameters became non-finite at epoch {epoch}")));
        }
        if epoch % cfg.eval_interval != 0 && epoch != cfg.train.epochs {
            continue;
        }
        let val = evaluate(&cfg.model, &params, &eval_adj, split, EvalTarget::Validation, &cfg.topk)?;
        let test = evaluate(&cfg.model, &params, &eval_adj, split, EvalTarget::Test, &cfg.topk)?;
        for (name, reports) in [("val", &val), ("test", &test)] {
            let mut row = vec![epoch.to_string(), stats.loss.to_string(), name.to_string()];
            row.extend(reports.iter().map(|r| r.recall.to_string()));
            row.extend(reports.iter().map(|r| r.ndcg.to_string()));
            metrics.write_record(&row)?;
        }
        metrics.flush().map_err(|e| Error::io(out.join(METRICS_CSV), e))?;
        let score = val.iter().find(|r| r.k == k0).map_or(0.0, |r| r.recall);
        let improved = match best {
            None => true,
            Some((_, b)) => !has_validation || score > b,
        };
        if improved {
            best = Some((epoch, score));
            best_epoch = epoch;
            best_params = params.clone();
            stale_evals = 0;
        } else {
            stale_evals += 1;
            if cfg.patience.is_some_and(|p| stale_evals >= p) {
                break;
            }
        }
    }
    metrics.flush().map_err(|e| Error::io(out.join(METRICS_CSV), e))?;
    log.flush().map_err(|e| Error::io(out.join(TRAIN_LOG), e))?;

    save_checkpoint(out.join(CHECKPOINT_FILE), &cfg.model, &best_params)?;
    let validation = evaluate(&cfg.model, &best_params, &eval_adj, split, EvalTarget::Validation, &cfg.topk)?;
    let test = evaluate(&cfg.model, &best_params, &eval_adj, split, EvalTarget::Test, &cfg.topk)?;
    let eval_csv = out.join(EVAL_CSV);
    if eval_csv.exists() {
        fs::remove_file(&eval_csv).map_err(|e| Error::io(&eval_csv, e))?;
    }
    append_reports_csv(&eval_csv, best_epoch, "val", &validation)?;
    append_reports_csv(&eval_csv, best_epoch, "test", &test)?;
    let final_metrics = FinalMetrics {
        best_epoch,
        validation: without_per_user(validation),
        test: without_per_user(test),
    };
    write_json(&out.join(METRICS_JSON), &final_metrics)?;
    write_json(
        &out.join(RUN_FILE),
        &RunRecord {
            manifest_sha256: manifest_sha256.to_string(),
            seeds,
            best_epoch,
            epochs_run: losses.len(),
            train_edges: train_graph.edge_count(),
            parameter_count: best_params.parameter_count(),
        },
    )?;
    Ok(TrainOutcome {
        best_epoch,
        best_params,
        metrics: final_metrics,
        losses,
    })
}

/// Scores a checkpoint on a dataset's validation and test splits and writes
/// the reports to `out/metrics.json`.
pub fn cmd_eval(
    checkpoint: impl AsRef<Path>,
    dataset: impl AsRef<Path>,
    topk: &[usize],
    out: impl AsRef<Path>,
) -> Result<FinalMetrics> {
    let (cfg, params) = load_checkpoint(checkpoint)?;
    let (split, _) = load_split(dataset)?;
    if (params.users, params.items) != (split.num_users(), split.num_items()) {
        return Err(Error::Dimension(format!(
            "checkpoint is for {}×{} nodes, dataset has {}×{}",
            params.users,
            params.items,
            split.num_users(),
            split.num_items()
        )));
    }
    let adj = NormalizedAdjacency::build(&split.train);
    let validation = evaluate(&cfg, &params, &adj, &split, EvalTarget::Validation, topk)?;
    let test = evaluate(&cfg, &params, &adj, &split, EvalTarget::Test, topk)?;
    let out = out.as_ref();
    create_dir(out)?;
    write_reports_json(out.join("reports.json"), &test)?;
    let metrics = FinalMetrics {
        best_epoch: 0,
        validation: without_per_user(validation),
        test: without_per_user(test),
    };
    write_json(&out.join(METRICS_JSON), &metrics)?;
    Ok(metrics)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PerturbMode {
    Inject,
    Discard,
}

impl PerturbMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PerturbMode::Inject => "inject",
            PerturbMode::Discard => "discard",
        }
    }

    /// Seed of the perturbation at `ratio` for a master seed.
    pub fn seed(self, master: u64, ratio: f64) -> u64 {
        derive_seed(master, &format!("perturb/{}/{ratio}", self.as_str()))
    }

    pub fn apply(self, g: &InteractionSet, ratio: f64, seed: u64) -> Result<InteractionSet> {
        match self {
            PerturbMode::Inject => inject_edges(g, ratio, seed),
            PerturbMode::Discard => discard_edges(g, ratio, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub variant: Variant,
    pub mode: PerturbMode,
    pub ratio: f64,
    pub train_edges: usize,
    pub metric: String,
    pub value: f64,
    /// `(value − baseline) / baseline` against the ratio-0 run; 0 when the
    /// baseline is 0.
    pub relative_change: f64,
}

fn relative_change(value: f64, base: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        (value - base) / base
    }
}

/// Trains one model per ratio on a perturbed copy of the training graph and
/// reports test metrics against the unperturbed-graph evaluation. A ratio-0
/// baseline always runs first. Cell directories are
/// `out/<mode>-<ratio>/`; the table is written to `out/robustness.csv`.
pub fn cmd_robustness(cfg: &RunConfig, mode: PerturbMode, ratios: &[f64]) -> Result<Vec<RobustnessRow>> {
    cfg.validate()?;
    let (split, manifest) = load_split(&cfg.dataset)?;
    let hash = manifest_hash(&cfg.dataset, &manifest)?;
    let mut grid = vec![0.0];
    grid.extend(ratios.iter().copied().filter(|&r| r != 0.0));

    let mut cells = Vec::with_capacity(grid.len());
    for &ratio in &grid {
        let graph = mode.apply(&split.train, ratio, mode.seed(cfg.train.seed, ratio))?;
        let dir = cfg.out.join(format!("{}-{ratio}", mode.as_str()));
        let outcome = train_on_graph(cfg, &split, &graph, &hash, &dir)?;
        cells.push((ratio, graph.edge_count(), outcome));
    }

    let mut rows = Vec::new();
    let base = &cells[0].2;
    for (ratio, edges, outcome) in &cells {
        for name in ["recall", "ndcg"] {
            for &k in &cfg.topk {
                let value = outcome.test_metric(name, k).expect("reported K");
                let baseline = base.test_metric(name, k).expect("reported K");
                rows.push(RobustnessRow {
                    variant: cfg.model.variant,
                    mode,
                    ratio: *ratio,
                    train_edges: *edges,
                    metric: format!("{name}@{k}"),
                    value,
                    relative_change: relative_change(value, baseline),
                });
            }
        }
    }
    create_dir(&cfg.out)?;
    let mut w = csv_writer(&cfg.out.join(ROBUSTNESS_CSV))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(cfg.out.join(ROBUSTNESS_CSV), e))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    /// What the cell varies: `variant`, `readout`, or `dropout/reg`.
    pub factor: String,
    pub variant: Variant,
    pub readout: ReadoutKind,
    pub dropout: f64,
    pub reg: f64,
    pub metric: String,
    pub value: f64,
}

fn grid_rows(factor: &str, cfg: &RunConfig, outcome: &TrainOutcome) -> Vec<GridRow> {
    let mut rows = Vec::new();
    for name in ["recall", "ndcg"] {
        for &k in &cfg.topk {
            rows.push(GridRow {
                factor: factor.to_string(),
                variant: cfg.model.variant,
                readout: cfg.model.readout,
                dropout: cfg.model.dropout,
                reg: cfg.train.reg,
                metric: format!("{name}@{k}"),
                value: outcome.test_metric(name, k).expect("reported K"),
            });
        }
    }
    rows
}

fn write_grid(path: &Path, rows: &[GridRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One run per variant of the quaternion family (with the configured
/// readout), then one QGCN run per readout, all from the same master seed.
/// Rows go to `out/ablation.csv`, one per cell and metric.
pub fn cmd_ablation(cfg: &RunConfig) -> Result<Vec<GridRow>> {
    cfg.validate()?;
    let (split, manifest) = load_split(&cfg.dataset)?;
    let hash = manifest_hash(&cfg.dataset, &manifest)?;
    let mut rows = Vec::new();
    for variant in [Variant::Qgcn, Variant::QgcnQ, Variant::QgcnW] {
        let mut cell = cfg.clone();
        cell.model.variant = variant;
        let dir = cfg.out.join(format!("variant-{variant}"));
        let outcome = train_on_graph(&cell, &split, &split.train, &hash, &dir)?;
        rows.extend(grid_rows("variant", &cell, &outcome));
    }
    for readout in ReadoutKind::ALL {
        let mut cell = cfg.clone();
        cell.model.variant = Variant::Qgcn;
        cell.model.readout = readout;
        let dir = cfg.out.join(format!("readout-{readout}"));
        let outcome = train_on_graph(&cell, &split, &split.train, &hash, &dir)?;
        rows.extend(grid_rows("readout", &cell, &outcome));
    }
    write_grid(&cfg.out.join(ABLATION_CSV), &rows)?;
    Ok(rows)
}

/// Grid over dropout rates and regularization weights. Rows go to
/// `out/sweep.csv`.
pub fn cmd_sweep(cfg: &RunConfig, dropouts: &[f64], regs: &[f64]) -> Result<Vec<GridRow>> {
    cfg.validate()?;
    let (split, manifest) = load_split(&cfg.dataset)?;
    let hash = manifest_hash(&cfg.dataset, &manifest)?;
    let dropouts = if dropouts.is_empty() { vec![cfg.model.dropout] } else { dropouts.to_vec() };
    let regs = if regs.is_empty() { vec![cfg.train.reg] } else { regs.to_vec() };
    let mut rows = Vec::new();
    for &p in &dropouts {
        for &reg in &regs {
            let mut cell = cfg.clone();
            cell.model.dropout = p;
            cell.train.reg = reg;
            let dir = cfg.out.join(format!("dropout-{p}-reg-{reg}"));
            let outcome = train_on_graph(&cell, &split, &split.train, &hash, &dir)?;
            rows.extend(grid_rows("dropout/reg", &cell, &outcome));
        }
    }
    write_grid(&cfg.out.join(SWEEP_CSV), &rows)?;
    Ok(rows)
}
