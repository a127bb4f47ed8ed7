use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qgcn::data::{SplitRatios, SyntheticSpec};
use qgcn::experiment::{
    cmd_ablation, cmd_eval, cmd_prepare, cmd_robustness, cmd_sweep, cmd_synth, cmd_train, ExperimentKind,
    PerturbMode, RunConfig,
};
use qgcn::model::{ModelConfig, ReadoutKind, Variant};
use qgcn::train::{RegScope, TrainConfig};
use qgcn::{Error, Result};

/// Quaternion graph convolution recommender: prepare data, train, evaluate
/// and run robustness, ablation and hyper-parameter grids.
///
/// Every flag can also be set through a `QGCN_<FLAG>` environment variable,
/// e.g. `QGCN_EPOCHS=5`.
#[derive(Parser)]
#[command(name = "qgcn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// K-core filter and split a raw interaction file.
    Prepare(PrepareArgs),
    /// Generate and split a clustered synthetic dataset.
    Synth(SynthArgs),
    /// Train one model and write a run directory.
    Train(RunArgs),
    /// Score a checkpoint on a prepared dataset.
    Eval(EvalArgs),
    /// Train on edge-injected or edge-discarded copies of the training graph.
    Robustness {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, env = "QGCN_MODE", default_value = "inject")]
        mode: PerturbMode,
        #[arg(long, value_delimiter = ',', env = "QGCN_RATIOS", default_value = "0.05,0.1,0.15,0.2,0.25")]
        ratios: Vec<f64>,
    },
    /// Compare the quaternion variants and the four readouts.
    Ablation(RunArgs),
    /// Grid over dropout rates and regularization weights.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', env = "QGCN_DROPOUTS", default_value = "0,0.1,0.2,0.3,0.4,0.5")]
        dropouts: Vec<f64>,
        #[arg(long, value_delimiter = ',', env = "QGCN_REGS", default_value = "1e-5,1e-4,1e-3,1e-2")]
        regs: Vec<f64>,
    },
}

#[derive(Args)]
struct RatioArgs {
    /// Train:validation:test proportions.
    #[arg(long, value_delimiter = ':', env = "QGCN_SPLIT", default_value = "0.8:0.1:0.1")]
    split: Vec<f64>,
    #[arg(long, env = "QGCN_SEED", default_value_t = 2023)]
    seed: u64,
}

impl RatioArgs {
    fn ratios(&self) -> Result<SplitRatios> {
        match self.split[..] {
            [a, b, c] => SplitRatios::new(a, b, c),
            _ => Err(Error::Config("--split takes three ratios, e.g. 0.8:0.1:0.1".into())),
        }
    }
}

#[derive(Args)]
struct PrepareArgs {
    /// Interaction file: one user per line, user id then item ids.
    #[arg(long, env = "QGCN_INPUT")]
    input: PathBuf,
    #[arg(long, env = "QGCN_OUT")]
    out: PathBuf,
    /// Minimum user and item degree; 0 skips filtering.
    #[arg(long, env = "QGCN_KCORE", default_value_t = 10)]
    kcore: usize,
    #[command(flatten)]
    ratios: RatioArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, env = "QGCN_OUT")]
    out: PathBuf,
    #[arg(long, env = "QGCN_USERS", default_value_t = 1000)]
    users: usize,
    #[arg(long, env = "QGCN_ITEMS", default_value_t = 500)]
    items: usize,
    #[arg(long, env = "QGCN_CLUSTERS", default_value_t = 10)]
    clusters: usize,
    #[arg(long, env = "QGCN_PER_USER", default_value_t = 20)]
    per_user: usize,
    #[arg(long, env = "QGCN_AFFINITY", default_value_t = 0.8)]
    affinity: f64,
    #[command(flatten)]
    ratios: RatioArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, env = "QGCN_CHECKPOINT")]
    checkpoint: PathBuf,
    #[arg(long, env = "QGCN_DATASET")]
    dataset: PathBuf,
    #[arg(long, value_delimiter = ',', env = "QGCN_TOPK", default_value = "20")]
    topk: Vec<usize>,
    #[arg(long, env = "QGCN_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Prepared dataset directory.
    #[arg(long, env = "QGCN_DATASET")]
    dataset: PathBuf,
    #[arg(long, value_enum, env = "QGCN_VARIANT", default_value = "qgcn")]
    variant: Variant,
    #[arg(long, env = "QGCN_LAYERS", default_value_t = 1)]
    layers: usize,
    /// Real embedding width D; must be a multiple of 4.
    #[arg(long, env = "QGCN_EMBED_DIM", default_value_t = 64)]
    embed_dim: usize,
    #[arg(long, env = "QGCN_DROPOUT", default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, env = "QGCN_REG", default_value_t = 1e-4)]
    reg: f64,
    #[arg(long, value_enum, env = "QGCN_REG_SCOPE", default_value = "ego")]
    reg_scope: RegScope,
    #[arg(long, env = "QGCN_LR", default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, env = "QGCN_BATCH_SIZE", default_value_t = 2048)]
    batch_size: usize,
    #[arg(long, env = "QGCN_EPOCHS", default_value_t = 400)]
    epochs: usize,
    #[arg(long, env = "QGCN_SEED", default_value_t = 2023)]
    seed: u64,
    #[arg(long, value_enum, env = "QGCN_READOUT", default_value = "mean")]
    readout: ReadoutKind,
    #[arg(long, env = "QGCN_INCLUDE_LAYER0")]
    include_layer0: bool,
    /// LightGCN layer weights λ_0..λ_L, comma separated.
    #[arg(long, value_delimiter = ',', env = "QGCN_LAYER_WEIGHTS")]
    layer_weights: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', env = "QGCN_TOPK", default_value = "20")]
    topk: Vec<usize>,
    #[arg(long, env = "QGCN_EVAL_INTERVAL", default_value_t = 10)]
    eval_interval: usize,
    /// Stop after this many evaluations without validation improvement.
    #[arg(long, env = "QGCN_PATIENCE")]
    patience: Option<usize>,
    #[arg(long, env = "QGCN_OUT")]
    out: PathBuf,
}

impl RunArgs {
    fn config(self, kind: ExperimentKind) -> Result<RunConfig> {
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "--embed-dim {} must be a positive multiple of 4",
                self.embed_dim
            )));
        }
        let cfg = RunConfig {
            kind,
            dataset: self.dataset,
            model: ModelConfig {
                variant: self.variant,
                layers: self.layers,
                quaternion_dim: self.embed_dim / 4,
                dropout: self.dropout,
                readout: self.readout,
                include_layer0: self.include_layer0,
                layer_weights: self.layer_weights,
            },
            train: TrainConfig {
                learning_rate: self.lr,
                batch_size: self.batch_size,
                reg: self.reg,
                reg_scope: self.reg_scope,
                epochs: self.epochs,
                seed: self.seed,
            },
            topk: self.topk,
            eval_interval: self.eval_interval,
            patience: self.patience,
            out: self.out,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => {
            let m = cmd_prepare(&a.input, &a.out, a.kcore, a.ratios.ratios()?, a.ratios.seed)?;
            println!("{}", serde_json::to_string(&m)?);
        }
        Command::Synth(a) => {
            let spec = SyntheticSpec {
                users: a.users,
                items: a.items,
                clusters: a.clusters,
                interactions_per_user: a.per_user,
                affinity: a.affinity,
            };
            let m = cmd_synth(&spec, &a.out, a.ratios.ratios()?, a.ratios.seed)?;
            println!("{}", serde_json::to_string(&m)?);
        }
        Command::Train(a) => {
            let outcome = cmd_train(&a.config(ExperimentKind::Train)?)?;
            println!("{}", serde_json::to_string(&outcome.metrics)?);
        }
        Command::Eval(a) => {
            let m = cmd_eval(&a.checkpoint, &a.dataset, &a.topk, &a.out)?;
            println!("{}", serde_json::to_string(&m)?);
        }
        Command::Robustness { run, mode, ratios } => {
            let rows = cmd_robustness(&run.config(ExperimentKind::Robustness)?, mode, &ratios)?;
            for r in rows {
                println!(
                    "{} {} ratio={} edges={} {}={:.5} change={:+.2}%",
                    r.variant,
                    r.mode.as_str(),
                    r.ratio,
                    r.train_edges,
                    r.metric,
                    r.value,
                    100.0 * r.relative_change
                );
            }
        }
        Command::Ablation(a) => {
            for r in cmd_ablation(&a.config(ExperimentKind::Ablation)?)? {
                println!("{} {} {} {}={:.5}", r.factor, r.variant, r.readout, r.metric, r.value);
            }
        }
        Command::Sweep { run, dropouts, regs } => {
            for r in cmd_sweep(&run.config(ExperimentKind::Sweep)?, &dropouts, &regs)? {
                println!("dropout={} reg={} {}={:.5}", r.dropout, r.reg, r.metric, r.value);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
