//! `unigrf` — prepare data, train, evaluate, sweep, and report on the
//! unified generative recommender.
//!
//! A TOML config file supplies defaults; every flag below overrides its
//! field. Relative output paths are resolved under `UNIGRF_OUT_ROOT` when
//! that variable is set. Exit codes: 0 success, 2 config error, 3 data
//! error, 4 numeric failure.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use unigrf_core::config::{NumericWidth, WeighterGranularity};
use unigrf_core::data::{InputFormat, Split};
use unigrf_core::trainer::{self, SweepAxis};
use unigrf_core::{CoreError, RunConfig};

#[derive(Parser)]
#[command(name = "unigrf", version, about = "Unified generative recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw interaction log into a processed sequence store.
    Prepare {
        /// Raw interactions file.
        #[arg(long)]
        input: PathBuf,
        /// Input format: dat (user::item::rating::timestamp) or csv.
        #[arg(long, default_value = "dat")]
        format: String,
        /// History window length n.
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Store directory to write.
        #[arg(long)]
        store: PathBuf,
    },
    /// Train a model from a prepared store.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory for checkpoints and metrics.
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the valid or test split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint file (best.ckpt / last.ckpt).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to score: valid or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Optional JSON output path (stdout always gets the report).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one full training per value of a config axis.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Axis to vary: m (enhancer hard-set size) or layers.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values, e.g. 0,2,5,10,20.
        #[arg(long)]
        values: String,
        /// Root directory for the per-value runs and sweep.csv.
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Validate and summarize a finished run directory.
    Report {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
    },
}

/// Config file plus per-field overrides (flags win over the file, the file
/// wins over defaults).
#[derive(Args)]
struct ConfigArgs {
    /// TOML config file with [data]/[model]/[sequence]/[training]/[enhancer]/[weighter] sections.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Prepared store directory (data.store).
    #[arg(long)]
    store: Option<PathBuf>,
    /// Transformer blocks (model.layers).
    #[arg(long)]
    layers: Option<usize>,
    /// Latent width d (model.dim).
    #[arg(long)]
    dim: Option<usize>,
    /// Attention heads (model.heads).
    #[arg(long)]
    heads: Option<usize>,
    /// History window length (sequence.n).
    #[arg(long)]
    n: Option<usize>,
    /// Users per batch (training.batch_size).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate (training.lr).
    #[arg(long)]
    lr: Option<f64>,
    /// Epoch cap (training.max_epochs).
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Early-stop patience in epochs (training.patience).
    #[arg(long)]
    patience: Option<usize>,
    /// Global seed (training.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Numeric width: f32 or f64 (training.width).
    #[arg(long)]
    width: Option<String>,
    /// Evaluation/scoring worker threads (training.workers).
    #[arg(long)]
    workers: Option<usize>,
    /// Negative-set size |S| (training.negatives).
    #[arg(long)]
    negatives: Option<usize>,
    /// Enable/disable the sample enhancer (enhancer.enabled).
    #[arg(long)]
    enhancer: Option<bool>,
    /// Hard-negative keep count m (enhancer.hard_set_size).
    #[arg(long)]
    hard_set_size: Option<usize>,
    /// Potential-positive threshold α (enhancer.potential_threshold).
    #[arg(long)]
    potential_threshold: Option<f64>,
    /// Write per-epoch enhancer audit CSVs (enhancer.audit).
    #[arg(long)]
    audit: Option<bool>,
    /// Enable/disable adaptive loss weighting (weighter.enabled).
    #[arg(long)]
    weighter: Option<bool>,
    /// Weighter softmax temperature T (weighter.temperature).
    #[arg(long)]
    temperature: Option<f64>,
    /// Retrieval base weight λ_a (weighter.lambda_retrieval).
    #[arg(long)]
    lambda_retrieval: Option<f64>,
    /// Ranking base weight λ_b (weighter.lambda_ranking).
    #[arg(long)]
    lambda_ranking: Option<f64>,
    /// Loss-EMA decay (weighter.ema_decay).
    #[arg(long)]
    ema_decay: Option<f64>,
    /// Weighter update cadence: step or epoch (weighter.granularity).
    #[arg(long)]
    granularity: Option<String>,
    /// Rescale λ_b once after the first epoch (weighter.auto_scale).
    #[arg(long)]
    auto_scale: Option<bool>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CoreError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_toml_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.store {
            cfg.data.store = v.clone();
        }
        if let Some(v) = self.layers {
            cfg.model.layers = v;
        }
        if let Some(v) = self.dim {
            cfg.model.dim = v;
        }
        if let Some(v) = self.heads {
            cfg.model.heads = v;
        }
        if let Some(v) = self.n {
            cfg.sequence.n = v;
        }
        if let Some(v) = self.batch_size {
            cfg.training.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.training.lr = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.training.max_epochs = v;
        }
        if let Some(v) = self.patience {
            cfg.training.patience = v;
        }
        if let Some(v) = self.seed {
            cfg.training.seed = v;
        }
        if let Some(v) = &self.width {
            cfg.training.width = parse_flag::<NumericWidth>(v, "width")?;
        }
        if let Some(v) = self.workers {
            cfg.training.workers = v;
        }
        if let Some(v) = self.negatives {
            cfg.training.negatives = v;
        }
        if let Some(v) = self.enhancer {
            cfg.enhancer.enabled = v;
        }
        if let Some(v) = self.hard_set_size {
            cfg.enhancer.hard_set_size = v;
        }
        if let Some(v) = self.potential_threshold {
            cfg.enhancer.potential_threshold = v;
        }
        if let Some(v) = self.audit {
            cfg.enhancer.audit = v;
        }
        if let Some(v) = self.weighter {
            cfg.weighter.enabled = v;
        }
        if let Some(v) = self.temperature {
            cfg.weighter.temperature = v;
        }
        if let Some(v) = self.lambda_retrieval {
            cfg.weighter.lambda_retrieval = v;
        }
        if let Some(v) = self.lambda_ranking {
            cfg.weighter.lambda_ranking = v;
        }
        if let Some(v) = self.ema_decay {
            cfg.weighter.ema_decay = v;
        }
        if let Some(v) = &self.granularity {
            cfg.weighter.granularity = match v.as_str() {
                "step" => WeighterGranularity::Step,
                "epoch" => WeighterGranularity::Epoch,
                other => {
                    return Err(CoreError::Config(format!(
                        "unknown granularity `{other}` (use step or epoch)"
                    )))
                }
            };
        }
        if let Some(v) = self.auto_scale {
            cfg.weighter.auto_scale = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_flag<T: std::str::FromStr<Err = String>>(v: &str, name: &str) -> Result<T, CoreError> {
    v.parse()
        .map_err(|e: String| CoreError::Config(format!("--{name}: {e}")))
}

/// Resolves a path under `UNIGRF_OUT_ROOT` when it is relative and the
/// variable is set.
fn out_path(p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match std::env::var_os("UNIGRF_OUT_ROOT") {
        Some(root) => PathBuf::from(root).join(p),
        None => p.to_path_buf(),
    }
}

fn run(cli: Cli) -> Result<(), CoreError> {
    match cli.command {
        Command::Prepare {
            input,
            format,
            n,
            store,
        } => {
            let format = parse_flag::<InputFormat>(&format, "format")?;
            let out = trainer::prepare_data(&input, format, n, &out_path(&store))?;
            let m = &out.manifest;
            println!(
                "store {}: {} users, {} items, {} interactions ({} malformed), \
                 mean history {:.2}, {} sequences, n = {} [{:?}]",
                m.content_hash,
                m.users,
                m.items,
                m.interactions,
                m.malformed,
                m.mean_history_len,
                m.sequences,
                m.n,
                out.outcome
            );
        }
        Command::Train { cfg, out } => {
            let cfg = cfg.resolve()?;
            let out = out_path(&out);
            let outcome = trainer::run_training(&cfg, &out)?;
            println!(
                "trained {} epochs (best NDCG@10 {:.4} at epoch {}{}); artifacts in {}",
                outcome.epochs_run,
                outcome.best_ndcg10,
                outcome.best_epoch,
                if outcome.stopped_early {
                    ", early-stopped"
                } else {
                    ""
                },
                out.display()
            );
        }
        Command::Eval {
            cfg,
            checkpoint,
            split,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let split = parse_flag::<Split>(&split, "split")?;
            let report = trainer::run_eval(&cfg, &checkpoint, split)?;
            let json = report.to_json();
            if let Some(path) = out {
                let path = out_path(&path);
                std::fs::write(&path, &json)
                    .map_err(|e| CoreError::io(format!("write {}", path.display()), e))?;
            }
            println!("{json}");
        }
        Command::Sweep {
            cfg,
            axis,
            values,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let axis = parse_flag::<SweepAxis>(&axis, "axis")?;
            let values = values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|e| CoreError::Config(format!("--values entry `{v}`: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let out = out_path(&out);
            let rows = trainer::run_sweep(&cfg, axis, &values, &out)?;
            println!("{}", trainer::SWEEP_HEADER);
            for row in &rows {
                println!("{}", row.csv_line());
            }
            println!("summary written to {}", out.join("sweep.csv").display());
        }
        Command::Report { run } => {
            let summary = trainer::write_report(&out_path(&run))?;
            print!("{}", summary.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
