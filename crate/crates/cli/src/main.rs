//! `stepdiff`: parse packs, pool and split datasets, train and evaluate
//! difficulty models, and run the annotation service.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stepdiff::heads::Method;
use stepdiff::pipeline::{DEFAULT_MAX_ATTEMPTS, DEFAULT_POOL_THRESHOLD, DEFAULT_TEST_FRACTION};

use crate::commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "stepdiff", version, about = "Difficulty estimation for rhythm-game step charts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse every simfile below a pack directory into a dataset manifest.
    Parse {
        pack_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset name; defaults to the pack directory's name.
        #[arg(long)]
        name: Option<String>,
    },
    /// Extract per-level feature sequences as JSON Lines.
    Features {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pool rare raw meters into neighbouring categories (rewrites the manifest).
    Pool {
        manifest: PathBuf,
        /// Minimum share of levels per category.
        #[arg(long, default_value_t = DEFAULT_POOL_THRESHOLD)]
        threshold: f64,
    },
    /// Draw Monte Carlo train/test splits by song (rewrites the manifest).
    Split {
        manifest: PathBuf,
        #[arg(long, default_value_t = 100)]
        replicates: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TEST_FRACTION)]
        test_fraction: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS)]
        max_attempts: usize,
    },
    /// Train one method on one or more split replicates.
    Train(TrainArgs),
    /// Report metrics of prediction files or checkpoints, with mean ± std
    /// and significance marks per method.
    Eval {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Comma-separated subset of wae, mae, rmse, accuracy, tpr,
        /// agreement (both variants), agreement_strict, agreement_full.
        #[arg(long, value_delimiter = ',', default_value = "wae,mae,rmse,accuracy,tpr,agreement")]
        metrics: Vec<String>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on another dataset, remapping its raw meters
    /// through the checkpoint's pooling.
    CrossEval {
        checkpoint: PathBuf,
        manifest: PathBuf,
        /// Feature dump of the other dataset; extracted on the fly if absent.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump every ranking pair of a dataset's levels as JSON Lines.
    RankPairs {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the pairwise annotation service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, num_args = 1.., required = true)]
        predictions: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// Maximum number of pairs offered to annotators.
        #[arg(long, default_value_t = 200)]
        budget: usize,
        /// Judgment log; defaults to the cache directory.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Directory of static files served next to the API.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    manifest: PathBuf,
    features: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// First replicate to train.
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    /// Number of consecutive replicates to train.
    #[arg(long, default_value_t = 1)]
    replicates: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory; defaults to the cache directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed; defaults to the split seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Fixed learning rate instead of the size-scaled default.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    ensemble: Option<usize>,
    #[arg(long)]
    no_positional_encoding: bool,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::ALL
        .into_iter()
        .find(|m| m.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| {
            let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            format!("unknown method {s:?}; expected one of {}", names.join(", "))
        })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Parse { pack_dir, out, name } => commands::parse(&pack_dir, &out, name),
        Command::Features { manifest, out } => commands::features(&manifest, &out),
        Command::Pool { manifest, threshold } => commands::pool(&manifest, threshold),
        Command::Split {
            manifest,
            replicates,
            seed,
            test_fraction,
            max_attempts,
        } => commands::split(&manifest, replicates, seed, test_fraction, max_attempts),
        Command::Train(args) => commands::train(&args.into()),
        Command::Eval {
            inputs,
            metrics,
            alpha,
            jobs,
            out,
        } => commands::eval(&inputs, &metrics, alpha, jobs, out.as_deref()),
        Command::CrossEval {
            checkpoint,
            manifest,
            features,
            out,
        } => commands::cross_eval(&checkpoint, &manifest, features.as_deref(), out.as_deref()),
        Command::RankPairs { manifest, out } => commands::rank_pairs(&manifest, out.as_deref()),
        Command::Serve {
            port,
            host,
            predictions,
            manifest,
            budget,
            log,
            static_dir,
        } => commands::serve(&host, port, &predictions, &manifest, budget, log, static_dir),
    }
}

impl From<TrainArgs> for commands::TrainRequest {
    fn from(a: TrainArgs) -> Self {
        Self {
            manifest: a.manifest,
            features: a.features,
            method: a.method,
            replicates: a.replicate..a.replicate + a.replicates,
            jobs: a.jobs.max(1),
            out: a.out,
            seed: a.seed,
            epochs: a.epochs,
            batch_size: a.batch_size,
            lr: a.lr,
            weight_decay: a.weight_decay,
            embed_dim: a.embed_dim,
            layers: a.layers,
            heads: a.heads,
            window: a.window,
            ensemble: a.ensemble,
            positional_encoding: !a.no_positional_encoding,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(e.exit_code())
        }
    }
}
