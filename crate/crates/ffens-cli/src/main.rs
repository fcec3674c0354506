use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use ffens_cli::commands;
use ffens_cli::config::{CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ffens", version, about = "Forward-Forward ensemble experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train networks, one resumable checkpoint per seed.
    Train(RunArgs),
    /// Score trained checkpoints on the test split.
    Evaluate(RunArgs),
    /// Extract ensembles, overlaps, and weight statistics from checkpoints.
    Analyze(RunArgs),
    /// Full sweep: train, evaluate, and analyze every model on every dataset.
    Reproduce(RunArgs),
}

/// Flags mirror config-file keys; a flag wins over the file value.
#[derive(Args)]
struct RunArgs {
    /// Flat key = value config file applied before any flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mnist or fashion-mnist.
    #[arg(long)]
    dataset: Option<String>,
    /// ff, bpff, or bp.
    #[arg(long)]
    model: Option<String>,
    /// Number of seeds, values seed_base..seed_base+seeds.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    seed_base: Option<u64>,
    /// Comma-separated explicit seed values; overrides --seeds.
    #[arg(long)]
    seed_list: Option<String>,
    /// Hold this category out of training (0..10).
    #[arg(long)]
    exclude_category: Option<u8>,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory with <dataset>/ IDX files; omit to run on synthetic data.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Train on the first N samples; 0 means the whole split.
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    /// Comma-separated hidden-layer widths.
    #[arg(long)]
    hidden: Option<String>,
    /// Median-threshold detection quantile.
    #[arg(long)]
    q: Option<f64>,
    /// Density-outlier detection half-width.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    rho_max: Option<f64>,
    #[arg(long)]
    nh_max: Option<usize>,
    /// Also dump per-category activation matrices during analyze.
    #[arg(long)]
    export_activations: bool,
}

fn build_config(args: &RunArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    if let Some(v) = &args.dataset {
        cfg.set("dataset", v)?;
    }
    if let Some(v) = &args.model {
        cfg.set("model", v)?;
    }
    if let Some(v) = args.seeds {
        cfg.seeds = v;
    }
    if let Some(v) = args.seed_base {
        cfg.seed_base = v;
    }
    if let Some(v) = &args.seed_list {
        cfg.set("seed_list", v)?;
    }
    if let Some(v) = args.exclude_category {
        cfg.exclude_category = Some(v);
    }
    if let Some(v) = &args.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &args.data_dir {
        cfg.data_dir = Some(v.clone());
    }
    if let Some(v) = args.subset {
        cfg.subset = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = Some(v);
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.theta {
        cfg.theta = v;
    }
    if let Some(v) = &args.hidden {
        cfg.set("hidden", v)?;
    }
    if let Some(v) = args.q {
        cfg.q = v;
    }
    if let Some(v) = args.eps {
        cfg.eps = v;
    }
    if let Some(v) = args.rho_max {
        cfg.rho_max = v;
    }
    if let Some(v) = args.nh_max {
        cfg.nh_max = v;
    }
    if args.export_activations {
        cfg.export_activations = true;
    }
    Ok(cfg)
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.cmd {
        Cmd::Train(a) => build_config(a).and_then(|cfg| commands::cmd_train(&cfg)),
        Cmd::Evaluate(a) => {
            build_config(a).and_then(|cfg| commands::cmd_evaluate(&cfg).map(|_| ()))
        }
        Cmd::Analyze(a) => build_config(a).and_then(|cfg| commands::cmd_analyze(&cfg).map(|_| ())),
        Cmd::Reproduce(a) => build_config(a).and_then(|cfg| commands::cmd_reproduce(&cfg)),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn main() {
    std::process::exit(run());
}
