//! `nalign`: run replica interpolation, re-basin matching, federated and
//! Monte Carlo experiments from JSON configs.

mod commands;
mod config;
mod data_cmd;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use nalign::data::{default_cache_dir, ImageSet};
use nalign::Error;

use config::ExperimentConfig;
use output::Artifacts;

#[derive(Parser)]
#[command(name = "nalign", version, about = "Neuron alignment experiments: masked training, interpolation barriers, permutation matching, federated simulation")]
struct Cli {
    /// Worker threads for parallel sweeps, trials and clients (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Dataset cache directory [default: $NALIGN_DATA_DIR or ~/.cache/nalign].
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,

    /// Output directory for reports, curves, checkpoints and the manifest.
    #[arg(long)]
    out: PathBuf,

    /// Replace a seed field, e.g. `model.seed=3` or `lmc.shuffle_seeds.1=9`. Repeatable.
    #[arg(long = "seed-override", value_name = "K=V")]
    seed_overrides: Vec<String>,

    /// Override the mask ratio (`mask.rho` and `fed.rho`).
    #[arg(long)]
    mask_ratio: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train two replicas from one initialization and measure the barrier between them.
    Lmc(RunArgs),
    /// Align two checkpoints by weight matching and/or simulated annealing.
    Rebasin {
        #[command(flatten)]
        run: RunArgs,
        /// Directory of a previous `lmc` run (reads model_a.ckpt and model_b.ckpt).
        #[arg(long, conflicts_with_all = ["model_a", "model_b"])]
        from: Option<PathBuf>,
        #[arg(long, requires = "model_b")]
        model_a: Option<PathBuf>,
        #[arg(long, requires = "model_a")]
        model_b: Option<PathBuf>,
    },
    /// Federated simulation (FedAvg, FedPFN, FedPNU).
    Fed(RunArgs),
    /// Monte Carlo check of the two-layer interpolation bounds.
    Theory(RunArgs),
    /// Dataset cache management.
    Data {
        #[command(subcommand)]
        action: DataAction,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SetArg {
    Mnist,
    FashionMnist,
}

#[derive(Subcommand)]
enum DataAction {
    /// Download a dataset and verify it against pinned SHA-256 checksums.
    Fetch {
        set: SetArg,
        /// Checksum manifest overriding the built-in one.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Alternative base URL or local directory holding the files.
        #[arg(long)]
        source: Option<String>,
    },
    /// Print the header of an IDX file or a CIFAR-10 batch.
    Inspect { path: PathBuf },
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Data(d) => d.kind(),
        Error::AtAlpha { source, .. } | Error::Client { source, .. } => error_kind(source),
        Error::Config(_) => "config",
        Error::Dimension(_) => "dimension",
        Error::NonFinite { .. } => "non_finite",
        Error::Diverged { .. } => "diverged",
        Error::EmptyDataset => "empty_dataset",
        Error::DegenerateEndpoint { .. } => "degenerate_endpoint",
        Error::DegenerateBasis => "degenerate_basis",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

fn fail(e: &Error) -> ExitCode {
    let class = e.class();
    let doc = json!({
        "error": {
            "class": class.as_str(),
            "kind": error_kind(e),
            "message": e.to_string(),
            "exit_code": class.exit_code(),
        }
    });
    eprintln!("{doc}");
    ExitCode::from(class.exit_code() as u8)
}

fn run_experiment(
    name: &'static str,
    args: &RunArgs,
    threads: usize,
    body: impl FnOnce(&ExperimentConfig, &mut Artifacts) -> nalign::Result<Value>,
) -> nalign::Result<Value> {
    let cfg = ExperimentConfig::load(&args.config, &args.seed_overrides, args.mask_ratio)?;
    let mut out = Artifacts::create(&args.out, name, &cfg)?;
    let mut summary = body(&cfg, &mut out)?;
    summary["command"] = json!(name);
    summary["config_hash"] = json!(out.config_hash());
    summary["out"] = json!(args.out);
    out.finish(threads)?;
    Ok(summary)
}

fn dispatch(cli: Cli) -> nalign::Result<Value> {
    let threads = cli.threads.unwrap_or_else(rayon::current_num_threads);
    let cache = cli.data_dir.clone().unwrap_or_else(default_cache_dir);
    match &cli.command {
        Command::Lmc(args) => run_experiment("lmc", args, threads, |cfg, out| {
            if commands::use_f32(cfg) {
                commands::lmc::<f32>(cfg, &cache, out)
            } else {
                commands::lmc::<f64>(cfg, &cache, out)
            }
        }),
        Command::Rebasin { run, from, model_a, model_b } => {
            let (a, b) = match (from, model_a, model_b) {
                (Some(dir), _, _) => (dir.join("model_a.ckpt"), dir.join("model_b.ckpt")),
                (None, Some(a), Some(b)) => (a.clone(), b.clone()),
                _ => return Err(Error::config("rebasin needs --from DIR or --model-a and --model-b")),
            };
            run_experiment("rebasin", run, threads, |cfg, out| {
                if commands::use_f32(cfg) {
                    commands::rebasin::<f32>(cfg, &cache, (&a, &b), out)
                } else {
                    commands::rebasin::<f64>(cfg, &cache, (&a, &b), out)
                }
            })
        }
        Command::Fed(args) => run_experiment("fed", args, threads, |cfg, out| {
            if commands::use_f32(cfg) {
                commands::fed::<f32>(cfg, &cache, out)
            } else {
                commands::fed::<f64>(cfg, &cache, out)
            }
        }),
        Command::Theory(args) => run_experiment("theory", args, threads, |cfg, out| commands::theory(cfg, out)),
        Command::Data { action } => match action {
            DataAction::Fetch { set, manifest, source } => {
                let set = match set {
                    SetArg::Mnist => ImageSet::Mnist,
                    SetArg::FashionMnist => ImageSet::FashionMnist,
                };
                let m = data_cmd::load_manifest(manifest.as_deref())?;
                data_cmd::fetch(set, &cache, &m, source.as_deref())
            }
            DataAction::Inspect { path } => data_cmd::inspect(path),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                // --help and --version
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return fail(&Error::config(e.to_string().trim().to_string()));
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return fail(&Error::config("--threads must be at least 1"));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(&Error::config(format!("cannot size thread pool: {e}")));
        }
    }
    match dispatch(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
