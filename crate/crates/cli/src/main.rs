use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use stratflow::flow::{FlowArch, TrainConfig};
use stratflow::harness::{self, DataSpec, ExperimentConfig, ModelSpec, SchemeSpec};
use stratflow::Testbed;

#[derive(Parser)]
#[command(name = "stratflow", version, about = "Stratified Monte Carlo through Gaussian latent strata")]
struct Cli {
    /// Master seed; overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Flow,
    Gmm,
}

#[derive(Subcommand)]
enum Command {
    /// Write testbed samples as CSV.
    Generate {
        #[arg(long)]
        testbed: Testbed,
        #[arg(long)]
        n: usize,
        /// File name inside the output directory.
        #[arg(long, default_value = "data.csv")]
        file: String,
    },
    /// Fit a flow or mixture to a CSV file.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long)]
        first_difference: bool,
        /// Ignored when --config is given; the config's model is used instead.
        #[arg(long, value_enum, default_value = "flow")]
        model: ModelKind,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// One repetition of the config grid with full reports.
    Estimate,
    /// Repeated trials with aggregated metrics.
    Experiment {
        #[arg(long)]
        retrain_per_rep: bool,
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Confidence-interval lines and coverage summary.
    CiLines {
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Equiprobability, round-trip and AR diagnostics for a scheme.
    ValidateStrata {
        /// Scheme spec as JSON, e.g. '{"kind":"cartesian","m0":4}'.
        #[arg(long, conflicts_with = "scheme_file")]
        scheme: Option<String>,
        /// A serialized scheme.
        #[arg(long)]
        scheme_file: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 100_000)]
        n_samples: usize,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().context("this command needs --config")?;
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn print(value: serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn files_json(files: &[PathBuf]) -> Vec<String> {
    files.iter().map(|p| p.display().to_string()).collect()
}

fn run(cli: &Cli) -> Result<bool> {
    let out_dir = |cfg: Option<&ExperimentConfig>| -> PathBuf {
        match cfg {
            Some(c) => c.output_dir(cli.out.as_deref()),
            None => cli.out.clone().unwrap_or_else(|| PathBuf::from("out")),
        }
    };
    match &cli.command {
        Command::Generate { testbed, n, file } => {
            let dir = out_dir(None);
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(file);
            harness::generate(*testbed, *n, cli.seed.unwrap_or(0), &path)?;
            print(json!({"testbed": testbed.name(), "n": n, "file": path.display().to_string()}))?;
        }
        Command::Train { data, dim, first_difference, model, k, max_iters, layers, hidden, epochs } => {
            let (spec, dir) = if cli.config.is_some() {
                let cfg = load_config(cli)?;
                let dir = out_dir(Some(&cfg));
                (cfg.model, dir)
            } else {
                let spec = match model {
                    ModelKind::Gmm => ModelSpec::Gmm { k: *k, max_iters: *max_iters },
                    ModelKind::Flow => {
                        let default = FlowArch::for_dim(*dim);
                        let arch = FlowArch { layers: layers.unwrap_or(default.layers), hidden: hidden.unwrap_or(default.hidden) };
                        let mut train = TrainConfig::default();
                        if let Some(e) = epochs {
                            train.epochs = *e;
                        }
                        ModelSpec::Flow { path: None, arch: Some(arch), train }
                    }
                };
                (spec, out_dir(None))
            };
            let data = DataSpec { path: data.clone(), first_difference: *first_difference };
            let summary = harness::train_command(&data, *dim, &spec, cli.seed.unwrap_or(0), &dir)?;
            print(serde_json::to_value(summary)?)?;
        }
        Command::Estimate => {
            let cfg = load_config(cli)?;
            let (outcome, files) = harness::estimate_command(&cfg, &out_dir(Some(&cfg)))?;
            print(json!({"config_hash": outcome.config_hash, "rows": outcome.rows, "files": files_json(&files)}))?;
        }
        Command::Experiment { retrain_per_rep, repetitions } => {
            let mut cfg = load_config(cli)?;
            cfg.retrain_per_rep |= *retrain_per_rep;
            if let Some(k) = repetitions {
                cfg.repetitions = *k;
            }
            let (outcome, files) = harness::experiment_command(&cfg, &out_dir(Some(&cfg)))?;
            print(json!({"config_hash": outcome.config_hash, "aggregate": outcome.aggregate, "files": files_json(&files)}))?;
        }
        Command::CiLines { repetitions } => {
            let mut cfg = load_config(cli)?;
            if let Some(k) = repetitions {
                cfg.repetitions = *k;
            }
            let (summary, files) = harness::ci_lines_command(&cfg, &out_dir(Some(&cfg)))?;
            print(json!({"summary": summary, "files": files_json(&files)}))?;
        }
        Command::ValidateStrata { scheme, scheme_file, dim, n_samples } => {
            let seed = cli.seed.unwrap_or(0);
            let built = match (scheme, scheme_file) {
                (Some(text), None) => {
                    let spec: SchemeSpec = serde_json::from_str(text).context("parsing --scheme")?;
                    harness::scheme_for_validation(&spec, *dim, seed)?
                }
                (None, Some(path)) => harness::load_scheme(path, *dim)?,
                _ => bail!("give exactly one of --scheme and --scheme-file"),
            };
            let diag = harness::validate_strata_command(&built, *n_samples, seed, &out_dir(None))?;
            print(serde_json::to_value(&diag)?)?;
            return Ok(diag.passed);
        }
    }
    Ok(true)
}

fn init_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = init_threads(cli.threads).and_then(|()| run(&cli));
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("validation failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
