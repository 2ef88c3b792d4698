//! `tackcoat` command line: the GPR processing chain as file-to-file stages.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure,
//! 3 threshold failure (`reproduce` only).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tackcoat::config::RunConfig;
use tackcoat::pipeline;
use tackcoat::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "tackcoat", version, about = "GPR tack coat mapping: simulate, extract, train, predict, evaluate, map")]
struct Cli {
    /// Run config file (`key = value` lines). Defaults to the numerical-study preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stage (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Permit evaluation on traces that were used for training.
    #[arg(long, global = true)]
    allow_train_eval: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a survey: trace table, metadata, manifest and truth maps.
    Simulate,
    /// Validate an external trace table and write its manifest.
    Ingest {
        /// Trace table CSV (x,y[,quantity],s0,...).
        traces: PathBuf,
        /// Metadata file (must define dt).
        meta: PathBuf,
    },
    /// Extract feature vectors from a dataset.
    Features {
        /// Dataset manifest [default: OUT/manifest.txt].
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Grid search and fit a model.
    Train {
        /// Feature table [default: OUT/features.csv].
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Apply a model to a feature table.
    Predict {
        /// Model file [default: OUT/model.json].
        #[arg(long)]
        model: Option<PathBuf>,
        /// Feature table [default: OUT/features.csv].
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Confusion matrix, Dice scores and RMSE on held-out traces.
    Evaluate {
        /// Predictions file [default: OUT/predictions.csv].
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Predicted and true maps as CSV and PGM.
    Map {
        /// Predictions file [default: OUT/predictions.csv].
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Run a whole study and check its thresholds.
    Reproduce {
        /// numerical-study, carousel or vendee.
        study: String,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::preset("numerical-study")?,
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn or_out(path: &Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| out.join(name))
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let out = cli.out.as_path();
    match &cli.command {
        Command::Simulate => {
            let cfg = load_config(cli)?;
            let sim = pipeline::simulate(&cfg, out)?;
            println!("traces: {}", sim.trace_count);
            println!("seed: {}", sim.seed);
        }
        Command::Ingest { traces, meta } => {
            let manifest = pipeline::ingest(traces, meta, out)?;
            println!("traces: {}", manifest.trace_count);
            println!("labeled: {}", manifest.labeled);
            if !manifest.labeled {
                println!("prediction-only dataset (no quantity column)");
            }
            println!("checksum: {}", manifest.checksum);
        }
        Command::Features { dataset } => {
            let cfg = load_config(cli)?;
            let path = pipeline::extract(&cfg, &or_out(dataset, out, tackcoat::dataset::MANIFEST_FILE), out)?;
            println!("features: {}", path.display());
        }
        Command::Train { features } => {
            let cfg = load_config(cli)?;
            let trained = pipeline::train(&cfg, &or_out(features, out, pipeline::FEATURES_FILE), out)?;
            println!("model: {}", trained.model_path.display());
            println!("best: {}", trained.search.best.describe());
            println!("cv {}: {}", trained.search.metric.name(), trained.search.best_score);
            println!("train rows: {}, held out: {}", trained.train_rows, trained.held_out_rows);
        }
        Command::Predict { model, features } => {
            let preds = pipeline::predict(
                &or_out(model, out, pipeline::MODEL_FILE),
                &or_out(features, out, pipeline::FEATURES_FILE),
                out,
            )?;
            println!("predictions: {}", preds.rows.len());
        }
        Command::Evaluate { predictions } => {
            let cfg = load_config(cli)?;
            let path = or_out(predictions, out, pipeline::PREDICTIONS_FILE);
            pipeline::evaluate(&cfg, &path, out, cli.allow_train_eval)?;
            let report = std::fs::read_to_string(out.join(pipeline::REPORT_FILE))
                .map_err(|e| Error::Io { path: out.join(pipeline::REPORT_FILE), source: e })?;
            print!("{report}");
        }
        Command::Map { predictions } => {
            let outcome = pipeline::map(&or_out(predictions, out, pipeline::PREDICTIONS_FILE), out)?;
            println!("mapped cells: {}", outcome.map.filled_count());
            if outcome.conflicts > 0 {
                println!("positions written more than once: {}", outcome.conflicts);
            }
        }
        Command::Reproduce { study } => {
            let mut cfg = match &cli.config {
                Some(path) => {
                    let cfg = RunConfig::load(path)?;
                    if cfg.preset.as_deref() != Some(study.as_str()) {
                        return Err(Error::Config(format!(
                            "config {} does not start from preset '{study}'",
                            path.display()
                        )));
                    }
                    cfg
                }
                None => RunConfig::preset(study)?,
            };
            if let Some(seed) = cli.seed {
                cfg.set_seed(seed);
            }
            let outcome = pipeline::reproduce(&cfg, out)?;
            print!("{}", outcome.summary);
            if !outcome.passed {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version requests are not failures; bad arguments are
            // validation errors.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
