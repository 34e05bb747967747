use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thumbqc_core::imaging::Scale;

use crate::bench::{self, ApproachSpec, BenchArgs, DEFAULT_APPROACHES};
use crate::error::{CliError, CliResult};
use crate::eval::{self, EvalArgs};
use crate::hpo::{self, HpoArgs};
use crate::infer::{self, InferArgs};
use crate::preprocess::{self, PreprocessArgs, SyntheticArgs};
use crate::train::{self, TrainArgs};

/// Fixation-type prediction (FFPE vs. frozen section) from slide thumbnails.
#[derive(Debug, Parser)]
#[command(name = "thumbqc", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Worker threads for slide-level parallelism (default: one per core).
    /// `bench` always uses one.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the seed of the config file.
    #[arg(long, global = true, env = "THUMBQC_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score thumbnails and write one JSON verdict per line.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// A thumbnail or a directory of thumbnails.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Verdict JSONL (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-dataset accuracy, F1 and AUROC on a labelled manifest.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Metrics CSV, plus a `.json` copy (default: CSV on stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Train a model from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the bundle, epoch log and summary.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run or resume a hyperparameter study from a TOML config.
    Hpo {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; an existing study log there is resumed.
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-threaded latency benchmark.
    Bench {
        /// Benchmark a trained bundle instead of freshly initialized desk models.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Approaches as `name[:scale]`, comma separated.
        #[arg(long, value_delimiter = ',')]
        approach: Vec<String>,
        #[arg(long, default_value_t = 20)]
        iterations: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        /// Report JSON (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write resized canvases and tiles as PNGs, or generate a synthetic dataset.
    Preprocess {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "L")]
        scale: Scale,
        /// Generate this many synthetic slides per class instead.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long, default_value = "synthetic")]
        dataset: String,
        /// Train/val/test fractions of the synthetic set.
        #[arg(long, value_delimiter = ',', default_values_t = [0.6, 0.2, 0.2])]
        split: Vec<f64>,
    },
}

pub fn run(cli: Cli) -> CliResult<()> {
    let GlobalArgs { threads, seed } = cli.global;
    match cli.command {
        Command::Infer {
            model,
            manifest,
            input,
            out,
        } => {
            let (ok, failed) = infer::run(&InferArgs {
                model: &model,
                manifest: manifest.as_deref(),
                input: input.as_deref(),
                out: out.as_deref(),
                threads,
            })?;
            eprintln!("{ok} verdicts, {failed} errors");
        }
        Command::Eval {
            model,
            manifest,
            out,
            threshold,
        } => {
            eval::run(&EvalArgs {
                model: &model,
                manifest: &manifest,
                out: out.as_deref(),
                threads,
                threshold,
            })?;
        }
        Command::Train { config, out } => {
            let s = train::run(&TrainArgs {
                config: &config,
                out: &out,
                seed,
                threads,
            })?;
            eprintln!(
                "best epoch {} of {}: val acc {:.4}; bundle in {}",
                s.best_epoch,
                s.epochs_run,
                s.val.accuracy,
                s.bundle.display()
            );
        }
        Command::Hpo { config, out } => {
            let state = hpo::run(&HpoArgs {
                config: &config,
                out: &out,
                seed,
                threads,
            })?;
            match state.best_trial() {
                Some(t) => eprintln!("{} trials; best {:?} = {:?}", state.trials.len(), t.point, t.last_value()),
                None => eprintln!("{} trials; none completed", state.trials.len()),
            }
        }
        Command::Bench {
            model,
            approach,
            iterations,
            warmup,
            out,
        } => {
            let names: Vec<&str> = if approach.is_empty() {
                DEFAULT_APPROACHES.to_vec()
            } else {
                approach.iter().map(String::as_str).collect()
            };
            let approaches = names.iter().map(|s| s.parse()).collect::<CliResult<Vec<ApproachSpec>>>()?;
            let report = bench::run(&BenchArgs {
                model: model.as_deref(),
                approaches,
                warmup,
                iterations,
                seed: seed.unwrap_or(0),
            })?;
            for e in &report.entries {
                eprintln!(
                    "{:<18} {:<2} inputs {:>2}  median {:>9.2} ms  p95 {:>9.2} ms  (prep {:.2}, forward {:.2})",
                    e.approach.as_str(),
                    e.scale,
                    e.backbone_inputs,
                    e.total.median_ms,
                    e.total.p95_ms,
                    e.preprocess.median_ms,
                    e.forward.median_ms
                );
            }
            let json = serde_json::to_string_pretty(&report).map_err(CliError::runtime)?;
            match out {
                Some(p) => std::fs::write(p, json)?,
                None => println!("{json}"),
            }
        }
        Command::Preprocess {
            manifest,
            input,
            out,
            scale,
            synthetic,
            dataset,
            split,
        } => match synthetic {
            Some(per_class) => {
                let split: [f64; 3] = split
                    .try_into()
                    .map_err(|_| CliError::Config("--split: expected three fractions".into()))?;
                let path = preprocess::synthesize(&SyntheticArgs {
                    out: &out,
                    dataset: &dataset,
                    per_class,
                    split,
                    seed: seed.unwrap_or(0),
                })?;
                eprintln!("wrote {}", path.display());
            }
            None => {
                let failures = preprocess::run(&PreprocessArgs {
                    manifest: manifest.as_deref(),
                    input: input.as_deref(),
                    out: &out,
                    scale,
                    threads,
                })?;
                for (id, e) in &failures {
                    eprintln!("{id}: {e}");
                }
            }
        },
    }
    Ok(())
}
