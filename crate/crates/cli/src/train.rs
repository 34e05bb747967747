//! `train`: fit a model from a TOML config and write its bundle and logs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thumbqc_core::metrics::MetricsReport;
use thumbqc_core::training::{evaluate, prepare_slides, train_with, EpochRecord, Split};
use thumbqc_core::weights::WeightStore;

use crate::config::{self, TrainFile};
use crate::error::{CliError, CliResult};

pub const EPOCH_LOG: &str = "epochs.jsonl";
pub const SUMMARY: &str = "summary.json";
pub const BUNDLE_DIR: &str = "model";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Metrics of the saved (best) model.
    pub val: MetricsReport,
    pub val_loss: f64,
    pub test: Option<MetricsReport>,
    pub bundle: PathBuf,
}

pub struct TrainArgs<'a> {
    pub config: &'a Path,
    pub out: &'a Path,
    /// Already merged from `--seed` and the environment; falls back to the config.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

pub fn run(args: &TrainArgs<'_>) -> CliResult<TrainSummary> {
    let file: TrainFile = config::load(args.config)?;
    let seed = args.seed.unwrap_or(file.seed);
    let cfg = file.train_config(seed)?;
    let manifest = config::load_manifest(&file.data, args.config, seed)?;
    let backbone = match &file.data.backbone_weights {
        Some(p) => {
            let p = config::resolve(args.config, p);
            Some(WeightStore::load(&p).map_err(|e| CliError::Config(format!("data.backbone_weights {}: {e}", p.display())))?)
        }
        None => None,
    };
    std::fs::create_dir_all(args.out)?;
    let pool = crate::thread_pool(args.threads.unwrap_or(0))?;

    let log_path = args.out.join(EPOCH_LOG);
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    let mut log_err: Option<std::io::Error> = None;
    let outcome = pool.install(|| {
        train_with(&manifest, &cfg, backbone.as_ref(), |rec: &EpochRecord| {
            eprintln!(
                "epoch {:>3}  train loss {:.4} acc {:.3}  val loss {:.4} acc {:.3}",
                rec.epoch, rec.train_loss, rec.train_accuracy, rec.val_loss, rec.val_accuracy
            );
            let res = serde_json::to_writer(&mut log, rec)
                .map_err(std::io::Error::other)
                .and_then(|_| log.write_all(b"\n"))
                .and_then(|_| log.flush());
            if let Err(e) = res {
                log_err.get_or_insert(e);
            }
        })
    })?;
    if let Some(e) = log_err {
        return Err(CliError::Runtime(format!("{}: {e}", log_path.display())));
    }

    let bundle = args.out.join(BUNDLE_DIR);
    let mut meta = BTreeMap::new();
    meta.insert("best_epoch".to_string(), outcome.best_epoch.to_string());
    outcome.model.save(&bundle, Some(seed), meta)?;

    let (val, val_loss, test) = pool.install(|| -> CliResult<_> {
        let val_recs = manifest.split(Split::Val);
        let (val_loss, val) = evaluate(&outcome.model, &prepare_slides(&val_recs, &outcome.model)?)?;
        let test_recs = manifest.split(Split::Test);
        let test = if test_recs.is_empty() {
            None
        } else {
            Some(evaluate(&outcome.model, &prepare_slides(&test_recs, &outcome.model)?)?.1)
        };
        Ok((val, val_loss, test))
    })?;
    let summary = TrainSummary {
        seed,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.log.len(),
        val,
        val_loss,
        test,
        bundle,
    };
    std::fs::write(
        args.out.join(SUMMARY),
        serde_json::to_string_pretty(&summary).map_err(CliError::runtime)?,
    )?;
    Ok(summary)
}
