//! Per-dataset metrics of a model bundle on a labelled manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use thumbqc_core::imaging::load_thumbnail;
use thumbqc_core::metrics::{MetricsReport, ScoredSample};
use thumbqc_core::model::FixationModel;
use thumbqc_core::training::{reports_by_dataset, Manifest};

use crate::error::{CliError, CliResult};

/// Scores every record; a slide that cannot be read aborts the evaluation,
/// since dropping it would silently change the metrics.
pub fn score_manifest(model: &FixationModel, manifest: &Manifest) -> CliResult<Vec<(String, ScoredSample)>> {
    manifest
        .records
        .par_iter()
        .map(|r| {
            let p = load_thumbnail(&r.path)
                .and_then(|img| model.predict_image(&img))
                .map_err(|e| CliError::Runtime(format!("slide {}: {e}", r.slide_id)))?;
            Ok((r.dataset.clone(), ScoredSample::new(r.slide_id.clone(), p, r.label.value())))
        })
        .collect()
}

pub fn write_csv(out: &mut dyn Write, reports: &BTreeMap<String, MetricsReport>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MetricsReport::CSV_HEADER).map_err(CliError::runtime)?;
    for (dataset, report) in reports {
        w.write_record(report.csv_record(dataset)).map_err(CliError::runtime)?;
    }
    w.flush()?;
    Ok(())
}

pub struct EvalArgs<'a> {
    pub model: &'a Path,
    pub manifest: &'a Path,
    /// CSV path; a JSON copy is written next to it with extension `.json`.
    /// Stdout when absent.
    pub out: Option<&'a Path>,
    pub threads: Option<usize>,
    pub threshold: f64,
}

pub fn run(args: &EvalArgs<'_>) -> CliResult<BTreeMap<String, MetricsReport>> {
    let model = crate::infer::load_bundle(args.model)?;
    let manifest =
        Manifest::load(args.manifest).map_err(|e| CliError::Config(format!("manifest {}: {e}", args.manifest.display())))?;
    if manifest.records.is_empty() {
        return Err(CliError::EmptyInput("manifest has no records".into()));
    }
    let pool = crate::thread_pool(args.threads.unwrap_or(0))?;
    let scored = pool.install(|| score_manifest(&model, &manifest))?;
    let reports = reports_by_dataset(&scored, args.threshold)?;
    match args.out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            write_csv(&mut std::fs::File::create(p)?, &reports)?;
            let json = serde_json::to_string_pretty(&reports).map_err(CliError::runtime)?;
            std::fs::write(p.with_extension("json"), json)?;
        }
        None => write_csv(&mut std::io::stdout().lock(), &reports)?,
    }
    Ok(reports)
}
