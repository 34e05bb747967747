//! Batch inference over a manifest, a directory or a single thumbnail.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thumbqc_core::imaging::{load_thumbnail, Scale};
use thumbqc_core::model::{Approach, FixationModel};
use thumbqc_core::training::{Label, Manifest};

use crate::error::{CliError, CliResult};

/// One slide to score.
#[derive(Clone, Debug, PartialEq)]
pub struct SlideSource {
    pub slide_id: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlideVerdict {
    pub slide_id: String,
    pub probability_ffpe: f64,
    pub predicted: Label,
    pub approach: Approach,
    pub scale: Scale,
    /// Wall clock for decoding, preprocessing and the forward pass.
    pub inference_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlideFailure {
    pub slide_id: String,
    pub path: PathBuf,
    pub error: String,
}

/// A line of the verdicts file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VerdictRecord {
    Verdict(SlideVerdict),
    Error(SlideFailure),
}

impl VerdictRecord {
    pub fn slide_id(&self) -> &str {
        match self {
            Self::Verdict(v) => &v.slide_id,
            Self::Error(e) => &e.slide_id,
        }
    }
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "ppm", "pnm"];

/// Image files directly inside `dir`, sorted by file name. The slide id is
/// the file stem.
pub fn sources_from_dir(dir: &Path) -> CliResult<Vec<SlideSource>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().and_then(|e| e.to_str()).is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str())))
        .collect();
    paths.sort();
    Ok(paths.into_iter().map(source_from_path).collect())
}

fn source_from_path(path: PathBuf) -> SlideSource {
    let slide_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    SlideSource { slide_id, path }
}

/// Resolves the input set from `--manifest` or `--input` (file or directory).
pub fn collect_sources(manifest: Option<&Path>, input: Option<&Path>) -> CliResult<Vec<SlideSource>> {
    match (manifest, input) {
        (Some(m), None) => {
            let m = Manifest::load(m).map_err(|e| CliError::Config(format!("manifest {}: {e}", m.display())))?;
            Ok(m.records
                .into_iter()
                .map(|r| SlideSource {
                    slide_id: r.slide_id,
                    path: r.path,
                })
                .collect())
        }
        (None, Some(p)) if p.is_dir() => sources_from_dir(p),
        (None, Some(p)) if p.exists() => Ok(vec![source_from_path(p.to_path_buf())]),
        (None, Some(p)) => Err(CliError::Config(format!("input {} does not exist", p.display()))),
        (Some(_), Some(_)) => Err(CliError::Config("give either --manifest or --input, not both".into())),
        (None, None) => Err(CliError::Config("infer needs --manifest or --input".into())),
    }
}

pub fn load_bundle(dir: &Path) -> CliResult<FixationModel> {
    FixationModel::load(dir).map_err(|e| CliError::Config(format!("model bundle {}: {e}", dir.display())))
}

fn score_one(model: &FixationModel, src: &SlideSource) -> VerdictRecord {
    let start = Instant::now();
    let result = load_thumbnail(&src.path).and_then(|img| model.predict_image(&img));
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    match result {
        Ok(p) => VerdictRecord::Verdict(SlideVerdict {
            slide_id: src.slide_id.clone(),
            probability_ffpe: p,
            predicted: if p >= 0.5 { Label::Ffpe } else { Label::Fs },
            approach: model.approach(),
            scale: model.scale(),
            inference_ms: elapsed.max(f64::MIN_POSITIVE),
        }),
        Err(e) => VerdictRecord::Error(SlideFailure {
            slide_id: src.slide_id.clone(),
            path: src.path.clone(),
            error: e.to_string(),
        }),
    }
}

/// Scores every source in parallel; the result follows input order.
pub fn infer(model: &FixationModel, sources: &[SlideSource]) -> Vec<VerdictRecord> {
    sources.par_iter().map(|s| score_one(model, s)).collect()
}

pub fn write_records<T: Serialize>(out: &mut dyn Write, records: &[T]) -> CliResult<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r).map_err(CliError::runtime)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub struct InferArgs<'a> {
    pub model: &'a Path,
    pub manifest: Option<&'a Path>,
    pub input: Option<&'a Path>,
    /// Verdict JSONL; stdout when absent.
    pub out: Option<&'a Path>,
    pub threads: Option<usize>,
}

/// Returns the number of verdicts and of per-slide errors.
pub fn run(args: &InferArgs<'_>) -> CliResult<(usize, usize)> {
    let model = load_bundle(args.model)?;
    let sources = collect_sources(args.manifest, args.input)?;
    if sources.is_empty() {
        return Err(CliError::EmptyInput("no slides to score".into()));
    }
    let pool = crate::thread_pool(args.threads.unwrap_or(0))?;
    let records = pool.install(|| infer(&model, &sources));
    match args.out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            write_records(&mut std::io::BufWriter::new(std::fs::File::create(p)?), &records)?
        }
        None => write_records(&mut std::io::stdout().lock(), &records)?,
    }
    let errors = records.iter().filter(|r| matches!(r, VerdictRecord::Error(_))).count();
    Ok((records.len() - errors, errors))
}
