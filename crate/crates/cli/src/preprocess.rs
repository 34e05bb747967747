//! `preprocess`: write the resized canvas and tiles of thumbnails as PNGs,
//! or generate a synthetic labelled dataset.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thumbqc_core::imaging::{load_thumbnail, prepare, save_png, tile, Scale};
use thumbqc_core::synthetic::{write_dataset, SyntheticOptions};
use thumbqc_core::training::{split_dataset, Manifest};

use crate::error::{CliError, CliResult};
use crate::infer::{collect_sources, SlideSource};

pub struct PreprocessArgs<'a> {
    pub manifest: Option<&'a Path>,
    pub input: Option<&'a Path>,
    pub out: &'a Path,
    pub scale: Scale,
    pub threads: Option<usize>,
}

/// Writes `<out>/<slide_id>/canvas.png` and `tile_<k>.png` (row-major) for
/// every input. Returns the slide ids that failed, with their errors.
pub fn run(args: &PreprocessArgs<'_>) -> CliResult<Vec<(String, String)>> {
    let sources = collect_sources(args.manifest, args.input)?;
    if sources.is_empty() {
        return Err(CliError::EmptyInput("no slides to preprocess".into()));
    }
    let pool = crate::thread_pool(args.threads.unwrap_or(0))?;
    let failures = pool.install(|| {
        sources
            .par_iter()
            .filter_map(|s| write_one(s, args.out, args.scale).err().map(|e| (s.slide_id.clone(), e.to_string())))
            .collect::<Vec<_>>()
    });
    Ok(failures)
}

fn write_one(src: &SlideSource, out: &Path, scale: Scale) -> thumbqc_core::Result<()> {
    let canvas = prepare(&load_thumbnail(&src.path)?, scale)?;
    let dir = out.join(&src.slide_id);
    std::fs::create_dir_all(&dir)?;
    save_png(&canvas, dir.join("canvas.png"))?;
    if scale.tile_count() > 1 {
        for (k, t) in tile(&canvas, scale)?.tiles.iter().enumerate() {
            save_png(t, dir.join(format!("tile_{k:02}.png")))?;
        }
    }
    Ok(())
}

pub struct SyntheticArgs<'a> {
    pub out: &'a Path,
    pub dataset: &'a str,
    pub per_class: usize,
    pub split: [f64; 3],
    pub seed: u64,
}

/// Generates a synthetic dataset under `out` and writes `out/manifest.csv`.
pub fn synthesize(args: &SyntheticArgs<'_>) -> CliResult<PathBuf> {
    if args.per_class == 0 {
        return Err(CliError::Config("synthetic: at least one slide per class".into()));
    }
    let records = write_dataset(args.out, args.dataset, args.per_class, args.seed, &SyntheticOptions::default())?;
    let mut manifest = split_dataset(&records, args.split, args.seed).map_err(CliError::config)?;
    // keep paths relative so the directory can be moved
    for r in &mut manifest.records {
        if let Ok(rel) = r.path.strip_prefix(args.out) {
            r.path = rel.to_path_buf();
        }
    }
    let path = args.out.join("manifest.csv");
    Manifest::save_csv(&manifest, &path)?;
    Ok(path)
}
