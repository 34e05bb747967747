//! Single-threaded latency benchmark on a fixed synthetic thumbnail.

use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thumbqc_core::imaging::{RasterImage, Scale};
use thumbqc_core::model::{Approach, FixationModel, ModelConfig};
use thumbqc_core::synthetic::{thumbnail, SyntheticOptions};
use thumbqc_core::training::Label;

use crate::error::{CliError, CliResult};

/// `approach` or `approach:scale`, e.g. `tiled_soft_vote:M`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ApproachSpec {
    pub approach: Approach,
    pub scale: Scale,
}

impl FromStr for ApproachSpec {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let (a, sc) = match s.split_once(':') {
            Some((a, sc)) => (a, Some(sc)),
            None => (s, None),
        };
        let approach: Approach = a.trim().parse()?;
        let scale = match sc {
            Some(sc) => sc.trim().parse().map_err(CliError::config)?,
            None => approach.default_scale(),
        };
        approach.check_scale(scale)?;
        Ok(Self { approach, scale })
    }
}

impl std::fmt::Display for ApproachSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.approach, self.scale)
    }
}

pub const DEFAULT_APPROACHES: [&str; 4] = ["xs_slides", "vit_upscaling:M", "tiled_soft_vote:M", "tiled_soft_vote:L"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub median_ms: f64,
    pub p95_ms: f64,
    pub samples_ms: Vec<f64>,
}

impl Timing {
    pub fn from_samples(samples_ms: Vec<f64>) -> Self {
        Self {
            median_ms: nearest_rank(&samples_ms, 0.5),
            p95_ms: nearest_rank(&samples_ms, 0.95),
            samples_ms,
        }
    }
}

/// Nearest-rank percentile: the `ceil(q n)`-th smallest sample.
pub fn nearest_rank(samples: &[f64], q: f64) -> f64 {
    assert!(!samples.is_empty(), "percentile of no samples");
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub approach: Approach,
    pub scale: Scale,
    /// `desk`, or `bundle` for a loaded model.
    pub backbone: String,
    pub embed_dim: usize,
    pub depth: usize,
    pub backbone_inputs: usize,
    pub warmup: usize,
    pub iterations: usize,
    /// Orientation, stretch, resize, tiling and normalization.
    pub preprocess: Timing,
    /// Backbone, aggregation and head.
    pub forward: Timing,
    /// Both, measured as one span.
    pub total: Timing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub threads: usize,
    pub single_threaded: bool,
    pub thumbnail: (usize, usize),
    pub entries: Vec<BenchEntry>,
}

impl BenchReport {
    pub fn entry(&self, approach: Approach, scale: Scale) -> Option<&BenchEntry> {
        self.entries.iter().find(|e| e.approach == approach && e.scale == scale)
    }
}

/// The thumbnail every run is timed on.
pub fn bench_thumbnail(seed: u64) -> RasterImage {
    let opts = SyntheticOptions {
        min_side: 640,
        max_side: 1280,
        portrait_fraction: 0.0,
    };
    thumbnail(Label::Ffpe, seed, &opts)
}

fn measure(model: &FixationModel, img: &RasterImage, warmup: usize, iterations: usize) -> CliResult<[Vec<f64>; 3]> {
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for i in 0..warmup + iterations {
        let t0 = Instant::now();
        let input = model.prepare(img)?;
        let t1 = Instant::now();
        let p = model.predict(&input)?;
        let t2 = Instant::now();
        std::hint::black_box(p);
        if i >= warmup {
            out[0].push((t1 - t0).as_secs_f64() * 1e3);
            out[1].push((t2 - t1).as_secs_f64() * 1e3);
            out[2].push((t2 - t0).as_secs_f64() * 1e3);
        }
    }
    Ok(out)
}

pub struct BenchArgs<'a> {
    /// Benchmark this bundle instead of freshly initialized desk models.
    pub model: Option<&'a Path>,
    pub approaches: Vec<ApproachSpec>,
    pub warmup: usize,
    pub iterations: usize,
    pub seed: u64,
}

/// Runs on a dedicated one-worker pool, whatever `--threads` says.
pub fn run(args: &BenchArgs<'_>) -> CliResult<BenchReport> {
    if args.iterations == 0 {
        return Err(CliError::Config("iterations must be at least 1".into()));
    }
    let mut models: Vec<(String, FixationModel)> = Vec::new();
    match args.model {
        Some(dir) => models.push(("bundle".into(), crate::infer::load_bundle(dir)?)),
        None => {
            for spec in &args.approaches {
                let mut cfg = ModelConfig::desk(spec.approach);
                cfg.scale = spec.scale;
                models.push(("desk".into(), FixationModel::new(cfg, args.seed)?));
            }
        }
    }
    let img = bench_thumbnail(args.seed);
    let pool = crate::thread_pool(1)?;
    pool.install(|| {
        let threads = rayon::current_num_threads();
        assert_eq!(threads, 1, "benchmark pool must have one worker");
        let mut entries = Vec::with_capacity(models.len());
        for (name, model) in &models {
            let [prep, fwd, total] = measure(model, &img, args.warmup, args.iterations)?;
            let bb = &model.config.backbone;
            entries.push(BenchEntry {
                approach: model.approach(),
                scale: model.scale(),
                backbone: name.clone(),
                embed_dim: bb.embed_dim,
                depth: bb.depth,
                backbone_inputs: if model.approach().is_tiled() { model.scale().tile_count() } else { 1 },
                warmup: args.warmup,
                iterations: args.iterations,
                preprocess: Timing::from_samples(prep),
                forward: Timing::from_samples(fwd),
                total: Timing::from_samples(total),
            });
        }
        Ok(BenchReport {
            threads,
            single_threaded: threads == 1,
            thumbnail: img.dims(),
            entries,
        })
    })
}
