//! Seeded synthetic thumbnails with two visually distinct classes.
//!
//! FFPE-like slides show smooth, low-frequency stained tissue. Frozen-section
//! like slides show the same layout covered in high-frequency speckle, punched
//! with scattered bright ice-crystal holes and crossed by tearing streaks.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::imaging::{save_png, RasterImage};
use crate::training::{Label, ManifestRecord, Split};

#[derive(Clone, Debug)]
pub struct SyntheticOptions {
    pub min_side: usize,
    pub max_side: usize,
    /// Probability that a slide is generated in portrait orientation.
    pub portrait_fraction: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            min_side: 96,
            max_side: 320,
            portrait_fraction: 0.25,
        }
    }
}

struct Wave {
    fy: f64,
    fx: f64,
    phase: f64,
    amp: f64,
}

/// Share of frozen-section tissue pixels punched out as bright ice-crystal holes.
const HOLE_FRACTION: f64 = 0.3;

/// One thumbnail of class `label`, fully determined by `seed`.
pub fn thumbnail(label: Label, seed: u64, opts: &SyntheticOptions) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let short = rng.random_range(opts.min_side..=opts.max_side / 2).max(8);
    let long = rng.random_range(short.max(opts.min_side)..=opts.max_side);
    let (h, w) = if rng.random::<f64>() < opts.portrait_fraction {
        (long, short)
    } else {
        (short, long)
    };

    // tissue mask: a few soft blobs
    let blobs: Vec<(f64, f64, f64)> = (0..rng.random_range(2..5))
        .map(|_| (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.18..0.35)))
        .collect();
    let waves: Vec<Wave> = (0..3)
        .map(|_| Wave {
            fy: rng.random_range(0.5..2.5),
            fx: rng.random_range(0.5..2.5),
            phase: rng.random_range(0.0..2.0 * PI),
            amp: rng.random_range(0.04..0.1),
        })
        .collect();
    let hue = [
        rng.random_range(0.78..0.9),
        rng.random_range(0.45..0.6),
        rng.random_range(0.68..0.8),
    ];
    let streaks: Vec<(f64, f64, f64)> = match label {
        Label::Ffpe => Vec::new(),
        Label::Fs => (0..rng.random_range(3..7))
            .map(|_| {
                let angle: f64 = rng.random_range(0.0..PI);
                let offset = rng.random_range(-0.4..0.4);
                let width = rng.random_range(0.006..0.02);
                (angle, offset, width)
            })
            .collect(),
    };
    let speckle = Normal::new(0.0, 0.25).expect("valid std");

    let mut data = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        let y = (r as f64 + 0.5) / h as f64;
        for c in 0..w {
            let x = (c as f64 + 0.5) / w as f64;
            let tissue = blobs
                .iter()
                .map(|&(cy, cx, rad)| {
                    let d2 = ((y - cy) / rad).powi(2) + ((x - cx) / rad).powi(2);
                    (-d2).exp()
                })
                .fold(0.0, f64::max);
            let tissue = ((tissue - 0.3) * 4.0).clamp(0.0, 1.0);
            let texture: f64 = waves
                .iter()
                .map(|wv| wv.amp * (2.0 * PI * (wv.fy * y + wv.fx * x) + wv.phase).sin())
                .sum();
            let (noise, hole) = match label {
                Label::Ffpe => (0.0, false),
                Label::Fs => (speckle.sample(&mut rng), rng.random::<f64>() < HOLE_FRACTION),
            };
            let torn = streaks.iter().any(|&(a, off, width)| {
                let dist = (x - 0.5) * a.sin() - (y - 0.5) * a.cos() - off;
                dist.abs() < width
            });
            for (ch, &h) in hue.iter().enumerate() {
                let stain = h + texture + noise * (0.8 + 0.1 * ch as f64);
                let v = 0.95 * (1.0 - tissue) + stain * tissue;
                let v = if (torn || hole) && tissue > 0.0 { 0.97 } else { v };
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    RasterImage::new(h, w, data).expect("generated pixels are in range")
}

/// Writes `n_per_class` slides of each class as PNG files into `dir` and
/// returns manifest records (split `train`; callers re-split).
pub fn write_dataset(dir: impl AsRef<Path>, dataset: &str, n_per_class: usize, seed: u64, opts: &SyntheticOptions) -> Result<Vec<ManifestRecord>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(2 * n_per_class);
    for i in 0..n_per_class {
        for (k, label) in [Label::Ffpe, Label::Fs].into_iter().enumerate() {
            let slide_id = format!("{dataset}-{}-{i:04}", label.as_str().to_lowercase());
            let path: PathBuf = dir.join(format!("{slide_id}.png"));
            let img = thumbnail(label, seed.wrapping_mul(1_000_003).wrapping_add((2 * i + k) as u64), opts);
            save_png(&img, &path)?;
            records.push(ManifestRecord {
                slide_id,
                path,
                label,
                dataset: dataset.to_string(),
                split: Split::Train,
            });
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn high_freq_energy(img: &RasterImage) -> f64 {
        let (h, w) = img.dims();
        let mut e = 0.0;
        for r in 0..h {
            for c in 1..w {
                let a = img.pixel(r, c)[1] as f64;
                let b = img.pixel(r, c - 1)[1] as f64;
                e += (a - b).powi(2);
            }
        }
        e / (h * (w - 1)) as f64
    }

    #[test]
    fn deterministic_given_seed() {
        let o = SyntheticOptions::default();
        assert_eq!(thumbnail(Label::Fs, 5, &o), thumbnail(Label::Fs, 5, &o));
        assert_ne!(thumbnail(Label::Fs, 5, &o), thumbnail(Label::Fs, 6, &o));
    }

    #[test]
    fn frozen_sections_are_rougher() {
        let o = SyntheticOptions::default();
        for seed in 0..5 {
            let ffpe = high_freq_energy(&thumbnail(Label::Ffpe, seed, &o));
            let fs = high_freq_energy(&thumbnail(Label::Fs, seed, &o));
            assert!(fs > 5.0 * ffpe, "seed {seed}: {fs} vs {ffpe}");
        }
    }

    #[test]
    fn sizes_vary_and_include_portrait() {
        let o = SyntheticOptions::default();
        let dims: Vec<_> = (0..40).map(|s| thumbnail(Label::Ffpe, s, &o).dims()).collect();
        assert!(dims.iter().any(|&(h, w)| h > w));
        assert!(dims.iter().any(|&(h, w)| w > h));
        assert!(dims.iter().all(|&(h, w)| h <= o.max_side && w <= o.max_side));
    }
}
