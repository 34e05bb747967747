//! Thumbnail geometry: orientation, canonical stretch, scale resize and tiling.

mod io;
mod raster;
mod resample;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

pub use io::{load_thumbnail, save_png, save_ppm, EXPORT_LONGEST_SIDE};
pub use raster::RasterImage;
pub use resample::resize_bilinear;

use crate::error::{Error, Result};

/// Side length of every tile fed to the backbone.
pub const TILE_SIZE: usize = 224;
pub const CANONICAL_HEIGHT: usize = 896;
pub const CANONICAL_WIDTH: usize = 1792;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scale {
    XS,
    S,
    M,
    L,
}

impl Scale {
    pub const ALL: [Scale; 4] = [Scale::XS, Scale::S, Scale::M, Scale::L];

    pub fn config(self) -> ScaleConfig {
        let (grid_rows, grid_cols) = match self {
            Scale::XS => (1, 1),
            Scale::S => (1, 2),
            Scale::M => (2, 4),
            Scale::L => (4, 8),
        };
        ScaleConfig {
            scale: self,
            target_height: grid_rows * TILE_SIZE,
            target_width: grid_cols * TILE_SIZE,
            grid_rows,
            grid_cols,
        }
    }

    pub fn tile_count(self) -> usize {
        let c = self.config();
        c.grid_rows * c.grid_cols
    }
}

impl std::fmt::Display for Scale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scale::XS => "XS",
            Scale::S => "S",
            Scale::M => "M",
            Scale::L => "L",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "XS" => Ok(Scale::XS),
            "S" => Ok(Scale::S),
            "M" => Ok(Scale::M),
            "L" => Ok(Scale::L),
            _ => Err(Error::Config(format!("unknown scale `{s}` (expected XS, S, M or L)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScaleConfig {
    pub scale: Scale,
    pub target_height: usize,
    pub target_width: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

/// Row-major grid of `TILE_SIZE` square tiles cut from one image.
#[derive(Clone, Debug, PartialEq)]
pub struct TileBatch {
    pub tiles: Vec<RasterImage>,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl TileBatch {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    /// Reassembles the tiles into the image they were cut from.
    pub fn stitch(&self) -> Result<RasterImage> {
        if self.tiles.len() != self.grid_rows * self.grid_cols {
            return Err(Error::Shape(format!(
                "{} tiles do not fill a {}x{} grid",
                self.tiles.len(),
                self.grid_rows,
                self.grid_cols
            )));
        }
        let height = self.grid_rows * TILE_SIZE;
        let width = self.grid_cols * TILE_SIZE;
        let mut data = vec![0.0f32; height * width * 3];
        for (i, t) in self.tiles.iter().enumerate() {
            if t.dims() != (TILE_SIZE, TILE_SIZE) {
                return Err(Error::Shape(format!("tile {i} is {:?}", t.dims())));
            }
            let (gr, gc) = (i / self.grid_cols, i % self.grid_cols);
            for r in 0..TILE_SIZE {
                let dst = ((gr * TILE_SIZE + r) * width + gc * TILE_SIZE) * 3;
                let src = r * TILE_SIZE * 3;
                data[dst..dst + TILE_SIZE * 3].copy_from_slice(&t.data()[src..src + TILE_SIZE * 3]);
            }
        }
        RasterImage::new(height, width, data)
    }
}

/// Rotates portrait images 90° clockwise so that width ≥ height.
pub fn orient_landscape(img: &RasterImage) -> Result<RasterImage> {
    if img.height() == 0 || img.width() == 0 {
        return Err(Error::InvalidInput("zero-dimension image".into()));
    }
    if img.is_landscape() {
        return Ok(img.clone());
    }
    let (h, w) = img.dims();
    // output (r, c) <- input (h - 1 - c, r); output is w x h
    let mut data = Vec::with_capacity(h * w * 3);
    for r in 0..w {
        for c in 0..h {
            data.extend_from_slice(&img.pixel(h - 1 - c, r));
        }
    }
    Ok(RasterImage::from_parts(w, h, data))
}

/// Anisotropic bilinear stretch of a landscape image to 896 x 1792.
pub fn stretch_to_canonical(img: &RasterImage) -> Result<RasterImage> {
    if !img.is_landscape() {
        return Err(Error::Precondition(format!(
            "stretch expects a landscape image, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    resize_bilinear(img, CANONICAL_HEIGHT, CANONICAL_WIDTH)
}

pub fn resize_to_scale(img: &RasterImage, scale: Scale) -> Result<RasterImage> {
    if img.dims() != (CANONICAL_HEIGHT, CANONICAL_WIDTH) {
        return Err(Error::Precondition(format!(
            "scale resize expects a {CANONICAL_HEIGHT}x{CANONICAL_WIDTH} canonical image, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    let cfg = scale.config();
    resize_bilinear(img, cfg.target_height, cfg.target_width)
}

/// Cuts `img` into the non-overlapping tile grid of `scale`.
pub fn tile(img: &RasterImage, scale: Scale) -> Result<TileBatch> {
    let cfg = scale.config();
    if img.dims() != (cfg.target_height, cfg.target_width) {
        return Err(Error::Shape(format!(
            "{scale} tiling expects {}x{}, got {}x{}",
            cfg.target_height,
            cfg.target_width,
            img.height(),
            img.width()
        )));
    }
    let mut tiles = Vec::with_capacity(cfg.grid_rows * cfg.grid_cols);
    for gr in 0..cfg.grid_rows {
        for gc in 0..cfg.grid_cols {
            tiles.push(img.crop(gr * TILE_SIZE, gc * TILE_SIZE, TILE_SIZE, TILE_SIZE)?);
        }
    }
    Ok(TileBatch {
        tiles,
        grid_rows: cfg.grid_rows,
        grid_cols: cfg.grid_cols,
    })
}

/// Full geometry pipeline: orient, stretch, resize to `scale`.
pub fn prepare(img: &RasterImage, scale: Scale) -> Result<RasterImage> {
    let canonical = stretch_to_canonical(&orient_landscape(img)?)?;
    resize_to_scale(&canonical, scale)
}

/// Per-channel input normalization constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }
}

/// `(x - mean[c]) / std[c]` per channel, as an `H x W x 3` tensor.
pub fn normalize(img: &RasterImage, norm: &Normalization) -> Result<Array3<f64>> {
    if let Some(s) = norm.std.iter().find(|s| !s.is_finite() || **s <= 0.0) {
        return Err(Error::InvalidInput(format!("normalization std must be positive, got {s}")));
    }
    let (h, w) = img.dims();
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| (0..3).map(move |c| (px[c] as f64 - norm.mean[c]) / norm.std[c]))
        .collect();
    Ok(Array3::from_shape_vec((h, w, 3), data).expect("length checked by RasterImage"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RasterImage {
        RasterImage::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn scale_table_matches_tile_grids() {
        let expect = [
            (Scale::XS, 224, 224, 1, 1),
            (Scale::S, 224, 448, 1, 2),
            (Scale::M, 448, 896, 2, 4),
            (Scale::L, 896, 1792, 4, 8),
        ];
        for (s, h, w, r, c) in expect {
            let cfg = s.config();
            assert_eq!(
                (cfg.target_height, cfg.target_width, cfg.grid_rows, cfg.grid_cols),
                (h, w, r, c)
            );
        }
    }

    #[test]
    fn portrait_rotates_clockwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 300, 200);
        let out = orient_landscape(&img).unwrap();
        assert_eq!(out.dims(), (200, 300));
        for (r, c) in [(0, 0), (5, 17), (199, 299), (120, 3)] {
            assert_eq!(out.pixel(r, c), img.pixel(300 - 1 - c, r));
        }
    }

    #[test]
    fn landscape_and_square_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (h, w) in [(200, 300), (224, 224)] {
            let img = random_image(&mut rng, h, w);
            assert_eq!(orient_landscape(&img).unwrap(), img);
        }
    }

    #[test]
    fn stretch_rejects_portrait() {
        let img = RasterImage::filled(30, 10, [0.2; 3]);
        assert!(matches!(stretch_to_canonical(&img), Err(Error::Precondition(_))));
    }

    #[test]
    fn stretch_of_constant_is_constant() {
        let img = RasterImage::filled(100, 300, [0.25, 0.5, 0.75]);
        let out = stretch_to_canonical(&img).unwrap();
        assert_eq!(out.dims(), (896, 1792));
        assert!(out.data().chunks(3).all(|p| p == [0.25, 0.5, 0.75]));
    }

    #[test]
    fn canonical_input_is_identity_for_stretch_and_l() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 896, 1792);
        assert_eq!(stretch_to_canonical(&img).unwrap(), img);
        assert_eq!(resize_to_scale(&img, Scale::L).unwrap(), img);
    }

    #[test]
    fn resize_rejects_non_canonical() {
        let img = RasterImage::filled(448, 896, [0.0; 3]);
        assert!(matches!(resize_to_scale(&img, Scale::M), Err(Error::Precondition(_))));
    }

    #[test]
    fn constant_canonical_to_m_is_constant() {
        let img = RasterImage::filled(896, 1792, [0.1, 0.9, 0.4]);
        let out = resize_to_scale(&img, Scale::M).unwrap();
        assert_eq!(out.dims(), (448, 896));
        assert!(out.data().chunks(3).all(|p| p == [0.1, 0.9, 0.4]));
    }

    #[test]
    fn tile_counts_and_xs_identity() {
        for (s, n) in [(Scale::XS, 1), (Scale::S, 2), (Scale::M, 8), (Scale::L, 32)] {
            let cfg = s.config();
            let img = RasterImage::filled(cfg.target_height, cfg.target_width, [0.3; 3]);
            assert_eq!(tile(&img, s).unwrap().len(), n);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs = random_image(&mut rng, 224, 224);
        assert_eq!(tile(&xs, Scale::XS).unwrap().tiles[0], xs);
    }

    #[test]
    fn tile_rejects_wrong_dims() {
        let img = RasterImage::filled(224, 448, [0.0; 3]);
        assert!(matches!(tile(&img, Scale::M), Err(Error::Shape(_))));
    }

    #[test]
    fn tiles_are_row_major() {
        let img = RasterImage::from_fn(448, 896, |r, c| {
            [(r / 224) as f32 / 4.0, (c / 224) as f32 / 4.0, 0.0]
        });
        let batch = tile(&img, Scale::M).unwrap();
        for (i, t) in batch.tiles.iter().enumerate() {
            assert_eq!(t.pixel(100, 100), [(i / 4) as f32 / 4.0, (i % 4) as f32 / 4.0, 0.0]);
        }
    }

    #[test]
    fn normalize_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = random_image(&mut rng, 13, 9);
        let norm = Normalization {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        };
        let out = normalize(&img, &norm).unwrap();
        for r in 0..13 {
            for c in 0..9 {
                let px = img.pixel(r, c);
                for ch in 0..3 {
                    let expected = (px[ch] as f64 - norm.mean[ch]) / norm.std[ch];
                    assert_eq!(out[[r, c, ch]], expected);
                }
            }
        }
    }

    #[test]
    fn normalize_trivial_cases() {
        let img = RasterImage::filled(4, 4, [0.5; 3]);
        let out = normalize(&img, &Normalization::default()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = random_image(&mut rng, 3, 5);
        let id = Normalization {
            mean: [0.0; 3],
            std: [1.0; 3],
        };
        let out = normalize(&img, &id).unwrap();
        assert!(out.iter().zip(img.data()).all(|(a, b)| *a == *b as f64));
        let bad = Normalization {
            mean: [0.0; 3],
            std: [1.0, 0.0, 1.0],
        };
        assert!(normalize(&img, &bad).is_err());
    }

    proptest! {
        #[test]
        fn orientation_is_idempotent_and_landscape(h in 1usize..40, w in 1usize..40, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_image(&mut rng, h, w);
            let once = orient_landscape(&img).unwrap();
            prop_assert!(once.width() >= once.height());
            prop_assert_eq!(orient_landscape(&once).unwrap(), once);
        }

        #[test]
        fn bilinear_preserves_range(h in 1usize..30, w in 1usize..30, oh in 1usize..50, ow in 1usize..50, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_image(&mut rng, h, w);
            let (lo, hi) = img.min_max();
            let out = resize_bilinear(&img, oh, ow).unwrap();
            let (olo, ohi) = out.min_max();
            prop_assert!(olo >= lo && ohi <= hi);
        }

        #[test]
        fn bilinear_preserves_constants(h in 1usize..30, w in 1usize..30, oh in 1usize..50, ow in 1usize..50, v in 0.0f32..=1.0) {
            let img = RasterImage::filled(h, w, [v, 1.0 - v, v * 0.5]);
            let out = resize_bilinear(&img, oh, ow).unwrap();
            prop_assert!(out.data().chunks(3).all(|p| p == [v, 1.0 - v, v * 0.5]));
        }
    }
}
