//! Vision-transformer feature extractor.
//!
//! Token layout is `[class, registers..., patches...]`. Learned positional
//! embeddings are added to every token: the patch embeddings live on a 2D
//! grid that can be resized with [`interpolate_pos_embed`], while the class
//! and register embeddings are kept separately and never interpolated.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::TILE_SIZE;
use crate::nn::layers::{init_array, Init, LayerNorm, LayerNormCache, Linear};
use crate::nn::params::{join, visit_array, visit_array_mut, Params, Visit, VisitMut};
use crate::nn::transformer::{encode, encode_backward, encode_inference, Block, BlockCache};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Final class token, `D` features.
    ClassToken,
    /// Class token concatenated with the mean of the patch tokens, `2D` features.
    ClassPlusMeanPatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub patch_size: usize,
    pub depth: usize,
    pub heads: usize,
    pub embed_dim: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: f64,
    #[serde(default)]
    pub n_register_tokens: usize,
    pub output_mode: OutputMode,
}

fn default_mlp_ratio() -> f64 {
    4.0
}

/// Register-token count used when registers are enabled without an explicit count.
pub const DEFAULT_REGISTER_TOKENS: usize = 4;

impl BackboneConfig {
    /// Small configuration that exercises every code path quickly.
    pub fn desk() -> Self {
        Self {
            patch_size: 16,
            depth: 2,
            heads: 4,
            embed_dim: 128,
            mlp_ratio: 4.0,
            n_register_tokens: 0,
            output_mode: OutputMode::ClassPlusMeanPatch,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self.output_mode {
            OutputMode::ClassToken => self.embed_dim,
            OutputMode::ClassPlusMeanPatch => 2 * self.embed_dim,
        }
    }

    /// Patch-grid size of a base `224 x 224` input.
    pub fn base_grid(&self) -> (usize, usize) {
        (TILE_SIZE / self.patch_size, TILE_SIZE / self.patch_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || !TILE_SIZE.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "patch_size {} must divide {TILE_SIZE}",
                self.patch_size
            )));
        }
        if self.heads == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.mlp_ratio.is_nan() || self.mlp_ratio <= 0.0 {
            return Err(Error::Config("mlp_ratio must be positive".into()));
        }
        Ok(())
    }
}

/// The pathology backbones the classification heads were tuned for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// ViT-S/16, class token.
    TransPath,
    /// ViT-L/16, class + mean patch token.
    Uni,
    /// ViT-H/14, class + mean patch token.
    Virchow2,
    /// ViT-g/14 with register tokens, class + mean patch token.
    HOptimus0,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 4] = [Self::TransPath, Self::Uni, Self::Virchow2, Self::HOptimus0];

    pub fn config(self) -> BackboneConfig {
        let (patch_size, depth, heads, embed_dim, regs, output_mode) = match self {
            Self::TransPath => (16, 12, 6, 384, 0, OutputMode::ClassToken),
            Self::Uni => (16, 24, 16, 1024, 0, OutputMode::ClassPlusMeanPatch),
            Self::Virchow2 => (14, 32, 16, 1280, 0, OutputMode::ClassPlusMeanPatch),
            Self::HOptimus0 => (14, 40, 24, 1536, DEFAULT_REGISTER_TOKENS, OutputMode::ClassPlusMeanPatch),
        };
        BackboneConfig {
            patch_size,
            depth,
            heads,
            embed_dim,
            mlp_ratio: 4.0,
            n_register_tokens: regs,
            output_mode,
        }
    }

    /// Tuned hidden widths of the classification head for this backbone.
    pub fn head_widths(self) -> [usize; 3] {
        match self {
            Self::TransPath => [2048, 1920, 128],
            Self::Uni => [1600, 64, 192],
            Self::Virchow2 => [1728, 64, 192],
            Self::HOptimus0 => [1856, 192, 128],
        }
    }
}

/// Patch grid for an `height x width` input.
pub fn patch_grid(height: usize, width: usize, patch_size: usize) -> Result<(usize, usize)> {
    if patch_size == 0 || !height.is_multiple_of(patch_size) || !width.is_multiple_of(patch_size) || height == 0 || width == 0 {
        return Err(Error::Shape(format!(
            "{height}x{width} input is not divisible into {patch_size}px patches"
        )));
    }
    Ok((height / patch_size, width / patch_size))
}

/// Positional embeddings of the patch grid plus the untouched extra-token embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalGrid {
    pub rows: usize,
    pub cols: usize,
    /// `rows * cols x D`, row-major over the grid.
    pub embeddings: Array2<f64>,
    /// Class (and register) embeddings, `(1 + registers) x D`.
    pub extra_tokens: Array2<f64>,
}

/// Corner-aligned bilinear resize of the patch positional grid, channel by channel.
/// The four corner embeddings are reproduced exactly; extra tokens pass through.
pub fn interpolate_pos_embed(grid: &PositionalGrid, new_rows: usize, new_cols: usize) -> Result<PositionalGrid> {
    if new_rows == 0 || new_cols == 0 {
        return Err(Error::InvalidInput(format!("target grid {new_rows}x{new_cols} is empty")));
    }
    if (new_rows, new_cols) == (grid.rows, grid.cols) {
        return Ok(grid.clone());
    }
    let src_coord = |i: usize, n_new: usize, n_old: usize| -> f64 {
        if n_new == 1 {
            (n_old - 1) as f64 / 2.0
        } else {
            (i * (n_old - 1)) as f64 / (n_new - 1) as f64
        }
    };
    let dim = grid.embeddings.ncols();
    let mut out = Array2::zeros((new_rows * new_cols, dim));
    for r in 0..new_rows {
        let sr = src_coord(r, new_rows, grid.rows);
        let r0 = sr.floor() as usize;
        let r1 = (r0 + 1).min(grid.rows - 1);
        let fr = sr - r0 as f64;
        for c in 0..new_cols {
            let sc = src_coord(c, new_cols, grid.cols);
            let c0 = sc.floor() as usize;
            let c1 = (c0 + 1).min(grid.cols - 1);
            let fc = sc - c0 as f64;
            let e = |rr: usize, cc: usize| grid.embeddings.row(rr * grid.cols + cc);
            let (p00, p01, p10, p11) = (e(r0, c0), e(r0, c1), e(r1, c0), e(r1, c1));
            let mut dst = out.row_mut(r * new_cols + c);
            for k in 0..dim {
                let top = (1.0 - fc) * p00[k] + fc * p01[k];
                let bottom = (1.0 - fc) * p10[k] + fc * p11[k];
                dst[k] = (1.0 - fr) * top + fr * bottom;
            }
        }
    }
    Ok(PositionalGrid {
        rows: new_rows,
        cols: new_cols,
        embeddings: out,
        extra_tokens: grid.extra_tokens.clone(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisionTransformer {
    pub config: BackboneConfig,
    pub grid: (usize, usize),
    pub patch_embed: Linear,
    pub cls_token: Array1<f64>,
    pub register_tokens: Array2<f64>,
    pub pos_embed: Array2<f64>,
    pub extra_pos: Array2<f64>,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
}

pub struct BackboneCache {
    patches: Array2<f64>,
    blocks: Vec<BlockCache>,
    norm: LayerNormCache,
}

impl VisionTransformer {
    /// Random initialization for `224 x 224` inputs.
    pub fn new(config: BackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        let (rows, cols) = config.base_grid();
        Self::with_grid(config, rows, cols, rng)
    }

    pub fn with_grid(config: BackboneConfig, rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let p = config.patch_size;
        let init = Init::TruncNormal(0.02);
        let patch_embed = Linear::new(p * p * 3, d, init, rng);
        let cls_token = init_array((1, d), d, init, rng).row(0).to_owned();
        let register_tokens = init_array((config.n_register_tokens, d), d, init, rng);
        let pos_embed = init_array((rows * cols, d), d, init, rng);
        let extra_pos = init_array((1 + config.n_register_tokens, d), d, init, rng);
        let blocks = (0..config.depth)
            .map(|_| Block::new(d, config.heads, config.mlp_ratio, rng))
            .collect();
        Ok(Self {
            grid: (rows, cols),
            patch_embed,
            cls_token,
            register_tokens,
            pos_embed,
            extra_pos,
            blocks,
            norm: LayerNorm::new(d),
            config,
        })
    }

    /// Input `(height, width)` in pixels the positional grid corresponds to.
    pub fn input_size(&self) -> (usize, usize) {
        (self.grid.0 * self.config.patch_size, self.grid.1 * self.config.patch_size)
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    pub fn position_grid(&self) -> PositionalGrid {
        PositionalGrid {
            rows: self.grid.0,
            cols: self.grid.1,
            embeddings: self.pos_embed.clone(),
            extra_tokens: self.extra_pos.clone(),
        }
    }

    pub fn set_position_grid(&mut self, grid: PositionalGrid) -> Result<()> {
        let d = self.config.embed_dim;
        if grid.embeddings.dim() != (grid.rows * grid.cols, d) || grid.extra_tokens.dim() != self.extra_pos.dim() {
            return Err(Error::Shape("positional grid does not match the backbone".into()));
        }
        self.grid = (grid.rows, grid.cols);
        self.pos_embed = grid.embeddings;
        self.extra_pos = grid.extra_tokens;
        Ok(())
    }

    /// Adapts the model to `height x width` inputs by interpolating the positional grid.
    pub fn resize_input(&mut self, height: usize, width: usize) -> Result<()> {
        let (rows, cols) = patch_grid(height, width, self.config.patch_size)?;
        let grid = interpolate_pos_embed(&self.position_grid(), rows, cols)?;
        self.set_position_grid(grid)
    }

    /// Flattened patches, one row per patch in row-major grid order, each
    /// patch flattened as `(y, x, channel)`.
    pub fn extract_patches(&self, img: &Array3<f64>) -> Result<Array2<f64>> {
        let (h, w, c) = img.dim();
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {c}")));
        }
        let p = self.config.patch_size;
        let (rows, cols) = patch_grid(h, w, p)?;
        if (rows, cols) != self.grid {
            return Err(Error::Shape(format!(
                "{h}x{w} input gives a {rows}x{cols} patch grid but the positional grid is {}x{}",
                self.grid.0, self.grid.1
            )));
        }
        let img = img.as_standard_layout();
        let flat = img.as_slice().expect("standard layout");
        let mut patches = Array2::zeros((rows * cols, p * p * 3));
        for (i, mut row) in patches.rows_mut().into_iter().enumerate() {
            let (pr, pc) = (i / cols, i % cols);
            let dst = row.as_slice_mut().unwrap();
            for y in 0..p {
                let src = ((pr * p + y) * w + pc * p) * 3;
                dst[y * p * 3..(y + 1) * p * 3].copy_from_slice(&flat[src..src + p * 3]);
            }
        }
        Ok(patches)
    }

    fn n_extra(&self) -> usize {
        1 + self.config.n_register_tokens
    }

    /// Embeds a normalized `H x W x 3` image into the token sequence
    /// `[class, registers..., patches...]` with positional embeddings added.
    pub fn embed(&self, img: &Array3<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let patches = self.extract_patches(img)?;
        let n_extra = self.n_extra();
        let d = self.config.embed_dim;
        let mut tokens = Array2::zeros((n_extra + patches.nrows(), d));
        tokens.row_mut(0).assign(&self.cls_token);
        tokens
            .slice_mut(s![1..n_extra, ..])
            .assign(&self.register_tokens);
        tokens.slice_mut(s![..n_extra, ..]).zip_mut_with(&self.extra_pos, |t, p| *t += p);
        let mut patch_tokens = self.patch_embed.forward(patches.view());
        patch_tokens += &self.pos_embed;
        tokens.slice_mut(s![n_extra.., ..]).assign(&patch_tokens);
        Ok((tokens, patches))
    }

    fn pool(&self, z: &Array2<f64>) -> Array1<f64> {
        let cls = z.row(0);
        match self.config.output_mode {
            OutputMode::ClassToken => cls.to_owned(),
            OutputMode::ClassPlusMeanPatch => {
                let mean = z.slice(s![self.n_extra().., ..]).mean_axis(Axis(0)).expect("patch tokens");
                ndarray::concatenate![Axis(0), cls, mean]
            }
        }
    }

    /// Inference forward pass returning the feature vector (`D` or `2D`).
    pub fn forward(&self, img: &Array3<f64>) -> Result<Array1<f64>> {
        let (tokens, _) = self.embed(img)?;
        let y = encode_inference(&self.blocks, tokens);
        let (z, _) = self.norm.forward(y.view());
        Ok(self.pool(&z))
    }

    pub fn forward_train(&self, img: &Array3<f64>) -> Result<(Array1<f64>, BackboneCache)> {
        let (tokens, patches) = self.embed(img)?;
        let (y, blocks) = encode(&self.blocks, tokens);
        let (z, norm) = self.norm.forward(y.view());
        let feature = self.pool(&z);
        Ok((feature, BackboneCache { patches, blocks, norm }))
    }

    /// Accumulates `dL/dθ` into `grad` given `dL/dfeature`.
    pub fn backward(&self, cache: &BackboneCache, dfeature: &Array1<f64>, grad: &mut VisionTransformer) {
        let d = self.config.embed_dim;
        let n_extra = self.n_extra();
        let n_patches = cache.patches.nrows();
        let mut dz = Array2::zeros((n_extra + n_patches, d));
        dz.row_mut(0).assign(&dfeature.slice(s![..d]));
        if self.config.output_mode == OutputMode::ClassPlusMeanPatch {
            let dmean = dfeature.slice(s![d..]).mapv(|v| v / n_patches as f64);
            dz.slice_mut(s![n_extra.., ..]).rows_mut().into_iter().for_each(|mut r| r.assign(&dmean));
        }
        let dy = self.norm.backward(&cache.norm, dz.view(), &mut grad.norm);
        let dx = encode_backward(&self.blocks, &cache.blocks, dy, &mut grad.blocks);
        let dextra = dx.slice(s![..n_extra, ..]);
        grad.extra_pos += &dextra;
        grad.cls_token += &dextra.row(0);
        grad.register_tokens += &dextra.slice(s![1.., ..]);
        let dpatch = dx.slice(s![n_extra.., ..]);
        grad.pos_embed += &dpatch;
        self.patch_embed.backward_params(cache.patches.view(), dpatch, &mut grad.patch_embed);
    }
}

impl Params for VisionTransformer {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        self.patch_embed.visit(&join(prefix, "patch_embed"), f);
        visit_array(&join(prefix, "cls_token"), &self.cls_token, f);
        visit_array(&join(prefix, "register_tokens"), &self.register_tokens, f);
        visit_array(&join(prefix, "pos_embed"), &self.pos_embed, f);
        visit_array(&join(prefix, "extra_pos"), &self.extra_pos, f);
        self.blocks.visit(&join(prefix, "blocks"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        self.patch_embed.visit_mut(&join(prefix, "patch_embed"), f);
        visit_array_mut(&join(prefix, "cls_token"), &mut self.cls_token, f);
        visit_array_mut(&join(prefix, "register_tokens"), &mut self.register_tokens, f);
        visit_array_mut(&join(prefix, "pos_embed"), &mut self.pos_embed, f);
        visit_array_mut(&join(prefix, "extra_pos"), &mut self.extra_pos, f);
        self.blocks.visit_mut(&join(prefix, "blocks"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}

/// Which backbone parameters are updated during fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezeMode {
    Full,
    /// Only attention projections and positional embeddings are trainable.
    AttentionAndPos,
}

/// Per-parameter trainable flags over the backbone parameter names.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamMask {
    flags: BTreeMap<String, bool>,
}

impl ParamMask {
    pub fn is_trainable(&self, name: &str) -> bool {
        self.flags.get(name).copied().unwrap_or(false)
    }

    pub fn flags(&self) -> &BTreeMap<String, bool> {
        &self.flags
    }
}

fn trainable_under(mode: FreezeMode, name: &str) -> bool {
    match mode {
        FreezeMode::Full => true,
        FreezeMode::AttentionAndPos => name.contains(".attn.") || name == "pos_embed" || name == "extra_pos",
    }
}

pub fn freeze_mask(config: &BackboneConfig, mode: FreezeMode) -> Result<ParamMask> {
    // names depend only on the configuration; a 1x1 grid keeps this cheap
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let probe = VisionTransformer::with_grid(config.clone(), 1, 1, &mut rng)?;
    let mut flags = BTreeMap::new();
    probe.visit("", &mut |name, _, _| {
        flags.insert(name.to_string(), trainable_under(mode, name));
    });
    Ok(ParamMask { flags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::param_shapes;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn tiny(mode: OutputMode, regs: usize) -> BackboneConfig {
        BackboneConfig {
            patch_size: 16,
            depth: 1,
            heads: 2,
            embed_dim: 8,
            mlp_ratio: 2.0,
            n_register_tokens: regs,
            output_mode: mode,
        }
    }

    #[test]
    fn token_counts_follow_patch_grid() {
        assert_eq!(patch_grid(224, 224, 16).unwrap(), (14, 14));
        assert_eq!(patch_grid(224, 224, 14).unwrap(), (16, 16));
        assert_eq!(patch_grid(448, 896, 16).unwrap(), (28, 56));
        assert!(patch_grid(224, 225, 16).is_err());

        let mut r = rng(0);
        let mut vit = VisionTransformer::new(tiny(OutputMode::ClassToken, 0), &mut r).unwrap();
        let (tokens, _) = vit.embed(&Array3::zeros((224, 224, 3))).unwrap();
        assert_eq!(tokens.nrows(), 1 + 196);
        vit.resize_input(448, 896).unwrap();
        let (tokens, _) = vit.embed(&Array3::zeros((448, 896, 3))).unwrap();
        assert_eq!(tokens.nrows(), 1 + 1568);

        let mut cfg = tiny(OutputMode::ClassToken, 4);
        cfg.patch_size = 14;
        let vit = VisionTransformer::new(cfg, &mut r).unwrap();
        let (tokens, _) = vit.embed(&Array3::zeros((224, 224, 3))).unwrap();
        assert_eq!(tokens.nrows(), 1 + 4 + 256);
    }

    #[test]
    fn mismatched_input_is_a_shape_error() {
        let vit = VisionTransformer::new(tiny(OutputMode::ClassToken, 0), &mut rng(1)).unwrap();
        assert!(matches!(vit.forward(&Array3::zeros((448, 896, 3))), Err(Error::Shape(_))));
        assert!(matches!(vit.forward(&Array3::zeros((224, 230, 3))), Err(Error::Shape(_))));
    }

    #[test]
    fn feature_dim_law() {
        let mut r = rng(2);
        let img = Array3::from_shape_simple_fn((224, 224, 3), || r.random::<f64>() - 0.5);
        for (mode, regs, expect) in [
            (OutputMode::ClassToken, 0, 8),
            (OutputMode::ClassPlusMeanPatch, 0, 16),
            (OutputMode::ClassPlusMeanPatch, 4, 16),
        ] {
            let vit = VisionTransformer::new(tiny(mode, regs), &mut r).unwrap();
            assert_eq!(vit.forward(&img).unwrap().len(), expect);
        }
        assert_eq!(BackboneKind::TransPath.config().feature_dim(), 384);
        assert_eq!(BackboneKind::Uni.config().feature_dim(), 2048);
        assert_eq!(BackboneKind::Virchow2.config().feature_dim(), 2560);
        assert_eq!(BackboneKind::HOptimus0.config().feature_dim(), 3072);
    }

    #[test]
    fn depth_zero_returns_normalized_class_token() {
        let mut cfg = tiny(OutputMode::ClassToken, 0);
        cfg.depth = 0;
        let mut r = rng(3);
        let mut vit = VisionTransformer::new(cfg, &mut r).unwrap();
        vit.extra_pos.fill(0.0);
        let img = Array3::from_shape_simple_fn((224, 224, 3), || r.random::<f64>());
        let feature = vit.forward(&img).unwrap();
        // hand computation: (x - mean) / sqrt(var + eps) with unit gamma, zero beta
        let x = &vit.cls_token;
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        for (f, v) in feature.iter().zip(x.iter()) {
            let expect = (v - mean) / (var + LayerNorm::EPS).sqrt();
            assert!((f - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_mode_excludes_register_tokens() {
        let mut cfg = tiny(OutputMode::ClassPlusMeanPatch, 4);
        cfg.depth = 0;
        let mut r = rng(4);
        let vit = VisionTransformer::new(cfg, &mut r).unwrap();
        let img = Array3::from_shape_simple_fn((224, 224, 3), || r.random::<f64>());
        let (tokens, _) = vit.embed(&img).unwrap();
        let (z, _) = vit.norm.forward(tokens.view());
        let mean = z.slice(s![5.., ..]).mean_axis(Axis(0)).unwrap();
        let f = vit.forward(&img).unwrap();
        for k in 0..8 {
            assert!((f[8 + k] - mean[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut r = rng(5);
        let vit = VisionTransformer::new(tiny(OutputMode::ClassPlusMeanPatch, 0), &mut r).unwrap();
        let img = Array3::from_shape_simple_fn((224, 224, 3), || r.random::<f64>());
        assert_eq!(vit.forward(&img).unwrap(), vit.forward(&img).unwrap());
    }

    #[test]
    fn blocked_inference_matches_cached_forward() {
        let mut r = rng(9);
        let mut vit = VisionTransformer::new(tiny(OutputMode::ClassPlusMeanPatch, 2), &mut r).unwrap();
        vit.resize_input(448, 896).unwrap();
        let img = Array3::from_shape_simple_fn((448, 896, 3), || r.random::<f64>() - 0.5);
        let fast = vit.forward(&img).unwrap();
        let (cached, _) = vit.forward_train(&img).unwrap();
        for (a, b) in fast.iter().zip(&cached) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_identity_and_midpoint() {
        let mut r = rng(6);
        let grid = PositionalGrid {
            rows: 14,
            cols: 14,
            embeddings: Array2::from_shape_simple_fn((196, 5), || r.random()),
            extra_tokens: Array2::from_shape_simple_fn((1, 5), || r.random()),
        };
        assert_eq!(interpolate_pos_embed(&grid, 14, 14).unwrap(), grid);

        let small = PositionalGrid {
            rows: 2,
            cols: 2,
            embeddings: Array2::from_shape_simple_fn((4, 3), || r.random()),
            extra_tokens: Array2::zeros((1, 3)),
        };
        let big = interpolate_pos_embed(&small, 3, 3).unwrap();
        let mean = small.embeddings.mean_axis(Axis(0)).unwrap();
        for k in 0..3 {
            assert!((big.embeddings[[4, k]] - mean[k]).abs() < 1e-15);
        }
        assert!(interpolate_pos_embed(&small, 0, 3).is_err());
    }

    #[test]
    fn freeze_masks() {
        let cfg = tiny(OutputMode::ClassToken, 4);
        let full = freeze_mask(&cfg, FreezeMode::Full).unwrap();
        assert!(full.flags().values().all(|&f| f));
        let partial = freeze_mask(&cfg, FreezeMode::AttentionAndPos).unwrap();
        let vit = VisionTransformer::new(cfg, &mut rng(7)).unwrap();
        let names: Vec<_> = param_shapes(&vit).into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), partial.flags().len());
        for n in &names {
            let expect = n.starts_with("blocks.0.attn.") || n == "pos_embed" || n == "extra_pos";
            assert_eq!(partial.is_trainable(n), expect, "{n}");
        }
        assert!(names.iter().filter(|n| n.contains("mlp")).all(|n| !partial.is_trainable(n)));
    }
}
