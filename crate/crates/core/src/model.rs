//! End-to-end slide classifier: preprocessing, backbone, optional tile
//! aggregation and the classification head, for each of the five approaches.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{freeze_mask, patch_grid, BackboneCache, BackboneConfig, FreezeMode, ParamMask, VisionTransformer};
use crate::error::{Error, Result};
use crate::heads::attention_pool::AttentionPoolCache;
use crate::heads::classifier::HeadCache;
use crate::heads::tile_transformer::TileTransformerCache;
use crate::heads::{
    soft_vote, soft_vote_backward, AttentionPool, AttentionPoolConfig, ClassifierHead, HeadConfig, TileTransformer,
    TileTransformerConfig,
};
use crate::imaging::{normalize, prepare, tile, Normalization, RasterImage, Scale};
use crate::nn::layers::{sigmoid, Mode};
use crate::nn::params::{join, round_to_f32, zeros_like, Params, Visit, VisitMut};
use crate::weights::WeightStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    /// Whole slide at XS, backbone fully fine-tuned.
    XsSlides,
    /// Whole slide at M with an interpolated positional grid; only attention
    /// and positional parameters of the backbone are trained.
    VitUpscaling,
    TiledSoftVote,
    TiledAttention,
    TiledTransformer,
}

impl Approach {
    pub const ALL: [Approach; 5] = [
        Self::XsSlides,
        Self::VitUpscaling,
        Self::TiledSoftVote,
        Self::TiledAttention,
        Self::TiledTransformer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::XsSlides => "xs_slides",
            Self::VitUpscaling => "vit_upscaling",
            Self::TiledSoftVote => "tiled_soft_vote",
            Self::TiledAttention => "tiled_attention",
            Self::TiledTransformer => "tiled_transformer",
        }
    }

    pub fn is_tiled(self) -> bool {
        matches!(self, Self::TiledSoftVote | Self::TiledAttention | Self::TiledTransformer)
    }

    pub fn default_scale(self) -> Scale {
        match self {
            Self::XsSlides => Scale::XS,
            Self::VitUpscaling => Scale::M,
            _ => Scale::L,
        }
    }

    pub fn check_scale(self, scale: Scale) -> Result<()> {
        let ok = match self {
            Self::XsSlides => scale == Scale::XS,
            Self::VitUpscaling => scale == Scale::M,
            _ => matches!(scale, Scale::M | Scale::L),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("approach {self} cannot run at scale {scale}")))
        }
    }

    pub fn default_freeze(self) -> FreezeMode {
        match self {
            Self::VitUpscaling => FreezeMode::AttentionAndPos,
            _ => FreezeMode::Full,
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown approach `{s}`")))
    }
}

/// Settings for the attention-pool and transformer aggregators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorConfig {
    pub heads: usize,
    /// Transformer aggregator only.
    pub depth: usize,
    pub mlp_ratio: f64,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            heads: 4,
            depth: 1,
            mlp_ratio: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub approach: Approach,
    pub scale: Scale,
    pub backbone: BackboneConfig,
    pub head_layers: [usize; 3],
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    #[serde(default)]
    pub aggregator: AggregatorConfig,
    #[serde(default)]
    pub normalization: Normalization,
}

fn default_dropout() -> f64 {
    0.1
}

impl ModelConfig {
    pub const DESK_HEAD_LAYERS: [usize; 3] = [64, 32, 16];

    /// Desk-scale backbone and head for `approach` at its default scale.
    pub fn desk(approach: Approach) -> Self {
        Self {
            approach,
            scale: approach.default_scale(),
            backbone: BackboneConfig::desk(),
            head_layers: Self::DESK_HEAD_LAYERS,
            dropout_p: default_dropout(),
            aggregator: AggregatorConfig::default(),
            normalization: Normalization::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.approach.check_scale(self.scale)?;
        self.backbone.validate()?;
        self.head_config().validate()?;
        if self.approach.is_tiled() && self.scale.tile_count() > crate::heads::tile_transformer::DEFAULT_SLOTS {
            return Err(Error::Config("too many tiles for the aggregator".into()));
        }
        let (h, w) = self.backbone_input();
        patch_grid(h, w, self.backbone.patch_size)?;
        Ok(())
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            input_dim: self.backbone.feature_dim(),
            layer_sizes: self.head_layers,
            dropout_p: self.dropout_p,
        }
    }

    /// Pixel size of one backbone input.
    pub fn backbone_input(&self) -> (usize, usize) {
        if self.approach.is_tiled() {
            (crate::imaging::TILE_SIZE, crate::imaging::TILE_SIZE)
        } else {
            let c = self.scale.config();
            (c.target_height, c.target_width)
        }
    }
}

/// A slide after preprocessing: normalized `H x W x 3` backbone inputs, one
/// per tile (or a single whole-slide input).
#[derive(Clone, Debug, PartialEq)]
pub struct SlideInput {
    pub tiles: Vec<Array3<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Aggregator {
    /// Soft voting or whole-slide approaches.
    None,
    Attention(Box<AttentionPool>),
    Transformer(Box<TileTransformer>),
}

impl Params for Aggregator {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        match self {
            Self::None => {}
            Self::Attention(a) => a.visit(prefix, f),
            Self::Transformer(t) => t.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        match self {
            Self::None => {}
            Self::Attention(a) => a.visit_mut(prefix, f),
            Self::Transformer(t) => t.visit_mut(prefix, f),
        }
    }
}

enum AggCache {
    Attention(Box<AttentionPoolCache>),
    Transformer(Box<TileTransformerCache>),
}

/// Loss, per-slide probabilities and (optionally) gradients of one batch.
pub struct BatchResult {
    pub loss: f64,
    pub probabilities: Vec<f64>,
    pub grads: Option<FixationModel>,
}

/// Options for [`FixationModel::batch`].
#[derive(Clone, Copy, Debug)]
pub struct BatchOptions {
    pub mode: Mode,
    pub gradients: bool,
    /// Skip backbone gradients entirely.
    pub backbone_frozen: bool,
    /// Keep backbone activations from the first forward pass instead of
    /// recomputing them for the backward pass when the batch has at most
    /// this many backbone inputs.
    pub cache_limit: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Train,
            gradients: true,
            backbone_frozen: false,
            cache_limit: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixationModel {
    pub config: ModelConfig,
    pub backbone: VisionTransformer,
    pub aggregator: Aggregator,
    pub head: ClassifierHead,
}

pub const BUNDLE_CONFIG: &str = "model.json";
pub const BUNDLE_WEIGHTS: &str = "weights.tqcw";
const BUNDLE_FORMAT: &str = "thumbqc-model";
const BUNDLE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleManifest {
    format: String,
    version: u32,
    config: ModelConfig,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

impl FixationModel {
    /// Random initialization from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = VisionTransformer::new(config.backbone.clone(), &mut rng)?;
        Self::assemble(config, backbone, &mut rng)
    }

    /// Uses pretrained backbone weights (stored without prefix at the base
    /// `224 x 224` grid) and random head/aggregator weights from `seed`.
    pub fn with_pretrained_backbone(config: ModelConfig, weights: &WeightStore, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut backbone = VisionTransformer::new(config.backbone.clone(), &mut rng)?;
        weights.load_params("", &mut backbone)?;
        Self::assemble(config, backbone, &mut rng)
    }

    fn assemble(config: ModelConfig, mut backbone: VisionTransformer, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (h, w) = config.backbone_input();
        if backbone.input_size() != (h, w) {
            backbone.resize_input(h, w)?;
        }
        let dim = config.backbone.feature_dim();
        let agg = &config.aggregator;
        let aggregator = match config.approach {
            Approach::TiledAttention => Aggregator::Attention(Box::new(AttentionPool::new(
                &AttentionPoolConfig { dim, heads: agg.heads },
                rng,
            )?)),
            Approach::TiledTransformer => Aggregator::Transformer(Box::new(TileTransformer::new(
                &TileTransformerConfig {
                    dim,
                    depth: agg.depth,
                    heads: agg.heads,
                    mlp_ratio: agg.mlp_ratio,
                    slots: crate::heads::tile_transformer::DEFAULT_SLOTS,
                },
                rng,
            )?)),
            _ => Aggregator::None,
        };
        let head = ClassifierHead::new(&config.head_config(), rng)?;
        let mut model = Self {
            config,
            backbone,
            aggregator,
            head,
        };
        round_to_f32(&mut model);
        Ok(model)
    }

    pub fn approach(&self) -> Approach {
        self.config.approach
    }

    pub fn scale(&self) -> Scale {
        self.config.scale
    }

    /// Orientation, canonical stretch, scale resize, optional tiling and
    /// normalization.
    pub fn prepare(&self, img: &RasterImage) -> Result<SlideInput> {
        let scaled = prepare(img, self.config.scale)?;
        let norm = &self.config.normalization;
        let tiles = if self.config.approach.is_tiled() {
            tile(&scaled, self.config.scale)?
                .tiles
                .iter()
                .map(|t| normalize(t, norm))
                .collect::<Result<_>>()?
        } else {
            vec![normalize(&scaled, norm)?]
        };
        Ok(SlideInput { tiles })
    }

    /// Backbone features, one row per backbone input.
    pub fn features(&self, input: &SlideInput) -> Result<Array2<f64>> {
        if input.tiles.is_empty() {
            return Err(Error::InvalidInput("slide has no backbone inputs".into()));
        }
        let rows = input
            .tiles
            .iter()
            .map(|t| self.backbone.forward(t))
            .collect::<Result<Vec<_>>>()?;
        stack(&rows)
    }

    /// FFPE probability in inference mode.
    pub fn predict(&self, input: &SlideInput) -> Result<f64> {
        let feats = self.features(input)?;
        self.predict_from_features(feats.view())
    }

    pub fn predict_image(&self, img: &RasterImage) -> Result<f64> {
        self.predict(&self.prepare(img)?)
    }

    /// Inference from precomputed backbone features.
    pub fn predict_from_features(&self, feats: ArrayView2<'_, f64>) -> Result<f64> {
        match &self.aggregator {
            Aggregator::None if self.config.approach == Approach::TiledSoftVote => {
                let logits = self.head.forward(feats)?;
                soft_vote(logits.as_slice().expect("contiguous"))
            }
            Aggregator::None => {
                if feats.nrows() != 1 {
                    return Err(Error::Shape(format!("whole-slide model got {} inputs", feats.nrows())));
                }
                Ok(sigmoid(self.head.forward(feats)?[0]))
            }
            Aggregator::Attention(a) => {
                let pooled = a.forward(feats)?;
                Ok(sigmoid(self.head.forward(pooled.view().insert_axis(Axis(0)))?[0]))
            }
            Aggregator::Transformer(t) => {
                let pooled = t.forward(feats)?;
                Ok(sigmoid(self.head.forward(pooled.view().insert_axis(Axis(0)))?[0]))
            }
        }
    }

    /// Mean binary cross-entropy over `batch` and, if requested, its gradient
    /// with respect to every parameter. In train mode the head uses batch
    /// statistics (folded into its running estimates) and dropout drawn from
    /// `rng`.
    pub fn batch(&mut self, batch: &[(&SlideInput, f64)], opts: BatchOptions, rng: &mut dyn RngCore) -> Result<BatchResult> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let n_inputs: usize = batch.iter().map(|(s, _)| s.tiles.len()).sum();
        let want_backbone = opts.gradients && !opts.backbone_frozen;
        let keep_caches = want_backbone && n_inputs <= opts.cache_limit;

        // stage 1: backbone features (with caches when affordable)
        let backbone = &self.backbone;
        let tiles: Vec<&Array3<f64>> = batch.iter().flat_map(|(s, _)| s.tiles.iter()).collect();
        let (rows, caches): (Vec<Array1<f64>>, Vec<Option<BackboneCache>>) = tiles
            .par_iter()
            .map(|t| {
                if keep_caches {
                    backbone.forward_train(t).map(|(f, c)| (f, Some(c)))
                } else {
                    backbone.forward(t).map(|f| (f, None))
                }
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        let mut offsets = Vec::with_capacity(batch.len() + 1);
        offsets.push(0);
        for (s, _) in batch {
            if s.tiles.is_empty() {
                return Err(Error::InvalidInput("slide has no backbone inputs".into()));
            }
            offsets.push(offsets.last().unwrap() + s.tiles.len());
        }
        let feats = stack(&rows)?;
        let labels: Vec<f64> = batch.iter().map(|(_, y)| *y).collect();

        // stage 2: aggregation, head and loss
        let mut grads = opts.gradients.then(|| zeros_like(self));
        let (loss, probabilities, dfeats) = self.head_stage(&feats, &offsets, &labels, opts, rng, grads.as_mut())?;

        // stage 3: backbone backward
        if let (Some(g), Some(dfeats)) = (grads.as_mut(), dfeats) {
            if want_backbone {
                for (i, tile) in tiles.iter().enumerate() {
                    let d = dfeats.row(i).to_owned();
                    if d.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    match &caches[i] {
                        Some(c) => self.backbone.backward(c, &d, &mut g.backbone),
                        None => {
                            let (_, c) = self.backbone.forward_train(tile)?;
                            self.backbone.backward(&c, &d, &mut g.backbone);
                        }
                    }
                }
            }
        }
        Ok(BatchResult {
            loss,
            probabilities,
            grads,
        })
    }

    #[allow(clippy::type_complexity)]
    fn head_stage(
        &mut self,
        feats: &Array2<f64>,
        offsets: &[usize],
        labels: &[f64],
        opts: BatchOptions,
        rng: &mut dyn RngCore,
        grads: Option<&mut FixationModel>,
    ) -> Result<(f64, Vec<f64>, Option<Array2<f64>>)> {
        let b = labels.len();
        let bf = b as f64;
        let soft_vote_mode = self.config.approach == Approach::TiledSoftVote;

        // rows the head sees: every tile for soft voting, one per slide otherwise
        let mut agg_caches = Vec::new();
        let head_input = match &self.aggregator {
            Aggregator::None if soft_vote_mode => feats.clone(),
            Aggregator::None => {
                if offsets.windows(2).any(|w| w[1] - w[0] != 1) {
                    return Err(Error::Shape("whole-slide model expects one input per slide".into()));
                }
                feats.clone()
            }
            Aggregator::Attention(a) => {
                let mut pooled = Vec::with_capacity(b);
                for w in offsets.windows(2) {
                    let (p, c) = a.forward_train(feats.slice(s![w[0]..w[1], ..]))?;
                    pooled.push(p);
                    agg_caches.push(AggCache::Attention(Box::new(c)));
                }
                stack(&pooled)?
            }
            Aggregator::Transformer(t) => {
                let mut pooled = Vec::with_capacity(b);
                for w in offsets.windows(2) {
                    let (p, c) = t.forward_train(feats.slice(s![w[0]..w[1], ..]))?;
                    pooled.push(p);
                    agg_caches.push(AggCache::Transformer(Box::new(c)));
                }
                stack(&pooled)?
            }
        };
        let (logits, head_cache): (Array1<f64>, HeadCache) = self.head.forward_mode(head_input.view(), opts.mode, rng)?;

        let mut loss = 0.0;
        let mut probabilities = Vec::with_capacity(b);
        let mut dlogits = Array1::zeros(logits.len());
        for (i, &y) in labels.iter().enumerate() {
            if soft_vote_mode {
                let seg = &logits.as_slice().expect("contiguous")[offsets[i]..offsets[i + 1]];
                let p = soft_vote(seg)?;
                loss += bce_loss(p, y);
                let d = soft_vote_backward(seg, bce_grad(p, y) / bf);
                dlogits.slice_mut(s![offsets[i]..offsets[i + 1]]).assign(&Array1::from(d));
                probabilities.push(p);
            } else {
                let p = sigmoid(logits[i]);
                loss += bce_loss(p, y);
                dlogits[i] = bce_grad(p, y) * p * (1.0 - p) / bf;
                probabilities.push(p);
            }
        }
        loss /= bf;

        let Some(g) = grads else {
            return Ok((loss, probabilities, None));
        };
        let dhead_in = self.head.backward(&head_cache, &dlogits, &mut g.head);
        let dfeats = match (&self.aggregator, &mut g.aggregator) {
            (Aggregator::None, _) => dhead_in,
            (Aggregator::Attention(a), Aggregator::Attention(ga)) => {
                let mut d = Array2::zeros(feats.raw_dim());
                for (i, c) in agg_caches.iter().enumerate() {
                    let AggCache::Attention(c) = c else { unreachable!() };
                    let df = a.backward(c, &dhead_in.row(i).to_owned(), ga);
                    d.slice_mut(s![offsets[i]..offsets[i + 1], ..]).assign(&df);
                }
                d
            }
            (Aggregator::Transformer(t), Aggregator::Transformer(gt)) => {
                let mut d = Array2::zeros(feats.raw_dim());
                for (i, c) in agg_caches.iter().enumerate() {
                    let AggCache::Transformer(c) = c else { unreachable!() };
                    let df = t.backward(c, &dhead_in.row(i).to_owned(), gt);
                    d.slice_mut(s![offsets[i]..offsets[i + 1], ..]).assign(&df);
                }
                d
            }
            _ => unreachable!("gradient structure mirrors the model"),
        };
        Ok((loss, probabilities, Some(dfeats)))
    }

    /// Trainability of every parameter name (as visited from the model root)
    /// under `freeze`. Aggregator and head are always trainable.
    pub fn trainable_mask(&self, freeze: FreezeMode) -> Result<ModelMask> {
        Ok(ModelMask {
            backbone: freeze_mask(&self.config.backbone, freeze)?,
        })
    }

    pub fn to_weight_store(&self) -> WeightStore {
        let mut ws = WeightStore::new();
        ws.add_params("", self);
        ws
    }

    pub fn save(&self, dir: impl AsRef<Path>, seed: Option<u64>, metadata: BTreeMap<String, String>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let manifest = BundleManifest {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            config: self.config.clone(),
            seed,
            metadata: metadata.clone(),
        };
        std::fs::write(dir.join(BUNDLE_CONFIG), serde_json::to_string_pretty(&manifest)?)?;
        let mut ws = self.to_weight_store();
        ws.seed = seed;
        ws.metadata = metadata;
        ws.save(dir.join(BUNDLE_WEIGHTS))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join(BUNDLE_CONFIG))?;
        let manifest: BundleManifest =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", dir.join(BUNDLE_CONFIG).display())))?;
        if manifest.format != BUNDLE_FORMAT || manifest.version != BUNDLE_VERSION {
            return Err(Error::Config(format!(
                "unsupported model bundle {} v{}",
                manifest.format, manifest.version
            )));
        }
        let mut model = Self::new(manifest.config, 0)?;
        let ws = WeightStore::load(dir.join(BUNDLE_WEIGHTS))?;
        ws.load_params("", &mut model)?;
        Ok(model)
    }
}

impl Params for FixationModel {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        self.aggregator.visit(&join(prefix, "aggregator"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        self.backbone.visit_mut(&join(prefix, "backbone"), f);
        self.aggregator.visit_mut(&join(prefix, "aggregator"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut Visit<'_>) {
        self.head.visit_buffers(&join(prefix, "head"), f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        self.head.visit_buffers_mut(&join(prefix, "head"), f);
    }
}

/// Trainable flags over [`FixationModel`] parameter names.
#[derive(Clone, Debug)]
pub struct ModelMask {
    backbone: ParamMask,
}

impl ModelMask {
    pub fn is_trainable(&self, name: &str) -> bool {
        match name.strip_prefix("backbone.") {
            Some(rest) => self.backbone.is_trainable(rest),
            None => true,
        }
    }

    pub fn backbone_frozen(&self) -> bool {
        self.backbone.flags().values().all(|t| !t)
    }
}

pub const PROB_CLAMP: f64 = 1e-7;

/// Binary cross-entropy with the probability clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// `d bce / d p`; zero where the clamp is active.
pub fn bce_grad(p: f64, y: f64) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        return 0.0;
    }
    -y / p + (1.0 - y) / (1.0 - p)
}

fn stack(rows: &[Array1<f64>]) -> Result<Array2<f64>> {
    let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
    concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn approach_scale_compatibility() {
        assert!(Approach::XsSlides.check_scale(Scale::XS).is_ok());
        assert!(Approach::XsSlides.check_scale(Scale::M).is_err());
        assert!(Approach::VitUpscaling.check_scale(Scale::M).is_ok());
        assert!(Approach::TiledSoftVote.check_scale(Scale::L).is_ok());
        assert!(Approach::TiledAttention.check_scale(Scale::M).is_ok());
        assert!(Approach::TiledTransformer.check_scale(Scale::S).is_err());
        for a in Approach::ALL {
            assert_eq!(a.to_string().parse::<Approach>().unwrap(), a);
            assert!(a.check_scale(a.default_scale()).is_ok());
        }
    }

    #[test]
    fn bce_examples() {
        for y in [0.0, 1.0] {
            assert!((bce_loss(0.5, y) - std::f64::consts::LN_2).abs() < 1e-15);
        }
        assert!(bce_loss(1.0 - 1e-12, 1.0) < 1e-6);
        assert!(bce_loss(0.0, 1.0).is_finite());
        let (p, y) = (0.3, 1.0);
        let h = 1e-6;
        let numeric = (bce_loss(p + h, y) - bce_loss(p - h, y)) / (2.0 * h);
        assert!((numeric - bce_grad(p, y)).abs() < 1e-6);
    }

    #[test]
    fn upscaling_model_has_interpolated_grid() {
        let m = FixationModel::new(ModelConfig::desk(Approach::VitUpscaling), 0).unwrap();
        assert_eq!(m.backbone.grid, (28, 56));
        assert_eq!(m.backbone.input_size(), (448, 896));
    }

    #[test]
    fn mask_freezes_only_backbone_non_attention() {
        let m = FixationModel::new(ModelConfig::desk(Approach::VitUpscaling), 0).unwrap();
        let mask = m.trainable_mask(FreezeMode::AttentionAndPos).unwrap();
        assert!(mask.is_trainable("backbone.blocks.0.attn.qkv.weight"));
        assert!(mask.is_trainable("backbone.pos_embed"));
        assert!(!mask.is_trainable("backbone.blocks.1.mlp.fc1.weight"));
        assert!(!mask.is_trainable("backbone.patch_embed.weight"));
        assert!(mask.is_trainable("head.output.weight"));
        assert!(!mask.backbone_frozen());
    }

    #[test]
    fn parameters_are_f32_exact() {
        let m = FixationModel::new(ModelConfig::desk(Approach::TiledAttention), 3).unwrap();
        m.visit("", &mut |name, _, d| {
            assert!(d.iter().all(|&v| v as f32 as f64 == v), "{name}");
        });
    }
}
