//! Transformer aggregator: tile features become tokens with learned slot
//! positions, a class token is prepended, and its final state is the slide
//! feature.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{init_array, Init};
use crate::nn::params::{join, visit_array, visit_array_mut, Params, Visit, VisitMut};
use crate::nn::transformer::{encode, encode_backward, Block, BlockCache};

pub const DEFAULT_SLOTS: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileTransformerConfig {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: f64,
    #[serde(default = "default_slots")]
    pub slots: usize,
}

fn default_mlp_ratio() -> f64 {
    2.0
}

fn default_slots() -> usize {
    DEFAULT_SLOTS
}

impl TileTransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "tile transformer dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.slots == 0 || self.mlp_ratio <= 0.0 {
            return Err(Error::Config("tile transformer needs at least one slot and a positive mlp_ratio".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TileTransformer {
    pub cls_token: Array1<f64>,
    /// `slots x dim` positional embeddings, one per tile position.
    pub slot_pos: Array2<f64>,
    pub blocks: Vec<Block>,
}

pub struct TileTransformerCache {
    n: usize,
    blocks: Vec<BlockCache>,
}

impl TileTransformer {
    pub fn new(config: &TileTransformerConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let init = Init::TruncNormal(0.02);
        let cls_token = init_array((1, d), d, init, rng).row(0).to_owned();
        let slot_pos = init_array((config.slots, d), d, init, rng);
        let blocks = (0..config.depth)
            .map(|_| Block::new(d, config.heads, config.mlp_ratio, rng))
            .collect();
        Ok(Self {
            cls_token,
            slot_pos,
            blocks,
        })
    }

    pub fn slots(&self) -> usize {
        self.slot_pos.nrows()
    }

    pub fn dim(&self) -> usize {
        self.cls_token.len()
    }

    pub fn forward(&self, features: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.forward_train(features)?.0)
    }

    pub fn forward_train(&self, features: ArrayView2<'_, f64>) -> Result<(Array1<f64>, TileTransformerCache)> {
        let n = features.nrows();
        if n == 0 || n > self.slots() {
            return Err(Error::InvalidInput(format!(
                "tile transformer takes 1..={} tiles, got {n}",
                self.slots()
            )));
        }
        if features.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "tile transformer expects {} features, got {}",
                self.dim(),
                features.ncols()
            )));
        }
        let mut tokens = Array2::zeros((n + 1, self.dim()));
        tokens.row_mut(0).assign(&self.cls_token);
        let mut rest = tokens.slice_mut(s![1.., ..]);
        rest.assign(&features);
        rest += &self.slot_pos.slice(s![..n, ..]);
        let (out, blocks) = encode(&self.blocks, tokens);
        Ok((out.index_axis_move(Axis(0), 0), TileTransformerCache { n, blocks }))
    }

    /// Returns `dL/dfeatures` given `dL/dclass_feature`.
    pub fn backward(&self, cache: &TileTransformerCache, dout: &Array1<f64>, grad: &mut TileTransformer) -> Array2<f64> {
        let mut dy = Array2::zeros((cache.n + 1, self.dim()));
        dy.row_mut(0).assign(dout);
        let dx = encode_backward(&self.blocks, &cache.blocks, dy, &mut grad.blocks);
        grad.cls_token += &dx.row(0);
        let dtiles = dx.slice(s![1.., ..]).to_owned();
        let mut gpos = grad.slot_pos.slice_mut(s![..cache.n, ..]);
        gpos += &dtiles;
        dtiles
    }
}

impl Params for TileTransformer {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        visit_array(&join(prefix, "cls_token"), &self.cls_token, f);
        visit_array(&join(prefix, "slot_pos"), &self.slot_pos, f);
        self.blocks.visit(&join(prefix, "blocks"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        visit_array_mut(&join(prefix, "cls_token"), &mut self.cls_token, f);
        visit_array_mut(&join(prefix, "slot_pos"), &mut self.slot_pos, f);
        self.blocks.visit_mut(&join(prefix, "blocks"), f);
    }
}
