//! Multi-head attention pooling over a bag of tile features.
//!
//! Each head owns one learned query. Tile features are projected to keys and
//! values, the head computes `softmax_i(q . k_i / sqrt(d_h))` and returns the
//! weighted sum of its value slice. Head outputs are concatenated and mapped
//! back to the feature dimension by an output projection.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{init_array, Init, Linear};
use crate::nn::params::{join, visit_array, visit_array_mut, Params, Visit, VisitMut};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionPoolConfig {
    pub dim: usize,
    pub heads: usize,
}

impl AttentionPoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "attention pool dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionPool {
    /// One query per head, `heads x head_dim`.
    pub query: Array2<f64>,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}

pub struct AttentionPoolCache {
    input: Array2<f64>,
    keys: Array2<f64>,
    values: Array2<f64>,
    /// `heads x n` attention weights.
    weights: Array2<f64>,
    merged: Array2<f64>,
}

impl AttentionPoolCache {
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// Value-projected tile features (`n x dim`).
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

impl AttentionPool {
    pub fn new(config: &AttentionPoolConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let init = Init::TruncNormal(0.02);
        Ok(Self {
            query: init_array((config.heads, d / config.heads), d, Init::TruncNormal(1.0), rng),
            key: Linear::new(d, d, init, rng),
            value: Linear::new(d, d, Init::FanIn, rng),
            out: Linear::new(d, d, Init::FanIn, rng),
        })
    }

    /// Single head with identity key/value/output projections, so the pooled
    /// feature is the attention-weighted sum of the raw features.
    pub fn identity(query: Array1<f64>) -> Self {
        let d = query.len();
        Self {
            query: query.insert_axis(Axis(0)),
            key: Linear::identity(d),
            value: Linear::identity(d),
            out: Linear::identity(d),
        }
    }

    pub fn heads(&self) -> usize {
        self.query.nrows()
    }

    pub fn dim(&self) -> usize {
        self.out.output_dim()
    }

    pub fn forward(&self, features: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.forward_train(features)?.0)
    }

    pub fn forward_train(&self, features: ArrayView2<'_, f64>) -> Result<(Array1<f64>, AttentionPoolCache)> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::InvalidInput("attention pooling over zero tiles".into()));
        }
        if features.ncols() != self.key.input_dim() {
            return Err(Error::Shape(format!(
                "attention pool expects {} features, got {}",
                self.key.input_dim(),
                features.ncols()
            )));
        }
        let dh = self.query.ncols();
        let scale = 1.0 / (dh as f64).sqrt();
        let keys = self.key.forward(features);
        let values = self.value.forward(features);
        let mut weights = Array2::zeros((self.heads(), n));
        let mut merged = Array2::zeros((1, self.dim()));
        for h in 0..self.heads() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = keys.slice(cols).dot(&self.query.row(h)) * scale;
            let max = scores.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            scores.mapv_inplace(|v| (v - max).exp());
            scores /= scores.sum();
            merged
                .slice_mut(s![0, h * dh..(h + 1) * dh])
                .assign(&scores.dot(&values.slice(cols)));
            weights.row_mut(h).assign(&scores);
        }
        let pooled = self.out.forward(merged.view()).index_axis_move(Axis(0), 0);
        Ok((
            pooled,
            AttentionPoolCache {
                input: features.to_owned(),
                keys,
                values,
                weights,
                merged,
            },
        ))
    }

    /// Returns `dL/dfeatures` given `dL/dpooled`.
    pub fn backward(&self, cache: &AttentionPoolCache, dpooled: &Array1<f64>, grad: &mut AttentionPool) -> Array2<f64> {
        let dh = self.query.ncols();
        let scale = 1.0 / (dh as f64).sqrt();
        let dmerged = self
            .out
            .backward(cache.merged.view(), dpooled.view().insert_axis(Axis(0)), &mut grad.out);
        let mut dkeys = Array2::zeros(cache.keys.raw_dim());
        let mut dvalues = Array2::zeros(cache.values.raw_dim());
        for h in 0..self.heads() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let alpha = cache.weights.row(h);
            let dout = dmerged.slice(s![0, h * dh..(h + 1) * dh]);
            // d out_h / d v_i = alpha_i
            for (i, mut row) in dvalues.slice_mut(cols).rows_mut().into_iter().enumerate() {
                row.scaled_add(alpha[i], &dout);
            }
            let dalpha = cache.values.slice(cols).dot(&dout);
            let dot = alpha.dot(&dalpha);
            let dscore: Array1<f64> = (dalpha - dot) * alpha.view() * scale;
            let mut gq = grad.query.row_mut(h);
            gq += &cache.keys.slice(cols).t().dot(&dscore);
            for (i, mut row) in dkeys.slice_mut(cols).rows_mut().into_iter().enumerate() {
                row.scaled_add(dscore[i], &self.query.row(h));
            }
        }
        let mut dx = self.key.backward(cache.input.view(), dkeys.view(), &mut grad.key);
        dx += &self.value.backward(cache.input.view(), dvalues.view(), &mut grad.value);
        dx
    }
}

impl Params for AttentionPool {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        visit_array(&join(prefix, "query"), &self.query, f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        visit_array_mut(&join(prefix, "query"), &mut self.query, f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}
