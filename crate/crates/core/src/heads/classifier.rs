//! Three-layer feed-forward classification head producing one logit.
//!
//! Each hidden layer is `Dropout(ReLU(BatchNorm(x W + b)))`; the output layer
//! is a plain affine map to a single logit.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{BatchNorm, BatchNormCache, BatchStats, Init, Linear, Mode};
use crate::nn::params::{join, Params, Visit, VisitMut};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub input_dim: usize,
    pub layer_sizes: [usize; 3],
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
}

fn default_dropout() -> f64 {
    0.1
}

impl HeadConfig {
    pub fn new(input_dim: usize, layer_sizes: [usize; 3]) -> Self {
        Self {
            input_dim,
            layer_sizes,
            dropout_p: default_dropout(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "head widths must be at least 1, got input {} and layers {:?}",
                self.input_dim, self.layer_sizes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenLayer {
    pub linear: Linear,
    pub norm: BatchNorm,
}

pub struct HiddenCache {
    input: Array2<f64>,
    pre_norm: Array2<f64>,
    norm: BatchNormCache,
    normed: Array2<f64>,
    /// Dropout multipliers (0 or 1/(1-p)); `None` when dropout is inactive.
    mask: Option<Array2<f64>>,
}

impl HiddenLayer {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            linear: Linear::new(input, output, Init::FanIn, rng),
            norm: BatchNorm::new(output),
        }
    }

    /// Inference mode: running statistics, no dropout.
    pub fn forward_eval(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, HiddenCache)> {
        Ok(self.forward_inner(x, None)?.0)
    }

    /// Training mode: batch statistics, folded into the running estimates, and
    /// inverted dropout with keep-probability `1 - p`.
    pub fn forward_train(&mut self, x: ArrayView2<'_, f64>, dropout_p: f64, rng: &mut dyn RngCore) -> Result<(Array2<f64>, HiddenCache)> {
        let (out, stats) = self.forward_inner(x, Some((dropout_p, rng)))?;
        if let Some(stats) = stats {
            self.norm.update_running(&stats);
        }
        Ok(out)
    }

    #[allow(clippy::type_complexity)]
    fn forward_inner(&self, x: ArrayView2<'_, f64>, train: Option<(f64, &mut dyn RngCore)>) -> Result<((Array2<f64>, HiddenCache), Option<BatchStats>)> {
        if x.ncols() != self.linear.input_dim() {
            return Err(Error::Shape(format!(
                "hidden layer expects {} inputs, got {}",
                self.linear.input_dim(),
                x.ncols()
            )));
        }
        let pre_norm = self.linear.forward(x);
        let (normed, norm, stats) = if train.is_some() {
            let (y, c, s) = self.norm.forward_train(pre_norm.view());
            (y, c, Some(s))
        } else {
            let (y, c) = self.norm.forward_eval(pre_norm.view());
            (y, c, None)
        };
        let mut y = normed.mapv(|v| v.max(0.0));
        let mask = match train {
            Some((p, rng)) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let m = Array2::from_shape_simple_fn(y.raw_dim(), || if rng.random::<f64>() < p { 0.0 } else { keep });
                y *= &m;
                Some(m)
            }
            _ => None,
        };
        let cache = HiddenCache {
            input: x.to_owned(),
            pre_norm,
            norm,
            normed,
            mask,
        };
        Ok(((y, cache), stats))
    }

    pub fn backward(&self, cache: &HiddenCache, dy: ArrayView2<'_, f64>, grad: &mut HiddenLayer) -> Array2<f64> {
        let mut d = dy.to_owned();
        if let Some(m) = &cache.mask {
            d *= m;
        }
        d.zip_mut_with(&cache.normed, |g, &v| {
            if v <= 0.0 {
                *g = 0.0
            }
        });
        let dpre = self.norm.backward(&cache.norm, cache.pre_norm.view(), d.view(), &mut grad.norm);
        self.linear.backward(cache.input.view(), dpre.view(), &mut grad.linear)
    }
}

impl Params for HiddenLayer {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        self.linear.visit(&join(prefix, "linear"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        self.linear.visit_mut(&join(prefix, "linear"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut Visit<'_>) {
        self.norm.visit_buffers(&join(prefix, "norm"), f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        self.norm.visit_buffers_mut(&join(prefix, "norm"), f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub hidden: Vec<HiddenLayer>,
    pub output: Linear,
    pub dropout_p: f64,
}

pub struct HeadCache {
    hidden: Vec<HiddenCache>,
    last: Array2<f64>,
}

impl ClassifierHead {
    pub fn new(config: &HeadConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut dims = vec![config.input_dim];
        dims.extend(config.layer_sizes);
        let hidden = dims.windows(2).map(|w| HiddenLayer::new(w[0], w[1], rng)).collect();
        Ok(Self {
            hidden,
            output: Linear::new(config.layer_sizes[2], 1, Init::FanIn, rng),
            dropout_p: config.dropout_p,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden[0].linear.input_dim()
    }

    /// One logit per row of `features`, inference mode.
    pub fn forward(&self, features: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.forward_eval(features)?.0)
    }

    pub fn forward_eval(&self, features: ArrayView2<'_, f64>) -> Result<(Array1<f64>, HeadCache)> {
        let mut x = features.to_owned();
        let mut hidden = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let (y, c) = layer.forward_eval(x.view())?;
            hidden.push(c);
            x = y;
        }
        let logits = self.output.forward(x.view()).index_axis_move(Axis(1), 0);
        Ok((logits, HeadCache { hidden, last: x }))
    }

    pub fn forward_train(&mut self, features: ArrayView2<'_, f64>, rng: &mut dyn RngCore) -> Result<(Array1<f64>, HeadCache)> {
        let p = self.dropout_p;
        let mut x = features.to_owned();
        let mut hidden = Vec::with_capacity(self.hidden.len());
        for layer in &mut self.hidden {
            let (y, c) = layer.forward_train(x.view(), p, rng)?;
            hidden.push(c);
            x = y;
        }
        let logits = self.output.forward(x.view()).index_axis_move(Axis(1), 0);
        Ok((logits, HeadCache { hidden, last: x }))
    }

    pub fn forward_mode(&mut self, features: ArrayView2<'_, f64>, mode: Mode, rng: &mut dyn RngCore) -> Result<(Array1<f64>, HeadCache)> {
        match mode {
            Mode::Train => self.forward_train(features, rng),
            Mode::Eval => self.forward_eval(features),
        }
    }

    /// Returns `dL/dfeatures` given `dL/dlogits`.
    pub fn backward(&self, cache: &HeadCache, dlogits: &Array1<f64>, grad: &mut ClassifierHead) -> Array2<f64> {
        let dl = dlogits.view().insert_axis(Axis(1));
        let mut d = self.output.backward(cache.last.view(), dl, &mut grad.output);
        for ((layer, c), g) in self.hidden.iter().zip(&cache.hidden).zip(grad.hidden.iter_mut()).rev() {
            d = layer.backward(c, d.view(), g);
        }
        d
    }
}

impl Params for ClassifierHead {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        self.hidden.visit(&join(prefix, "hidden"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        self.hidden.visit_mut(&join(prefix, "hidden"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut Visit<'_>) {
        self.hidden.visit_buffers(&join(prefix, "hidden"), f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        self.hidden.visit_buffers_mut(&join(prefix, "hidden"), f);
    }
}
