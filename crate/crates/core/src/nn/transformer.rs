//! Pre-norm transformer encoder blocks with multi-head self-attention and a GELU MLP.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use super::layers::{gelu_grad_slice, gelu_slice, softmax_rows, softmax_rows_backward, Init, LayerNorm, Linear};
use super::params::{join, Params, Visit, VisitMut};

#[derive(Clone, Debug, PartialEq)]
pub struct SelfAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
}

pub struct AttentionCache {
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    merged: Array2<f64>,
}

impl AttentionCache {
    /// Attention probabilities of head `h` (queries x keys).
    pub fn probs(&self, h: usize) -> &Array2<f64> {
        &self.probs[h]
    }
}

impl SelfAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "embedding dim {dim} not divisible by {heads} heads");
        Self {
            qkv: Linear::new(dim, 3 * dim, Init::TruncNormal(0.02), rng),
            proj: Linear::new(dim, dim, Init::TruncNormal(0.02), rng),
            heads,
        }
    }

    fn dim(&self) -> usize {
        self.proj.output_dim()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, AttentionCache) {
        let d = self.dim();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qkv = self.qkv.forward(x);
        let mut merged = Array2::zeros((x.nrows(), d));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
            let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
            let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let mut p = q.dot(&k.t());
            p *= scale;
            softmax_rows(&mut p);
            merged.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&p.dot(&v));
            probs.push(p);
        }
        let out = self.proj.forward(merged.view());
        (out, AttentionCache { qkv, probs, merged })
    }

    /// Forward pass without a cache. Queries are processed in blocks so the
    /// score matrix of long sequences stays cache-resident.
    pub fn forward_inference(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        const QUERY_BLOCK: usize = 64;
        let d = self.dim();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qkv = self.qkv.forward(x);
        let n = x.nrows();
        let mut merged = Array2::zeros((n, d));
        for h in 0..self.heads {
            let kt = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]).t().to_owned();
            let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
            for start in (0..n).step_by(QUERY_BLOCK) {
                let end = (start + QUERY_BLOCK).min(n);
                let mut p = qkv.slice(s![start..end, h * dh..(h + 1) * dh]).dot(&kt);
                p *= scale;
                softmax_rows(&mut p);
                merged
                    .slice_mut(s![start..end, h * dh..(h + 1) * dh])
                    .assign(&p.dot(&v));
            }
        }
        self.proj.forward(merged.view())
    }

    pub fn backward(&self, x: ArrayView2<'_, f64>, cache: &AttentionCache, dout: ArrayView2<'_, f64>, grad: &mut SelfAttention) -> Array2<f64> {
        let d = self.dim();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dmerged = self.proj.backward(cache.merged.view(), dout, &mut grad.proj);
        let mut dqkv = Array2::zeros(cache.qkv.raw_dim());
        for h in 0..self.heads {
            let (q0, k0, v0) = (h * dh, d + h * dh, 2 * d + h * dh);
            let q = cache.qkv.slice(s![.., q0..q0 + dh]);
            let k = cache.qkv.slice(s![.., k0..k0 + dh]);
            let v = cache.qkv.slice(s![.., v0..v0 + dh]);
            let p = &cache.probs[h];
            let dout_h = dmerged.slice(s![.., h * dh..(h + 1) * dh]);
            let mut dp = dout_h.dot(&v.t());
            dqkv.slice_mut(s![.., v0..v0 + dh]).assign(&p.t().dot(&dout_h));
            softmax_rows_backward(p, &mut dp);
            dp *= scale;
            dqkv.slice_mut(s![.., q0..q0 + dh]).assign(&dp.dot(&k));
            dqkv.slice_mut(s![.., k0..k0 + dh]).assign(&dp.t().dot(&q));
        }
        self.qkv.backward(x, dqkv.view(), &mut grad.qkv)
    }
}

impl Params for SelfAttention {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        self.qkv.visit(&join(prefix, "qkv"), f);
        self.proj.visit(&join(prefix, "proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        self.qkv.visit_mut(&join(prefix, "qkv"), f);
        self.proj.visit_mut(&join(prefix, "proj"), f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: SelfAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct BlockCache {
    norm1: super::layers::LayerNormCache,
    h1: Array2<f64>,
    attn: AttentionCache,
    norm2: super::layers::LayerNormCache,
    h2: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
}

impl BlockCache {
    pub fn attention(&self) -> &AttentionCache {
        &self.attn
    }
}

impl Block {
    pub fn new(dim: usize, heads: usize, mlp_ratio: f64, rng: &mut impl Rng) -> Self {
        let hidden = ((dim as f64) * mlp_ratio).round().max(1.0) as usize;
        Self {
            norm1: LayerNorm::new(dim),
            attn: SelfAttention::new(dim, heads, rng),
            norm2: LayerNorm::new(dim),
            fc1: Linear::new(dim, hidden, Init::TruncNormal(0.02), rng),
            fc2: Linear::new(hidden, dim, Init::TruncNormal(0.02), rng),
        }
    }

    pub fn forward(&self, x: Array2<f64>) -> (Array2<f64>, BlockCache) {
        let (h1, norm1) = self.norm1.forward(x.view());
        let (att, attn) = self.attn.forward(h1.view());
        let x1 = &x + &att;
        let (h2, norm2) = self.norm2.forward(x1.view());
        let pre_act = self.fc1.forward(h2.view());
        let mut act = pre_act.clone();
        gelu_slice(act.as_slice_mut().expect("contiguous"));
        let y = x1 + self.fc2.forward(act.view());
        let cache = BlockCache {
            norm1,
            h1,
            attn,
            norm2,
            h2,
            pre_act,
            act,
        };
        (y, cache)
    }

    pub fn forward_inference(&self, x: Array2<f64>) -> Array2<f64> {
        let (h1, _) = self.norm1.forward(x.view());
        let x1 = x + self.attn.forward_inference(h1.view());
        let (h2, _) = self.norm2.forward(x1.view());
        let mut act = self.fc1.forward(h2.view());
        gelu_slice(act.as_slice_mut().expect("contiguous"));
        x1 + self.fc2.forward(act.view())
    }

    pub fn backward(&self, cache: &BlockCache, dy: Array2<f64>, grad: &mut Block) -> Array2<f64> {
        let dact = self.fc2.backward(cache.act.view(), dy.view(), &mut grad.fc2);
        let mut slope = cache.pre_act.clone();
        gelu_grad_slice(slope.as_slice_mut().expect("contiguous"));
        let dpre = dact * &slope;
        let dh2 = self.fc1.backward(cache.h2.view(), dpre.view(), &mut grad.fc1);
        let dx1 = dy + self.norm2.backward(&cache.norm2, dh2.view(), &mut grad.norm2);
        let dh1 = self.attn.backward(cache.h1.view(), &cache.attn, dx1.view(), &mut grad.attn);
        dx1 + self.norm1.backward(&cache.norm1, dh1.view(), &mut grad.norm1)
    }
}

impl Params for Block {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.fc1.visit(&join(prefix, "mlp.fc1"), f);
        self.fc2.visit(&join(prefix, "mlp.fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.fc1.visit_mut(&join(prefix, "mlp.fc1"), f);
        self.fc2.visit_mut(&join(prefix, "mlp.fc2"), f);
    }
}

/// Runs `x` through every block, returning the output and per-block caches.
pub fn encode(blocks: &[Block], mut x: Array2<f64>) -> (Array2<f64>, Vec<BlockCache>) {
    let mut caches = Vec::with_capacity(blocks.len());
    for b in blocks {
        let (y, c) = b.forward(x);
        caches.push(c);
        x = y;
    }
    (x, caches)
}

/// [`encode`] without caches.
pub fn encode_inference(blocks: &[Block], x: Array2<f64>) -> Array2<f64> {
    blocks.iter().fold(x, |x, b| b.forward_inference(x))
}

pub fn encode_backward(blocks: &[Block], caches: &[BlockCache], mut dy: Array2<f64>, grads: &mut [Block]) -> Array2<f64> {
    for ((b, c), g) in blocks.iter().zip(caches).zip(grads.iter_mut()).rev() {
        dy = b.backward(c, dy, g);
    }
    dy
}
