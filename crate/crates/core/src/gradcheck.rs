//! Finite-difference verification of analytic gradients.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::nn::params::{flatten, Params};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Coordinates checked per tensor; `None` checks all of them.
    pub samples_per_tensor: Option<usize>,
    /// Magnitude below which errors are measured absolutely rather than
    /// relative to the gradient.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-4,
            samples_per_tensor: Some(16),
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupError {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GradCheckReport {
    /// Per tensor name.
    pub groups: BTreeMap<String, GroupError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.values().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }

    pub fn worst(&self) -> Option<(&str, &GroupError)> {
        self.groups
            .iter()
            .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
            .map(|(k, v)| (k.as_str(), v))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` (same layout as `params`) against central differences
/// of `loss` evaluated at perturbed copies of `params`.
pub fn grad_check<P, F>(params: &P, analytic: &P, mut loss: F, opts: &GradCheckOptions) -> GradCheckReport
where
    P: Params + Clone,
    F: FnMut(&P) -> f64,
{
    let mut tensors = Vec::new();
    params.visit("", &mut |name, _, data| tensors.push((name.to_string(), data.len())));
    let grads = flatten(analytic);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let mut offset = 0;
    for (t, (name, len)) in tensors.iter().enumerate() {
        let coords: Vec<usize> = match opts.samples_per_tensor {
            Some(k) if k < *len => {
                let mut v = sample(&mut rng, *len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..*len).collect(),
        };
        let mut group = GroupError {
            max_rel_error: 0.0,
            checked: coords.len(),
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for &i in &coords {
            let plus = loss(&perturbed(params, t, i, opts.h));
            let minus = loss(&perturbed(params, t, i, -opts.h));
            let numeric = (plus - minus) / (2.0 * opts.h);
            let a = grads[offset + i];
            let err = relative_error(a, numeric, opts.floor);
            if err >= group.max_rel_error {
                group.max_rel_error = err;
                group.worst_analytic = a;
                group.worst_numeric = numeric;
            }
        }
        report.groups.insert(name.clone(), group);
        offset += len;
    }
    report
}

fn perturbed<P: Params + Clone>(params: &P, tensor: usize, index: usize, delta: f64) -> P {
    let mut p = params.clone();
    let mut t = 0;
    p.visit_mut("", &mut |_, _, data| {
        if t == tensor {
            data[index] += delta;
        }
        t += 1;
    });
    p
}

/// Central differences of `loss` with respect to a sample of the entries of
/// `x`, compared against `analytic` (same shape as `x`).
pub fn input_check<F>(x: &Array2<f64>, analytic: &Array2<f64>, loss: F, opts: &GradCheckOptions) -> GroupError
where
    F: Fn(&Array2<f64>) -> f64,
{
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let coords: Vec<usize> = match opts.samples_per_tensor {
        Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
        _ => (0..n).collect(),
    };
    let mut group = GroupError {
        max_rel_error: 0.0,
        checked: coords.len(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let cols = x.ncols();
    for i in coords {
        let at = (i / cols, i % cols);
        let mut xp = x.clone();
        xp[at] += opts.h;
        let mut xm = x.clone();
        xm[at] -= opts.h;
        let numeric = (loss(&xp) - loss(&xm)) / (2.0 * opts.h);
        let a = analytic[at];
        let err = relative_error(a, numeric, opts.floor);
        if err >= group.max_rel_error {
            group.max_rel_error = err;
            group.worst_analytic = a;
            group.worst_numeric = numeric;
        }
    }
    group
}

/// Ready-made checks of every hand-written backward pass, each on a seeded
/// random instance with a random linear read-out as the loss.
pub mod suite {
    use ndarray::{Array1, Array2, Array3};
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::{grad_check, input_check, GradCheckOptions, GradCheckReport};
    use crate::backbone::{BackboneConfig, OutputMode, VisionTransformer};
    use crate::error::Result;
    use crate::heads::{AttentionPool, AttentionPoolConfig, ClassifierHead, HeadConfig, TileTransformer, TileTransformerConfig};
    use crate::imaging::{Scale, TILE_SIZE};
    use crate::model::{Approach, BatchOptions, FixationModel, ModelConfig, SlideInput};
    use crate::nn::params::zeros_like;

    /// Step small enough that ReLU kinks are almost never straddled.
    const PIECEWISE_H: f64 = 1e-6;

    fn normal2(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.sample(StandardNormal))
    }

    fn normal1(rng: &mut impl Rng, n: usize) -> Array1<f64> {
        Array1::from_shape_fn(n, |_| rng.sample(StandardNormal))
    }

    fn opts(seed: u64, h: f64) -> GradCheckOptions {
        GradCheckOptions {
            h,
            seed,
            ..Default::default()
        }
    }

    /// Classifier head in training mode (batch statistics, no dropout),
    /// including the gradient with respect to its input features.
    pub fn head(seed: u64) -> Result<GradCheckReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = HeadConfig {
            input_dim: 12,
            layer_sizes: [10, 8, 6],
            dropout_p: 0.0,
        };
        let head = ClassifierHead::new(&cfg, &mut rng)?;
        let x = normal2(&mut rng, 7, 12);
        let c = normal1(&mut rng, 7);
        let loss = |h: &ClassifierHead, x: &Array2<f64>| -> f64 {
            let mut h = h.clone();
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let (logits, _) = h.forward_train(x.view(), &mut r as &mut dyn RngCore).expect("head forward");
            logits.dot(&c)
        };
        let mut h = head.clone();
        let (_, cache) = h.forward_train(x.view(), &mut rng as &mut dyn RngCore)?;
        let mut grad = zeros_like(&head);
        let dx = head.backward(&cache, &c, &mut grad);
        let o = opts(seed, PIECEWISE_H);
        let mut report = grad_check(&head, &grad, |p| loss(p, &x), &o);
        report.groups.insert("input".into(), input_check(&x, &dx, |x| loss(&head, x), &o));
        Ok(report)
    }

    pub fn attention_pool(seed: u64) -> Result<GradCheckReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pool = AttentionPool::new(&AttentionPoolConfig { dim: 12, heads: 3 }, &mut rng)?;
        let x = normal2(&mut rng, 5, 12);
        let c = normal1(&mut rng, 12);
        let loss = |p: &AttentionPool, x: &Array2<f64>| p.forward(x.view()).expect("pool forward").dot(&c);
        let (_, cache) = pool.forward_train(x.view())?;
        let mut grad = zeros_like(&pool);
        let dx = pool.backward(&cache, &c, &mut grad);
        let o = opts(seed, 1e-5);
        let mut report = grad_check(&pool, &grad, |p| loss(p, &x), &o);
        report.groups.insert("input".into(), input_check(&x, &dx, |x| loss(&pool, x), &o));
        Ok(report)
    }

    pub fn tile_transformer(seed: u64) -> Result<GradCheckReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = TileTransformerConfig {
            dim: 12,
            depth: 2,
            heads: 3,
            mlp_ratio: 2.0,
            slots: 8,
        };
        let t = TileTransformer::new(&cfg, &mut rng)?;
        let x = normal2(&mut rng, 5, 12);
        let c = normal1(&mut rng, 12);
        let loss = |p: &TileTransformer, x: &Array2<f64>| p.forward(x.view()).expect("transformer forward").dot(&c);
        let (_, cache) = t.forward_train(x.view())?;
        let mut grad = zeros_like(&t);
        let dx = t.backward(&cache, &c, &mut grad);
        let o = opts(seed, 1e-5);
        let mut report = grad_check(&t, &grad, |p| loss(p, &x), &o);
        report.groups.insert("input".into(), input_check(&x, &dx, |x| loss(&t, x), &o));
        Ok(report)
    }

    /// The full soft-vote model (small backbone, eight tiles per slide, two
    /// slides) through mean-of-sigmoids and binary cross-entropy.
    pub fn soft_vote_path(seed: u64) -> Result<GradCheckReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = ModelConfig::desk(Approach::TiledSoftVote);
        cfg.scale = Scale::M;
        cfg.backbone = BackboneConfig {
            patch_size: 32,
            depth: 1,
            heads: 2,
            embed_dim: 16,
            mlp_ratio: 2.0,
            n_register_tokens: 0,
            output_mode: OutputMode::ClassPlusMeanPatch,
        };
        cfg.head_layers = [10, 8, 6];
        cfg.dropout_p = 0.0;
        let model = FixationModel::new(cfg, seed)?;
        let slides: Vec<SlideInput> = (0..2)
            .map(|_| SlideInput {
                tiles: (0..Scale::M.tile_count())
                    .map(|_| Array3::from_shape_fn((TILE_SIZE, TILE_SIZE, 3), |_| rng.sample(StandardNormal)))
                    .collect(),
            })
            .collect();
        let labels = [1.0, 0.0];
        let batch: Vec<(&SlideInput, f64)> = slides.iter().zip(labels).collect();
        let run = |m: &FixationModel, gradients: bool| {
            let mut m = m.clone();
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let o = BatchOptions {
                gradients,
                ..Default::default()
            };
            m.batch(&batch, o, &mut r).expect("batch")
        };
        let grads = run(&model, true).grads.expect("gradients requested");
        Ok(grad_check(
            &model,
            &grads,
            |m| run(m, false).loss,
            &GradCheckOptions {
                samples_per_tensor: Some(6),
                ..opts(seed, PIECEWISE_H)
            },
        ))
    }

    /// The desk-scale backbone on one `224 x 224` input.
    pub fn desk_vit(seed: u64) -> Result<GradCheckReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vit = VisionTransformer::new(BackboneConfig::desk(), &mut rng)?;
        let (h, w) = vit.input_size();
        let img = Array3::from_shape_fn((h, w, 3), |_| rng.sample(StandardNormal));
        let c = normal1(&mut rng, vit.feature_dim());
        let (_, cache) = vit.forward_train(&img)?;
        let mut grad = zeros_like(&vit);
        vit.backward(&cache, &c, &mut grad);
        Ok(grad_check(
            &vit,
            &grad,
            |v| v.forward(&img).expect("vit forward").dot(&c),
            &GradCheckOptions {
                samples_per_tensor: Some(6),
                ..opts(seed, 1e-5)
            },
        ))
    }
}
