use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::params::{join, visit_array, visit_array_mut, Params, Visit, VisitMut};

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Normal(0, std) truncated at two standard deviations.
    TruncNormal(f64),
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    FanIn,
    Zeros,
}

pub(crate) fn init_array(shape: (usize, usize), fan_in: usize, init: Init, rng: &mut impl Rng) -> Array2<f64> {
    match init {
        Init::TruncNormal(std) => {
            let normal = Normal::new(0.0, std).expect("valid std");
            Array2::from_shape_simple_fn(shape, || loop {
                let v: f64 = normal.sample(rng);
                if v.abs() <= 2.0 * std {
                    break v as f32 as f64;
                }
            })
        }
        Init::FanIn => {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let u = Uniform::new_inclusive(-bound, bound).expect("valid bound");
            Array2::from_shape_simple_fn(shape, || u.sample(rng) as f32 as f64)
        }
        Init::Zeros => Array2::zeros(shape),
    }
}

/// Affine map `y = x W + b` with `W` stored as `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new(input: usize, output: usize, init: Init, rng: &mut impl Rng) -> Self {
        let weight = init_array((input, output), input, init, rng);
        let bias = match init {
            Init::FanIn => init_array((1, output), input, init, rng).row(0).to_owned(),
            _ => Array1::zeros(output),
        };
        Self { weight, bias }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Array2::eye(dim),
            bias: Array1::zeros(dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>, grad: &mut Linear) -> Array2<f64> {
        self.backward_params(x, dy, grad);
        dy.dot(&self.weight.t())
    }

    /// Parameter gradients only, for layers whose input needs no gradient.
    pub fn backward_params(&self, x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>, grad: &mut Linear) {
        general_mat_mul(1.0, &x.t(), &dy, 1.0, &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
    }
}

impl Params for Linear {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        visit_array(&join(prefix, "weight"), &self.weight, f);
        visit_array(&join(prefix, "bias"), &self.bias, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        visit_array_mut(&join(prefix, "weight"), &mut self.weight, f);
        visit_array_mut(&join(prefix, "bias"), &mut self.bias, f);
    }
}

/// Row-wise layer normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-6;

    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.to_owned();
        let mut rstd = Array1::zeros(x.nrows());
        for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            *r = 1.0 / (var + Self::EPS).sqrt();
            let s = *r;
            row.mapv_inplace(|v| (v - mean) * s);
        }
        let mut y = &xhat * &self.gamma;
        y += &self.beta;
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: ArrayView2<'_, f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(&dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let d = dy.ncols() as f64;
        let mut dx = &dy * &self.gamma;
        for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(cache.rstd.iter()) {
            let sum = row.sum();
            let dot = row.dot(&xh);
            Zip::from(&mut row)
                .and(&xh)
                .for_each(|g, &x| *g = r / d * (d * *g - sum - x * dot));
        }
        dx
    }
}

impl Params for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        visit_array(&join(prefix, "gamma"), &self.gamma, f);
        visit_array(&join(prefix, "beta"), &self.beta, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        visit_array_mut(&join(prefix, "gamma"), &mut self.gamma, f);
        visit_array_mut(&join(prefix, "beta"), &mut self.beta, f);
    }
}

/// Feature-wise batch normalization with running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

pub struct BatchStats {
    pub mean: Array1<f64>,
    pub unbiased_var: Array1<f64>,
}

pub enum BatchNormCache {
    Batch { xhat: Array2<f64>, rstd: Array1<f64> },
    Running { rstd: Array1<f64> },
}

impl BatchNorm {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes with running statistics.
    pub fn forward_eval(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, BatchNormCache) {
        let rstd = self.running_var.mapv(|v| 1.0 / (v + Self::EPS).sqrt());
        let mut y = (&x - &self.running_mean) * &rstd * &self.gamma;
        y += &self.beta;
        (y, BatchNormCache::Running { rstd })
    }

    /// Normalizes with batch statistics. Returns the statistics so the caller
    /// can fold them into the running estimates with [`BatchNorm::update_running`].
    pub fn forward_train(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, BatchNormCache, BatchStats) {
        let n = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = &x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let rstd = var.mapv(|v| 1.0 / (v + Self::EPS).sqrt());
        let xhat = centered * &rstd;
        let mut y = &xhat * &self.gamma;
        y += &self.beta;
        let unbiased_var = if x.nrows() > 1 { &var * (n / (n - 1.0)) } else { var };
        (y, BatchNormCache::Batch { xhat, rstd }, BatchStats { mean, unbiased_var })
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = Self::MOMENTUM;
        self.running_mean = &self.running_mean * (1.0 - m) + &stats.mean * m;
        self.running_var = &self.running_var * (1.0 - m) + &stats.unbiased_var * m;
    }

    pub fn backward(&self, cache: &BatchNormCache, x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>, grad: &mut BatchNorm) -> Array2<f64> {
        match cache {
            BatchNormCache::Running { rstd } => {
                let xhat = (&x - &self.running_mean) * rstd;
                grad.gamma += &(&dy * &xhat).sum_axis(Axis(0));
                grad.beta += &dy.sum_axis(Axis(0));
                &dy * &(&self.gamma * rstd)
            }
            BatchNormCache::Batch { xhat, rstd } => {
                grad.gamma += &(&dy * xhat).sum_axis(Axis(0));
                grad.beta += &dy.sum_axis(Axis(0));
                let n = dy.nrows() as f64;
                let dxhat = &dy * &self.gamma;
                let sum = dxhat.sum_axis(Axis(0));
                let dot = (&dxhat * xhat).sum_axis(Axis(0));
                let mut dx = dxhat * n - &sum - &(xhat * &dot);
                dx *= &(rstd / n);
                dx
            }
        }
    }
}

impl Params for BatchNorm {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        visit_array(&join(prefix, "gamma"), &self.gamma, f);
        visit_array(&join(prefix, "beta"), &self.beta, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        visit_array_mut(&join(prefix, "gamma"), &mut self.gamma, f);
        visit_array_mut(&join(prefix, "beta"), &mut self.beta, f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut Visit<'_>) {
        visit_array(&join(prefix, "running_mean"), &self.running_mean, f);
        visit_array(&join(prefix, "running_var"), &self.running_var, f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        visit_array_mut(&join(prefix, "running_mean"), &mut self.running_mean, f);
        visit_array_mut(&join(prefix, "running_var"), &mut self.running_var, f);
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

/// GELU, tanh approximation.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + tanh(GELU_K * (x + GELU_C * x * x * x)))
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = tanh(GELU_K * (x + GELU_C * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

#[inline]
fn tanh(u: f64) -> f64 {
    1.0 - 2.0 / (1.0 + exp(2.0 * u))
}

/// `e^x` to within a couple of ulps, written branch-free so loops over
/// slices vectorize. Saturates to 0 below -708 and to infinity above 709.
#[inline(always)]
pub fn exp(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    #[allow(clippy::excessive_precision)]
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // adding 1.5 * 2^52 rounds to the nearest integer, left in the low mantissa bits
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let xc = x.clamp(-708.0, 709.0);
    let t = xc * LOG2E + SHIFT;
    let n = t - SHIFT;
    let r = (xc - n * LN2_HI) - n * LN2_LO;
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    // low mantissa bits of t hold n; n + 1023 lies in [2, 2046], a normal exponent
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    let y = p * scale;
    let y = if x < -708.0 { 0.0 } else { y };
    if x > 709.0 {
        f64::INFINITY
    } else {
        y
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Whether a layer runs with batch statistics and dropout or in inference mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Applies `f` elementwise. On x86-64 with AVX2 the loop is compiled a
/// second time with wider vectors and selected at runtime; both versions
/// perform the same operations, so results do not depend on the path taken.
macro_rules! elementwise {
    ($(#[$m:meta])* $name:ident, |$x:ident $(, $arg:ident: $t:ty)*| $body:expr) => {
        $(#[$m])*
        pub fn $name(v: &mut [f64] $(, $arg: $t)*) {
            #[inline(always)]
            fn run(v: &mut [f64] $(, $arg: $t)*) {
                for $x in v.iter_mut() {
                    *$x = $body;
                }
            }
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2")]
                fn wide(v: &mut [f64] $(, $arg: $t)*) {
                    run(v $(, $arg)*)
                }
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: the required CPU feature was detected above
                    return unsafe { wide(v $(, $arg)*) };
                }
            }
            run(v $(, $arg)*)
        }
    };
}

elementwise!(
    /// In-place GELU.
    gelu_slice, |x| gelu(*x)
);
elementwise!(
    /// In-place GELU derivative.
    gelu_grad_slice, |x| gelu_grad(*x)
);
#[inline(always)]
fn softmax_kernel(v: &mut [f64]) {
    // four independent lanes so the reductions vectorize
    let mut m = [f64::NEG_INFINITY; 4];
    let mut chunks = v.chunks_exact(4);
    for c in chunks.by_ref() {
        for k in 0..4 {
            m[k] = if c[k] > m[k] { c[k] } else { m[k] };
        }
    }
    let mut max = m[0].max(m[1]).max(m[2].max(m[3]));
    for &x in chunks.remainder() {
        max = max.max(x);
    }
    for x in v.iter_mut() {
        *x = exp(*x - max);
    }
    let mut s = [0.0; 4];
    let mut chunks = v.chunks_exact(4);
    for c in chunks.by_ref() {
        for k in 0..4 {
            s[k] += c[k];
        }
    }
    let mut sum = (s[0] + s[1]) + (s[2] + s[3]);
    for &x in chunks.remainder() {
        sum += x;
    }
    let inv = 1.0 / sum;
    v.iter_mut().for_each(|x| *x *= inv);
}

/// Softmax of a contiguous slice, in place.
pub fn softmax_slice(v: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        #[target_feature(enable = "avx2")]
        fn wide(v: &mut [f64]) {
            softmax_kernel(v)
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the required CPU feature was detected above
            return unsafe { wide(v) };
        }
    }
    softmax_kernel(v)
}

/// In-place softmax of each row.
pub fn softmax_rows(a: &mut Array2<f64>) {
    for mut row in a.rows_mut() {
        match row.as_slice_mut() {
            Some(v) => softmax_slice(v),
            None => {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|x| exp(x - max));
                let sum = row.sum();
                row /= sum;
            }
        }
    }
}

/// Backward of a row softmax: `dS = P * (dP - rowsum(dP * P))`.
pub fn softmax_rows_backward(p: &Array2<f64>, dp: &mut Array2<f64>) {
    for (mut g, pr) in dp.rows_mut().into_iter().zip(p.rows()) {
        let dot = g.dot(&pr);
        Zip::from(&mut g).and(&pr).for_each(|g, &p| *g = p * (*g - dot));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn exp_matches_std_to_a_few_ulps() {
        let mut x = -745.0;
        while x < 720.0 {
            let (a, b) = (exp(x), x.exp());
            if b == 0.0 || b.is_infinite() || !(-708.0..=709.0).contains(&x) {
                assert!(a == 0.0 || a.is_infinite() || (a - b).abs() <= 4.0 * f64::EPSILON * b, "x={x}");
            } else {
                assert!((a - b).abs() <= 4.0 * f64::EPSILON * b, "x={x}: {a} vs {b}");
            }
            x += 0.0137;
        }
        assert_eq!(exp(0.0), 1.0);
        assert_eq!(exp(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for x in [-3.0, -1.2, -0.1, 0.0, 0.3, 2.5] {
            let h = 1e-5;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn layer_norm_rows_have_zero_mean_unit_var() {
        let ln = LayerNorm::new(4);
        let x = array![[1.0, 2.0, 3.0, 4.0], [-1.0, 0.0, 5.0, 2.0]];
        let (y, _) = ln.forward(x.view());
        for row in y.rows() {
            assert!(row.sum().abs() < 1e-12);
            let var = row.mapv(|v| v * v).sum() / 4.0;
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn batch_norm_eval_is_affine() {
        let mut bn = BatchNorm::new(2);
        bn.running_mean = array![1.0, -1.0];
        bn.running_var = array![4.0, 1.0];
        let (y, _) = bn.forward_eval(array![[3.0, 0.0]].view());
        assert!((y[[0, 0]] - 2.0 / (4.0 + BatchNorm::EPS).sqrt()).abs() < 1e-12);
        assert!((y[[0, 1]] - 1.0 / (1.0 + BatchNorm::EPS).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_running_update_uses_momentum() {
        let mut bn = BatchNorm::new(1);
        let (_, _, stats) = bn.forward_train(array![[1.0], [3.0]].view());
        bn.update_running(&stats);
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-12);
        // unbiased batch variance 2.0
        assert!((bn.running_var[0] - (0.9 + 0.2)).abs() < 1e-12);
    }
}
