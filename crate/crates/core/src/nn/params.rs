//! Named parameter traversal shared by serialization, optimizers and gradient checks.
//!
//! Every model component implements [`Params`]; gradients are stored in a
//! value of the same type so names and shapes line up by construction.

use ndarray::{Array, Dimension};

/// Visitor over named tensors: `(name, shape, data)`.
pub type Visit<'a> = dyn FnMut(&str, &[usize], &[f64]) + 'a;
pub type VisitMut<'a> = dyn FnMut(&str, &[usize], &mut [f64]) + 'a;

pub trait Params {
    /// Trainable tensors.
    fn visit(&self, prefix: &str, f: &mut Visit<'_>);
    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>);

    /// Non-trainable state that still has to be persisted (running statistics).
    fn visit_buffers(&self, _prefix: &str, _f: &mut Visit<'_>) {}
    fn visit_buffers_mut(&mut self, _prefix: &str, _f: &mut VisitMut<'_>) {}
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn visit_array<D: Dimension>(name: &str, a: &Array<f64, D>, f: &mut Visit<'_>) {
    f(name, a.shape(), a.as_slice().expect("parameters are contiguous"));
}

pub(crate) fn visit_array_mut<D: Dimension>(name: &str, a: &mut Array<f64, D>, f: &mut VisitMut<'_>) {
    let shape = a.shape().to_vec();
    f(name, &shape, a.as_slice_mut().expect("parameters are contiguous"));
}

impl<T: Params> Params for Vec<T> {
    fn visit(&self, prefix: &str, f: &mut Visit<'_>) {
        for (i, item) in self.iter().enumerate() {
            item.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        for (i, item) in self.iter_mut().enumerate() {
            item.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut Visit<'_>) {
        for (i, item) in self.iter().enumerate() {
            item.visit_buffers(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut VisitMut<'_>) {
        for (i, item) in self.iter_mut().enumerate() {
            item.visit_buffers_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// Names and shapes of all trainable tensors, in visiting order.
pub fn param_shapes(p: &impl Params) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    p.visit("", &mut |n, s, _| out.push((n.to_string(), s.to_vec())));
    out
}

pub fn param_count(p: &impl Params) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, _, d| n += d.len());
    n
}

/// Flattened copy of all trainable values in visiting order.
pub fn flatten(p: &impl Params) -> Vec<f64> {
    let mut out = Vec::new();
    p.visit("", &mut |_, _, d| out.extend_from_slice(d));
    out
}

/// Applies `f(name, param, grad)` to every trainable tensor of `params` with the
/// matching tensor of `grads`.
pub fn zip_apply<P: Params>(params: &mut P, grads: &P, mut f: impl FnMut(&str, &mut [f64], &[f64])) {
    let mut flat = Vec::new();
    grads.visit("", &mut |_, _, d| flat.push(d.to_vec()));
    let mut it = flat.into_iter();
    params.visit_mut("", &mut |name, _, d| {
        let g = it.next().expect("gradient structure matches parameters");
        f(name, d, &g);
    });
}

pub fn fill<P: Params>(p: &mut P, value: f64) {
    p.visit_mut("", &mut |_, _, d| d.iter_mut().for_each(|x| *x = value));
}

/// A structure of the same shape as `p` with every trainable value zeroed.
pub fn zeros_like<P: Params + Clone>(p: &P) -> P {
    let mut z = p.clone();
    fill(&mut z, 0.0);
    z
}

/// `acc += other` over all trainable tensors.
pub fn add_assign<P: Params>(acc: &mut P, other: &P) {
    zip_apply(acc, other, |_, a, b| a.iter_mut().zip(b).for_each(|(x, y)| *x += y));
}

pub fn scale<P: Params>(p: &mut P, factor: f64) {
    p.visit_mut("", &mut |_, _, d| d.iter_mut().for_each(|x| *x *= factor));
}

/// Rounds every stored value (trainable and buffers) to the nearest `f32`, the
/// precision of the weight container.
pub fn round_to_f32<P: Params>(p: &mut P) {
    let mut r = |_: &str, _: &[usize], d: &mut [f64]| d.iter_mut().for_each(|x| *x = *x as f32 as f64);
    p.visit_mut("", &mut r);
    p.visit_buffers_mut("", &mut r);
}
