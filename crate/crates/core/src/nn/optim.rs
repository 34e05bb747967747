use super::params::{zip_apply, Params};

/// Adam with decoupled weight decay.
///
/// Updated values are rounded to `f32` so that a model always equals its
/// serialized form.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every tensor for which `trainable(name)` holds. Frozen
    /// tensors are left untouched, including weight decay.
    pub fn step<P: Params>(&mut self, params: &mut P, grads: &P, trainable: impl Fn(&str) -> bool) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (lr, eps, wd) = (self.lr, self.eps, self.weight_decay);
        let moments = &mut self.moments;
        let mut idx = 0;
        zip_apply(params, grads, |name, p, g| {
            if moments.len() <= idx {
                moments.push((vec![0.0; p.len()], vec![0.0; p.len()]));
            }
            let (m, v) = &mut moments[idx];
            idx += 1;
            if !trainable(name) {
                return;
            }
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                p[i] = (p[i] - lr * (update + wd * p[i])) as f32 as f64;
            }
        });
    }
}
