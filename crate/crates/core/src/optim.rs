//! Adam with decoupled weight decay, plus global-norm gradient clipping.
//! One optimizer instance serves multiple learning-rate groups via a
//! name-to-lr closure; weight decay skips 1-d parameters (biases, norm gains).

use crate::nn::ParamStore;
use crate::scalar::Scalar;
use ndarray::ArrayD;
use std::collections::BTreeMap;

pub type GradMap<S> = BTreeMap<String, ArrayD<S>>;

pub struct AdamW<S: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: BTreeMap<String, ArrayD<S>>,
    v: BTreeMap<String, ArrayD<S>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Global L2 norm over all gradients (accumulated in f64).
    pub fn global_norm(grads: &GradMap<S>) -> f64 {
        grads
            .values()
            .flat_map(|g| g.iter())
            .map(|&x| {
                let v = x.to_f();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Clip to `max_norm` in place; returns the pre-clip norm.
    pub fn clip_global_norm(grads: &mut GradMap<S>, max_norm: f64) -> f64 {
        let norm = Self::global_norm(grads);
        if norm > max_norm && norm > 0.0 {
            let scale = S::from_f(max_norm / norm);
            for g in grads.values_mut() {
                g.mapv_inplace(|x| x * scale);
            }
        }
        norm
    }

    /// One update. `lr_for` maps a parameter name to its learning rate.
    /// Missing grads are treated as zero (parameter untouched except decay is
    /// also skipped — an unused parameter this step stays exactly put).
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &GradMap<S>, lr_for: &dyn Fn(&str) -> f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let b1 = S::from_f(self.beta1);
        let b2 = S::from_f(self.beta2);
        let one_m_b1 = S::from_f(1.0 - self.beta1);
        let one_m_b2 = S::from_f(1.0 - self.beta2);
        for (name, g) in grads {
            let Some(p) = store.get_mut(name) else {
                panic!("gradient for unknown parameter {name}");
            };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = b1 * *m + one_m_b1 * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = b2 * *v + one_m_b2 * g * g;
            });
            let lr = lr_for(name);
            let decay = if p.ndim() >= 2 { self.weight_decay } else { 0.0 };
            let lr_s = S::from_f(lr);
            let wd_s = S::from_f(lr * decay);
            let inv_bc1 = S::from_f(1.0 / bc1);
            let inv_bc2_sqrt = S::from_f(1.0 / bc2.sqrt());
            let eps = S::from_f(self.eps);
            ndarray::Zip::from(&mut *p)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let mhat = m * inv_bc1;
                    let vhat_sqrt = (v.sqrt() * inv_bc2_sqrt) + eps;
                    *p = *p - lr_s * mhat / vhat_sqrt - wd_s * *p;
                });
        }
    }
}
