use super::params::{Gradients, ParamStore};
use super::tensor::Real;

/// Adam with bias correction. Parameters that received no gradient in a step
/// are left untouched.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) {
        if self.m.is_empty() {
            self.m = store.entries().iter().map(|e| vec![T::zero(); e.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let lr_t = T::lit(self.lr * c2.sqrt() / c1);
        let eps_t = T::lit(self.eps * c2.sqrt());
        let ids: Vec<_> = store.trainable_ids().collect();
        for id in ids {
            let Some(g) = grads.get(store, id) else { continue };
            let g = g.data().to_vec();
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                p[i] -= lr_t * m[i] / (v[i].sqrt() + eps_t);
            }
        }
    }
}
