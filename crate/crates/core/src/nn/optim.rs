use super::params::ParamStore;
use super::tensor::{Real, Tensor};

/// Adaptive moment estimation with bias correction.
pub struct Adam<T: Real> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        let zeros = |id| Tensor::zeros(&store.get(id).shape);
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: (0..store.len()).map(zeros).collect(),
            v: (0..store.len()).map(zeros).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) {
        assert_eq!(grads.len(), store.len());
        self.step += 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one = T::one();
        let c1 = T::of(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.step as i32));
        let lr = T::of(self.lr);
        let eps = T::of(self.eps);
        for (id, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            let p = store.get_mut(id);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (one - b1) * gi;
                v.data[i] = b2 * v.data[i] + (one - b2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] = p.data[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Plain gradient descent, used by overfit checks where monotone decrease matters.
pub fn sgd_step<T: Real>(store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) {
    let lr = T::of(lr);
    for (id, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            let p = store.get_mut(id);
            for (x, &d) in p.data.iter_mut().zip(&g.data) {
                *x = *x - lr * d;
            }
        }
    }
}
