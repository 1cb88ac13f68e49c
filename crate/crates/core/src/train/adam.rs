//! Adam with bias correction: m ← β₁m + (1−β₁)g, v ← β₂v + (1−β₂)g²,
//! update −lr·m̂/(√v̂ + ε).

use crate::tensor::{Gradients, ParamStore, Real};

pub struct Adam<F: Real> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(lr: f64) -> Self {
        Adam::with_hyper(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &Gradients<F>) {
        if self.m.is_empty() {
            self.m = (0..store.len()).map(|id| vec![F::zero(); store.get(id).len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one = F::one();
        let bc1 = F::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = F::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr = F::from_f64(self.lr);
        let eps = F::from_f64(self.eps);

        for id in 0..store.len() {
            let g = grads.get(id);
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            let data = store.data_mut(id);
            for i in 0..data.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let update = lr * m_hat / (v_hat.sqrt() + eps);
                // Exact no-op when the update is zero (lr = 0 or a
                // frozen/unused coordinate) so parameters stay bitwise
                // identical.
                if update != F::zero() {
                    data[i] -= update;
                }
            }
        }
    }
}
