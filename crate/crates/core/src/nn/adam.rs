use std::collections::HashMap;

use ndarray::ArrayD;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct ParamState<F: Scalar> {
    m: ArrayD<F>,
    v: ArrayD<F>,
    t: u64,
}

/// Adam with bias correction, keyed by parameter name so state survives
/// across epochs and can be selectively dropped when a parameter is
/// re-initialized (e.g. when the cluster count changes).
pub struct Adam<F: Scalar> {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    state: HashMap<String, ParamState<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: HashMap::new(),
        }
    }

    pub fn zero_grad(&self, params: &[(String, Tensor<F>)]) {
        for (_, p) in params {
            p.zero_grad();
        }
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &[(String, Tensor<F>)]) {
        let b1 = F::of_f64(self.beta1);
        let b2 = F::of_f64(self.beta2);
        let one = F::one();
        let lr = F::of_f64(self.lr);
        let eps = F::of_f64(self.eps);
        for (name, p) in params {
            let Some(g) = p.grad() else { continue };
            let st = self.state.entry(name.clone()).or_insert_with(|| ParamState {
                m: ArrayD::zeros(g.raw_dim()),
                v: ArrayD::zeros(g.raw_dim()),
                t: 0,
            });
            st.t += 1;
            st.m.zip_mut_with(&g, |m, &g| *m = b1 * *m + (one - b1) * g);
            st.v.zip_mut_with(&g, |v, &g| *v = b2 * *v + (one - b2) * g * g);
            let c1 = one - F::of_f64(self.beta1.powi(st.t as i32));
            let c2 = one - F::of_f64(self.beta2.powi(st.t as i32));
            let (m, v) = (&st.m, &st.v);
            p.with_value_mut(|w| {
                ndarray::Zip::from(w).and(m).and(v).for_each(|w, &m, &v| {
                    let m_hat = m / c1;
                    let v_hat = v / c2;
                    *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
                });
            });
        }
    }

    /// Drops optimizer state for parameters whose name starts with `prefix`.
    pub fn forget_prefix(&mut self, prefix: &str) {
        self.state.retain(|k, _| !k.starts_with(prefix));
    }
}
