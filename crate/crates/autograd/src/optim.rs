//! Adam with standard bias correction.

use crate::element::Element;
use crate::error::{invalid, Result, TensorError};
use crate::nn::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Per-parameter first/second moments. Non-trainable parameters keep empty moments.
#[derive(Debug, Clone)]
pub struct Adam<E> {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<E>>,
    second: Vec<Vec<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(store: &ParamStore<E>, config: AdamConfig) -> Self {
        let sizes: Vec<usize> = store
            .iter()
            .map(|(_, p)| if p.trainable { p.value.len() } else { 0 })
            .collect();
        Self {
            config,
            step: 0,
            first: sizes.iter().map(|&n| vec![E::zero(); n]).collect(),
            second: sizes.iter().map(|&n| vec![E::zero(); n]).collect(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> (&[E], &[E]) {
        (&self.first[id.index()], &self.second[id.index()])
    }

    /// Applies one update. All gradients are checked before any parameter
    /// changes, so a non-finite gradient leaves the store and state untouched.
    pub fn step(&mut self, store: &mut ParamStore<E>, grads: &[(ParamId, Vec<E>)], lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(invalid("adam", format!("learning rate {lr} is not a finite non-negative number")));
        }
        for (id, g) in grads {
            let param = store.get(*id);
            if !param.trainable {
                return Err(invalid("adam", format!("`{}` is not trainable", param.name)));
            }
            if g.len() != param.value.len() {
                return Err(invalid("adam", format!("gradient for `{}` has the wrong length", param.name)));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFiniteGradient {
                    name: param.name.clone(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2): (E, E) = (E::from_f64_lossy(beta1), E::from_f64_lossy(beta2));
        let (one_b1, one_b2) = (E::one() - b1, E::one() - b2);
        let (inv_c1, inv_c2) = (E::from_f64_lossy(1.0 / c1), E::from_f64_lossy(1.0 / c2));
        let (lr_e, eps) = (E::from_f64_lossy(lr), E::from_f64_lossy(epsilon));
        for (id, g) in grads {
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            let values = store.get_mut(*id).value.data_mut();
            for i in 0..g.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let m_hat = m[i] * inv_c1;
                let v_hat = v[i] * inv_c2;
                values[i] = values[i] - lr_e * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
