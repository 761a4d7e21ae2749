use crate::error::{shape_err, Result};
use crate::param::ParamStore;
use crate::tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub config: AdamConfig,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    step: u64,
}

impl<F: Real> Adam<F> {
    pub fn new(store: &ParamStore<F>, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape()))
                .collect()
        };
        Adam {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Scalars the optimiser updates, one per first-moment entry.
    pub fn state_len(&self) -> usize {
        self.m.iter().map(Tensor::numel).sum()
    }

    /// One update with learning rate `lr`; `grads` are in store order.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[Tensor<F>], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || store.len() != self.m.len() {
            return Err(shape_err!(
                "{} gradients for {} parameters (optimizer tracks {})",
                grads.len(),
                store.len(),
                self.m.len()
            ));
        }
        for (id, g) in store.ids().zip(grads) {
            if g.shape() != store.get(id).shape() || g.shape() != self.m[id.index()].shape() {
                return Err(shape_err!(
                    "{}: gradient {:?} vs parameter {:?}",
                    store.name(id),
                    g.shape(),
                    store.get(id).shape()
                ));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let (b1, b2, e) = (F::of(beta1), F::of(beta2), F::of(eps));
        let step_size = F::of(lr / c1);
        let rc2 = F::of(1.0 / c2.sqrt());
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (F::one() - b1) * g[k];
                v[k] = b2 * v[k] + (F::one() - b2) * g[k] * g[k];
                p[k] -= step_size * m[k] / (v[k].sqrt() * rc2 + e);
            }
        }
        Ok(())
    }
}
