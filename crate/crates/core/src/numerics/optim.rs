use super::array::{NdArray, Scalar};
use super::param::{ParamId, ParamStore};
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// AdamW with decoupled weight decay. Moments are kept per parameter in the
/// store's parameter order.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    first: Vec<NdArray<T>>,
    second: Vec<NdArray<T>>,
    step: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, config: AdamWConfig) -> Self {
        let zeros = |s: &ParamStore<T>| -> Vec<NdArray<T>> {
            s.iter().map(|(_, p)| NdArray::zeros(p.value.shape())).collect()
        };
        Self {
            config,
            first: zeros(store),
            second: zeros(store),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: ParamId) -> &NdArray<T> {
        &self.first[id.0]
    }

    pub fn second_moment(&self, id: ParamId) -> &NdArray<T> {
        &self.second[id.0]
    }

    /// One update of every parameter from its accumulated `grad`.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        let all: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        self.step_only(store, lr, &all)
    }

    /// One update restricted to `ids`; other parameters and their moments are
    /// left untouched.
    pub fn step_only(&mut self, store: &mut ParamStore<T>, lr: f64, ids: &[ParamId]) -> Result<()> {
        ensure!(
            store.len() == self.first.len(),
            Contract,
            "optimizer built for {} parameters, store has {}",
            self.first.len(),
            store.len()
        );
        for &id in ids {
            let p = store.get(id);
            ensure!(
                p.grad.is_finite(),
                Numeric,
                "non-finite gradient for parameter {}",
                p.name
            );
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2, eps) = (T::lit(c.beta1), T::lit(c.beta2), T::lit(c.eps));
        let decay = T::lit(1.0 - lr * c.weight_decay);
        let (lr_t, bc1_t, bc2_t) = (T::lit(lr), T::lit(bc1), T::lit(bc2));
        for &id in ids {
            let p = store.get_mut(id);
            let m = self.first[id.0].data_mut();
            let v = self.second[id.0].data_mut();
            let g = p.grad.data();
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                m[k] = b1 * m[k] + (T::one() - b1) * g[k];
                v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
                let mhat = m[k] / bc1_t;
                let vhat = v[k] / bc2_t;
                *w = *w * decay - lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
