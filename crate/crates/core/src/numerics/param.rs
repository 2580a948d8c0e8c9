use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::array::{NdArray, Scalar};
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: NdArray<T>,
    pub grad: NdArray<T>,
}

/// Named learnable arrays of one model. Insertion order is the canonical
/// parameter order (used by checkpoints and gradient reductions).
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: NdArray<T>) -> Result<ParamId> {
        let name = name.into();
        ensure!(
            !self.index.contains_key(&name),
            Contract,
            "duplicate parameter name {name:?}"
        );
        let id = ParamId(self.params.len());
        let grad = NdArray::zeros(value.shape());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &NdArray<T> {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// `grad += scale * g` for every parameter, in parameter order.
    pub fn accumulate(&mut self, grads: &Gradients<T>, scale: T) {
        for (p, g) in self.params.iter_mut().zip(&grads.0) {
            for (a, &b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *a = *a + scale * b;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Per-parameter gradients produced by one backward pass, aligned with the
/// store's parameter order.
#[derive(Clone, Debug)]
pub struct Gradients<T>(pub Vec<NdArray<T>>);

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Gradients(store.iter().map(|(_, p)| NdArray::zeros(p.value.shape())).collect())
    }

    pub fn get(&self, id: ParamId) -> &NdArray<T> {
        &self.0[id.0]
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(NdArray::is_finite)
    }
}

/// Truncated normal at ±2σ, resampled.
pub fn trunc_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> NdArray<T> {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            data.push(T::lit(z * std));
        }
    }
    NdArray::from_vec(shape, data).expect("shape matches")
}
