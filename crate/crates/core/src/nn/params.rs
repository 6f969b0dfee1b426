use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

static NEXT_STORE_UID: AtomicU64 = AtomicU64::new(1);

fn fresh_uid() -> u64 {
    NEXT_STORE_UID.fetch_add(1, Ordering::Relaxed)
}

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub value: Array2<f64>,
    pub(crate) adam_m: Array2<f64>,
    pub(crate) adam_v: Array2<f64>,
}

impl Tensor {
    pub fn adam_moments(&self) -> (&Array2<f64>, &Array2<f64>) {
        (&self.adam_m, &self.adam_v)
    }
}

/// Named trainable tensors plus their Adam state.
///
/// Every store carries a process-unique id so a single gradient tape can
/// record parameters from several stores and hand each its own gradients.
#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    tensors: Vec<Tensor>,
    step: u64,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        ParamStore {
            uid: fresh_uid(),
            tensors: self.tensors.clone(),
            step: self.step,
        }
    }
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.tensors == other.tensors && self.step == other.step
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            uid: fresh_uid(),
            tensors: Vec::new(),
            step: 0,
        }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let dim = value.dim();
        self.tensors.push(Tensor {
            name: name.into(),
            value,
            adam_m: Array2::zeros(dim),
            adam_v: Array2::zeros(dim),
        });
        ParamId(self.tensors.len() - 1)
    }

    /// Xavier-uniform weight matrix of shape `(fan_in, fan_out)`.
    pub fn add_xavier<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let value = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..=bound));
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.tensors[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.tensors[id.0].value
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    /// Adam step counter.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub(crate) fn set_moments(&mut self, id: ParamId, m: Array2<f64>, v: Array2<f64>) -> Result<()> {
        let t = &mut self.tensors[id.0];
        if m.dim() != t.value.dim() || v.dim() != t.value.dim() {
            return Err(Error::input(format!("moment shape mismatch for {}", t.name)));
        }
        t.adam_m = m;
        t.adam_v = v;
        Ok(())
    }

    /// Overwrites all parameter values with those of `other`, which must have
    /// the same layout. Optimizer state is left untouched.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::config("parameter store layouts differ"));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            if a.value.dim() != b.value.dim() {
                return Err(Error::config(format!("shape mismatch for {}", a.name)));
            }
            a.value.assign(&b.value);
        }
        Ok(())
    }
}

/// Gradients for one [`ParamStore`], aligned with its tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub(crate) grads: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            grads: store.tensors.iter().map(|t| Array2::zeros(t.value.dim())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.grads.iter()
    }

    pub fn is_all_zero(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|&v| v == 0.0))
    }
}
