use ndarray::Array2;
use rand::Rng;

use super::matrix::DenseMatrix;
use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
        }
    }

    fn record(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(v),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn num_params(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

/// Feed-forward stack; the activation follows every layer except the last.
/// Weights are stored as `(fan_in, fan_out)` so a batch computes `x W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// Registers Xavier-uniform weights and zero biases for `dims[0] -> ... -> dims[n]`.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dims: &[usize], rng: &mut R) -> Result<Self> {
        Self::build(store, prefix, dims, |s, name, i, o| s.add_xavier(name, i, o, rng))
    }

    /// Same layout with every weight set to zero.
    pub fn zeroed(store: &mut ParamStore, prefix: &str, dims: &[usize]) -> Result<Self> {
        Self::build(store, prefix, dims, |s, name, i, o| s.add_zeros(name, i, o))
    }

    fn build(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        mut weight: impl FnMut(&mut ParamStore, String, usize, usize) -> ParamId,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::config(format!("invalid layer dims {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear {
                weight: weight(store, format!("{prefix}.{i}.weight"), w[0], w[1]),
                bias: store.add_zeros(format!("{prefix}.{i}.bias"), 1, w[1]),
                fan_in: w[0],
                fan_out: w[1],
            })
            .collect();
        Ok(Mlp {
            layers,
            activation: Activation::Tanh,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Linear::num_params).sum()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.in_dim() {
            return Err(Error::config(format!(
                "input has {cols} columns, first layer expects {}",
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Inference-path forward pass without recording gradients.
    pub fn predict(&self, store: &ParamStore, input: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(input.ncols())?;
        let last = self.layers.len() - 1;
        let mut h = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(store.get(layer.weight)) + store.get(layer.bias);
            if i < last {
                h.mapv_inplace(|v| self.activation.apply(v));
            }
        }
        Ok(h)
    }

    /// Recording forward pass.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var> {
        self.check_input(tape.value(input).ncols())?;
        let last = self.layers.len() - 1;
        let mut h = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.param(store, layer.weight);
            let b = tape.param(store, layer.bias);
            h = tape.matmul(h, w)?;
            h = tape.add_row(h, b)?;
            if i < last {
                h = self.activation.record(tape, h);
            }
        }
        Ok(h)
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise `1/(1-p)`.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < p { 0.0 } else { keep })
}

/// MLP forward pass with input dropout during training.
pub fn mlp_forward<R: Rng + ?Sized>(
    store: &ParamStore,
    mlp: &Mlp,
    input: &DenseMatrix,
    dropout_p: f64,
    train_mode: bool,
    rng: &mut R,
) -> Result<DenseMatrix> {
    if !(0.0..1.0).contains(&dropout_p) {
        return Err(Error::config(format!("dropout must lie in [0, 1), got {dropout_p}")));
    }
    mlp.check_input(input.cols())?;
    let out = if train_mode && dropout_p > 0.0 {
        let mask = dropout_mask(input.rows(), input.cols(), dropout_p, rng);
        mlp.predict(store, &(input.as_array() * &mask))?
    } else {
        mlp.predict(store, input.as_array())?
    };
    let out = DenseMatrix::from_array_unchecked(out);
    out.ensure_finite("mlp output")?;
    Ok(out)
}
