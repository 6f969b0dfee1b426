use ndarray::{concatenate, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{dropout_mask, timestep_embedding, DenseMatrix, Mlp, ParamStore, Tape, Var};
use crate::schedule::NoiseSchedule;

pub const EMBED_DIM: usize = 10;

/// What the network regresses onto.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Objective {
    /// Predict the clean vector directly.
    #[default]
    X0,
    /// Predict the injected Gaussian noise.
    Eps,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::X0 => "x0",
            Objective::Eps => "eps",
        })
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x0" | "x0_elbo" => Ok(Objective::X0),
            "eps" | "eps_elbo" => Ok(Objective::Eps),
            other => Err(Error::config(format!("unknown objective {other:?}"))),
        }
    }
}

/// MLP over `[x_t, emb(t)]` with the hidden stack mirrored around its
/// narrowest layer: `hidden = [200, 600]` gives `n+10 -> 600 -> 200 -> 600 -> n`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserNet {
    store: ParamStore,
    mlp: Mlp,
    dim: usize,
    hidden: Vec<usize>,
    dropout: f64,
    objective: Objective,
}

/// Layer widths for an input of width `dim`.
pub fn layer_dims(dim: usize, hidden: &[usize]) -> Vec<usize> {
    let mut dims = vec![dim + EMBED_DIM];
    dims.extend(hidden.iter().rev());
    dims.extend(hidden.iter().skip(1));
    dims.push(dim);
    dims
}

/// Trainable scalar count of a denoiser, without building it.
pub fn denoiser_param_count(dim: usize, hidden: &[usize]) -> usize {
    layer_dims(dim, hidden).windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl DenoiserNet {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        hidden: &[usize],
        dropout: f64,
        objective: Objective,
        rng: &mut R,
    ) -> Result<Self> {
        Self::check(dim, dropout)?;
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "denoiser", &layer_dims(dim, hidden), rng)?;
        Ok(Self::assemble(store, mlp, dim, hidden, dropout, objective))
    }

    /// All-zero parameters; predicts 0 everywhere.
    pub fn zeroed(dim: usize, hidden: &[usize], dropout: f64, objective: Objective) -> Result<Self> {
        Self::check(dim, dropout)?;
        let mut store = ParamStore::new();
        let mlp = Mlp::zeroed(&mut store, "denoiser", &layer_dims(dim, hidden))?;
        Ok(Self::assemble(store, mlp, dim, hidden, dropout, objective))
    }

    fn check(dim: usize, dropout: f64) -> Result<()> {
        if dim == 0 {
            return Err(Error::config("denoiser input width must be positive"));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::config(format!("dropout must lie in [0, 1), got {dropout}")));
        }
        Ok(())
    }

    fn assemble(store: ParamStore, mlp: Mlp, dim: usize, hidden: &[usize], dropout: f64, objective: Objective) -> Self {
        DenoiserNet {
            store,
            mlp,
            dim,
            hidden: hidden.to_vec(),
            dropout,
            objective,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params()
    }

    /// Replaces all parameter values (and optimizer state) with `store`'s,
    /// which must have the same layout.
    pub fn load_store(&mut self, store: ParamStore) -> Result<()> {
        let mut probe = self.store.clone();
        probe.copy_values_from(&store)?;
        self.store = store;
        Ok(())
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.dim {
            return Err(Error::config(format!(
                "input has {cols} columns, denoiser expects {}",
                self.dim
            )));
        }
        Ok(())
    }

    fn embeddings(&self, steps: &[usize]) -> Result<Array2<f64>> {
        let mut emb = Array2::zeros((steps.len(), EMBED_DIM));
        for (r, &t) in steps.iter().enumerate() {
            let e = timestep_embedding(t as f64, EMBED_DIM)?;
            emb.row_mut(r).assign(&ndarray::ArrayView1::from(&e));
        }
        Ok(emb)
    }

    /// Raw network output for one step index per row.
    pub fn output<R: Rng + ?Sized>(
        &self,
        x_t: &Array2<f64>,
        steps: &[usize],
        train_mode: bool,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        let mask = if train_mode { self.sample_mask(x_t.nrows(), rng) } else { None };
        self.output_masked(x_t, steps, mask.as_ref())
    }

    /// Eval-mode output.
    pub fn output_eval(&self, x_t: &Array2<f64>, steps: &[usize]) -> Result<Array2<f64>> {
        self.output_masked(x_t, steps, None)
    }

    fn output_masked(&self, x_t: &Array2<f64>, steps: &[usize], mask: Option<&Array2<f64>>) -> Result<Array2<f64>> {
        self.check_input(x_t.ncols())?;
        if steps.len() != x_t.nrows() {
            return Err(Error::config("one step index per row required"));
        }
        let emb = self.embeddings(steps)?;
        let input = match mask {
            Some(m) => concatenate(Axis(1), &[(x_t * m).view(), emb.view()]),
            None => concatenate(Axis(1), &[x_t.view(), emb.view()]),
        }
        .map_err(|e| Error::config(e.to_string()))?;
        self.mlp.predict(&self.store, &input)
    }

    /// Recording forward pass. `mask` is an optional input-dropout mask
    /// applied to `x_t` before the step embedding is appended.
    pub fn record(&self, tape: &mut Tape, x_t: Var, steps: &[usize], mask: Option<Array2<f64>>) -> Result<Var> {
        let (rows, cols) = tape.value(x_t).dim();
        self.check_input(cols)?;
        if steps.len() != rows {
            return Err(Error::config("one step index per row required"));
        }
        let x = match mask {
            Some(m) => {
                let m = tape.constant(m);
                tape.mul(x_t, m)?
            }
            None => x_t,
        };
        let emb = tape.constant(self.embeddings(steps)?);
        let input = tape.concat_cols(&[x, emb])?;
        self.mlp.forward(tape, &self.store, input)
    }

    /// Fresh dropout mask for a training batch, or `None` when dropout is off.
    pub fn sample_mask<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Option<Array2<f64>> {
        (self.dropout > 0.0).then(|| dropout_mask(rows, self.dim, self.dropout, rng))
    }

    /// Clean-vector estimate from `x_t` at a single step; converts a noise
    /// prediction back through the forward marginal when needed.
    pub fn predict_x0(&self, sched: &NoiseSchedule, x_t: &Array2<f64>, t: usize) -> Result<Array2<f64>> {
        let steps = vec![t; x_t.nrows()];
        let out = self.output_eval(x_t, &steps)?;
        Ok(match self.objective {
            Objective::X0 => out,
            Objective::Eps => {
                let a = sched.abar(t).sqrt();
                let b = sched.one_minus_abar(t).sqrt();
                (x_t - &(out * b)) / a
            }
        })
    }
}

/// Network prediction at step `t` (the clean-vector estimate for the x0
/// objective, the noise estimate for the eps objective).
pub fn denoise<R: Rng + ?Sized>(
    net: &DenoiserNet,
    x_t: &DenseMatrix,
    t: usize,
    train_mode: bool,
    rng: &mut R,
) -> Result<DenseMatrix> {
    let steps = vec![t; x_t.rows()];
    let out = DenseMatrix::from_array_unchecked(net.output(x_t.as_array(), &steps, train_mode, rng)?);
    out.ensure_finite("denoiser output")?;
    Ok(out)
}
