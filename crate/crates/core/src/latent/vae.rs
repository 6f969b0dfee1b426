use ndarray::{Array2, Axis};
use rand::Rng;

use super::cluster::ClusterModel;
use crate::diffusion::gaussian;
use crate::error::{Error, Result};
use crate::nn::{DenseMatrix, Mlp, ParamStore, Tape, Var};

pub const LOGVAR_BOUND: f64 = 10.0;

/// Where the decoder's softmax normalizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Likelihood {
    /// Separate multinomial per category.
    #[default]
    PerCategory,
    /// One multinomial over all items.
    Global,
}

impl std::fmt::Display for Likelihood {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Likelihood::PerCategory => "category",
            Likelihood::Global => "global",
        })
    }
}

impl std::str::FromStr for Likelihood {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "category" => Ok(Likelihood::PerCategory),
            "global" => Ok(Likelihood::Global),
            other => Err(Error::config(format!("unknown likelihood {other:?}"))),
        }
    }
}

/// Encoder `|I_c| -> h -> 2 l_c` and decoder `l_c -> h -> |I_c|` for every
/// category `c`, all in one parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeStack {
    store: ParamStore,
    clusters: ClusterModel,
    encoders: Vec<Mlp>,
    decoders: Vec<Mlp>,
    hidden: usize,
    likelihood: Likelihood,
}

/// Per-category hidden width for a total budget.
pub fn category_hidden(hidden_total: usize, categories: usize) -> usize {
    (hidden_total / categories.max(1)).max(1)
}

/// Trainable scalars of one category's encoder and decoder.
pub fn vae_param_counts(items: usize, latent: usize, hidden: usize) -> (usize, usize) {
    let enc = items * hidden + hidden + hidden * 2 * latent + 2 * latent;
    let dec = latent * hidden + hidden + hidden * items + items;
    (enc, dec)
}

/// Encoder output for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    /// Concatenated latent, `rows x latent_total`.
    pub z0: DenseMatrix,
    pub mu: Vec<Array2<f64>>,
    pub sigma: Vec<Array2<f64>>,
    /// Noise used by the reparameterized draw, `None` when deterministic.
    pub eps: Option<Vec<Array2<f64>>>,
}

/// Tape handles from a recorded encode.
pub struct RecordedEncode {
    pub z0: Var,
    pub mu: Vec<Var>,
    pub logvar: Vec<Var>,
}

impl VaeStack {
    fn build(
        clusters: &ClusterModel,
        hidden_total: usize,
        likelihood: Likelihood,
        mut make: impl FnMut(&mut ParamStore, &str, &[usize]) -> Result<Mlp>,
    ) -> Result<Self> {
        let hidden = category_hidden(hidden_total, clusters.n_categories());
        let mut store = ParamStore::new();
        let mut encoders = Vec::new();
        let mut decoders = Vec::new();
        for c in 0..clusters.n_categories() {
            let (n, l) = (clusters.members(c).len(), clusters.latent_dims()[c]);
            encoders.push(make(&mut store, &format!("enc{c}"), &[n, hidden, 2 * l])?);
            decoders.push(make(&mut store, &format!("dec{c}"), &[l, hidden, n])?);
        }
        Ok(VaeStack {
            store,
            clusters: clusters.clone(),
            encoders,
            decoders,
            hidden,
            likelihood,
        })
    }

    pub fn new<R: Rng + ?Sized>(clusters: &ClusterModel, hidden_total: usize, likelihood: Likelihood, rng: &mut R) -> Result<Self> {
        Self::build(clusters, hidden_total, likelihood, |s, p, d| Mlp::new(s, p, d, rng))
    }

    pub fn zeroed(clusters: &ClusterModel, hidden_total: usize, likelihood: Likelihood) -> Result<Self> {
        Self::build(clusters, hidden_total, likelihood, Mlp::zeroed)
    }

    pub fn clusters(&self) -> &ClusterModel {
        &self.clusters
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn likelihood(&self) -> Likelihood {
        self.likelihood
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoders(&self) -> &[Mlp] {
        &self.encoders
    }

    pub fn decoders(&self) -> &[Mlp] {
        &self.decoders
    }

    pub fn load_store(&mut self, store: ParamStore) -> Result<()> {
        let mut probe = self.store.clone();
        probe.copy_values_from(&store)?;
        self.store = store;
        Ok(())
    }

    pub fn encoder_params(&self) -> usize {
        self.encoders.iter().map(Mlp::num_params).sum()
    }

    pub fn decoder_params(&self) -> usize {
        self.decoders.iter().map(Mlp::num_params).sum()
    }

    fn check_items(&self, cols: usize) -> Result<()> {
        if cols != self.clusters.n_items() {
            return Err(Error::config(format!(
                "input has {cols} columns, expected {} items",
                self.clusters.n_items()
            )));
        }
        Ok(())
    }

    fn split(&self, x0: &Array2<f64>, c: usize) -> Array2<f64> {
        x0.select(Axis(1), self.clusters.members(c))
    }

    /// Splits `x0` by category and encodes every part. Deterministic mode
    /// returns the means; otherwise `z = mu + sigma * eps`.
    pub fn encode<R: Rng + ?Sized>(&self, x0: &DenseMatrix, rng: &mut R, deterministic: bool) -> Result<Encoded> {
        let eps = if deterministic {
            None
        } else {
            Some(
                self.clusters
                    .latent_dims()
                    .iter()
                    .map(|&l| gaussian(x0.rows(), l, rng))
                    .collect::<Vec<_>>(),
            )
        };
        self.encode_with(x0, eps)
    }

    /// Encode with explicit reparameterization noise (one matrix per category).
    pub fn encode_with(&self, x0: &DenseMatrix, eps: Option<Vec<Array2<f64>>>) -> Result<Encoded> {
        self.check_items(x0.cols())?;
        let mut mu = Vec::new();
        let mut sigma = Vec::new();
        let mut parts = Vec::new();
        for (c, enc) in self.encoders.iter().enumerate() {
            let l = self.clusters.latent_dims()[c];
            let h = enc.predict(&self.store, &self.split(x0.as_array(), c))?;
            let m = h.slice(ndarray::s![.., ..l]).to_owned();
            let s = h
                .slice(ndarray::s![.., l..])
                .mapv(|v| (0.5 * v.clamp(-LOGVAR_BOUND, LOGVAR_BOUND)).exp());
            let z = match &eps {
                Some(e) => {
                    if e[c].dim() != m.dim() {
                        return Err(Error::config("reparameterization noise has the wrong shape"));
                    }
                    &m + &(&s * &e[c])
                }
                None => m.clone(),
            };
            parts.push(z);
            mu.push(m);
            sigma.push(s);
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let z0 = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::config(e.to_string()))?;
        let z0 = DenseMatrix::from_array_unchecked(z0);
        z0.ensure_finite("latent")?;
        Ok(Encoded { z0, mu, sigma, eps })
    }

    /// Raw decoder logits scattered back to global item positions.
    pub fn decode(&self, z0: &DenseMatrix) -> Result<DenseMatrix> {
        if z0.cols() != self.clusters.latent_total() {
            return Err(Error::config(format!(
                "latent has {} columns, expected {}",
                z0.cols(),
                self.clusters.latent_total()
            )));
        }
        let mut out = Array2::zeros((z0.rows(), self.clusters.n_items()));
        for ((c, dec), start) in self.decoders.iter().enumerate().zip(self.clusters.latent_offsets()) {
            let l = self.clusters.latent_dims()[c];
            let z = z0.as_array().slice(ndarray::s![.., start..start + l]).to_owned();
            let logits = dec.predict(&self.store, &z)?;
            for (j, &item) in self.clusters.members(c).iter().enumerate() {
                out.column_mut(item).assign(&logits.column(j));
            }
        }
        let out = DenseMatrix::from_array_unchecked(out);
        out.ensure_finite("decoder output")?;
        Ok(out)
    }

    /// Records the encoder; `eps` (one matrix per category) selects the
    /// reparameterized draw, `None` the means.
    pub fn record_encode(&self, tape: &mut Tape, x0: &Array2<f64>, eps: Option<&[Array2<f64>]>) -> Result<RecordedEncode> {
        self.check_items(x0.ncols())?;
        let mut parts = Vec::new();
        let mut mus = Vec::new();
        let mut logvars = Vec::new();
        for (c, enc) in self.encoders.iter().enumerate() {
            let l = self.clusters.latent_dims()[c];
            let input = tape.constant(self.split(x0, c));
            let h = enc.forward(tape, &self.store, input)?;
            let mu = tape.slice_cols(h, 0, l)?;
            let raw = tape.slice_cols(h, l, 2 * l)?;
            let logvar = tape.clamp(raw, -LOGVAR_BOUND, LOGVAR_BOUND);
            let z = match eps {
                Some(e) => {
                    let half = tape.scale(logvar, 0.5);
                    let sd = tape.exp(half);
                    let e = tape.constant(e[c].clone());
                    let noise = tape.mul(sd, e)?;
                    tape.add(mu, noise)?
                }
                None => mu,
            };
            parts.push(z);
            mus.push(mu);
            logvars.push(logvar);
        }
        let z0 = tape.concat_cols(&parts)?;
        Ok(RecordedEncode {
            z0,
            mu: mus,
            logvar: logvars,
        })
    }

    /// Records the summed KL `1/2 sum(exp(lv) + mu^2 - 1 - lv)` over all
    /// categories and rows.
    pub fn record_kl(&self, tape: &mut Tape, enc: &RecordedEncode) -> Result<Var> {
        let mut total: Option<Var> = None;
        for (&mu, &lv) in enc.mu.iter().zip(&enc.logvar) {
            let (rows, cols) = tape.value(mu).dim();
            let ev = tape.exp(lv);
            let m2 = tape.mul(mu, mu)?;
            let a = tape.add(ev, m2)?;
            let b = tape.sub(a, lv)?;
            let s = tape.sum(b);
            let one = tape.constant(Array2::from_elem((1, 1), (rows * cols) as f64));
            let s = tape.sub(s, one)?;
            let kl = tape.scale(s, 0.5);
            total = Some(match total {
                Some(t) => tape.add(t, kl)?,
                None => kl,
            });
        }
        total.ok_or_else(|| Error::config("no categories"))
    }

    /// Records the summed multinomial log-likelihood of `x0` under the
    /// decoded logits of `z0`.
    pub fn record_log_likelihood(&self, tape: &mut Tape, z0: Var, x0: &Array2<f64>) -> Result<Var> {
        let offsets = self.clusters.latent_offsets();
        let mut logits = Vec::new();
        for ((c, dec), start) in self.decoders.iter().enumerate().zip(offsets) {
            let l = self.clusters.latent_dims()[c];
            let z = tape.slice_cols(z0, start, start + l)?;
            logits.push(dec.forward(tape, &self.store, z)?);
        }
        let parts: Vec<(Var, Array2<f64>)> = match self.likelihood {
            Likelihood::PerCategory => logits
                .iter()
                .enumerate()
                .map(|(c, &lg)| (tape.log_softmax_rows(lg), self.split(x0, c)))
                .collect(),
            Likelihood::Global => {
                let all = tape.concat_cols(&logits)?;
                let order: Vec<usize> = (0..self.clusters.n_categories())
                    .flat_map(|c| self.clusters.members(c).iter().copied())
                    .collect();
                vec![(tape.log_softmax_rows(all), x0.select(Axis(1), &order))]
            }
        };
        let mut total: Option<Var> = None;
        for (logp, x) in parts {
            let x = tape.constant(x);
            let prod = tape.mul(logp, x)?;
            let s = tape.sum(prod);
            total = Some(match total {
                Some(t) => tape.add(t, s)?,
                None => s,
            });
        }
        total.ok_or_else(|| Error::config("no categories"))
    }

    /// Records `mean_rows(-loglik + gamma * KL)` with a reparameterized draw.
    pub fn record_loss(&self, tape: &mut Tape, x0: &Array2<f64>, eps: &[Array2<f64>], gamma: f64) -> Result<(Var, RecordedEncode)> {
        let enc = self.record_encode(tape, x0, Some(eps))?;
        let ll = self.record_log_likelihood(tape, enc.z0, x0)?;
        let kl = self.record_kl(tape, &enc)?;
        let kl = tape.scale(kl, gamma);
        let neg = tape.sub(kl, ll)?;
        let loss = tape.scale(neg, 1.0 / x0.nrows().max(1) as f64);
        Ok((loss, enc))
    }

    /// Noise for one reparameterized draw.
    pub fn sample_eps<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Vec<Array2<f64>> {
        self.clusters.latent_dims().iter().map(|&l| gaussian(rows, l, rng)).collect()
    }
}

/// VAE loss value for a batch.
pub fn vae_loss<R: Rng + ?Sized>(stack: &VaeStack, x0: &DenseMatrix, rng: &mut R, gamma: f64) -> Result<f64> {
    if gamma < 0.0 {
        return Err(Error::config(format!("KL weight must be non-negative, got {gamma}")));
    }
    let eps = stack.sample_eps(x0.rows(), rng);
    let mut tape = Tape::new();
    let (loss, _) = stack.record_loss(&mut tape, x0.as_array(), &eps, gamma)?;
    Ok(tape.scalar(loss))
}

/// Closed-form `KL(N(mu, sigma^2) || N(0, 1))` summed over entries.
pub fn gaussian_kl(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(sigma)
        .map(|(m, s)| 0.5 * (s * s + m * m - 1.0 - (s * s).ln()))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> ClusterModel {
        ClusterModel::from_assignment(vec![0, 1, 0, 1, 1], 2, 4).unwrap()
    }

    #[test]
    fn kl_closed_form() {
        assert_eq!(gaussian_kl(&[0.0], &[1.0]), 0.0);
        assert!((gaussian_kl(&[1.0], &[1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_stack_encodes_to_zero_and_decodes_uniformly() {
        let s = VaeStack::zeroed(&toy(), 6, Likelihood::PerCategory).unwrap();
        let x = DenseMatrix::from_rows(&[vec![1.0, 0.0, 1.0, 1.0, 0.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = s.encode(&x, &mut rng, true).unwrap();
        assert_eq!(e.z0, DenseMatrix::zeros(1, 4));
        assert_eq!(s.decode(&e.z0).unwrap(), DenseMatrix::zeros(1, 5));
    }

    #[test]
    fn reparameterization_by_hand() {
        let cm = ClusterModel::from_assignment(vec![0, 0], 1, 2).unwrap();
        let mut s = VaeStack::zeroed(&cm, 2, Likelihood::PerCategory).unwrap();
        // output bias of the encoder: mu = (0.5, -1), logvar = (0, 2 ln 2)
        let bias = s.store().find("enc0.1.bias").unwrap();
        s.store_mut().get_mut(bias).assign(&ndarray::array![[0.5, -1.0, 0.0, 2.0 * 2f64.ln()]]);
        let x = DenseMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let eps = vec![ndarray::array![[2.0, 0.5]]];
        let e = s.encode_with(&x, Some(eps)).unwrap();
        assert!((e.z0.get(0, 0) - 2.5).abs() < 1e-12);
        assert!((e.z0.get(0, 1) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn scatter_follows_assignment() {
        let cm = toy();
        let mut s = VaeStack::zeroed(&cm, 6, Likelihood::PerCategory).unwrap();
        let b0 = s.store().find("dec0.1.bias").unwrap();
        let b1 = s.store().find("dec1.1.bias").unwrap();
        s.store_mut().get_mut(b0).assign(&ndarray::array![[10.0, 20.0]]);
        s.store_mut().get_mut(b1).assign(&ndarray::array![[1.0, 2.0, 3.0]]);
        let out = s.decode(&DenseMatrix::zeros(1, 4)).unwrap();
        assert_eq!(out.to_vec(), vec![10.0, 1.0, 20.0, 2.0, 3.0]);
    }

    #[test]
    fn empty_row_loss_is_kl_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = VaeStack::new(&toy(), 6, Likelihood::PerCategory, &mut rng).unwrap();
        let x = DenseMatrix::zeros(1, 5);
        let eps = s.sample_eps(1, &mut rng);
        let mut tape = Tape::new();
        let (loss, _) = s.record_loss(&mut tape, x.as_array(), &eps, 0.7).unwrap();
        let e = s.encode(&x, &mut rng, true).unwrap();
        let mu: Vec<f64> = e.mu.iter().flat_map(|m| m.iter().copied()).collect();
        let sd: Vec<f64> = e.sigma.iter().flat_map(|m| m.iter().copied()).collect();
        assert!((tape.scalar(loss) - 0.7 * gaussian_kl(&mu, &sd)).abs() < 1e-10);
    }

    #[test]
    fn counts_match_formula() {
        let cm = toy();
        let s = VaeStack::zeroed(&cm, 6, Likelihood::PerCategory).unwrap();
        let h = s.hidden();
        let expect: usize = (0..2)
            .map(|c| {
                let (e, d) = vae_param_counts(cm.members(c).len(), cm.latent_dims()[c], h);
                e + d
            })
            .sum();
        assert_eq!(s.encoder_params() + s.decoder_params(), expect);
    }
}
