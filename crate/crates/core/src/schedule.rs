//! Linear noise schedule over the cumulative noise level `1 - abar_t` and
//! every quantity derived from it.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nn::DenseMatrix;

/// Precomputed diffusion quantities for steps `1..=T`.
///
/// Arrays are indexed directly by step; index 0 holds the conventions
/// `abar[0] = 1`, `one_minus_abar[0] = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    noise_scale: f64,
    noise_min: f64,
    noise_max: f64,
    one_minus_abar: Vec<f64>,
    abar: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    posterior_var: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds the schedule `1 - abar_t = s * (noise_min + (t-1)/(T-1) * (noise_max - noise_min))`.
    ///
    /// `noise_min`/`noise_max` bound the cumulative noise level, not `alpha`.
    pub fn new(noise_scale: f64, noise_min: f64, noise_max: f64, steps: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&noise_scale) {
            return Err(Error::config(format!("noise scale must lie in [0, 1], got {noise_scale}")));
        }
        if !(noise_min > 0.0 && noise_min < noise_max && noise_max < 1.0) {
            return Err(Error::config(format!(
                "noise bounds must satisfy 0 < min < max < 1, got min={noise_min} max={noise_max}"
            )));
        }
        if steps == 0 {
            return Err(Error::config("diffusion step count must be at least 1"));
        }

        let mut one_minus_abar = vec![0.0; steps + 1];
        for (t, slot) in one_minus_abar.iter_mut().enumerate().skip(1) {
            let frac = if steps == 1 {
                0.0
            } else {
                (t - 1) as f64 / (steps - 1) as f64
            };
            *slot = noise_scale * (noise_min + frac * (noise_max - noise_min));
        }
        let abar: Vec<f64> = one_minus_abar.iter().map(|v| 1.0 - v).collect();
        let mut alpha = vec![1.0; steps + 1];
        let mut beta = vec![0.0; steps + 1];
        let mut posterior_var = vec![0.0; steps + 1];
        for t in 1..=steps {
            // difference form keeps beta accurate when 1 - abar is tiny
            beta[t] = (one_minus_abar[t] - one_minus_abar[t - 1]) / abar[t - 1];
            alpha[t] = 1.0 - beta[t];
            if t >= 2 && one_minus_abar[t] > 0.0 {
                posterior_var[t] = beta[t] * one_minus_abar[t - 1] / one_minus_abar[t];
            }
        }
        Ok(NoiseSchedule {
            steps,
            noise_scale,
            noise_min,
            noise_max,
            one_minus_abar,
            abar,
            alpha,
            beta,
            posterior_var,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn noise_min(&self) -> f64 {
        self.noise_min
    }

    pub fn noise_max(&self) -> f64 {
        self.noise_max
    }

    /// True when `s = 0`: the forward process is the identity.
    pub fn is_noiseless(&self) -> bool {
        self.noise_scale == 0.0
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::usage(format!("step {t} outside 1..={}", self.steps)));
        }
        Ok(())
    }

    pub fn one_minus_abar(&self, t: usize) -> f64 {
        self.one_minus_abar[t]
    }

    pub fn abar(&self, t: usize) -> f64 {
        self.abar[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_var[t]
    }

    /// `abar_t / (1 - abar_t)`; infinite at `t = 0`.
    pub fn snr(&self, t: usize) -> f64 {
        self.abar[t] / self.one_minus_abar[t]
    }

    /// Per-step weight on `||x0_hat - x0||^2`: `(snr(t-1) - snr(t)) / 2` for
    /// `t >= 2`, and 1 for the reconstruction step and for the noiseless schedule.
    pub fn loss_weight(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        if t == 1 || self.is_noiseless() {
            return Ok(1.0);
        }
        Ok(0.5 * (self.snr(t - 1) - self.snr(t)))
    }

    /// Coefficients `(c_xt, c_x0)` of the posterior mean at step `t >= 2`.
    pub fn posterior_coefficients(&self, t: usize) -> Result<(f64, f64)> {
        self.check_step(t)?;
        if t == 1 {
            return Err(Error::usage("posterior mean is undefined at t = 1; use the reconstruction path"));
        }
        if self.is_noiseless() {
            return Err(Error::usage("posterior mean is undefined for a noiseless schedule"));
        }
        let denom = self.one_minus_abar[t];
        let c_xt = self.alpha[t].sqrt() * self.one_minus_abar[t - 1] / denom;
        let c_x0 = self.abar[t - 1].sqrt() * self.beta[t] / denom;
        Ok((c_xt, c_x0))
    }

    /// Forward corruption `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
    pub fn q_sample(&self, x0: &DenseMatrix, t: usize, eps: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_step(t)?;
        if x0.shape() != eps.shape() {
            return Err(Error::usage(format!(
                "noise shape {:?} does not match input {:?}",
                eps.shape(),
                x0.shape()
            )));
        }
        let out = self.q_sample_array(x0.as_array(), t, eps.as_array());
        Ok(DenseMatrix::from_array_unchecked(out))
    }

    pub(crate) fn q_sample_array(&self, x0: &Array2<f64>, t: usize, eps: &Array2<f64>) -> Array2<f64> {
        let a = self.abar[t].sqrt();
        let b = self.one_minus_abar[t].sqrt();
        x0 * a + eps * b
    }

    /// Posterior mean of `x_{t-1}` given `x_t` and `x0`.
    pub fn posterior_mean(&self, x_t: &DenseMatrix, x0: &DenseMatrix, t: usize) -> Result<DenseMatrix> {
        if x_t.shape() != x0.shape() {
            return Err(Error::usage("x_t and x0 shapes differ"));
        }
        let (c_xt, c_x0) = self.posterior_coefficients(t)?;
        Ok(DenseMatrix::from_array_unchecked(
            x_t.as_array() * c_xt + x0.as_array() * c_x0,
        ))
    }
}
