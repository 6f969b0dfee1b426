use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::denoiser::DenoiserNet;
use crate::error::{Error, Result};
use crate::nn::DenseMatrix;
use crate::schedule::NoiseSchedule;

/// Standard-normal matrix.
pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Reverse pass with an arbitrary clean-vector predictor `f(x_t, t)`.
///
/// The starting point is `x0` itself for `t_prime = 0`, otherwise `x0`
/// corrupted to step `t_prime`. Steps `T..=2` move to the posterior mean
/// (no variance); step 1 returns the raw prediction. With a noiseless
/// schedule every step is the prediction, so the pass is the T-fold
/// composition of the predictor.
pub fn infer_with<F, R>(mut predict: F, sched: &NoiseSchedule, x0: &Array2<f64>, t_prime: usize, rng: &mut R) -> Result<Array2<f64>>
where
    F: FnMut(&Array2<f64>, usize) -> Result<Array2<f64>>,
    R: Rng + ?Sized,
{
    if t_prime > sched.steps() {
        return Err(Error::usage(format!(
            "inference step {t_prime} exceeds the {} diffusion steps",
            sched.steps()
        )));
    }
    let mut x = if t_prime == 0 {
        x0.clone()
    } else {
        let eps = gaussian(x0.nrows(), x0.ncols(), rng);
        sched.q_sample_array(x0, t_prime, &eps)
    };
    for t in (1..=sched.steps()).rev() {
        let x0_hat = predict(&x, t)?;
        if t == 1 || sched.is_noiseless() {
            x = x0_hat;
        } else {
            let (c_xt, c_x0) = sched.posterior_coefficients(t)?;
            x = x * c_xt + x0_hat * c_x0;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("inference produced non-finite scores"));
    }
    Ok(x)
}

/// Scores for every item given clean histories `x0`.
pub fn infer<R: Rng + ?Sized>(
    net: &DenoiserNet,
    sched: &NoiseSchedule,
    x0: &DenseMatrix,
    t_prime: usize,
    rng: &mut R,
) -> Result<DenseMatrix> {
    let out = infer_with(|x, t| net.predict_x0(sched, x, t), sched, x0.as_array(), t_prime, rng)?;
    Ok(DenseMatrix::from_array_unchecked(out))
}
