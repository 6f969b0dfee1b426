use ndarray::{Array2, Axis};

use super::denoiser::{DenoiserNet, Objective};
use crate::error::{Error, Result};
use crate::nn::{DenseMatrix, Gradients, Tape, Var};
use crate::schedule::NoiseSchedule;

/// A recorded batch loss.
pub struct BatchLoss {
    /// Scalar node: `mean_r(scale_r * L_r)`.
    pub loss: Var,
    /// Unscaled per-row step losses `L_r`.
    pub per_row: Vec<f64>,
}

fn check_steps(sched: &NoiseSchedule, steps: &[usize]) -> Result<()> {
    if let Some(&t) = steps.iter().find(|&&t| t == 0 || t > sched.steps()) {
        return Err(Error::config(format!("step {t} outside 1..={}", sched.steps())));
    }
    Ok(())
}

/// Records the diffusion loss for a batch whose clean rows are the tape
/// value `x0`. Gradients flow into `x0` as well, which is what the latent
/// model needs.
///
/// Row `r` uses step `steps[r]` and noise `eps.row(r)`. For the x0
/// objective `L_r = w(t) * ||x0_hat - x0||^2`; for the eps objective
/// `L_r = ||eps_hat - eps||^2`.
#[allow(clippy::too_many_arguments)]
pub fn record_loss(
    tape: &mut Tape,
    sched: &NoiseSchedule,
    net: &DenoiserNet,
    objective: Objective,
    x0: Var,
    steps: &[usize],
    eps: &Array2<f64>,
    row_scale: &[f64],
    mask: Option<Array2<f64>>,
) -> Result<BatchLoss> {
    let (rows, cols) = tape.value(x0).dim();
    if eps.dim() != (rows, cols) {
        return Err(Error::config(format!("noise shape {:?} does not match batch {:?}", eps.dim(), (rows, cols))));
    }
    if steps.len() != rows || row_scale.len() != rows {
        return Err(Error::config("per-row steps and scales must match the batch"));
    }
    check_steps(sched, steps)?;
    if objective == Objective::Eps && sched.is_noiseless() {
        return Err(Error::config("the eps objective needs a noise scale above 0"));
    }

    let signal: Vec<f64> = steps.iter().map(|&t| sched.abar(t).sqrt()).collect();
    let mut noise = eps.clone();
    for (mut row, &t) in noise.axis_iter_mut(Axis(0)).zip(steps) {
        row *= sched.one_minus_abar(t).sqrt();
    }
    let scaled = tape.scale_rows(x0, signal)?;
    let noise = tape.constant(noise);
    let x_t = tape.add(scaled, noise)?;
    let pred = net.record(tape, x_t, steps, mask)?;

    let (target, weights) = match objective {
        Objective::X0 => {
            let w = steps.iter().map(|&t| sched.loss_weight(t)).collect::<Result<Vec<_>>>()?;
            (x0, w)
        }
        Objective::Eps => (tape.constant(eps.clone()), vec![1.0; rows]),
    };
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    let per_row: Vec<f64> = tape
        .value(sq)
        .sum_axis(Axis(1))
        .iter()
        .zip(&weights)
        .map(|(s, w)| s * w)
        .collect();
    let factors = weights
        .iter()
        .zip(row_scale)
        .map(|(w, s)| w * s / rows as f64)
        .collect();
    let weighted = tape.scale_rows(sq, factors)?;
    Ok(BatchLoss {
        loss: tape.sum(weighted),
        per_row,
    })
}

fn single_step(
    sched: &NoiseSchedule,
    net: &DenoiserNet,
    objective: Objective,
    x0: &DenseMatrix,
    t: usize,
    eps: &DenseMatrix,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let x = tape.constant(x0.as_array().clone());
    let rows = x0.rows();
    let out = record_loss(&mut tape, sched, net, objective, x, &vec![t; rows], eps.as_array(), &vec![1.0; rows], None)?;
    let value = tape.scalar(out.loss);
    let grads = tape.backward(out.loss)?.for_store(net.store());
    Ok((value, grads))
}

/// Step loss for the x0 objective: weighted squared error for `t >= 2`,
/// unweighted for `t = 1` and for the noiseless schedule; summed over
/// items, averaged over rows. No dropout.
pub fn loss_t(sched: &NoiseSchedule, net: &DenoiserNet, x0: &DenseMatrix, t: usize, eps: &DenseMatrix) -> Result<f64> {
    loss_t_with_grads(sched, net, x0, t, eps).map(|(v, _)| v)
}

pub fn loss_t_with_grads(
    sched: &NoiseSchedule,
    net: &DenoiserNet,
    x0: &DenseMatrix,
    t: usize,
    eps: &DenseMatrix,
) -> Result<(f64, Gradients)> {
    single_step(sched, net, Objective::X0, x0, t, eps)
}

/// Noise-prediction loss `||eps - eps_hat||^2`, averaged over rows.
pub fn loss_eps(sched: &NoiseSchedule, net: &DenoiserNet, x0: &DenseMatrix, t: usize, eps: &DenseMatrix) -> Result<f64> {
    loss_eps_with_grads(sched, net, x0, t, eps).map(|(v, _)| v)
}

pub fn loss_eps_with_grads(
    sched: &NoiseSchedule,
    net: &DenoiserNet,
    x0: &DenseMatrix,
    t: usize,
    eps: &DenseMatrix,
) -> Result<(f64, Gradients)> {
    single_step(sched, net, Objective::Eps, x0, t, eps)
}

/// `w(t) * mean_r ||pred_r - x0_r||^2` for an arbitrary prediction.
pub fn weighted_error(sched: &NoiseSchedule, t: usize, pred: &DenseMatrix, x0: &DenseMatrix) -> Result<f64> {
    if pred.shape() != x0.shape() {
        return Err(Error::config("prediction and target shapes differ"));
    }
    let w = sched.loss_weight(t)?;
    let d = pred.as_array() - x0.as_array();
    Ok(w * d.mapv(|v| v * v).sum() / x0.rows().max(1) as f64)
}
