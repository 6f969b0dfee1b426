use std::fmt::Write as _;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::denoiser::{DenoiserNet, Objective};
use super::infer::{gaussian, infer};
use super::loss::record_loss;
use super::sampler::{ImportanceSampler, StepSampling};
use crate::data::InteractionMatrix;
use crate::error::{Error, Result};
use crate::eval::{evaluate_with, MaskingPolicy};
use crate::nn::{Adam, DenseMatrix, Tape};
use crate::schedule::NoiseSchedule;

/// Cutoff tracked on the validation split.
pub const VALIDATION_K: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Diffusion steps `T`.
    pub steps: usize,
    /// Corruption steps applied before the reverse pass at inference.
    pub t_prime: usize,
    pub noise_scale: f64,
    pub noise_min: f64,
    pub noise_max: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Maximum number of epochs.
    pub epochs: usize,
    /// Epochs without a validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub sampling: StepSampling,
    /// Draw a step per row instead of one per batch.
    pub step_per_row: bool,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::X0,
            steps: 5,
            t_prime: 0,
            noise_scale: 1e-4,
            noise_min: 5e-4,
            noise_max: 5e-3,
            lr: 1e-4,
            batch_size: 400,
            epochs: 1000,
            patience: 20,
            sampling: StepSampling::Uniform,
            step_per_row: false,
            seed: 2023,
            hidden: vec![200, 600],
            dropout: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_prime > self.steps {
            return Err(Error::config(format!(
                "t_prime={} exceeds steps={}",
                self.t_prime, self.steps
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config(format!("hidden widths must be positive, got {:?}", self.hidden)));
        }
        if self.objective == Objective::Eps && self.noise_scale == 0.0 {
            return Err(Error::config("the eps objective needs a noise scale above 0"));
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.noise_scale, self.noise_min, self.noise_max, self.steps)
    }

    pub(crate) fn loop_settings(&self) -> LoopSettings {
        LoopSettings {
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
        }
    }
}

/// Conditioning, mask and targets for per-epoch validation.
#[derive(Clone, Copy, Debug)]
pub struct Validation<'a> {
    pub conditioning: &'a InteractionMatrix,
    pub mask: &'a InteractionMatrix,
    pub targets: &'a InteractionMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based, counted from the start of this run.
    pub epoch: usize,
    /// Mean of the optimized batch losses.
    pub loss: f64,
    pub val_recall: Option<f64>,
    pub val_ndcg: Option<f64>,
}

impl EpochRecord {
    pub fn line(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        format!(
            "{}, {:.6}, {}, {}",
            self.epoch,
            self.loss,
            fmt(self.val_recall),
            fmt(self.val_ndcg)
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainLog {
    pub const HEADER: &'static str = "# epoch, loss, val-recall@20, val-ndcg@20";

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", Self::HEADER);
        for r in &self.records {
            let _ = writeln!(out, "{}", r.line());
        }
        out
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.and_then(|e| self.records.iter().find(|r| r.epoch == e))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LoopSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
}

/// Shuffled mini-batch epochs with best-on-validation snapshotting and
/// patience-based stopping. Returns the kept model and the log.
pub(crate) fn run_epochs<M, S, V>(
    mut model: M,
    rows: &[usize],
    settings: &LoopSettings,
    rng: &mut ChaCha8Rng,
    mut step: S,
    mut validate: V,
) -> Result<(M, TrainLog)>
where
    M: Clone,
    S: FnMut(&mut M, &[usize], &mut ChaCha8Rng) -> Result<f64>,
    V: FnMut(&M) -> Result<Option<(f64, f64)>>,
{
    let mut log = TrainLog::default();
    let mut best: Option<(f64, M)> = None;
    let mut since_best = 0;
    let mut order = rows.to_vec();
    for epoch in 1..=settings.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, batch) in order.chunks(settings.batch_size).enumerate() {
            let loss = step(&mut model, batch, rng).map_err(|e| match e {
                Error::Numerical(msg) => Error::numerical(format!("epoch {epoch}, batch {}: {msg}", b + 1)),
                other => other,
            })?;
            total += loss;
            batches += 1;
        }
        let loss = if batches > 0 { total / batches as f64 } else { 0.0 };
        let val = validate(&model)?;
        let rec = EpochRecord {
            epoch,
            loss,
            val_recall: val.map(|v| v.0),
            val_ndcg: val.map(|v| v.1),
        };
        info!("epoch {}", rec.line());
        log.records.push(rec);
        match val {
            Some((recall, _)) => {
                if best.as_ref().is_none_or(|(r, _)| recall > *r) {
                    best = Some((recall, model.clone()));
                    log.best_epoch = Some(epoch);
                    since_best = 0;
                } else {
                    since_best += 1;
                }
            }
            None => log.best_epoch = Some(epoch),
        }
        if settings.patience > 0 && since_best >= settings.patience {
            log.stopped_early = true;
            break;
        }
    }
    Ok((best.map_or(model, |(_, m)| m), log))
}

pub(crate) fn training_rng(seed: u64, start_step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + start_step);
    rng
}

/// Generator for scoring-time noise, a stream disjoint from training.
pub fn eval_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

/// Draws per-row steps and the loss scale for each row.
pub(crate) fn draw_steps<R: Rng + ?Sized>(
    rows: usize,
    steps: usize,
    sampling: StepSampling,
    per_row: bool,
    sampler: &ImportanceSampler,
    rng: &mut R,
) -> (Vec<usize>, Vec<f64>) {
    let draw = |rng: &mut R| match sampling {
        StepSampling::Uniform => (rng.random_range(1..=steps), 1.0),
        StepSampling::Importance => {
            let (t, p) = sampler.sample_step(rng);
            (t, 1.0 / p)
        }
    };
    if per_row {
        (0..rows).map(|_| draw(rng)).unzip()
    } else {
        let (t, s) = draw(rng);
        (vec![t; rows], vec![s; rows])
    }
}

/// Records observed step losses: the batch mean for a shared step, each
/// row otherwise.
pub(crate) fn record_observations(sampler: &mut ImportanceSampler, steps: &[usize], per_row: &[f64], shared: bool) -> Result<()> {
    if shared {
        if let Some(&t) = steps.first() {
            let mean = per_row.iter().sum::<f64>() / per_row.len() as f64;
            sampler.record(t, mean)?;
        }
    } else {
        for (&t, &l) in steps.iter().zip(per_row) {
            sampler.record(t, l)?;
        }
    }
    Ok(())
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch (the last epoch without validation).
    pub net: DenoiserNet,
    pub log: TrainLog,
    pub sampler: ImportanceSampler,
}

/// Closure scoring dense conditioning rows with the reverse pass.
pub fn scorer<'a>(
    net: &'a DenoiserNet,
    sched: &'a NoiseSchedule,
    t_prime: usize,
    seed: u64,
) -> impl FnMut(&DenseMatrix) -> Result<DenseMatrix> + 'a {
    let mut rng = eval_rng(seed);
    move |x| infer(net, sched, x, t_prime, &mut rng)
}

/// Trains a fresh denoiser on the rows of `data`.
pub fn train(data: &InteractionMatrix, validation: Option<Validation<'_>>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut init = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = DenoiserNet::new(data.n_items(), &cfg.hidden, cfg.dropout, cfg.objective, &mut init)?;
    train_from(net, None, data, validation, cfg)
}

/// Continues training `net`; the optimizer step counter carries on from
/// the stored one.
pub fn train_from(
    net: DenoiserNet,
    sampler: Option<ImportanceSampler>,
    data: &InteractionMatrix,
    validation: Option<Validation<'_>>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if net.dim() != data.n_items() {
        return Err(Error::config(format!(
            "denoiser width {} does not match {} items",
            net.dim(),
            data.n_items()
        )));
    }
    let rows = data.nonempty_users();
    if rows.is_empty() && cfg.epochs > 0 {
        return Err(Error::input("training matrix has no interactions"));
    }
    let sched = cfg.schedule()?;
    let adam = Adam::new(cfg.lr);
    let mut rng = training_rng(cfg.seed, net.store().step());
    let sampler = match sampler {
        Some(s) if s.steps() == cfg.steps => s,
        _ => ImportanceSampler::new(cfg.steps)?,
    };

    let step = |state: &mut (DenoiserNet, ImportanceSampler), batch: &[usize], rng: &mut ChaCha8Rng| -> Result<f64> {
        let (net, sampler) = state;
        let x0 = data.dense_rows(batch);
        let (steps, scale) = draw_steps(batch.len(), cfg.steps, cfg.sampling, cfg.step_per_row, sampler, rng);
        let eps = gaussian(x0.nrows(), x0.ncols(), rng);
        let mask = net.sample_mask(x0.nrows(), rng);
        let mut tape = Tape::new();
        let x = tape.constant(x0);
        let out = record_loss(&mut tape, &sched, net, net.objective(), x, &steps, &eps, &scale, mask)?;
        let value = tape.scalar(out.loss);
        let grads = tape.backward(out.loss).map_err(|e| match e {
            Error::Numerical(msg) => Error::numerical(format!("{msg} (step t={})", steps[0])),
            other => other,
        })?;
        let grads = grads.for_store(net.store());
        adam.step(net.store_mut(), &grads)?;
        record_observations(sampler, &steps, &out.per_row, !cfg.step_per_row)?;
        Ok(value)
    };
    let validate = |state: &(DenoiserNet, ImportanceSampler)| -> Result<Option<(f64, f64)>> {
        let Some(v) = validation else { return Ok(None) };
        let report = evaluate_with(
            scorer(&state.0, &sched, cfg.t_prime, cfg.seed),
            v.conditioning,
            v.mask,
            v.targets,
            &[VALIDATION_K],
            MaskingPolicy::Train,
            cfg.batch_size,
        )?;
        Ok(Some((report.recall[0], report.ndcg[0])))
    };

    let ((net, sampler), log) = run_epochs((net, sampler), &rows, &cfg.loop_settings(), &mut rng, step, validate)?;
    Ok(TrainOutcome { net, log, sampler })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            steps: 2,
            noise_scale: 0.01,
            noise_min: 1e-3,
            noise_max: 5e-3,
            lr: 1e-2,
            batch_size: 4,
            epochs: 200,
            patience: 0,
            hidden: vec![8],
            dropout: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_net() {
        let data = InteractionMatrix::from_pairs(1, 4, &[(0, 0), (0, 2)]).unwrap();
        let cfg = TrainConfig { epochs: 0, ..tiny_cfg() };
        let out = train(&data, None, &cfg).unwrap();
        let mut init = ChaCha8Rng::seed_from_u64(cfg.seed);
        let fresh = DenoiserNet::new(4, &cfg.hidden, cfg.dropout, cfg.objective, &mut init).unwrap();
        assert_eq!(out.net, fresh);
        assert!(out.log.records.is_empty());
    }

    #[test]
    fn single_user_loss_decreases() {
        let data = InteractionMatrix::from_pairs(1, 4, &[(0, 0), (0, 2)]).unwrap();
        let cfg = TrainConfig { steps: 2, ..tiny_cfg() };
        let out = train(&data, None, &cfg).unwrap();
        let first = out.log.records.first().unwrap().loss;
        let last = out.log.records.last().unwrap().loss;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn seeded_runs_are_identical() {
        let data = InteractionMatrix::from_pairs(3, 5, &[(0, 0), (1, 1), (2, 4), (0, 3)]).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            sampling: StepSampling::Importance,
            dropout: 0.5,
            ..tiny_cfg()
        };
        let a = train(&data, None, &cfg).unwrap();
        let b = train(&data, None, &cfg).unwrap();
        assert_eq!(a.log.to_text(), b.log.to_text());
        assert_eq!(a.net, b.net);
    }

    #[test]
    fn patience_stops_and_keeps_best() {
        let data = InteractionMatrix::from_pairs(2, 4, &[(0, 0), (1, 1)]).unwrap();
        let val = InteractionMatrix::from_pairs(2, 4, &[(0, 1), (1, 2)]).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            patience: 3,
            ..tiny_cfg()
        };
        let v = Validation {
            conditioning: &data,
            mask: &data,
            targets: &val,
        };
        let out = train(&data, Some(v), &cfg).unwrap();
        assert!(out.log.stopped_early);
        assert!(out.log.best().is_some());
        assert!(out.log.to_text().starts_with("# epoch"));
    }

    #[test]
    fn t_prime_above_steps_rejected() {
        let cfg = TrainConfig { t_prime: 9, ..tiny_cfg() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
