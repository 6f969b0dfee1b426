use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cluster::{kmeans, ClusterModel, DEFAULT_MAX_ITERS};
use super::svd::item_embeddings_svd;
use super::vae::{category_hidden, vae_param_counts, Likelihood, VaeStack};
use crate::data::InteractionMatrix;
use crate::diffusion::{
    denoiser_param_count, draw_steps, eval_rng, gaussian, infer_with, record_loss, record_observations, run_epochs,
    training_rng, DenoiserNet, ImportanceSampler, TrainConfig, TrainLog, Validation, VALIDATION_K,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_with, MaskingPolicy};
use crate::nn::{Adam, DenseMatrix, Tape};
use crate::schedule::NoiseSchedule;

#[derive(Clone, Debug, PartialEq)]
pub struct LatentConfig {
    /// Number of item categories `C`.
    pub categories: usize,
    /// Width of the concatenated latent.
    pub latent_total: usize,
    /// Hidden budget shared by the categories; each gets `vae_hidden / C`.
    pub vae_hidden: usize,
    /// Weight on the diffusion loss.
    pub lambda: f64,
    /// Final KL weight.
    pub gamma_max: f64,
    /// The KL weight ramps up over this many epochs' worth of batches.
    pub anneal_epochs: usize,
    /// Rank of the item embeddings used for clustering.
    pub embed_rank: usize,
    pub kmeans_iters: usize,
    pub likelihood: Likelihood,
}

impl Default for LatentConfig {
    fn default() -> Self {
        LatentConfig {
            categories: 2,
            latent_total: 300,
            vae_hidden: 300,
            lambda: 0.1,
            gamma_max: 0.3,
            anneal_epochs: 200,
            embed_rank: 64,
            kmeans_iters: DEFAULT_MAX_ITERS,
            likelihood: Likelihood::PerCategory,
        }
    }
}

impl LatentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.categories == 0 || self.latent_total < self.categories {
            return Err(Error::config(format!(
                "latent width {} must cover {} categories",
                self.latent_total, self.categories
            )));
        }
        if !(self.lambda >= 0.0 && self.gamma_max >= 0.0) {
            return Err(Error::config("lambda and gamma_max must be non-negative"));
        }
        if self.vae_hidden == 0 || self.embed_rank == 0 {
            return Err(Error::config("vae_hidden and embed_rank must be positive"));
        }
        Ok(())
    }
}

/// Clusters, per-category VAEs and the latent denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentModel {
    pub vae: VaeStack,
    pub denoiser: DenoiserNet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCounts {
    pub encoders: usize,
    pub decoders: usize,
    pub denoiser: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.encoders + self.decoders + self.denoiser
    }
}

impl LatentModel {
    pub fn clusters(&self) -> &ClusterModel {
        self.vae.clusters()
    }

    pub fn count_params(&self) -> ParamCounts {
        ParamCounts {
            encoders: self.vae.encoder_params(),
            decoders: self.vae.decoder_params(),
            denoiser: self.denoiser.num_params(),
        }
    }

    /// Deterministic encode, latent reverse pass, decode.
    pub fn score<R: Rng + ?Sized>(&self, sched: &NoiseSchedule, x0: &DenseMatrix, t_prime: usize, rng: &mut R) -> Result<DenseMatrix> {
        let z0 = self.vae.encode(x0, rng, true)?.z0;
        let z = infer_with(|x, t| self.denoiser.predict_x0(sched, x, t), sched, z0.as_array(), t_prime, rng)?;
        self.vae.decode(&DenseMatrix::from_array_unchecked(z))
    }
}

/// Parameter counts of a latent model without building it.
pub fn latent_param_count(clusters: &ClusterModel, vae_hidden: usize, denoiser_hidden: &[usize]) -> ParamCounts {
    let h = category_hidden(vae_hidden, clusters.n_categories());
    let (mut encoders, mut decoders) = (0, 0);
    for c in 0..clusters.n_categories() {
        let (e, d) = vae_param_counts(clusters.members(c).len(), clusters.latent_dims()[c], h);
        encoders += e;
        decoders += d;
    }
    ParamCounts {
        encoders,
        decoders,
        denoiser: denoiser_param_count(clusters.latent_total(), denoiser_hidden),
    }
}

/// Scores via [`LatentModel::score`].
pub fn infer_latent<R: Rng + ?Sized>(
    model: &LatentModel,
    sched: &NoiseSchedule,
    x0: &DenseMatrix,
    t_prime: usize,
    rng: &mut R,
) -> Result<DenseMatrix> {
    model.score(sched, x0, t_prime, rng)
}

/// Clusters items from rank-`embed_rank` SVD embeddings of `data`.
pub fn cluster_items(data: &InteractionMatrix, cfg: &LatentConfig, seed: u64) -> Result<ClusterModel> {
    cfg.validate()?;
    if cfg.categories == 1 {
        return ClusterModel::single(data.n_items(), cfg.latent_total);
    }
    let rank = cfg.embed_rank.min(data.n_users()).min(data.n_items());
    let emb = item_embeddings_svd(data, rank)?;
    let cm = kmeans(&emb, cfg.categories, seed, cfg.kmeans_iters, cfg.latent_total)?;
    let sizes: Vec<usize> = (0..cm.n_categories()).map(|c| cm.members(c).len()).collect();
    info!("category sizes {sizes:?}, latent widths {:?}", cm.latent_dims());
    Ok(cm)
}

pub fn build_latent(clusters: &ClusterModel, diff: &TrainConfig, cfg: &LatentConfig) -> Result<LatentModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(diff.seed);
    let vae = VaeStack::new(clusters, cfg.vae_hidden, cfg.likelihood, &mut rng)?;
    let denoiser = DenoiserNet::new(clusters.latent_total(), &diff.hidden, diff.dropout, diff.objective, &mut rng)?;
    Ok(LatentModel { vae, denoiser })
}

#[derive(Clone, Debug)]
pub struct LatentOutcome {
    pub model: LatentModel,
    pub log: TrainLog,
    pub sampler: ImportanceSampler,
}

/// Clusters the items, then trains the VAEs and the latent denoiser jointly.
pub fn train_latent(
    data: &InteractionMatrix,
    validation: Option<Validation<'_>>,
    diff: &TrainConfig,
    cfg: &LatentConfig,
) -> Result<LatentOutcome> {
    diff.validate()?;
    let clusters = cluster_items(data, cfg, diff.seed)?;
    let model = build_latent(&clusters, diff, cfg)?;
    train_latent_from(model, None, data, validation, diff, cfg)
}

/// KL weight after `step` optimizer steps.
pub fn gamma_at(step: u64, ramp_steps: u64, gamma_max: f64) -> f64 {
    if ramp_steps == 0 {
        return gamma_max;
    }
    gamma_max * (step as f64 / ramp_steps as f64).min(1.0)
}

pub fn train_latent_from(
    model: LatentModel,
    sampler: Option<ImportanceSampler>,
    data: &InteractionMatrix,
    validation: Option<Validation<'_>>,
    diff: &TrainConfig,
    cfg: &LatentConfig,
) -> Result<LatentOutcome> {
    diff.validate()?;
    cfg.validate()?;
    if model.clusters().n_items() != data.n_items() {
        return Err(Error::config(format!(
            "model covers {} items, data has {}",
            model.clusters().n_items(),
            data.n_items()
        )));
    }
    let rows = data.nonempty_users();
    if rows.is_empty() && diff.epochs > 0 {
        return Err(Error::input("training matrix has no interactions"));
    }
    let sched = diff.schedule()?;
    let adam = Adam::new(diff.lr);
    let batches = rows.len().div_ceil(diff.batch_size) as u64;
    let ramp = cfg.anneal_epochs as u64 * batches;
    let mut rng = training_rng(diff.seed, model.vae.store().step());
    let sampler = match sampler {
        Some(s) if s.steps() == diff.steps => s,
        _ => ImportanceSampler::new(diff.steps)?,
    };
    let mut ratio_logged = false;

    let step = |state: &mut (LatentModel, ImportanceSampler), batch: &[usize], rng: &mut ChaCha8Rng| -> Result<f64> {
        let (model, sampler) = state;
        let x0 = data.dense_rows(batch);
        let gamma = gamma_at(model.vae.store().step(), ramp, cfg.gamma_max);
        let eps_z = model.vae.sample_eps(x0.nrows(), rng);
        let (steps, scale) = draw_steps(batch.len(), diff.steps, diff.sampling, diff.step_per_row, sampler, rng);
        let eps = gaussian(x0.nrows(), model.clusters().latent_total(), rng);
        let mask = model.denoiser.sample_mask(x0.nrows(), rng);

        let mut tape = Tape::new();
        let (vae_loss, enc) = model.vae.record_loss(&mut tape, &x0, &eps_z, gamma)?;
        let d = record_loss(
            &mut tape,
            &sched,
            &model.denoiser,
            model.denoiser.objective(),
            enc.z0,
            &steps,
            &eps,
            &scale,
            mask,
        )?;
        let weighted = tape.scale(d.loss, cfg.lambda);
        let total = tape.add(vae_loss, weighted)?;
        if !ratio_logged {
            info!(
                "first batch: vae loss {:.4}, diffusion loss {:.4}, lambda-weighted ratio {:.4}",
                tape.scalar(vae_loss),
                tape.scalar(d.loss),
                cfg.lambda * tape.scalar(d.loss) / tape.scalar(vae_loss)
            );
            ratio_logged = true;
        }
        let value = tape.scalar(total);
        let grads = tape.backward(total)?;
        let g_vae = grads.for_store(model.vae.store());
        let g_den = grads.for_store(model.denoiser.store());
        adam.step(model.vae.store_mut(), &g_vae)?;
        adam.step(model.denoiser.store_mut(), &g_den)?;
        record_observations(sampler, &steps, &d.per_row, !diff.step_per_row)?;
        Ok(value)
    };
    let validate = |state: &(LatentModel, ImportanceSampler)| -> Result<Option<(f64, f64)>> {
        let Some(v) = validation else { return Ok(None) };
        let mut rng = eval_rng(diff.seed);
        let report = evaluate_with(
            |x| state.0.score(&sched, x, diff.t_prime, &mut rng),
            v.conditioning,
            v.mask,
            v.targets,
            &[VALIDATION_K],
            MaskingPolicy::Train,
            diff.batch_size,
        )?;
        Ok(Some((report.recall[0], report.ndcg[0])))
    };

    let ((model, sampler), log) = run_epochs((model, sampler), &rows, &diff.loop_settings(), &mut rng, step, validate)?;
    Ok(LatentOutcome { model, log, sampler })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (TrainConfig, LatentConfig) {
        let diff = TrainConfig {
            steps: 3,
            noise_scale: 0.5,
            noise_min: 0.1,
            noise_max: 0.5,
            lr: 5e-3,
            batch_size: 4,
            epochs: 30,
            patience: 0,
            hidden: vec![6],
            dropout: 0.0,
            ..TrainConfig::default()
        };
        let lat = LatentConfig {
            categories: 2,
            latent_total: 4,
            vae_hidden: 8,
            anneal_epochs: 5,
            embed_rank: 3,
            ..LatentConfig::default()
        };
        (diff, lat)
    }

    fn toy_data() -> InteractionMatrix {
        let mut pairs = Vec::new();
        for u in 0..6 {
            let base = if u % 2 == 0 { 0 } else { 4 };
            for i in 0..3 {
                pairs.push((u, base + (i + u) % 4));
            }
        }
        InteractionMatrix::from_pairs(6, 8, &pairs).unwrap()
    }

    #[test]
    fn gamma_ramp() {
        assert_eq!(gamma_at(0, 10, 0.3), 0.0);
        assert!((gamma_at(5, 10, 0.3) - 0.15).abs() < 1e-15);
        assert_eq!(gamma_at(50, 10, 0.3), 0.3);
        assert_eq!(gamma_at(3, 0, 0.3), 0.3);
    }

    #[test]
    fn toy_run_decreases_loss() {
        let (diff, lat) = small();
        let out = train_latent(&toy_data(), None, &diff, &lat).unwrap();
        let mean = |r: &[crate::diffusion::EpochRecord]| r.iter().map(|e| e.loss).sum::<f64>() / r.len() as f64;
        let first = mean(&out.log.records[..5]);
        let last = mean(&out.log.records[out.log.records.len() - 5..]);
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn single_category_count_by_formula() {
        let (diff, lat) = small();
        let lat = LatentConfig { categories: 1, ..lat };
        let cm = cluster_items(&toy_data(), &lat, 1).unwrap();
        let model = build_latent(&cm, &diff, &lat).unwrap();
        let counts = model.count_params();
        // 8 items, latent 4, hidden 8; denoiser 4+10 -> 6 -> 4
        assert_eq!(counts.encoders, 8 * 8 + 8 + 8 * 8 + 8);
        assert_eq!(counts.decoders, 4 * 8 + 8 + 8 * 8 + 8);
        assert_eq!(counts.denoiser, 14 * 6 + 6 + 6 * 4 + 4);
        assert_eq!(counts, latent_param_count(&cm, lat.vae_hidden, &diff.hidden));
    }

    #[test]
    fn deterministic_scores() {
        let (diff, lat) = small();
        let cm = cluster_items(&toy_data(), &lat, 1).unwrap();
        let model = build_latent(&cm, &diff, &lat).unwrap();
        let sched = diff.schedule().unwrap();
        let x = toy_data().dense_batch(&[0, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = model.score(&sched, &x, 0, &mut rng).unwrap();
        let b = model.score(&sched, &x, 0, &mut rng).unwrap();
        assert_eq!(a, b);
    }
}
