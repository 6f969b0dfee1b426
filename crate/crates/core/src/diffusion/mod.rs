//! Denoiser network, step losses, step sampling, training and the reverse
//! pass used for scoring.

mod denoiser;
mod infer;
mod loss;
mod sampler;
mod train;

pub use denoiser::{denoise, denoiser_param_count, layer_dims, DenoiserNet, Objective, EMBED_DIM};
pub use infer::{gaussian, infer, infer_with};
pub use loss::{
    loss_eps, loss_eps_with_grads, loss_t, loss_t_with_grads, record_loss, weighted_error, BatchLoss,
};
pub use sampler::{ImportanceSampler, StepSampling, HISTORY};
pub use train::{eval_rng, scorer, train, train_from, EpochRecord, TrainConfig, TrainLog, TrainOutcome, Validation, VALIDATION_K};

#[allow(unused_imports)]
pub(crate) use train::{draw_steps, record_observations, run_epochs, training_rng, LoopSettings};
