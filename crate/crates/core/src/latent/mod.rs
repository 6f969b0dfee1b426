//! Latent variant: items are clustered, each category is compressed by its
//! own variational encoder, and diffusion runs on the concatenated latent.

mod cluster;
mod svd;
mod train;
mod vae;

pub use cluster::{kmeans, proportional_dims, ClusterModel, DEFAULT_MAX_ITERS};
pub use svd::item_embeddings_svd;
pub use train::{
    build_latent, cluster_items, gamma_at, infer_latent, latent_param_count, train_latent, train_latent_from,
    LatentConfig, LatentModel, LatentOutcome, ParamCounts,
};
pub use vae::{
    category_hidden, gaussian_kl, vae_loss, vae_param_counts, Encoded, Likelihood, RecordedEncode, VaeStack,
    LOGVAR_BOUND,
};
