//! Clusters items, trains L-DiffRec and compares its size with DiffRec.

use diffrec::data::InteractionMatrix;
use diffrec::diffusion::{denoiser_param_count, TrainConfig, Validation};
use diffrec::latent::{cluster_items, latent_param_count, train_latent, LatentConfig};

fn main() -> diffrec::Result<()> {
    // two communities of users over two halves of the catalogue
    let (users, items) = (60, 40);
    let mut train_pairs = Vec::new();
    let mut val_pairs = Vec::new();
    for u in 0..users {
        let base = if u % 2 == 0 { 0 } else { items / 2 };
        for k in 0..6 {
            train_pairs.push((u, base + (u * 7 + k * 3) % (items / 2)));
        }
        val_pairs.push((u, base + (u * 7 + 19) % (items / 2)));
    }
    train_pairs.sort_unstable();
    train_pairs.dedup();
    let train_m = InteractionMatrix::from_pairs(users, items, &train_pairs)?;
    let val = InteractionMatrix::from_pairs(users, items, &val_pairs)?;

    let diff = TrainConfig {
        epochs: 30,
        batch_size: 20,
        lr: 1e-3,
        hidden: vec![16],
        patience: 0,
        ..TrainConfig::default()
    };
    let lat = LatentConfig {
        categories: 2,
        latent_total: 8,
        vae_hidden: 32,
        anneal_epochs: 10,
        embed_rank: 4,
        ..LatentConfig::default()
    };
    let clusters = cluster_items(&train_m, &lat, diff.seed)?;
    println!("latent widths per category: {:?}", clusters.latent_dims());
    let counts = latent_param_count(&clusters, lat.vae_hidden, &diff.hidden);
    let plain = denoiser_param_count(items, &diff.hidden);
    println!("L-DiffRec {counts:?} total {} vs DiffRec {plain}", counts.total());

    let validation = Validation { conditioning: &train_m, mask: &train_m, targets: &val };
    let out = train_latent(&train_m, Some(validation), &diff, &lat)?;
    print!("{}", out.log.to_text());
    Ok(())
}
