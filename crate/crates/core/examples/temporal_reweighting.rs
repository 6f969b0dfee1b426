//! Time-aware reweighting of interaction sequences and a short T-DiffRec run.

use diffrec::data::{Interaction, InteractionMatrix};
use diffrec::diffusion::{train, TrainConfig, Validation};
use diffrec::temporal::{apply_temporal, linear_weights, reweight, DEFAULT_W_MAX, DEFAULT_W_MIN};

fn main() -> diffrec::Result<()> {
    println!("weights for 5 interactions: {:?}", linear_weights(5, DEFAULT_W_MIN, DEFAULT_W_MAX)?);
    let h = reweight(&[4, 0, 2], 6, DEFAULT_W_MIN, DEFAULT_W_MAX)?;
    println!("sequence [4, 0, 2] -> dense {:?}", h.to_dense());

    // users drift from the first half of the catalogue to the second
    let (users, items) = (40, 16);
    let mut train_m = InteractionMatrix::new(users, items);
    let mut val = InteractionMatrix::new(users, items);
    for u in 0..users {
        for k in 0..6 {
            let item = (u + 2 * k) % items;
            train_m.push(u, Interaction { item, weight: 1.0, timestamp: Some(k as i64) })?;
        }
        val.push(u, Interaction { item: (u + 13) % items, weight: 1.0, timestamp: Some(9) })?;
    }
    let weighted = apply_temporal(&train_m, DEFAULT_W_MIN, DEFAULT_W_MAX)?;
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 8,
        lr: 1e-3,
        hidden: vec![32],
        patience: 0,
        ..TrainConfig::default()
    };
    let validation = Validation { conditioning: &weighted, mask: &train_m, targets: &val };
    let out = train(&weighted, Some(validation), &cfg)?;
    print!("{}", out.log.to_text());
    Ok(())
}
