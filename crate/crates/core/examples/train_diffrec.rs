//! Trains DiffRec on synthetic block-structured data and evaluates it.
//!
//! Pass a prepared bundle directory to train on real data instead:
//! `cargo run --release --example train_diffrec -- data/bundle`.

use diffrec::data::{read_bundle, InteractionMatrix};
use diffrec::diffusion::{scorer, train, StepSampling, TrainConfig, Validation};
use diffrec::eval::{evaluate_with, MaskingPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Users prefer one of four item blocks; each split holds disjoint picks.
fn synthetic(users: usize, items: usize) -> diffrec::Result<[InteractionMatrix; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let block = items / 4;
    let mut pairs = [Vec::new(), Vec::new(), Vec::new()];
    for u in 0..users {
        let b = u % 4;
        let mut picks: Vec<usize> = (0..block).map(|i| b * block + i).filter(|_| rng.random_bool(0.5)).collect();
        picks.push(rng.random_range(0..items));
        picks.sort_unstable();
        picks.dedup();
        for (k, item) in picks.into_iter().enumerate() {
            pairs[[0, 0, 0, 0, 0, 0, 0, 1, 2, 2][k % 10]].push((u, item));
        }
    }
    let [a, b, c] = pairs;
    Ok([
        InteractionMatrix::from_pairs(users, items, &a)?,
        InteractionMatrix::from_pairs(users, items, &b)?,
        InteractionMatrix::from_pairs(users, items, &c)?,
    ])
}

fn main() -> diffrec::Result<()> {
    let (train_m, val, test, cfg) = match std::env::args().nth(1) {
        Some(dir) => {
            let b = read_bundle(dir.as_ref())?;
            (b.train, b.val, b.test, TrainConfig { epochs: 30, ..TrainConfig::default() })
        }
        None => {
            let [tr, va, te] = synthetic(200, 80)?;
            let cfg = TrainConfig {
                epochs: 40,
                batch_size: 50,
                lr: 1e-3,
                hidden: vec![64],
                sampling: StepSampling::Importance,
                patience: 10,
                ..TrainConfig::default()
            };
            (tr, va, te, cfg)
        }
    };
    let validation = Validation { conditioning: &train_m, mask: &train_m, targets: &val };
    let out = train(&train_m, Some(validation), &cfg)?;
    print!("{}", out.log.to_text());
    println!("best epoch {:?}, {} parameters", out.log.best_epoch, out.net.num_params());

    let history = train_m.merged(&val)?;
    let sched = cfg.schedule()?;
    let report = evaluate_with(
        scorer(&out.net, &sched, cfg.t_prime, cfg.seed),
        &history,
        &history,
        &test,
        &[10, 20],
        MaskingPolicy::TrainAndValidation,
        cfg.batch_size,
    )?;
    print!("{}", report.to_key_values());
    Ok(())
}
