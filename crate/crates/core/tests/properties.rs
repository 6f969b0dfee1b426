use std::collections::HashSet;
use std::fmt::Write as _;

use diffrec::cli::RunConfig;
use diffrec::data::{parse, prepare_bundle, split_sizes, InputFormat, InteractionMatrix, Regime};
use diffrec::diffusion::{infer_with, ImportanceSampler};
use diffrec::eval::{ndcg_at_k, rank_items, recall_at_k};
use diffrec::latent::{kmeans, proportional_dims};
use diffrec::nn::{timestep_embedding, Checkpoint, DenseMatrix, ParamStore};
use diffrec::schedule::NoiseSchedule;
use diffrec::temporal::{linear_weights, reweight};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn schedule_params() -> impl Strategy<Value = (f64, f64, f64, usize)> {
    (1e-5f64..1.0, 1e-4f64..0.5, 2usize..40).prop_flat_map(|(s, lo, t)| (Just(s), Just(lo), lo..0.99, Just(t)))
}

proptest! {
    #[test]
    fn schedule_is_monotone_and_bounded((s, lo, hi, t) in schedule_params()) {
        let sched = NoiseSchedule::new(s, lo, hi, t).unwrap();
        for k in 1..=t {
            let b = sched.beta(k);
            prop_assert!(b > 0.0 && b < 1.0);
            prop_assert!(sched.abar(k) > 0.0 && sched.abar(k) < 1.0);
            prop_assert!(sched.loss_weight(k).unwrap() > 0.0);
            if k > 1 {
                prop_assert!(sched.one_minus_abar(k) >= sched.one_minus_abar(k - 1));
                prop_assert!(sched.snr(k) <= sched.snr(k - 1));
                let (c_xt, c_x0) = sched.posterior_coefficients(k).unwrap();
                prop_assert!(c_xt >= 0.0 && c_x0 > 0.0 && c_x0 <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_reverse_pass_composes_predictions(t in 1usize..8, x in prop::collection::vec(-2.0f64..2.0, 3)) {
        let sched = NoiseSchedule::new(0.0, 1e-3, 1e-2, t).unwrap();
        let x0 = Array2::from_shape_vec((1, 3), x.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = infer_with(|v, _| Ok(v * 0.5 + 0.1), &sched, &x0, 0, &mut rng).unwrap();
        let mut want = x0.clone();
        for _ in 0..t {
            want = &want * 0.5 + 0.1;
        }
        for (a, b) in out.iter().zip(want.iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ranking_matches_full_sort(
        scores in prop::collection::vec(prop::sample::select(vec![0.0, 0.25, 0.5, 1.0, -1.0, 3.0]), 1..40),
        mask_bits in prop::collection::vec(any::<bool>(), 40),
        k in 0usize..50,
    ) {
        let mask: HashSet<usize> = (0..scores.len()).filter(|&i| mask_bits[i]).collect();
        let got = rank_items(&scores, &mask, k);
        let mut all: Vec<usize> = (0..scores.len()).filter(|i| !mask.contains(i)).collect();
        all.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        all.truncate(k);
        prop_assert_eq!(got, all);
    }

    #[test]
    fn metrics_are_bounded(
        top in prop::collection::vec(0usize..30, 0..20),
        test in prop::collection::hash_set(0usize..30, 1..10),
        k in 1usize..25,
    ) {
        let mut seen = HashSet::new();
        let top: Vec<usize> = top.into_iter().filter(|i| seen.insert(*i)).take(k).collect();
        let r = recall_at_k(&top, &test);
        let n = ndcg_at_k(&top, &test, k);
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
    }

    #[test]
    fn perfect_prefix_has_unit_ndcg(test in prop::collection::hash_set(0usize..50, 1..15), k in 1usize..20) {
        let mut ordered: Vec<usize> = test.iter().copied().collect();
        ordered.sort_unstable();
        let top: Vec<usize> = ordered.into_iter().take(k).collect();
        prop_assert!((ndcg_at_k(&top, &test, k) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn proportional_dims_cover_total(sizes in prop::collection::vec(1usize..500, 1..8), extra in 0usize..400) {
        let total = sizes.len() + extra;
        let dims = proportional_dims(&sizes, total).unwrap();
        prop_assert_eq!(dims.iter().sum::<usize>(), total);
        prop_assert!(dims.iter().all(|&d| d >= 1));
    }

    #[test]
    fn temporal_weights_are_linear_and_ordered(m in 1usize..60, lo in 0.01f64..1.0, span in 0.0f64..1.0) {
        let hi = lo + (1.0 - lo) * span;
        let w = linear_weights(m, lo, hi).unwrap();
        prop_assert_eq!(w.len(), m);
        prop_assert!((w[m - 1] - hi).abs() < 1e-12);
        if m > 1 {
            prop_assert!((w[0] - lo).abs() < 1e-12);
        }
        prop_assert!(w.windows(2).all(|p| p[1] >= p[0]));
        let seq: Vec<usize> = (0..m).rev().collect();
        let dense = reweight(&seq, m, lo, hi).unwrap().to_dense();
        // the most recent interaction (item 0) carries w_max
        prop_assert!((dense[0] - hi).abs() < 1e-12);
    }

    #[test]
    fn split_sizes_sum(n in 0usize..100_000) {
        let s = split_sizes(n, &[0.7, 0.1, 0.2]);
        prop_assert_eq!(s.iter().sum::<usize>(), n);
    }

    #[test]
    fn sampler_probabilities_form_a_distribution(
        steps in 1usize..8,
        losses in prop::collection::vec(0.0f64..100.0, 80),
    ) {
        let mut s = ImportanceSampler::new(steps).unwrap();
        for (i, l) in losses.iter().enumerate() {
            s.record(1 + i % steps, *l).unwrap();
        }
        let p = s.probs();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn timestep_embedding_is_bounded(t in 1usize..10_000) {
        let e = timestep_embedding(t as f64, 10).unwrap();
        prop_assert_eq!(e.len(), 10);
        prop_assert!(e.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn checkpoint_bytes_round_trip(
        shapes in prop::collection::vec((1usize..5, 1usize..5), 1..4),
        seed in any::<u64>(),
        step in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (i, (r, c)) in shapes.iter().enumerate() {
            store.add_xavier(format!("w{i}"), *r, *c, &mut rng);
        }
        let mut ck = Checkpoint::new();
        ck.meta.insert("note".into(), format!("seed={seed} step={step}"));
        ck.sections.insert("net".into(), store);
        ck.extra.insert("x".into(), Array2::from_elem((2, 2), seed as f64));
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        prop_assert_eq!(back, ck);
    }

    #[test]
    fn kmeans_partitions_items(n in 4usize..40, c in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = DenseMatrix::from_array(diffrec::diffusion::gaussian(n, 3, &mut rng)).unwrap();
        let cm = kmeans(&emb, c, seed, 50, 2 * c).unwrap();
        prop_assert_eq!(cm.n_items(), n);
        let total: usize = (0..cm.n_categories()).map(|k| cm.members(k).len()).sum();
        prop_assert_eq!(total, n);
        prop_assert!((0..cm.n_categories()).all(|k| !cm.members(k).is_empty()));
        prop_assert_eq!(cm.latent_total(), 2 * c);
    }

    #[test]
    fn config_echo_round_trips(steps in 1usize..20, lr in 1e-6f64..1.0, seed in any::<u64>()) {
        let mut cfg = RunConfig::new();
        cfg.set("steps", &steps.to_string()).unwrap();
        cfg.set("lr", &lr.to_string()).unwrap();
        cfg.set("seed", &seed.to_string()).unwrap();
        let back = RunConfig::from_text(&cfg.resolved_text()).unwrap();
        prop_assert_eq!(back.resolved(), cfg.resolved());
        prop_assert_eq!(back.train_config().unwrap(), cfg.train_config().unwrap());
    }
}

fn dataset_text(seed: u64, users: usize, per_user: usize) -> String {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::new();
    for u in 0..users {
        for k in 0..per_user {
            let _ = writeln!(
                text,
                "u{u}\ti{}\t{}\t{}",
                rng.random_range(0..25),
                rng.random_range(1..=5),
                rng.random_range(0..1000) + k
            );
        }
    }
    text
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn splits_are_disjoint_and_chronological(seed in any::<u64>(), users in 2usize..15, per_user in 1usize..12) {
        let ds = parse(&dataset_text(seed, users, per_user), InputFormat::Tsv).unwrap();
        for regime in [Regime::Clean, Regime::Temporal, Regime::NaturalNoise] {
            let Ok(b) = prepare_bundle(&ds, regime, seed) else { continue };
            let mut seen = HashSet::new();
            for m in [&b.train, &b.val, &b.test] {
                for (u, row) in m.rows().iter().enumerate() {
                    for it in row {
                        prop_assert!(seen.insert((u, it.item)), "pair in two splits");
                    }
                }
            }
            let ts = |m: &InteractionMatrix| m.rows().iter().flatten().filter_map(|x| x.timestamp).collect::<Vec<_>>();
            let (tr, va, te) = (ts(&b.train), ts(&b.val), ts(&b.test));
            if let (Some(a), Some(z)) = (tr.iter().max(), va.iter().chain(&te).min()) {
                prop_assert!(a <= z);
            }
            if let (Some(a), Some(z)) = (va.iter().max(), te.iter().min()) {
                prop_assert!(a <= z);
            }
            let count = |k: &str| b.manifest.get(k).and_then(|v| v.parse::<usize>().ok());
            prop_assert_eq!(count("train_interactions"), Some(b.train.nnz()));
            prop_assert_eq!(count("test_interactions"), Some(b.test.nnz()));
        }
    }

    #[test]
    fn random_noise_adds_only_unseen_pairs(seed in any::<u64>(), p in 0.0f64..1.0) {
        let ds = parse(&dataset_text(seed, 10, 10), InputFormat::Tsv).unwrap();
        let Ok(clean) = prepare_bundle(&ds, Regime::Clean, seed) else { return Ok(()) };
        let noisy = prepare_bundle(&ds, Regime::RandomNoise(p), seed).unwrap();
        prop_assert_eq!(noisy.train.nnz(), clean.train.nnz() + noisy.injected.len());
        for &(u, i) in &noisy.injected {
            prop_assert!(!clean.train.contains(u, i));
            prop_assert!(!clean.val.contains(u, i) && !clean.test.contains(u, i));
        }
        prop_assert_eq!(&noisy.test, &clean.test);
    }
}
