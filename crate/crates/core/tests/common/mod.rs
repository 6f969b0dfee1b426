//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use diffrec::data::InteractionMatrix;
use diffrec::diffusion::{gaussian, loss_eps_with_grads, loss_t_with_grads, record_loss, weighted_error, DenoiserNet, ImportanceSampler, Objective, HISTORY};
use diffrec::eval::ndcg_at_k;
use diffrec::latent::{item_embeddings_svd, ClusterModel, Likelihood, VaeStack};
use diffrec::nn::{DenseMatrix, Gradients, ParamStore, Tape};
use diffrec::schedule::NoiseSchedule;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one numeric check.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: String) -> Self {
        Check { name: name.to_string(), pass, detail }
    }
}

pub fn moderate_schedule(steps: usize) -> NoiseSchedule {
    NoiseSchedule::new(0.5, 0.1, 0.6, steps).unwrap()
}

pub fn schedule_endpoints() -> Check {
    let mut worst: f64 = 0.0;
    for &(s, lo, hi, t) in &[(1e-4, 5e-4, 5e-3, 5usize), (0.1, 0.01, 0.9, 40), (1.0, 0.2, 0.7, 2)] {
        let sched = NoiseSchedule::new(s, lo, hi, t).unwrap();
        worst = worst
            .max((sched.one_minus_abar(1) - s * lo).abs())
            .max((sched.one_minus_abar(t) - s * hi).abs());
    }
    Check::new("schedule endpoints", worst <= 1e-15, format!("max |err| = {worst:.3e} (tol 1e-15)"))
}

/// Monte-Carlo mean and variance of `q(x_t | x0)` against `sqrt(abar) x0`
/// and `1 - abar`, within three standard errors.
pub fn forward_moments(samples: usize) -> Check {
    let sched = moderate_schedule(4);
    let x0v = [1.0, 0.0, 0.4];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut ok = true;
    let mut worst = 0.0f64;
    for t in 1..=sched.steps() {
        let x0 = DenseMatrix::from_array(ndarray::Array2::from_shape_fn((samples, 3), |(_, c)| x0v[c])).unwrap();
        let eps = DenseMatrix::from_array(gaussian(samples, 3, &mut rng)).unwrap();
        let xt = sched.q_sample(&x0, t, &eps).unwrap();
        for (c, &x) in x0v.iter().enumerate() {
            let col = xt.as_array().column(c);
            let n = samples as f64;
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let want_mean = sched.abar(t).sqrt() * x;
            let want_var = sched.one_minus_abar(t);
            let z_mean = (mean - want_mean).abs() / (want_var / n).sqrt();
            let z_var = (var - want_var).abs() / (want_var * (2.0 / (n - 1.0)).sqrt());
            worst = worst.max(z_mean).max(z_var);
            ok &= z_mean < 3.0 && z_var < 3.0;
        }
    }
    Check::new("forward moments", ok, format!("worst deviation {worst:.2} SE over {samples} samples (tol 3)"))
}

/// Posterior mean of `x_{t-1}` given `x_t`, `x0` from numerical integration
/// of `q(x_t | x_{t-1}) q(x_{t-1} | x0)` on a 1-D grid.
pub fn grid_posterior_mean(sched: &NoiseSchedule, x_t: f64, x0: f64, t: usize) -> f64 {
    let (a_prev, b_prev) = (sched.abar(t - 1).sqrt(), sched.one_minus_abar(t - 1));
    let alpha = sched.abar(t) / sched.abar(t - 1);
    let beta = 1.0 - alpha;
    let centre = a_prev * x0;
    let half = 12.0 * b_prev.sqrt();
    let n = 40_001;
    let h = 2.0 * half / (n - 1) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        let x = centre - half + i as f64 * h;
        let log_p = -(x_t - alpha.sqrt() * x).powi(2) / (2.0 * beta) - (x - centre).powi(2) / (2.0 * b_prev);
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 } * log_p.exp();
        num += w * x;
        den += w;
    }
    num / den
}

pub fn posterior_vs_grid() -> Check {
    let sched = moderate_schedule(5);
    let mut worst = 0.0f64;
    for t in 2..=5 {
        for &(xt, x0) in &[(0.3, 1.0), (-0.7, 0.0), (1.4, 1.0), (0.05, 0.5)] {
            let got = sched
                .posterior_mean(
                    &DenseMatrix::from_vec(1, 1, vec![xt]).unwrap(),
                    &DenseMatrix::from_vec(1, 1, vec![x0]).unwrap(),
                    t,
                )
                .unwrap()
                .get(0, 0);
            worst = worst.max((got - grid_posterior_mean(&sched, xt, x0, t)).abs());
        }
    }
    Check::new("posterior mean vs grid Bayes", worst < 1e-6, format!("max |err| = {worst:.3e} (tol 1e-6)"))
}

/// General multivariate Gaussian KL with diagonal covariances.
pub fn diag_gaussian_kl(mu1: &[f64], var1: &[f64], mu2: &[f64], var2: &[f64]) -> f64 {
    let mut kl = 0.0;
    for i in 0..mu1.len() {
        kl += var1[i] / var2[i] + (mu2[i] - mu1[i]).powi(2) / var2[i] - 1.0 + (var2[i] / var1[i]).ln();
    }
    0.5 * kl
}

/// The weighted x0 error against `KL(q(x_{t-1}|x_t,x0) || p(x_{t-1}|x_t))`
/// with `p` sharing the posterior variance and centred on the prediction.
pub fn weight_vs_kl() -> Check {
    let sched = moderate_schedule(6);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for t in 2..=6 {
        for _ in 0..10 {
            let x0: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let pred: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let xt: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let m = |v: &[f64]| DenseMatrix::from_vec(1, 2, v.to_vec()).unwrap();
            let mu_q = sched.posterior_mean(&m(&xt), &m(&x0), t).unwrap().to_vec();
            let mu_p = sched.posterior_mean(&m(&xt), &m(&pred), t).unwrap().to_vec();
            let var = (1.0 - sched.abar(t - 1)) * (1.0 - sched.abar(t) / sched.abar(t - 1)) / (1.0 - sched.abar(t));
            let kl = diag_gaussian_kl(&mu_q, &[var; 2], &mu_p, &[var; 2]);
            let got = weighted_error(&sched, t, &m(&pred), &m(&x0)).unwrap();
            worst = worst.max((got - kl).abs() / kl.abs().max(1e-300));
        }
    }
    Check::new("step weight vs Gaussian KL", worst < 1e-9, format!("max rel err = {worst:.3e} (tol 1e-9)"))
}

pub fn sampler_two_to_one() -> Check {
    let mut s = ImportanceSampler::new(2).unwrap();
    for _ in 0..HISTORY {
        s.record(1, 2.0).unwrap();
        s.record(2, 1.0).unwrap();
    }
    let p = s.probs();
    let err = (p[0] - 2.0 / 3.0).abs().max((p[1] - 1.0 / 3.0).abs());
    Check::new("importance sampler 2:1", err <= 1e-12, format!("p = {p:?}, err {err:.3e} (tol 1e-12)"))
}

pub fn ndcg_hand_case() -> Check {
    let test = [10usize, 12].into_iter().collect();
    let v = ndcg_at_k(&[10, 11, 12], &test, 3);
    Check::new("NDCG hand case", (v - 0.91972).abs() <= 1e-5, format!("ndcg = {v:.6} (want 0.91972 +- 1e-5)"))
}

pub fn formula_oracles() -> Vec<Check> {
    vec![
        schedule_endpoints(),
        forward_moments(100_000),
        posterior_vs_grid(),
        weight_vs_kl(),
        sampler_two_to_one(),
        ndcg_hand_case(),
    ]
}

/// Largest relative error between analytic gradients and a five-point
/// central difference. Entries whose magnitudes are both below `floor` are
/// compared absolutely.
pub fn fd_max_rel_err(store: &ParamStore, grads: &Gradients, mut eval: impl FnMut(&ParamStore) -> f64) -> f64 {
    let h = 1e-4;
    let floor = 1e-7;
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for id in store.ids() {
        let shape = store.get(id).dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = probe.get(id)[[r, c]];
                let mut at = |dx: f64| {
                    probe.get_mut(id)[[r, c]] = orig + dx;
                    eval(&probe)
                };
                let numeric = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
                probe.get_mut(id)[[r, c]] = orig;
                let analytic = grads.get(id)[[r, c]];
                let scale = numeric.abs().max(analytic.abs());
                let err = if scale < floor { (numeric - analytic).abs() } else { (numeric - analytic).abs() / scale };
                worst = worst.max(err);
            }
        }
    }
    worst
}

fn random_x0(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_array(ndarray::Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.0..1.0))).unwrap()
}

fn with_store(net: &DenoiserNet, store: &ParamStore) -> DenoiserNet {
    let mut n = net.clone();
    n.load_store(store.clone()).unwrap();
    n
}

/// `(case, parameters, max relative error)` for every loss.
pub fn gradient_suite(seed: u64) -> Vec<(String, usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sched = moderate_schedule(4);
    let mut out = Vec::new();

    for (name, objective, t) in [("L_t (t=3)", Objective::X0, 3), ("L_1", Objective::X0, 1), ("eps loss (t=2)", Objective::Eps, 2)] {
        let net = DenoiserNet::new(2, &[2], 0.0, objective, &mut rng).unwrap();
        let x0 = random_x0(&mut rng, 3, 2);
        let eps = DenseMatrix::from_array(gaussian(3, 2, &mut rng)).unwrap();
        let f = |n: &DenoiserNet| match objective {
            Objective::X0 => loss_t_with_grads(&sched, n, &x0, t, &eps).unwrap(),
            Objective::Eps => loss_eps_with_grads(&sched, n, &x0, t, &eps).unwrap(),
        };
        let (_, grads) = f(&net);
        let err = fd_max_rel_err(net.store(), &grads, |s| f(&with_store(&net, s)).0);
        out.push((name.to_string(), net.num_params(), err));
    }

    for likelihood in [Likelihood::PerCategory, Likelihood::Global] {
        let clusters = ClusterModel::from_assignment(vec![0, 1, 0, 1], 2, 2).unwrap();
        let stack = VaeStack::new(&clusters, 2, likelihood, &mut rng).unwrap();
        let x0 = random_x0(&mut rng, 2, 4);
        let eps = stack.sample_eps(2, &mut rng);
        let f = |s: &VaeStack| {
            let mut tape = Tape::new();
            let (loss, _) = s.record_loss(&mut tape, x0.as_array(), &eps, 0.3).unwrap();
            let v = tape.scalar(loss);
            (v, tape.backward(loss).unwrap().for_store(s.store()))
        };
        let (_, grads) = f(&stack);
        let err = fd_max_rel_err(stack.store(), &grads, |st| {
            let mut s = stack.clone();
            s.load_store(st.clone()).unwrap();
            f(&s).0
        });
        out.push((format!("VAE loss ({likelihood})"), stack.store().num_scalars(), err));
    }

    // joint objective: gradient through the encoder from both terms
    let clusters = ClusterModel::from_assignment(vec![0, 0, 0], 1, 1).unwrap();
    let stack = VaeStack::new(&clusters, 2, Likelihood::PerCategory, &mut rng).unwrap();
    let den = DenoiserNet::new(1, &[1], 0.0, Objective::X0, &mut rng).unwrap();
    let x0 = random_x0(&mut rng, 2, 3);
    let eps_z = stack.sample_eps(2, &mut rng);
    let eps = gaussian(2, 1, &mut rng);
    let joint = |s: &VaeStack, d: &DenoiserNet| {
        let mut tape = Tape::new();
        let (vae, enc) = s.record_loss(&mut tape, x0.as_array(), &eps_z, 0.2).unwrap();
        let dl = record_loss(&mut tape, &sched, d, Objective::X0, enc.z0, &[2, 2], &eps, &[1.0, 1.0], None).unwrap();
        let w = tape.scale(dl.loss, 0.1);
        let total = tape.add(vae, w).unwrap();
        let g = tape.backward(total).unwrap();
        (tape.scalar(total), g.for_store(s.store()), g.for_store(d.store()))
    };
    let (_, g_vae, g_den) = joint(&stack, &den);
    let e1 = fd_max_rel_err(stack.store(), &g_vae, |st| {
        let mut s = stack.clone();
        s.load_store(st.clone()).unwrap();
        joint(&s, &den).0
    });
    let e2 = fd_max_rel_err(den.store(), &g_den, |st| joint(&stack, &with_store(&den, st)).0);
    out.push(("latent joint loss".to_string(), stack.store().num_scalars() + den.num_params(), e1.max(e2)));
    out
}

/// Dense-SVD reference for the item embeddings, with the same sign rule.
pub fn reference_embeddings(m: &InteractionMatrix, d: usize) -> DMatrix<f64> {
    let dense = m.dense_rows(&(0..m.n_users()).collect::<Vec<_>>());
    let x = DMatrix::from_fn(dense.nrows(), dense.ncols(), |r, c| dense[[r, c]]);
    let svd = x.svd(false, true);
    let vt = svd.v_t.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = DMatrix::zeros(m.n_items(), d);
    for (col, &k) in order.iter().take(d).enumerate() {
        let mut v: Vec<f64> = vt.row(k).iter().copied().collect();
        let pivot = v.iter().copied().fold(0.0f64, |p, x| if x.abs() > p.abs() { x } else { p });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for (i, x) in v.iter().enumerate() {
            out[(i, col)] = x * svd.singular_values[k];
        }
    }
    out
}

pub fn svd_max_err(m: &InteractionMatrix, d: usize) -> f64 {
    let got = item_embeddings_svd(m, d).unwrap();
    let want = reference_embeddings(m, d);
    let mut worst = 0.0f64;
    for i in 0..m.n_items() {
        for c in 0..d {
            worst = worst.max((got.get(i, c) - want[(i, c)]).abs());
        }
    }
    worst
}

/// Synthetic ratings file: four user groups, each preferring one block of
/// items, with timestamps and a mix of high and low ratings.
pub fn write_ratings(path: &Path, users: usize, per_user: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut text = String::new();
    let items = 60;
    for u in 0..users {
        let block = (u % 4) * 15;
        let mut seen = std::collections::HashSet::new();
        for k in 0..per_user {
            let item = if rng.random_bool(0.85) { block + rng.random_range(0..15) } else { rng.random_range(0..items) };
            if !seen.insert(item) {
                continue;
            }
            let rating = if rng.random_bool(0.8) { 5 } else { 2 };
            let ts = 1_000_000 + (k * users + u) as i64 * 60;
            let _ = writeln!(text, "user{u}\titem{item}\t{rating}\t{ts}");
        }
    }
    std::fs::write(path, text).unwrap();
}
