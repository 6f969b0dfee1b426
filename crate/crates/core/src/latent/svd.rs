use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::InteractionMatrix;
use crate::diffusion::gaussian;
use crate::error::{Error, Result};
use crate::nn::DenseMatrix;

const OVERSAMPLE: usize = 10;
const POWER_ITERS: usize = 40;
const SEED: u64 = 0x05ee_d5fd;

/// `X^T X Q` for the sparse interaction matrix `X`.
fn gram_times(data: &InteractionMatrix, q: &Array2<f64>) -> Array2<f64> {
    let k = q.ncols();
    let mut out = Array2::zeros(q.dim());
    let mut acc = vec![0.0; k];
    for row in data.rows() {
        if row.is_empty() {
            continue;
        }
        acc.iter_mut().for_each(|a| *a = 0.0);
        for it in row {
            for (a, v) in acc.iter_mut().zip(q.row(it.item)) {
                *a += it.weight * v;
            }
        }
        for it in row {
            for (o, a) in out.row_mut(it.item).iter_mut().zip(&acc) {
                *o += it.weight * a;
            }
        }
    }
    out
}

fn to_nalgebra(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[[r, c]])
}

fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(r, c)| m[(r, c)])
}

fn orthonormalize(a: &Array2<f64>) -> Array2<f64> {
    from_nalgebra(&to_nalgebra(a).qr().q())
}

/// Rank-`d` item embeddings `V_d * Sigma_d` of the interaction matrix,
/// from subspace iteration on `X^T X` followed by a Rayleigh-Ritz step.
/// Each singular vector's largest-magnitude entry is made positive.
pub fn item_embeddings_svd(data: &InteractionMatrix, d: usize) -> Result<DenseMatrix> {
    let n = data.n_items();
    if d == 0 || d > data.n_users().min(n) {
        return Err(Error::config(format!(
            "embedding rank {d} must lie in 1..={}",
            data.n_users().min(n)
        )));
    }
    if data.rows().iter().flatten().all(|it| it.weight == 0.0) {
        return Err(Error::input("cannot factorize an all-zero interaction matrix"));
    }
    let k = (d + OVERSAMPLE).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut q = orthonormalize(&gaussian(n, k, &mut rng));
    if k < n {
        for _ in 0..POWER_ITERS {
            q = orthonormalize(&gram_times(data, &q));
        }
    }
    let b = q.t().dot(&gram_times(data, &q));
    let b = (&b + &b.t()) * 0.5;
    let eig = SymmetricEigen::new(to_nalgebra(&b));
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));

    let vecs = from_nalgebra(&eig.eigenvectors);
    let mut emb = Array2::zeros((n, d));
    for (col, &e) in order.iter().take(d).enumerate() {
        let sigma = eig.eigenvalues[e].max(0.0).sqrt();
        let mut v = q.dot(&vecs.column(e));
        let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            v.mapv_inplace(|x| -x);
        }
        emb.column_mut(col).assign(&(v * sigma));
    }
    let out = DenseMatrix::from_array_unchecked(emb);
    out.ensure_finite("item embeddings")?;
    Ok(out)
}
