use std::fmt::Write as _;

use ndarray::{Array2, ArrayView1};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::DenseMatrix;

pub const DEFAULT_MAX_ITERS: usize = 100;

/// Item-to-category assignment plus the latent width of each category.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
    latent_dims: Vec<usize>,
}

/// Splits `total` over categories in proportion to `sizes` by largest
/// remainder (ties to the lower index); a category left at zero takes one
/// unit from the currently widest category.
pub fn proportional_dims(sizes: &[usize], total: usize) -> Result<Vec<usize>> {
    let c = sizes.len();
    if c == 0 || total < c {
        return Err(Error::config(format!("latent width {total} cannot cover {c} categories")));
    }
    let n: usize = sizes.iter().sum();
    let quotas: Vec<f64> = sizes.iter().map(|&s| total as f64 * s as f64 / n as f64).collect();
    let mut dims: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let left = total - dims.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take(left) {
        dims[i] += 1;
    }
    while let Some(z) = dims.iter().position(|&d| d == 0) {
        let widest = (0..c).max_by(|&a, &b| dims[a].cmp(&dims[b]).then(b.cmp(&a))).unwrap_or(0);
        dims[widest] -= 1;
        dims[z] = 1;
    }
    Ok(dims)
}

impl ClusterModel {
    /// `assignment[i]` is item `i`'s category in `0..categories`.
    pub fn from_assignment(assignment: Vec<usize>, categories: usize, latent_total: usize) -> Result<Self> {
        let mut members = vec![Vec::new(); categories];
        for (item, &c) in assignment.iter().enumerate() {
            if c >= categories {
                return Err(Error::input(format!("item {item} assigned to category {c} of {categories}")));
            }
            members[c].push(item);
        }
        if let Some(c) = members.iter().position(Vec::is_empty) {
            return Err(Error::input(format!("category {c} has no items")));
        }
        let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
        let latent_dims = proportional_dims(&sizes, latent_total)?;
        Ok(ClusterModel {
            assignment,
            members,
            latent_dims,
        })
    }

    /// Every item in one category.
    pub fn single(n_items: usize, latent_total: usize) -> Result<Self> {
        Self::from_assignment(vec![0; n_items], 1, latent_total)
    }

    pub fn n_items(&self) -> usize {
        self.assignment.len()
    }

    pub fn n_categories(&self) -> usize {
        self.members.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn members(&self, c: usize) -> &[usize] {
        &self.members[c]
    }

    pub fn latent_dims(&self) -> &[usize] {
        &self.latent_dims
    }

    pub fn latent_total(&self) -> usize {
        self.latent_dims.iter().sum()
    }

    /// Start column of each category inside the concatenated latent.
    pub fn latent_offsets(&self) -> Vec<usize> {
        self.latent_dims
            .iter()
            .scan(0, |acc, &d| {
                let start = *acc;
                *acc += d;
                Some(start)
            })
            .collect()
    }

    /// `item \t category` lines with 1-based categories.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.assignment.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{}", c + 1);
        }
        out
    }

    pub fn from_tsv(text: &str, latent_total: usize) -> Result<Self> {
        let mut assignment = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let parsed = line
                .split_once('\t')
                .and_then(|(i, c)| Some((i.parse::<usize>().ok()?, c.parse::<usize>().ok()?)));
            match parsed {
                Some((i, c)) if i == n && c >= 1 => assignment.push(c - 1),
                _ => return Err(Error::input(format!("malformed cluster line {}: {line:?}", n + 1))),
            }
        }
        let categories = assignment.iter().max().map_or(0, |m| m + 1);
        Self::from_assignment(assignment, categories, latent_total)
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ArrayView1<f64>, centers: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.rows().into_iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centers<R: Rng>(x: &Array2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = x.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = x.rows().into_iter().map(|p| sq_dist(p, x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            Err(_) => {
                // all remaining points coincide with a center
                let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        chosen.push(next);
        for (d, p) in dist.iter_mut().zip(x.rows()) {
            *d = d.min(sq_dist(p, x.row(next)));
        }
    }
    let mut centers = Array2::zeros((k, x.ncols()));
    for (r, &i) in chosen.iter().enumerate() {
        centers.row_mut(r).assign(&x.row(i));
    }
    centers
}

fn centroids(x: &Array2<f64>, assign: &[usize], k: usize) -> (Array2<f64>, Vec<usize>) {
    let mut c = Array2::zeros((k, x.ncols()));
    let mut counts = vec![0usize; k];
    for (p, &a) in x.rows().into_iter().zip(assign) {
        let mut row = c.row_mut(a);
        row += &p;
        counts[a] += 1;
    }
    for (mut row, &n) in c.rows_mut().into_iter().zip(&counts) {
        if n > 0 {
            row /= n as f64;
        }
    }
    (c, counts)
}

/// Moves the point farthest from the largest cluster's centroid into each
/// empty cluster.
fn repair_empty(x: &Array2<f64>, assign: &mut [usize], k: usize) {
    loop {
        let (c, counts) = centroids(x, assign, k);
        let Some(empty) = counts.iter().position(|&n| n == 0) else { return };
        let largest = (0..k).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap_or(0);
        let far = (0..assign.len())
            .filter(|&i| assign[i] == largest)
            .max_by(|&a, &b| {
                sq_dist(x.row(a), c.row(largest))
                    .total_cmp(&sq_dist(x.row(b), c.row(largest)))
                    .then(b.cmp(&a))
            })
            .unwrap_or(0);
        assign[far] = empty;
    }
}

/// Lloyd's algorithm with k-means++ seeding. Ties in distance go to the
/// lower-indexed center.
pub fn kmeans(emb: &DenseMatrix, categories: usize, seed: u64, max_iters: usize, latent_total: usize) -> Result<ClusterModel> {
    let n = emb.rows();
    if categories == 0 || categories > n {
        return Err(Error::config(format!("cannot form {categories} clusters from {n} items")));
    }
    if categories == 1 {
        return ClusterModel::single(n, latent_total);
    }
    let x = emb.as_array();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_centers(x, categories, &mut rng);
    let mut assign: Vec<usize> = x.rows().into_iter().map(|p| nearest(p, &centers).0).collect();
    repair_empty(x, &mut assign, categories);
    for _ in 0..max_iters {
        centers = centroids(x, &assign, categories).0;
        let mut next: Vec<usize> = x.rows().into_iter().map(|p| nearest(p, &centers).0).collect();
        repair_empty(x, &mut next, categories);
        if next == assign {
            break;
        }
        assign = next;
    }
    ClusterModel::from_assignment(assign, categories, latent_total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_largest_remainder() {
        assert_eq!(proportional_dims(&[1, 1], 300).unwrap(), vec![150, 150]);
        assert_eq!(proportional_dims(&[2, 1], 10).unwrap(), vec![7, 3]);
        assert_eq!(proportional_dims(&[1000, 1], 3).unwrap(), vec![2, 1]);
        assert!(proportional_dims(&[1, 1, 1], 2).is_err());
        let d = proportional_dims(&[5, 9, 3, 40], 300).unwrap();
        assert_eq!(d.iter().sum::<usize>(), 300);
    }

    #[test]
    fn two_blobs_separate() {
        let mut rows = Vec::new();
        for i in 0..10 {
            let a = i as f64 * 0.6;
            rows.push(vec![10.0 + 0.1 * a.cos(), 0.1 * a.sin()]);
            rows.push(vec![-10.0 + 0.1 * a.cos(), 0.1 * a.sin()]);
        }
        let emb = DenseMatrix::from_rows(&rows).unwrap();
        let cm = kmeans(&emb, 2, 7, DEFAULT_MAX_ITERS, 4).unwrap();
        let a = cm.assignment();
        for i in 0..10 {
            assert_eq!(a[2 * i], a[0]);
            assert_eq!(a[2 * i + 1], a[1]);
        }
        assert_ne!(a[0], a[1]);
        assert_eq!(cm, kmeans(&emb, 2, 7, DEFAULT_MAX_ITERS, 4).unwrap());
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let emb = DenseMatrix::from_rows(&vec![vec![1.0, 1.0]; 5]).unwrap();
        let cm = kmeans(&emb, 3, 1, 10, 3).unwrap();
        assert_eq!(cm.n_categories(), 3);
        assert!(kmeans(&emb, 6, 1, 10, 6).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let cm = ClusterModel::from_assignment(vec![1, 0, 1, 1], 2, 8).unwrap();
        assert_eq!(cm.latent_dims(), &[2, 6]);
        assert_eq!(cm.latent_offsets(), vec![0, 2]);
        assert_eq!(ClusterModel::from_tsv(&cm.to_tsv(), 8).unwrap(), cm);
    }
}
