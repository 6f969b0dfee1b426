use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nn::DenseMatrix;

/// One retained user-item interaction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interaction {
    pub item: usize,
    pub weight: f64,
    pub timestamp: Option<i64>,
}

/// Sparse user x item matrix.
///
/// Each row keeps its interactions in chronological order (ties in input
/// order), which is the order the temporal reweighting consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionMatrix {
    n_users: usize,
    n_items: usize,
    rows: Vec<Vec<Interaction>>,
}

impl InteractionMatrix {
    pub fn new(n_users: usize, n_items: usize) -> Self {
        InteractionMatrix {
            n_users,
            n_items,
            rows: vec![Vec::new(); n_users],
        }
    }

    /// Builds a binary matrix from `(user, item)` pairs without timestamps.
    pub fn from_pairs(n_users: usize, n_items: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut m = Self::new(n_users, n_items);
        for &(u, i) in pairs {
            m.push(
                u,
                Interaction {
                    item: i,
                    weight: 1.0,
                    timestamp: None,
                },
            )?;
        }
        Ok(m)
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Appends an interaction to the end of a user's row.
    pub fn push(&mut self, user: usize, it: Interaction) -> Result<()> {
        if user >= self.n_users || it.item >= self.n_items {
            return Err(Error::input(format!(
                "interaction ({user}, {}) outside {}x{}",
                it.item, self.n_users, self.n_items
            )));
        }
        if !it.weight.is_finite() {
            return Err(Error::input(format!("non-finite weight for ({user}, {})", it.item)));
        }
        if self.rows[user].iter().any(|x| x.item == it.item) {
            return Err(Error::input(format!("duplicate interaction ({user}, {})", it.item)));
        }
        self.rows[user].push(it);
        Ok(())
    }

    pub fn row(&self, user: usize) -> &[Interaction] {
        &self.rows[user]
    }

    pub fn rows(&self) -> &[Vec<Interaction>] {
        &self.rows
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.rows[user].iter().any(|x| x.item == item)
    }

    pub fn degree(&self, user: usize) -> usize {
        self.rows[user].len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Users with at least one interaction, ascending.
    pub fn nonempty_users(&self) -> Vec<usize> {
        (0..self.n_users).filter(|&u| !self.rows[u].is_empty()).collect()
    }

    /// True when every interaction carries a timestamp.
    pub fn has_timestamps(&self) -> bool {
        self.rows.iter().flatten().all(|x| x.timestamp.is_some())
    }

    /// Item ids of a user's row ordered by timestamp (ties keep row order).
    pub fn sequence(&self, user: usize) -> Vec<usize> {
        let mut row: Vec<&Interaction> = self.rows[user].iter().collect();
        row.sort_by_key(|x| x.timestamp);
        row.into_iter().map(|x| x.item).collect()
    }

    /// Dense `len(users) x n_items` batch of interaction weights.
    pub fn dense_rows(&self, users: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((users.len(), self.n_items));
        for (r, &u) in users.iter().enumerate() {
            for it in &self.rows[u] {
                out[[r, it.item]] = it.weight;
            }
        }
        out
    }

    pub fn dense_batch(&self, users: &[usize]) -> DenseMatrix {
        DenseMatrix::from_array_unchecked(self.dense_rows(users))
    }

    /// Row-wise union: `other`'s interactions appended after this matrix's.
    pub fn merged(&self, other: &InteractionMatrix) -> Result<InteractionMatrix> {
        if self.n_users != other.n_users || self.n_items != other.n_items {
            return Err(Error::input("cannot merge matrices of different shapes"));
        }
        let mut out = self.clone();
        for (u, row) in other.rows.iter().enumerate() {
            for it in row {
                out.push(u, *it)?;
            }
        }
        Ok(out)
    }

    /// Same structure with every weight replaced by `f(user, position, interaction)`.
    pub fn map_weights(&self, mut f: impl FnMut(usize, usize, &Interaction) -> f64) -> InteractionMatrix {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(u, row)| {
                row.iter()
                    .enumerate()
                    .map(|(p, it)| Interaction {
                        weight: f(u, p, it),
                        ..*it
                    })
                    .collect()
            })
            .collect();
        InteractionMatrix {
            n_users: self.n_users,
            n_items: self.n_items,
            rows,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_out_of_range() {
        let mut m = InteractionMatrix::new(2, 3);
        let it = Interaction {
            item: 1,
            weight: 1.0,
            timestamp: Some(5),
        };
        m.push(0, it).unwrap();
        assert!(m.push(0, it).is_err());
        assert!(m.push(2, it).is_err());
        assert!(m
            .push(
                1,
                Interaction {
                    item: 3,
                    ..it
                }
            )
            .is_err());
    }

    #[test]
    fn dense_rows_places_weights() {
        let m = InteractionMatrix::from_pairs(2, 3, &[(0, 2), (1, 0)]).unwrap();
        let d = m.dense_rows(&[1, 0]);
        assert_eq!(d.row(0).to_vec(), vec![1.0, 0.0, 0.0]);
        assert_eq!(d.row(1).to_vec(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn sequence_sorts_by_time_stably() {
        let mut m = InteractionMatrix::new(1, 4);
        for (item, ts) in [(3, 10), (1, 5), (0, 10), (2, 1)] {
            m.push(
                0,
                Interaction {
                    item,
                    weight: 1.0,
                    timestamp: Some(ts),
                },
            )
            .unwrap();
        }
        assert_eq!(m.sequence(0), vec![2, 1, 3, 0]);
    }
}
