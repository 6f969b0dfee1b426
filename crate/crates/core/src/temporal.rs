//! Recency reweighting of interaction histories.

use std::collections::{HashMap, HashSet};

use crate::data::InteractionMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_W_MIN: f64 = 0.3;
pub const DEFAULT_W_MAX: f64 = 1.0;

fn check_bounds(w_min: f64, w_max: f64) -> Result<()> {
    if !(w_min > 0.0 && w_min <= w_max && w_max <= 1.0) {
        return Err(Error::config(format!(
            "weights must satisfy 0 < w_min <= w_max <= 1, got w_min={w_min} w_max={w_max}"
        )));
    }
    Ok(())
}

/// `w_m = w_min + (m-1)/(M-1) * (w_max - w_min)` for `m = 1..=M`; a single
/// interaction gets `w_max`.
pub fn linear_weights(m: usize, w_min: f64, w_max: f64) -> Result<Vec<f64>> {
    check_bounds(w_min, w_max)?;
    if m == 1 {
        return Ok(vec![w_max]);
    }
    Ok((0..m)
        .map(|i| w_min + i as f64 / (m - 1) as f64 * (w_max - w_min))
        .collect())
}

/// One user's history with position-based weights, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedHistory {
    pub sequence: Vec<usize>,
    pub weights: Vec<f64>,
    pub n_items: usize,
}

impl WeightedHistory {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_items];
        for (&i, &w) in self.sequence.iter().zip(&self.weights) {
            v[i] = w;
        }
        v
    }
}

pub fn reweight(seq: &[usize], n_items: usize, w_min: f64, w_max: f64) -> Result<WeightedHistory> {
    let mut seen = HashSet::new();
    for &i in seq {
        if i >= n_items {
            return Err(Error::input(format!("item {i} outside 0..{n_items}")));
        }
        if !seen.insert(i) {
            return Err(Error::input(format!("item {i} appears twice in the sequence")));
        }
    }
    let weights = if seq.is_empty() {
        check_bounds(w_min, w_max)?;
        Vec::new()
    } else {
        linear_weights(seq.len(), w_min, w_max)?
    };
    Ok(WeightedHistory {
        sequence: seq.to_vec(),
        weights,
        n_items,
    })
}

/// Replaces every weight by its recency weight within the user's
/// timestamp-ordered sequence (ties keep row order).
pub fn apply_temporal(data: &InteractionMatrix, w_min: f64, w_max: f64) -> Result<InteractionMatrix> {
    check_bounds(w_min, w_max)?;
    if !data.has_timestamps() {
        return Err(Error::config("recency weighting needs a timestamp on every interaction"));
    }
    let mut per_user: Vec<HashMap<usize, f64>> = Vec::with_capacity(data.n_users());
    for u in 0..data.n_users() {
        let h = reweight(&data.sequence(u), data.n_items(), w_min, w_max)?;
        per_user.push(h.sequence.into_iter().zip(h.weights).collect());
    }
    Ok(data.map_weights(|u, _, it| per_user[u][&it.item]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Interaction;

    #[test]
    fn three_step_weights() {
        let w = linear_weights(3, 0.1, 1.0).unwrap();
        assert!((w[0] - 0.1).abs() < 1e-15 && (w[1] - 0.55).abs() < 1e-15 && (w[2] - 1.0).abs() < 1e-15);
        assert_eq!(linear_weights(1, 0.3, 1.0).unwrap(), vec![1.0]);
        assert_eq!(linear_weights(4, 1.0, 1.0).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn bounds_checked() {
        assert!(linear_weights(3, 0.0, 1.0).is_err());
        assert!(linear_weights(3, 0.6, 0.5).is_err());
        assert!(linear_weights(3, 0.5, 1.5).is_err());
    }

    #[test]
    fn reweight_scatter_and_errors() {
        let h = reweight(&[3, 0], 4, 0.5, 1.0).unwrap();
        assert_eq!(h.to_dense(), vec![1.0, 0.0, 0.0, 0.5]);
        assert!(matches!(reweight(&[1, 1], 4, 0.5, 1.0), Err(Error::Input(_))));
        assert!(matches!(reweight(&[7], 4, 0.5, 1.0), Err(Error::Input(_))));
    }

    fn timed(rows: &[(usize, usize, i64)]) -> InteractionMatrix {
        let mut m = InteractionMatrix::new(2, 4);
        for &(u, i, t) in rows {
            m.push(u, Interaction { item: i, weight: 1.0, timestamp: Some(t) }).unwrap();
        }
        m
    }

    #[test]
    fn applies_by_timestamp_with_row_order_ties() {
        let m = timed(&[(0, 2, 50), (0, 1, 10), (0, 3, 50), (1, 0, 7)]);
        let w = apply_temporal(&m, 0.2, 1.0).unwrap();
        let d = w.dense_rows(&[0, 1]);
        assert!((d[[0, 1]] - 0.2).abs() < 1e-15);
        assert!((d[[0, 2]] - 0.6).abs() < 1e-15);
        assert!((d[[0, 3]] - 1.0).abs() < 1e-15);
        assert_eq!(d[[1, 0]], 1.0);
    }

    #[test]
    fn missing_timestamps_rejected() {
        let m = InteractionMatrix::from_pairs(1, 2, &[(0, 1)]).unwrap();
        assert!(matches!(apply_temporal(&m, 0.3, 1.0), Err(Error::Config(_))));
    }
}
