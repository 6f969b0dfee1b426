//! Full-ranking top-K evaluation with history masking.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use log::warn;

use crate::data::InteractionMatrix;
use crate::error::{Error, Result};
use crate::nn::DenseMatrix;

pub const DEFAULT_KS: [usize; 2] = [10, 20];

/// Which interactions condition the model and are masked from the ranking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskingPolicy {
    /// Validation: condition on train, mask train.
    Train,
    /// Test: condition on train+validation, mask train+validation.
    TrainAndValidation,
}

impl MaskingPolicy {
    pub fn tag(self) -> &'static str {
        match self {
            MaskingPolicy::Train => "condition=train;mask=train",
            MaskingPolicy::TrainAndValidation => "condition=train+val;mask=train+val",
        }
    }
}

fn by_score_then_index(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Top-`k` unmasked items by descending score; ties go to the lower index.
pub fn rank_items(scores: &[f64], mask: &HashSet<usize>, k: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..scores.len()).filter(|i| !mask.contains(i)).collect();
    let cmp = by_score_then_index(scores);
    if k < candidates.len() {
        if k > 0 {
            candidates.select_nth_unstable_by(k - 1, &cmp);
        }
        candidates.truncate(k);
    } else if k > candidates.len() {
        warn!("K={k} exceeds the {} unmasked items; returning all of them", candidates.len());
    }
    candidates.sort_unstable_by(&cmp);
    candidates
}

/// `|topk ∩ test| / |test|`.
pub fn recall_at_k(topk: &[usize], test: &HashSet<usize>) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let hits = topk.iter().filter(|i| test.contains(i)).count();
    hits as f64 / test.len() as f64
}

/// Binary-relevance NDCG with `1 / log2(rank + 1)` discounts, ideal DCG over
/// `min(k, |test|)` positions.
pub fn ndcg_at_k(topk: &[usize], test: &HashSet<usize>, k: usize) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let dcg: f64 = topk
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| test.contains(i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..k.min(test.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    dcg / idcg
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserRecord {
    pub user: usize,
    /// Aligned with the report's cutoffs.
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    /// 1-based ranks of test items inside the largest cutoff.
    pub hit_ranks: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub users: Vec<UserRecord>,
    pub excluded_empty_test: usize,
    pub excluded_empty_history: usize,
    pub masking_policy: MaskingPolicy,
}

impl EvalReport {
    pub fn evaluated_users(&self) -> usize {
        self.users.len()
    }

    fn index_of(&self, k: usize) -> Option<usize> {
        self.ks.iter().position(|&x| x == k)
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.index_of(k).map(|i| self.recall[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.index_of(k).map(|i| self.ndcg[i])
    }

    /// Recall for every cutoff, then NDCG for every cutoff.
    pub fn headline(&self) -> Vec<(String, f64)> {
        let r = self.ks.iter().zip(&self.recall).map(|(k, v)| (format!("recall@{k}"), *v));
        let n = self.ks.iter().zip(&self.ndcg).map(|(k, v)| (format!("ndcg@{k}"), *v));
        r.chain(n).collect()
    }

    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "masking_policy={}", self.masking_policy.tag());
        let _ = writeln!(out, "evaluated_users={}", self.evaluated_users());
        let _ = writeln!(out, "excluded_empty_test={}", self.excluded_empty_test);
        let _ = writeln!(out, "excluded_empty_history={}", self.excluded_empty_history);
        for (name, v) in self.headline() {
            let _ = writeln!(out, "{name}={v:.8}");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("user");
        for k in &self.ks {
            let _ = write!(out, ",r@{k}");
        }
        for k in &self.ks {
            let _ = write!(out, ",n@{k}");
        }
        out.push_str(",hits\n");
        for u in &self.users {
            let _ = write!(out, "{}", u.user);
            for v in u.recall.iter().chain(&u.ndcg) {
                let _ = write!(out, ",{v:.8}");
            }
            let _ = writeln!(out, ",{}", u.hit_ranks.len());
        }
        out
    }

    pub fn summary(&self) -> BTreeMap<String, f64> {
        self.headline().into_iter().collect()
    }
}

fn row_set(m: &InteractionMatrix, u: usize) -> HashSet<usize> {
    m.row(u).iter().map(|x| x.item).collect()
}

fn score_user(scores: &[f64], mask: &HashSet<usize>, test: &HashSet<usize>, ks: &[usize], user: usize) -> UserRecord {
    let kmax = ks.iter().copied().max().unwrap_or(0);
    let top = rank_items(scores, mask, kmax);
    let hit_ranks = top
        .iter()
        .enumerate()
        .filter(|(_, i)| test.contains(i))
        .map(|(r, _)| r + 1)
        .collect();
    UserRecord {
        user,
        recall: ks.iter().map(|&k| recall_at_k(&top[..k.min(top.len())], test)).collect(),
        ndcg: ks.iter().map(|&k| ndcg_at_k(&top, test, k)).collect(),
        hit_ranks,
    }
}

fn validate_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::config(format!("cutoffs must be non-empty and positive, got {ks:?}")));
    }
    Ok(())
}

/// Users with a non-empty target row and non-empty conditioning history,
/// plus the two exclusion counts.
pub fn eligible_users(history: &InteractionMatrix, targets: &InteractionMatrix) -> (Vec<usize>, usize, usize) {
    let mut users = Vec::new();
    let (mut no_test, mut no_hist) = (0, 0);
    for u in 0..targets.n_users() {
        if targets.degree(u) == 0 {
            no_test += 1;
        } else if history.degree(u) == 0 {
            no_hist += 1;
        } else {
            users.push(u);
        }
    }
    (users, no_test, no_hist)
}

fn aggregate(
    records: Vec<UserRecord>,
    ks: &[usize],
    no_test: usize,
    no_hist: usize,
    policy: MaskingPolicy,
) -> EvalReport {
    let n = records.len().max(1) as f64;
    let mean = |f: &dyn Fn(&UserRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let recall = (0..ks.len()).map(|j| mean(&|r| r.recall[j])).collect();
    let ndcg = (0..ks.len()).map(|j| mean(&|r| r.ndcg[j])).collect();
    EvalReport {
        ks: ks.to_vec(),
        recall,
        ndcg,
        users: records,
        excluded_empty_test: no_test,
        excluded_empty_history: no_hist,
        masking_policy: policy,
    }
}

/// Evaluates precomputed scores, one row per user of `mask`.
pub fn evaluate(
    scores: &DenseMatrix,
    mask: &InteractionMatrix,
    targets: &InteractionMatrix,
    ks: &[usize],
    policy: MaskingPolicy,
) -> Result<EvalReport> {
    validate_ks(ks)?;
    if scores.rows() != mask.n_users() || scores.cols() != mask.n_items() {
        return Err(Error::input(format!(
            "score matrix {:?} misaligned with {} users x {} items",
            scores.shape(),
            mask.n_users(),
            mask.n_items()
        )));
    }
    let (users, no_test, no_hist) = eligible_users(mask, targets);
    let records = users
        .iter()
        .map(|&u| {
            let row = scores.row(u).to_vec();
            score_user(&row, &row_set(mask, u), &row_set(targets, u), ks, u)
        })
        .collect();
    Ok(aggregate(records, ks, no_test, no_hist, policy))
}

/// Evaluates a model given as a batch scorer over dense conditioning rows.
///
/// `conditioning` is what the model sees (possibly reweighted); `mask`
/// decides which items are excluded from the ranking.
pub fn evaluate_with<F>(
    mut scorer: F,
    conditioning: &InteractionMatrix,
    mask: &InteractionMatrix,
    targets: &InteractionMatrix,
    ks: &[usize],
    policy: MaskingPolicy,
    batch_size: usize,
) -> Result<EvalReport>
where
    F: FnMut(&DenseMatrix) -> Result<DenseMatrix>,
{
    validate_ks(ks)?;
    if conditioning.n_items() != targets.n_items() || mask.n_items() != targets.n_items() {
        return Err(Error::input("conditioning, mask and target item counts differ"));
    }
    let (users, no_test, no_hist) = eligible_users(mask, targets);
    let mut records = Vec::with_capacity(users.len());
    for chunk in users.chunks(batch_size.max(1)) {
        let x0 = conditioning.dense_batch(chunk);
        let scores = scorer(&x0)?;
        if scores.shape() != x0.shape() {
            return Err(Error::input(format!(
                "scorer returned {:?} for a {:?} batch",
                scores.shape(),
                x0.shape()
            )));
        }
        scores.ensure_finite("scores")?;
        for (r, &u) in chunk.iter().enumerate() {
            let row = scores.row(r).to_vec();
            records.push(score_user(&row, &row_set(mask, u), &row_set(targets, u), ks, u));
        }
    }
    Ok(aggregate(records, ks, no_test, no_hist, policy))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[usize]) -> HashSet<usize> {
        items.iter().copied().collect()
    }

    #[test]
    fn rank_examples() {
        let s = [0.9, 0.1, 0.5];
        assert_eq!(rank_items(&s, &set(&[]), 2), vec![0, 2]);
        assert_eq!(rank_items(&s, &set(&[0]), 2), vec![2, 1]);
        assert_eq!(rank_items(&[1.0; 5], &set(&[]), 3), vec![0, 1, 2]);
        assert_eq!(rank_items(&s, &set(&[1]), 5), vec![0, 2]);
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&[0, 5], &set(&[0, 1])), 0.5);
        assert_eq!(recall_at_k(&[1, 0, 7], &set(&[0, 1])), 1.0);
        assert_eq!(recall_at_k(&[2, 3], &set(&[0, 1])), 0.0);
    }

    #[test]
    fn ndcg_hand_case() {
        // hits at ranks 1 and 3, |test| = 2, K = 3
        let v = ndcg_at_k(&[10, 11, 12], &set(&[10, 12]), 3);
        let dcg = 1.0 + 1.0 / 4f64.log2();
        let idcg = 1.0 + 1.0 / 3f64.log2();
        assert!((v - dcg / idcg).abs() < 1e-15);
        assert!((v - 0.91972).abs() < 1e-5);
        assert_eq!(ndcg_at_k(&[1, 2], &set(&[1, 2]), 2), 1.0);
        assert_eq!(ndcg_at_k(&[3, 4], &set(&[1, 2]), 2), 0.0);
    }

    #[test]
    fn evaluate_perfect_scores() {
        let hist = InteractionMatrix::from_pairs(2, 6, &[(0, 0), (1, 1)]).unwrap();
        let test = InteractionMatrix::from_pairs(2, 6, &[(0, 3), (0, 4), (1, 5)]).unwrap();
        let mut s = DenseMatrix::zeros(2, 6).into_array();
        s[[0, 3]] = 10.0;
        s[[0, 4]] = 9.0;
        s[[1, 5]] = 10.0;
        let s = DenseMatrix::from_array(s).unwrap();
        let r = evaluate(&s, &hist, &test, &[1, 20], MaskingPolicy::TrainAndValidation).unwrap();
        assert_eq!(r.recall_at(20), Some(1.0));
        assert_eq!(r.ndcg_at(20), Some(1.0));
        assert_eq!(r.recall_at(1), Some(0.75));
        assert_eq!(r.evaluated_users(), 2);
    }

    #[test]
    fn exclusions_counted() {
        let hist = InteractionMatrix::from_pairs(3, 4, &[(0, 0), (2, 1)]).unwrap();
        let test = InteractionMatrix::from_pairs(3, 4, &[(0, 1), (1, 2)]).unwrap();
        let r = evaluate(&DenseMatrix::zeros(3, 4), &hist, &test, &[2], MaskingPolicy::Train).unwrap();
        assert_eq!(r.evaluated_users(), 1);
        assert_eq!(r.excluded_empty_history, 1);
        assert_eq!(r.excluded_empty_test, 1);
    }

    #[test]
    fn misaligned_scores_rejected() {
        let hist = InteractionMatrix::from_pairs(2, 4, &[]).unwrap();
        assert!(evaluate(&DenseMatrix::zeros(3, 4), &hist, &hist, &[1], MaskingPolicy::Train).is_err());
    }

    #[test]
    fn report_text_layout() {
        let hist = InteractionMatrix::from_pairs(1, 3, &[(0, 0)]).unwrap();
        let test = InteractionMatrix::from_pairs(1, 3, &[(0, 2)]).unwrap();
        let s = DenseMatrix::from_rows(&[vec![0.0, 0.1, 0.9]]).unwrap();
        let r = evaluate(&s, &hist, &test, &DEFAULT_KS, MaskingPolicy::TrainAndValidation).unwrap();
        let names: Vec<String> = r.headline().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["recall@10", "recall@20", "ndcg@10", "ndcg@20"]);
        assert!(r.to_key_values().contains("recall@10=1.00000000"));
        assert_eq!(r.to_csv().lines().next(), Some("user,r@10,r@20,n@10,n@20,hits"));
    }
}
