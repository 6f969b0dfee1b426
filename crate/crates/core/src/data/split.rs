use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ingest::{Dataset, RawInteraction, Vocab};
use super::matrix::{Interaction, InteractionMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.1, 0.2];

/// Training-data regime of a split bundle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regime {
    Clean,
    NaturalNoise,
    RandomNoise(f64),
    Temporal,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Clean => write!(f, "clean"),
            Regime::NaturalNoise => write!(f, "natural"),
            Regime::RandomNoise(p) => write!(f, "random({p})"),
            Regime::Temporal => write!(f, "temporal"),
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "clean" => Ok(Regime::Clean),
            "natural" | "natural_noise" => Ok(Regime::NaturalNoise),
            "temporal" => Ok(Regime::Temporal),
            other => {
                let inner = other
                    .strip_prefix("random(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::config(format!("unknown regime {other:?}")))?;
                let p: f64 = inner
                    .parse()
                    .map_err(|_| Error::config(format!("bad noise proportion in {other:?}")))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::config(format!("noise proportion {p} outside [0, 1]")));
                }
                Ok(Regime::RandomNoise(p))
            }
        }
    }
}

/// Train/validation/test matrices sharing one user and item index space.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitBundle {
    pub train: InteractionMatrix,
    pub val: InteractionMatrix,
    pub test: InteractionMatrix,
    pub regime: Regime,
    pub users: Vocab,
    pub items: Vocab,
    /// `(user, item)` pairs added by random-noise injection.
    pub injected: Vec<(usize, usize)>,
    /// Ordered key=value record of how the bundle was produced.
    pub manifest: BTreeMap<String, String>,
}

impl SplitBundle {
    pub fn n_users(&self) -> usize {
        self.train.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.train.n_items()
    }

    /// Train and validation interactions together, the conditioning history
    /// for test-time inference.
    pub fn train_and_val(&self) -> Result<InteractionMatrix> {
        self.train.merged(&self.val)
    }
}

/// Split sizes by floor-then-distribute: each part gets `floor(n * ratio)`,
/// then the leftover units go to the parts with the largest fractional
/// remainders (ties to the earlier part).
pub fn split_sizes(n: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| n as f64 * r).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - sizes[a] as f64;
        let rb = exact[b] - sizes[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        sizes[k] += 1;
    }
    sizes
}

fn validate_ratios(ratios: &[f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    Ok(())
}

/// Stable chronological order. Either every record has a timestamp or none
/// does (then input order is kept).
fn chronological<'a>(records: impl Iterator<Item = &'a RawInteraction>) -> Result<Vec<&'a RawInteraction>> {
    let mut recs: Vec<&RawInteraction> = records.collect();
    let with_ts = recs.iter().filter(|r| r.timestamp.is_some()).count();
    if with_ts != 0 && with_ts != recs.len() {
        return Err(Error::input(format!(
            "{} of {} interactions lack timestamps; chronological split needs all or none",
            recs.len() - with_ts,
            recs.len()
        )));
    }
    recs.sort_by_key(|r| (r.timestamp, r.line));
    Ok(recs)
}

fn is_clean(r: &RawInteraction) -> bool {
    r.rating.is_none_or(|v| v >= 4.0)
}

fn to_matrix(n_users: usize, n_items: usize, recs: &[&RawInteraction]) -> Result<InteractionMatrix> {
    let mut m = InteractionMatrix::new(n_users, n_items);
    for r in recs {
        m.push(
            r.user,
            Interaction {
                item: r.item,
                weight: 1.0,
                timestamp: r.timestamp,
            },
        )?;
    }
    Ok(m)
}

fn base_manifest(ds: &Dataset, ratios: &[f64; 3], regime: Regime, seed: u64) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("regime".into(), regime.to_string());
    m.insert("seed".into(), seed.to_string());
    m.insert("ratio_train".into(), ratios[0].to_string());
    m.insert("ratio_val".into(), ratios[1].to_string());
    m.insert("ratio_test".into(), ratios[2].to_string());
    m.insert("split".into(), "global_chronological".into());
    m.insert("dedup_rule".into(), "keep_latest_timestamp".into());
    m.insert("users".into(), ds.users.len().to_string());
    m.insert("items".into(), ds.items.len().to_string());
    m.insert("source_records".into(), ds.records.len().to_string());
    m.insert("duplicates_removed".into(), ds.duplicates_removed.to_string());
    m.insert("malformed_lines".into(), ds.malformed.len().to_string());
    m.insert("timestamps".into(), ds.has_timestamps().to_string());
    m
}

fn record_counts(b: &mut SplitBundle) {
    let counts = [
        ("train_interactions", b.train.nnz()),
        ("val_interactions", b.val.nnz()),
        ("test_interactions", b.test.nnz()),
    ];
    for (k, v) in counts {
        b.manifest.insert(k.into(), v.to_string());
    }
}

struct CleanParts<'a> {
    train: Vec<&'a RawInteraction>,
    val: Vec<&'a RawInteraction>,
    test: Vec<&'a RawInteraction>,
    dropped_low_rating: usize,
}

fn clean_parts<'a>(ds: &'a Dataset, ratios: &[f64; 3]) -> Result<CleanParts<'a>> {
    validate_ratios(ratios)?;
    let kept = chronological(ds.records.iter().filter(|r| is_clean(r)))?;
    if kept.is_empty() {
        return Err(Error::input("no interactions with rating >= 4 remain after filtering"));
    }
    let sizes = split_sizes(kept.len(), ratios);
    let (train, rest) = kept.split_at(sizes[0]);
    let (val, test) = rest.split_at(sizes[1]);
    Ok(CleanParts {
        dropped_low_rating: ds.records.len() - kept.len(),
        train: train.to_vec(),
        val: val.to_vec(),
        test: test.to_vec(),
    })
}

fn build_bundle(
    ds: &Dataset,
    parts: [&[&RawInteraction]; 3],
    regime: Regime,
    manifest: BTreeMap<String, String>,
) -> Result<SplitBundle> {
    let (nu, ni) = (ds.users.len(), ds.items.len());
    let mut b = SplitBundle {
        train: to_matrix(nu, ni, parts[0])?,
        val: to_matrix(nu, ni, parts[1])?,
        test: to_matrix(nu, ni, parts[2])?,
        regime,
        users: ds.users.clone(),
        items: ds.items.clone(),
        injected: Vec::new(),
        manifest,
    };
    record_counts(&mut b);
    Ok(b)
}

/// Drops ratings below 4, sorts globally by time and cuts train/val/test.
pub fn split_clean(ds: &Dataset, ratios: [f64; 3]) -> Result<SplitBundle> {
    let parts = clean_parts(ds, &ratios)?;
    let mut manifest = base_manifest(ds, &ratios, Regime::Clean, 0);
    manifest.insert("dropped_low_rating".into(), parts.dropped_low_rating.to_string());
    build_bundle(ds, [&parts.train, &parts.val, &parts.test], Regime::Clean, manifest)
}

/// Same membership as the clean split; the regime tag marks the bundle as
/// carrying the per-user timestamp sequences the temporal model needs.
pub fn split_temporal(ds: &Dataset, ratios: [f64; 3]) -> Result<SplitBundle> {
    if !ds.has_timestamps() {
        return Err(Error::config(
            "the temporal regime needs a timestamp column on every interaction",
        ));
    }
    let parts = clean_parts(ds, &ratios)?;
    let mut manifest = base_manifest(ds, &ratios, Regime::Temporal, 0);
    manifest.insert("dropped_low_rating".into(), parts.dropped_low_rating.to_string());
    build_bundle(ds, [&parts.train, &parts.val, &parts.test], Regime::Temporal, manifest)
}

/// Keeps the clean test set, rebuilds train/validation from all ratings in
/// their time windows, then downsamples each to the clean size.
pub fn split_natural_noise(ds: &Dataset, ratios: [f64; 3], seed: u64) -> Result<SplitBundle> {
    let parts = clean_parts(ds, &ratios)?;
    let all = chronological(ds.records.iter())?;
    let test_lines: HashSet<usize> = parts.test.iter().map(|r| r.line).collect();
    let position = |line: usize| all.iter().position(|r| r.line == line);
    let test_start = parts
        .test
        .first()
        .and_then(|r| position(r.line))
        .unwrap_or(all.len());
    let val_start = parts
        .val
        .first()
        .and_then(|r| position(r.line))
        .unwrap_or(test_start);

    let mut train_pool = Vec::new();
    let mut val_pool = Vec::new();
    for (pos, r) in all.iter().enumerate() {
        if test_lines.contains(&r.line) || pos >= test_start {
            continue;
        }
        if pos < val_start {
            train_pool.push(*r);
        } else {
            val_pool.push(*r);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = downsample(train_pool, parts.train.len(), &mut rng);
    let val = downsample(val_pool, parts.val.len(), &mut rng);
    let noisy_in_train = train.iter().filter(|r| !is_clean(r)).count();
    let noisy_in_val = val.iter().filter(|r| !is_clean(r)).count();

    let mut manifest = base_manifest(ds, &ratios, Regime::NaturalNoise, seed);
    manifest.insert("clean_train_interactions".into(), parts.train.len().to_string());
    manifest.insert("clean_val_interactions".into(), parts.val.len().to_string());
    manifest.insert("natural_noise_in_train".into(), noisy_in_train.to_string());
    manifest.insert("natural_noise_in_val".into(), noisy_in_val.to_string());
    manifest.insert("size_match".into(), "downsample_to_clean_size".into());
    build_bundle(ds, [&train, &val, &parts.test], Regime::NaturalNoise, manifest)
}

/// Uniform subset of `target` records, kept in chronological order.
fn downsample<'a>(pool: Vec<&'a RawInteraction>, target: usize, rng: &mut ChaCha8Rng) -> Vec<&'a RawInteraction> {
    if pool.len() <= target {
        return pool;
    }
    let mut idx = sample(rng, pool.len(), target).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i]).collect()
}

/// Adds `round(p * train_degree)` uniformly drawn non-interacted items to
/// each user's training row. Validation and test are untouched.
pub fn inject_random_noise(bundle: &SplitBundle, p: f64, seed: u64) -> Result<SplitBundle> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(format!("noise proportion {p} outside [0, 1]")));
    }
    let mut out = bundle.clone();
    out.regime = Regime::RandomNoise(p);
    let n_items = bundle.n_items();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut skipped = 0usize;

    for u in 0..bundle.n_users() {
        let degree = bundle.train.degree(u);
        let k = (p * degree as f64).round() as usize;
        if k == 0 {
            continue;
        }
        let taken: HashSet<usize> = [&bundle.train, &bundle.val, &bundle.test]
            .iter()
            .flat_map(|m| m.row(u).iter().map(|x| x.item))
            .collect();
        let candidates: Vec<usize> = (0..n_items).filter(|i| !taken.contains(i)).collect();
        if candidates.len() < k {
            warn!(
                "user {u}: only {} non-interacted items for {k} injections, skipped",
                candidates.len()
            );
            skipped += 1;
            continue;
        }
        let last_ts = bundle.train.row(u).iter().filter_map(|x| x.timestamp).max();
        let mut picks = sample(&mut rng, candidates.len(), k).into_vec();
        picks.sort_unstable();
        for j in picks {
            let item = candidates[j];
            out.train.push(
                u,
                Interaction {
                    item,
                    weight: 1.0,
                    timestamp: last_ts,
                },
            )?;
            out.injected.push((u, item));
        }
    }

    out.manifest.insert("regime".into(), out.regime.to_string());
    out.manifest.insert("noise_p".into(), p.to_string());
    out.manifest.insert("noise_seed".into(), seed.to_string());
    out.manifest.insert("injected_pairs".into(), out.injected.len().to_string());
    out.manifest.insert("injection_skipped_users".into(), skipped.to_string());
    out.manifest
        .insert("clean_train_interactions".into(), bundle.train.nnz().to_string());
    record_counts(&mut out);
    Ok(out)
}

/// Builds the bundle for any regime from an ingested dataset.
pub fn prepare_bundle(ds: &Dataset, regime: Regime, seed: u64) -> Result<SplitBundle> {
    let mut b = match regime {
        Regime::Clean => split_clean(ds, DEFAULT_RATIOS)?,
        Regime::Temporal => split_temporal(ds, DEFAULT_RATIOS)?,
        Regime::NaturalNoise => split_natural_noise(ds, DEFAULT_RATIOS, seed)?,
        Regime::RandomNoise(p) => inject_random_noise(&split_clean(ds, DEFAULT_RATIOS)?, p, seed)?,
    };
    b.manifest.insert("seed".into(), seed.to_string());
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ingest::{parse, InputFormat};

    fn dataset(lines: &[(&str, &str, f64, i64)]) -> Dataset {
        let text: String = lines
            .iter()
            .map(|(u, i, r, t)| format!("{u}\t{i}\t{r}\t{t}\n"))
            .collect();
        parse(&text, InputFormat::Tsv).unwrap()
    }

    #[test]
    fn sizes_floor_then_distribute() {
        assert_eq!(split_sizes(10, &DEFAULT_RATIOS), vec![7, 1, 2]);
        assert_eq!(split_sizes(9, &DEFAULT_RATIOS), vec![6, 1, 2]);
        assert_eq!(split_sizes(0, &DEFAULT_RATIOS), vec![0, 0, 0]);
        for n in 0..200 {
            assert_eq!(split_sizes(n, &DEFAULT_RATIOS).iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn clean_ten_by_time() {
        // timestamps deliberately out of file order
        let lines: Vec<(String, String, f64, i64)> = (0..10)
            .map(|k| (format!("u{}", k % 3), format!("i{k}"), 5.0, (10 - k) as i64))
            .collect();
        let refs: Vec<(&str, &str, f64, i64)> = lines.iter().map(|(u, i, r, t)| (u.as_str(), i.as_str(), *r, *t)).collect();
        let ds = dataset(&refs);
        let b = split_clean(&ds, DEFAULT_RATIOS).unwrap();
        assert_eq!((b.train.nnz(), b.val.nnz(), b.test.nnz()), (7, 1, 2));
        // the two earliest timestamps belong to items i9, i8
        let max_train_ts = b.train.rows().iter().flatten().filter_map(|x| x.timestamp).max().unwrap();
        let min_test_ts = b.test.rows().iter().flatten().filter_map(|x| x.timestamp).min().unwrap();
        assert!(max_train_ts < min_test_ts);
    }

    #[test]
    fn all_low_ratings_is_error() {
        let ds = dataset(&[("a", "x", 2.0, 1), ("b", "y", 3.0, 2)]);
        assert!(split_clean(&ds, DEFAULT_RATIOS).is_err());
    }

    #[test]
    fn bad_ratios_rejected() {
        let ds = dataset(&[("a", "x", 5.0, 1)]);
        assert!(matches!(split_clean(&ds, [0.5, 0.1, 0.1]), Err(Error::Config(_))));
    }

    #[test]
    fn regime_parse_round_trip() {
        for r in [Regime::Clean, Regime::NaturalNoise, Regime::Temporal, Regime::RandomNoise(0.2)] {
            assert_eq!(r.to_string().parse::<Regime>().unwrap(), r);
        }
        assert!("random(2)".parse::<Regime>().is_err());
        assert!("bogus".parse::<Regime>().is_err());
    }
}
