use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use ndarray::Array2;

use super::config::{ModelKind, RunConfig};
use crate::data::{ingest, prepare_bundle, read_bundle, write_bundle, InputFormat, InteractionMatrix, Regime, SplitBundle, Vocab};
use crate::diffusion::{eval_rng, infer, train, train_from, DenoiserNet, ImportanceSampler, TrainConfig, TrainLog, Validation};
use crate::error::{Error, Result};
use crate::eval::{evaluate_with, rank_items, EvalReport, MaskingPolicy};
use crate::latent::{build_latent, cluster_items, train_latent_from, ClusterModel, LatentModel, VaeStack};
use crate::nn::{Checkpoint, DenseMatrix};
use crate::schedule::NoiseSchedule;
use crate::temporal::{apply_temporal, reweight};

const CONFIG_PREFIX: &str = "config.";

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// FNV-1a over the item vocabulary, in index order.
pub fn items_digest(items: &Vocab) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for tok in items.tokens() {
        for b in tok.bytes().chain(std::iter::once(b'\n')) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

fn input_format(cfg: &RunConfig, input: &Path) -> Result<InputFormat> {
    match cfg.get("input_format") {
        "auto" => Ok(if input.extension().is_some_and(|e| e == "dat") {
            InputFormat::DoubleColon
        } else {
            InputFormat::Tsv
        }),
        other => other.parse(),
    }
}

/// Ingests `input`, splits it under `regime` and writes the bundle to `data_dir`.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<SplitBundle> {
    cfg.validate()?;
    let input = cfg
        .path("input")
        .ok_or_else(|| Error::usage("prepare needs input=PATH"))?;
    let ds = ingest(&input, input_format(cfg, &input)?)?;
    if !ds.malformed.is_empty() {
        warn!("skipped {} malformed lines", ds.malformed.len());
    }
    let bundle = prepare_bundle(&ds, cfg.regime()?, cfg.seed()?)?;
    let dir = cfg.data_dir();
    write_bundle(&bundle, &dir)?;
    write_text(&dir.join("resolved_config"), &cfg.resolved_text())?;
    info!(
        "wrote {} ({} users, {} items; train {}, val {}, test {})",
        dir.display(),
        bundle.n_users(),
        bundle.n_items(),
        bundle.train.nnz(),
        bundle.val.nnz(),
        bundle.test.nnz()
    );
    Ok(bundle)
}

/// A trained model of either family.
#[derive(Clone, Debug, PartialEq)]
pub enum LoadedModel {
    Plain(DenoiserNet),
    Latent(LatentModel),
}

impl LoadedModel {
    pub fn n_items(&self) -> usize {
        match self {
            LoadedModel::Plain(net) => net.dim(),
            LoadedModel::Latent(m) => m.clusters().n_items(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            LoadedModel::Plain(net) => net.num_params(),
            LoadedModel::Latent(m) => m.count_params().total(),
        }
    }

    /// Scores dense conditioning rows.
    pub fn score(&self, sched: &NoiseSchedule, x: &DenseMatrix, t_prime: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Result<DenseMatrix> {
        match self {
            LoadedModel::Plain(net) => infer(net, sched, x, t_prime, rng),
            LoadedModel::Latent(m) => m.score(sched, x, t_prime, rng),
        }
    }
}

/// Everything a checkpoint carries besides raw tensors.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub config: RunConfig,
    pub model: LoadedModel,
    pub sampler: ImportanceSampler,
    pub items_digest: String,
}

impl TrainedRun {
    pub fn kind(&self) -> Result<ModelKind> {
        self.config.model()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        for (k, v) in self.config.resolved() {
            ck.meta.insert(format!("{CONFIG_PREFIX}{k}"), v);
        }
        ck.meta.insert("n_items".into(), self.model.n_items().to_string());
        ck.meta.insert("items_digest".into(), self.items_digest.clone());
        ck.meta.insert("sampler_history".into(), self.sampler.to_text());
        match &self.model {
            LoadedModel::Plain(net) => {
                ck.sections.insert("denoiser".into(), net.store().clone());
            }
            LoadedModel::Latent(m) => {
                ck.sections.insert("denoiser".into(), m.denoiser.store().clone());
                ck.sections.insert("vae".into(), m.vae.store().clone());
                let a = m.clusters().assignment();
                let col = Array2::from_shape_fn((a.len(), 1), |(i, _)| a[i] as f64);
                ck.extra.insert("clusters".into(), col);
            }
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut config = RunConfig::new();
        for (k, v) in &ck.meta {
            if let Some(key) = k.strip_prefix(CONFIG_PREFIX) {
                config.set(key, v)?;
            }
        }
        let diff = config.train_config()?;
        let meta = |key: &str| {
            ck.meta
                .get(key)
                .ok_or_else(|| Error::input(format!("checkpoint lacks {key}")))
        };
        let n_items: usize = meta("n_items")?
            .parse()
            .map_err(|_| Error::input("checkpoint n_items is not a number"))?;
        let section = |name: &str| {
            ck.sections
                .get(name)
                .cloned()
                .ok_or_else(|| Error::input(format!("checkpoint lacks section {name:?}")))
        };
        let model = if config.model()?.is_latent() {
            let lat = config.latent_config()?;
            let col = ck
                .extra
                .get("clusters")
                .ok_or_else(|| Error::input("checkpoint lacks the cluster assignment"))?;
            let assignment: Vec<usize> = col.iter().map(|&c| c as usize).collect();
            if assignment.len() != n_items {
                return Err(Error::input("cluster assignment does not cover every item"));
            }
            let categories = assignment.iter().max().map_or(0, |m| m + 1);
            let clusters = ClusterModel::from_assignment(assignment, categories, lat.latent_total)?;
            let mut vae = VaeStack::zeroed(&clusters, lat.vae_hidden, lat.likelihood)?;
            vae.load_store(section("vae")?)?;
            let mut denoiser = DenoiserNet::zeroed(clusters.latent_total(), &diff.hidden, diff.dropout, diff.objective)?;
            denoiser.load_store(section("denoiser")?)?;
            LoadedModel::Latent(LatentModel { vae, denoiser })
        } else {
            let mut net = DenoiserNet::zeroed(n_items, &diff.hidden, diff.dropout, diff.objective)?;
            net.load_store(section("denoiser")?)?;
            LoadedModel::Plain(net)
        };
        let sampler = match ck.meta.get("sampler_history") {
            Some(text) => ImportanceSampler::from_text(text, diff.steps)?,
            None => ImportanceSampler::new(diff.steps)?,
        };
        Ok(TrainedRun {
            config,
            model,
            sampler,
            items_digest: meta("items_digest")?.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn check_model_against_bundle(kind: ModelKind, bundle: &SplitBundle) -> Result<()> {
    if kind.is_temporal() && bundle.regime != Regime::Temporal {
        return Err(Error::config(format!(
            "{kind} needs a bundle prepared with regime=temporal, this one is {}",
            bundle.regime
        )));
    }
    Ok(())
}

fn check_alignment(run: &TrainedRun, bundle: &SplitBundle) -> Result<()> {
    let digest = items_digest(&bundle.items);
    if run.model.n_items() != bundle.n_items() || run.items_digest != digest {
        return Err(Error::input(format!(
            "checkpoint was trained on {} items (digest {}), bundle has {} items (digest {digest})",
            run.model.n_items(),
            run.items_digest,
            bundle.n_items()
        )));
    }
    Ok(())
}

/// Conditioning rows as the model sees them.
fn conditioning(kind: ModelKind, m: &InteractionMatrix, cfg: &RunConfig) -> Result<InteractionMatrix> {
    if kind.is_temporal() {
        let (lo, hi) = cfg.weights()?;
        apply_temporal(m, lo, hi)
    } else {
        Ok(m.clone())
    }
}

/// Result of `train`: the run plus its epoch log.
#[derive(Clone, Debug)]
pub struct TrainResult {
    pub run: TrainedRun,
    pub log: TrainLog,
    pub checkpoint: PathBuf,
}

/// Trains (or resumes) a model on a prepared bundle and writes the
/// checkpoint, log and resolved configuration to `out_dir`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainResult> {
    let mut cfg = cfg.clone();
    let resumed = match cfg.path("resume") {
        Some(path) => {
            let run = TrainedRun::load(&path)?;
            cfg.inherit_model_keys(&run.config.resolved())?;
            let stored = run.config.clone();
            for key in super::config::MODEL_KEYS {
                if cfg.get(key) != stored.get(key) {
                    return Err(Error::config(format!(
                        "{key}={} conflicts with the resumed checkpoint's {key}={}",
                        cfg.get(key),
                        stored.get(key)
                    )));
                }
            }
            Some(run)
        }
        None => None,
    };
    cfg.validate()?;
    let kind = cfg.model()?;
    let diff = cfg.train_config()?;
    let lat = cfg.latent_config()?;
    let bundle = read_bundle(&cfg.data_dir())?;
    check_model_against_bundle(kind, &bundle)?;
    let digest = items_digest(&bundle.items);
    if let Some(run) = &resumed {
        check_alignment(run, &bundle)?;
    }
    if diff.epochs == 0 {
        warn!("epochs=0: the checkpoint will hold the initial parameters");
    }

    let train_rows = conditioning(kind, &bundle.train, &cfg)?;
    let validation = Validation {
        conditioning: &train_rows,
        mask: &bundle.train,
        targets: &bundle.val,
    };
    let validation = (bundle.val.nnz() > 0).then_some(validation);
    let (model, sampler) = match resumed {
        Some(r) => (Some(r.model), Some(r.sampler)),
        None => (None, None),
    };

    let (model, log, sampler) = if kind.is_latent() {
        let latent = match model {
            Some(LoadedModel::Latent(m)) => m,
            Some(LoadedModel::Plain(_)) => return Err(Error::config("resumed checkpoint is not a latent model")),
            None => {
                let clusters = cluster_items(&train_rows, &lat, diff.seed)?;
                build_latent(&clusters, &diff, &lat)?
            }
        };
        let out = train_latent_from(latent, sampler, &train_rows, validation, &diff, &lat)?;
        (LoadedModel::Latent(out.model), out.log, out.sampler)
    } else {
        let out = match model {
            Some(LoadedModel::Plain(net)) => train_from(net, sampler, &train_rows, validation, &diff)?,
            Some(LoadedModel::Latent(_)) => return Err(Error::config("resumed checkpoint is a latent model")),
            None => train(&train_rows, validation, &diff)?,
        };
        (LoadedModel::Plain(out.net), out.log, out.sampler)
    };

    let run = TrainedRun {
        config: cfg.clone(),
        model,
        sampler,
        items_digest: digest,
    };
    let out_dir = cfg.out_dir();
    let checkpoint = cfg.path("checkpoint").unwrap_or_else(|| out_dir.join("checkpoint.bin"));
    run.save(&checkpoint)?;
    write_text(&out_dir.join("train_log.txt"), &log.to_text())?;
    write_text(&out_dir.join("resolved_config"), &cfg.resolved_text())?;
    if let LoadedModel::Latent(m) = &run.model {
        write_text(&out_dir.join("clusters.tsv"), &m.clusters().to_tsv())?;
    }
    info!(
        "{kind}: {} parameters, best epoch {:?}, checkpoint {}",
        run.model.num_params(),
        log.best_epoch,
        checkpoint.display()
    );
    Ok(TrainResult { run, log, checkpoint })
}

/// Loads the checkpoint named by `cfg`, letting explicit keys override
/// the stored configuration.
fn load_run(cfg: &RunConfig) -> Result<(RunConfig, TrainedRun)> {
    let path = cfg.checkpoint_path();
    let run = TrainedRun::load(&path)?;
    let mut merged = cfg.clone();
    merged.inherit_model_keys(&run.config.resolved())?;
    if !merged.is_set("data_dir") {
        merged.set("data_dir", run.config.get("data_dir"))?;
    }
    if !merged.is_set("out_dir") {
        let dir = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        merged.set("out_dir", &dir.to_string_lossy())?;
    }
    merged.validate()?;
    Ok((merged, run))
}

fn sched_of(cfg: &RunConfig) -> Result<(TrainConfig, NoiseSchedule)> {
    let diff = cfg.train_config()?;
    let sched = diff.schedule()?;
    Ok((diff, sched))
}

/// Result of `eval`.
#[derive(Clone, Debug)]
pub struct EvalResult {
    pub report: EvalReport,
    pub split: String,
    pub report_path: PathBuf,
}

/// Evaluates a checkpoint on the test (default) or validation split.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalResult> {
    let (cfg, run) = load_run(cfg)?;
    let kind = cfg.model()?;
    let bundle = read_bundle(&cfg.data_dir())?;
    check_model_against_bundle(kind, &bundle)?;
    check_alignment(&run, &bundle)?;
    let (diff, sched) = sched_of(&cfg)?;
    let model = with_config(run.model, &diff)?;

    let split = cfg.get("split").to_string();
    let (history, targets, policy) = match split.as_str() {
        "validation" => (bundle.train.clone(), &bundle.val, MaskingPolicy::Train),
        _ => (bundle.train_and_val()?, &bundle.test, MaskingPolicy::TrainAndValidation),
    };
    let cond = conditioning(kind, &history, &cfg)?;
    let mut rng = eval_rng(diff.seed);
    let report = evaluate_with(
        |x| model.score(&sched, x, diff.t_prime, &mut rng),
        &cond,
        &history,
        targets,
        &cfg.ks()?,
        policy,
        diff.batch_size,
    )?;
    let out_dir = cfg.out_dir();
    let report_path = out_dir.join(format!("report_{split}.txt"));
    write_text(&report_path, &report.to_key_values())?;
    write_text(&out_dir.join(format!("report_{split}_users.csv")), &report.to_csv())?;
    Ok(EvalResult {
        report,
        split,
        report_path,
    })
}

/// Rejects a `hidden` override that disagrees with the stored network.
fn with_config(model: LoadedModel, diff: &TrainConfig) -> Result<LoadedModel> {
    let net = match &model {
        LoadedModel::Plain(n) => n,
        LoadedModel::Latent(m) => &m.denoiser,
    };
    if net.hidden() != diff.hidden.as_slice() {
        return Err(Error::config(format!(
            "hidden={:?} does not match the checkpoint's {:?}",
            diff.hidden,
            net.hidden()
        )));
    }
    Ok(model)
}

/// Parses a history file: one `item [weight]` per line, `#` comments, an
/// optional `# items=N` header checked against the vocabulary size.
pub fn parse_history(text: &str, items: &Vocab) -> Result<Vec<(usize, Option<f64>)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("items=") {
                let expect: usize = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::input(format!("bad items header {line:?}")))?;
                if expect != items.len() {
                    return Err(Error::input(format!(
                        "history declares {expect} items, the model has {}",
                        items.len()
                    )));
                }
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let tok = fields.next().unwrap_or_default();
        let item = items
            .get(tok)
            .ok_or_else(|| Error::input(format!("line {}: unknown item {tok:?}", n + 1)))?;
        let weight = match fields.next() {
            Some(w) => Some(
                w.parse::<f64>()
                    .ok()
                    .filter(|w| w.is_finite())
                    .ok_or_else(|| Error::input(format!("line {}: bad weight {w:?}", n + 1)))?,
            ),
            None => None,
        };
        if !seen.insert(item) {
            return Err(Error::input(format!("line {}: item {tok:?} listed twice", n + 1)));
        }
        out.push((item, weight));
    }
    Ok(out)
}

/// One recommended item.
#[derive(Clone, Debug, PartialEq)]
pub struct Recommendation {
    pub rank: usize,
    pub item: String,
    pub score: f64,
}

pub fn format_recommendations(recs: &[Recommendation]) -> String {
    let mut out = String::new();
    for r in recs {
        let _ = writeln!(out, "{}\t{}\t{:.6}", r.rank, r.item, r.score);
    }
    out
}

/// Top-`k` items for the history in `history=PATH`. Temporal models read
/// the file order as chronological; explicit weights override.
pub fn cmd_infer(cfg: &RunConfig) -> Result<Vec<Recommendation>> {
    let (cfg, run) = load_run(cfg)?;
    let kind = cfg.model()?;
    let bundle = read_bundle(&cfg.data_dir())?;
    check_alignment(&run, &bundle)?;
    let path = cfg
        .path("history")
        .ok_or_else(|| Error::usage("infer needs history=PATH"))?;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let hist = parse_history(&text, &bundle.items)?;
    if hist.is_empty() {
        return Err(Error::input(format!("{} lists no items", path.display())));
    }
    let n = bundle.n_items();
    let mut x = vec![0.0; n];
    if kind.is_temporal() && hist.iter().all(|(_, w)| w.is_none()) {
        let (lo, hi) = cfg.weights()?;
        let seq: Vec<usize> = hist.iter().map(|(i, _)| *i).collect();
        x = reweight(&seq, n, lo, hi)?.to_dense();
    } else {
        for (i, w) in &hist {
            x[*i] = w.unwrap_or(1.0);
        }
    }
    let (diff, sched) = sched_of(&cfg)?;
    let model = with_config(run.model, &diff)?;
    let mut rng = eval_rng(diff.seed);
    let scores = model.score(&sched, &DenseMatrix::from_vec(1, n, x)?, diff.t_prime, &mut rng)?;
    let scores = scores.to_vec();
    let mask: HashSet<usize> = hist.iter().map(|(i, _)| *i).collect();
    let k: usize = cfg.parse("k")?;
    Ok(rank_items(&scores, &mask, k)
        .into_iter()
        .enumerate()
        .map(|(r, i)| Recommendation {
            rank: r + 1,
            item: bundle.items.token(i).to_string(),
            score: scores[i],
        })
        .collect())
}
