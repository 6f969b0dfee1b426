use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{parse_key_values, Regime};
use crate::diffusion::{Objective, StepSampling, TrainConfig};
use crate::error::{Error, Result};
use crate::latent::{LatentConfig, Likelihood};

/// Every accepted key with its default.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("model", "diffrec"),
    ("regime", "clean"),
    ("seed", "2023"),
    ("input", ""),
    ("input_format", "auto"),
    ("data_dir", "data/bundle"),
    ("out_dir", "runs/diffrec"),
    ("checkpoint", ""),
    ("resume", ""),
    ("steps", "5"),
    ("t_prime", "0"),
    ("noise_scale", "0.0001"),
    ("noise_min", "0.0005"),
    ("noise_max", "0.005"),
    ("objective", "x0"),
    ("sampling", "uniform"),
    ("step_per_row", "false"),
    ("lr", "0.0001"),
    ("batch_size", "400"),
    ("epochs", "1000"),
    ("patience", "20"),
    ("hidden", "200,600"),
    ("dropout", "0.5"),
    ("categories", "2"),
    ("latent_total", "300"),
    ("vae_hidden", "300"),
    ("lambda", "0.1"),
    ("gamma_max", "0.3"),
    ("anneal_epochs", "200"),
    ("embed_rank", "64"),
    ("kmeans_iters", "100"),
    ("likelihood", "category"),
    ("w_min", "0.3"),
    ("w_max", "1"),
    ("ks", "10,20"),
    ("split", "test"),
    ("history", ""),
    ("k", "20"),
];

/// Keys that describe the trained model rather than the invocation; they
/// are restored from a checkpoint unless given explicitly.
pub const MODEL_KEYS: &[&str] = &[
    "model",
    "seed",
    "steps",
    "t_prime",
    "noise_scale",
    "noise_min",
    "noise_max",
    "objective",
    "hidden",
    "dropout",
    "categories",
    "latent_total",
    "vae_hidden",
    "likelihood",
    "w_min",
    "w_max",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    DiffRec,
    LDiffRec,
    TDiffRec,
    LtDiffRec,
}

impl ModelKind {
    pub fn is_latent(self) -> bool {
        matches!(self, ModelKind::LDiffRec | ModelKind::LtDiffRec)
    }

    pub fn is_temporal(self) -> bool {
        matches!(self, ModelKind::TDiffRec | ModelKind::LtDiffRec)
    }

    pub fn with_temporal(self) -> Self {
        if self.is_latent() {
            ModelKind::LtDiffRec
        } else {
            ModelKind::TDiffRec
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::DiffRec => "diffrec",
            ModelKind::LDiffRec => "l-diffrec",
            ModelKind::TDiffRec => "t-diffrec",
            ModelKind::LtDiffRec => "lt-diffrec",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffrec" => Ok(ModelKind::DiffRec),
            "l-diffrec" => Ok(ModelKind::LDiffRec),
            "t-diffrec" => Ok(ModelKind::TDiffRec),
            "lt-diffrec" => Ok(ModelKind::LtDiffRec),
            other => Err(Error::config(format!("unknown model {other:?}"))),
        }
    }
}

/// Flat key=value run configuration. Holds only explicitly given keys;
/// lookups fall back to [`DEFAULTS`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    DEFAULTS.iter().any(|(k, _)| *k == key)
}

fn default_of(key: &str) -> &'static str {
    DEFAULTS.iter().find(|(k, _)| *k == key).map_or("", |(_, v)| v)
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        if !known(key) {
            return Err(Error::config(format!("unknown configuration key {key:?}")));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Parses `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(format!("expected key=value, got {pair:?}")))?;
        self.set(k, v)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::new();
        for (k, v) in parse_key_values(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Fills model keys from a stored resolved config unless set here.
    pub fn inherit_model_keys(&mut self, stored: &BTreeMap<String, String>) -> Result<()> {
        for key in MODEL_KEYS {
            if !self.is_set(key) {
                if let Some(v) = stored.get(*key) {
                    self.set(key, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map_or_else(|| default_of(key), String::as_str)
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key);
        raw.parse()
            .map_err(|_| Error::config(format!("cannot parse {key}={raw:?}")))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(Error::config(format!("{key} must be true or false, got {other:?}"))),
        }
    }

    pub fn list(&self, key: &str) -> Result<Vec<usize>> {
        self.get(key)
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::config(format!("cannot parse {key}={:?}", self.get(key))))
            })
            .collect()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn model(&self) -> Result<ModelKind> {
        self.get("model").parse()
    }

    pub fn regime(&self) -> Result<Regime> {
        self.get("regime").parse()
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out_dir"))
    }

    pub fn data_dir(&self) -> PathBuf {
        PathBuf::from(self.get("data_dir"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.path("checkpoint").unwrap_or_else(|| self.out_dir().join("checkpoint.bin"))
    }

    pub fn weights(&self) -> Result<(f64, f64)> {
        Ok((self.parse("w_min")?, self.parse("w_max")?))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            objective: self.get("objective").parse::<Objective>()?,
            steps: self.parse("steps")?,
            t_prime: self.parse("t_prime")?,
            noise_scale: self.parse("noise_scale")?,
            noise_min: self.parse("noise_min")?,
            noise_max: self.parse("noise_max")?,
            lr: self.parse("lr")?,
            batch_size: self.parse("batch_size")?,
            epochs: self.parse("epochs")?,
            patience: self.parse("patience")?,
            sampling: self.get("sampling").parse::<StepSampling>()?,
            step_per_row: self.bool("step_per_row")?,
            seed: self.seed()?,
            hidden: self.list("hidden")?,
            dropout: self.parse("dropout")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn latent_config(&self) -> Result<LatentConfig> {
        let cfg = LatentConfig {
            categories: self.parse("categories")?,
            latent_total: self.parse("latent_total")?,
            vae_hidden: self.parse("vae_hidden")?,
            lambda: self.parse("lambda")?,
            gamma_max: self.parse("gamma_max")?,
            anneal_epochs: self.parse("anneal_epochs")?,
            embed_rank: self.parse("embed_rank")?,
            kmeans_iters: self.parse("kmeans_iters")?,
            likelihood: self.get("likelihood").parse::<Likelihood>()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ks(&self) -> Result<Vec<usize>> {
        let ks = self.list("ks")?;
        if ks.is_empty() || ks.contains(&0) {
            return Err(Error::config(format!("ks must list positive cutoffs, got {:?}", self.get("ks"))));
        }
        Ok(ks)
    }

    /// Checks every typed key parses.
    pub fn validate(&self) -> Result<()> {
        self.model()?;
        self.regime()?;
        self.train_config()?;
        self.latent_config()?;
        self.ks()?;
        let (lo, hi) = self.weights()?;
        crate::temporal::linear_weights(1, lo, hi)?;
        self.parse::<usize>("k")?;
        match self.get("split") {
            "test" | "validation" => {}
            other => return Err(Error::config(format!("split must be test or validation, got {other:?}"))),
        }
        Ok(())
    }

    /// Every key with its effective value, defaults included.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        DEFAULTS
            .iter()
            .map(|(k, _)| (k.to_string(), self.get(k).to_string()))
            .collect()
    }

    pub fn resolved_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.resolved() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_text("nope=1\n").is_err());
        let mut c = RunConfig::new();
        assert!(c.set_pair("steps").is_err());
        assert!(c.set_pair("colour=red").is_err());
    }

    #[test]
    fn defaults_resolve_to_valid_configs() {
        let c = RunConfig::new();
        c.validate().unwrap();
        let t = c.train_config().unwrap();
        assert_eq!(t, TrainConfig::default());
        assert_eq!(c.latent_config().unwrap(), LatentConfig::default());
        assert_eq!(c.ks().unwrap(), vec![10, 20]);
    }

    #[test]
    fn overrides_and_echo() {
        let mut c = RunConfig::from_text("steps=3\n# note\nhidden=8\n").unwrap();
        c.set_pair("lr=0.01").unwrap();
        let t = c.train_config().unwrap();
        assert_eq!((t.steps, t.hidden.clone(), t.lr), (3, vec![8], 0.01));
        let echo = c.resolved_text();
        assert!(echo.contains("steps=3\n") && echo.contains("model=diffrec\n"));
        assert_eq!(echo.lines().count(), DEFAULTS.len());
    }

    #[test]
    fn inherit_respects_explicit_keys() {
        let mut stored = BTreeMap::new();
        stored.insert("steps".to_string(), "9".to_string());
        stored.insert("t_prime".to_string(), "2".to_string());
        stored.insert("out_dir".to_string(), "elsewhere".to_string());
        let mut c = RunConfig::from_text("t_prime=1\n").unwrap();
        c.inherit_model_keys(&stored).unwrap();
        assert_eq!(c.get("steps"), "9");
        assert_eq!(c.get("t_prime"), "1");
        assert_eq!(c.get("out_dir"), "runs/diffrec");
    }

    #[test]
    fn model_kinds() {
        assert_eq!("lt-diffrec".parse::<ModelKind>().unwrap(), ModelKind::LtDiffRec);
        assert_eq!(ModelKind::LDiffRec.with_temporal(), ModelKind::LtDiffRec);
        assert!("x".parse::<ModelKind>().is_err());
    }
}
