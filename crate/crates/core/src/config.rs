//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default; an unknown key is an error. Any key can be overridden from the
//! environment as `KBC_<KEY>` (upper case), which takes precedence over the
//! file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::paths::SamplerConfig;
use crate::trainer::TrainConfig;

pub const ENV_PREFIX: &str = "KBC_";

/// Every accepted key with a one-line description, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("data_dir", "directory of tab-separated triple files (*.txt, *.tsv)"),
    ("cache_dir", "output of `prepare`: vocabularies, splits, path cache"),
    (
        "checkpoint",
        "checkpoint file; empty means model.ckpt inside export_dir",
    ),
    ("export_dir", "logs, reports and exports"),
    (
        "target_relations",
        "comma-separated relations used as labels; empty means all",
    ),
    ("seed", "seeds the split, path sampling, initialization and batching"),
    ("max_hops", "longest path considered (2 to 4)"),
    ("strategy", "path sampler: shortest or random-walk"),
    ("walks_per_pair", "random walks per pair for the random-walk sampler"),
    ("max_paths_per_pair", "cap on paths kept per pair, shortest first"),
    ("d_r", "relation embedding width"),
    ("d_pe", "hop-position embedding width"),
    ("d_dir", "direction embedding width"),
    ("d_h", "GRU hidden width per direction"),
    ("d_a", "attention hidden width"),
    ("extractor_hidden", "first feature-extractor layer width"),
    ("d_f", "shared feature width"),
    ("lr_base", "joint-phase base learning rate"),
    ("pretrain_lr", "learning rate of both pre-training phases"),
    ("momentum", "SGD momentum"),
    ("gamma", "schedule steepness for lambda and the learning rate"),
    ("beta", "sparsity penalty weight"),
    ("rho", "target mean activation of the extractor"),
    ("rho_r", "weight of the head regularizer"),
    ("batch_size", "samples per batch, half from each source (even)"),
    ("epochs", "joint adversarial epochs"),
    ("pretrain_epochs", "cap on classifier pre-training epochs"),
    (
        "patience",
        "pre-training stops after this many epochs without a better validation MR",
    ),
    ("disc_pretrain_epochs", "discriminator pre-training epochs"),
    ("classifier_sources", "labels used by the classifier: relation or both"),
    (
        "fixed_lambda",
        "constant reversal weight instead of the schedule, or none",
    ),
    ("eval_chunk", "pairs per inference chunk"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub export_dir: PathBuf,
    pub target_relations: Vec<String>,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: "data".into(),
            cache_dir: "cache".into(),
            checkpoint: PathBuf::new(),
            export_dir: "out".into(),
            target_relations: Vec::new(),
            seed: 0,
            sampler: SamplerConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "data_dir" => self.data_dir = v.into(),
            "cache_dir" => self.cache_dir = v.into(),
            "checkpoint" => self.checkpoint = v.into(),
            "export_dir" => self.export_dir = v.into(),
            "target_relations" => {
                self.target_relations = v
                    .split(',')
                    .map(str::trim)
                    .filter(|x| !x.is_empty())
                    .map(String::from)
                    .collect()
            }
            "seed" => self.set_seed(parse(key, v)?),
            "max_hops" => {
                let h = parse(key, v)?;
                self.sampler.max_hops = h;
                self.model.max_hops = h;
            }
            "strategy" => self.sampler.strategy = v.parse()?,
            "walks_per_pair" => self.sampler.walks_per_pair = parse(key, v)?,
            "max_paths_per_pair" => self.sampler.max_paths_per_pair = parse(key, v)?,
            "d_r" => self.model.d_r = parse(key, v)?,
            "d_pe" => self.model.d_pe = parse(key, v)?,
            "d_dir" => self.model.d_dir = parse(key, v)?,
            "d_h" => self.model.d_h = parse(key, v)?,
            "d_a" => self.model.d_a = parse(key, v)?,
            "extractor_hidden" => self.model.extractor_hidden = parse(key, v)?,
            "d_f" => self.model.d_f = parse(key, v)?,
            "lr_base" => self.train.lr_base = parse(key, v)?,
            "pretrain_lr" => self.train.pretrain_lr = parse(key, v)?,
            "momentum" => self.train.momentum = parse(key, v)?,
            "gamma" => self.train.gamma = parse(key, v)?,
            "beta" => self.train.weights.beta = parse(key, v)?,
            "rho" => self.train.weights.rho = parse(key, v)?,
            "rho_r" => self.train.weights.rho_r = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "pretrain_epochs" => self.train.pretrain_epochs = parse(key, v)?,
            "patience" => self.train.patience = parse(key, v)?,
            "disc_pretrain_epochs" => self.train.disc_pretrain_epochs = parse(key, v)?,
            "classifier_sources" => self.train.classifier_sources = v.parse()?,
            "fixed_lambda" => {
                self.train.fixed_lambda = match v {
                    "none" | "" => None,
                    x => Some(parse(key, x)?),
                }
            }
            "eval_chunk" => self.train.eval_chunk = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Text form of one key, as accepted by [`RunConfig::set`].
    pub fn get(&self, key: &str) -> Result<String> {
        let s = match key {
            "data_dir" => self.data_dir.display().to_string(),
            "cache_dir" => self.cache_dir.display().to_string(),
            "checkpoint" => self.checkpoint.display().to_string(),
            "export_dir" => self.export_dir.display().to_string(),
            "target_relations" => self.target_relations.join(","),
            "seed" => self.seed.to_string(),
            "max_hops" => self.sampler.max_hops.to_string(),
            "strategy" => self.sampler.strategy.to_string(),
            "walks_per_pair" => self.sampler.walks_per_pair.to_string(),
            "max_paths_per_pair" => self.sampler.max_paths_per_pair.to_string(),
            "d_r" => self.model.d_r.to_string(),
            "d_pe" => self.model.d_pe.to_string(),
            "d_dir" => self.model.d_dir.to_string(),
            "d_h" => self.model.d_h.to_string(),
            "d_a" => self.model.d_a.to_string(),
            "extractor_hidden" => self.model.extractor_hidden.to_string(),
            "d_f" => self.model.d_f.to_string(),
            "lr_base" => self.train.lr_base.to_string(),
            "pretrain_lr" => self.train.pretrain_lr.to_string(),
            "momentum" => self.train.momentum.to_string(),
            "gamma" => self.train.gamma.to_string(),
            "beta" => self.train.weights.beta.to_string(),
            "rho" => self.train.weights.rho.to_string(),
            "rho_r" => self.train.weights.rho_r.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "epochs" => self.train.epochs.to_string(),
            "pretrain_epochs" => self.train.pretrain_epochs.to_string(),
            "patience" => self.train.patience.to_string(),
            "disc_pretrain_epochs" => self.train.disc_pretrain_epochs.to_string(),
            "classifier_sources" => self.train.classifier_sources.to_string(),
            "fixed_lambda" => self.train.fixed_lambda.map_or_else(|| "none".into(), |l| l.to_string()),
            "eval_chunk" => self.train.eval_chunk.to_string(),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        };
        Ok(s)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        if self.checkpoint.as_os_str().is_empty() {
            self.export_dir.join("model.ckpt")
        } else {
            self.checkpoint.clone()
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sampler.seed = seed;
        self.train.seed = seed;
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected `key = value`"))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        }
        Ok(())
    }

    /// Applies `KBC_<KEY>` variables from `vars`.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        for (name, value) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = rest.to_ascii_lowercase();
            if KEYS.iter().any(|(k, _)| *k == key) {
                self.set(&key, &value)
                    .map_err(|e| Error::Config(format!("environment variable {name}: {e}")))?;
            }
        }
        Ok(())
    }

    /// Defaults, then the file if given, then the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut config = RunConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            config.apply_text(&text, p)?;
        }
        config.apply_env(std::env::vars())?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.train.validate()?;
        let m = &self.model;
        if [m.d_r, m.d_pe, m.d_dir, m.d_h, m.d_a, m.extractor_hidden, m.d_f].contains(&0) {
            return Err(Error::Config("model widths must be positive".into()));
        }
        Ok(())
    }

    /// Every key with its effective value, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, doc) in KEYS {
            let value = self.get(key).expect("every listed key is known");
            let _ = writeln!(out, "# {doc}\n{key} = {value}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("fixed_lambda", "0").unwrap();
        c.set("seed", "42").unwrap();
        c.set("strategy", "random-walk").unwrap();
        c.set("target_relations", "rule0, rule1").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text(), Path::new("echo")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.train.seed, 42);
    }

    #[test]
    fn every_key_is_settable_from_its_own_value() {
        let mut c = RunConfig::default();
        for (key, _) in KEYS {
            let v = c.get(key).unwrap();
            c.set(key, &v).unwrap();
        }
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_key_is_an_error_with_line() {
        let mut c = RunConfig::default();
        let err = c.apply_text("epochs = 3\nepoch = 4\n", Path::new("x.cfg")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn environment_overrides_file() {
        let mut c = RunConfig::default();
        c.apply_text("epochs = 3", Path::new("x")).unwrap();
        c.apply_env([("KBC_EPOCHS".to_string(), "7".to_string()), ("HOME".into(), "/".into())])
            .unwrap();
        assert_eq!(c.train.epochs, 7);
    }

    #[test]
    fn max_hops_drives_sampler_and_model() {
        let mut c = RunConfig::default();
        c.set("max_hops", "4").unwrap();
        assert_eq!((c.sampler.max_hops, c.model.max_hops), (4, 4));
    }
}
