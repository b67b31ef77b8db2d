//! Flat `key = value` configuration with defaults and overrides.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fairrec::data::{SplitRatios, SyntheticSpec, TabularSchema};
use fairrec::eval::AttackerConfig;
use fairrec::fairness::{AdversaryConfig, FilterMethod};
use fairrec::numcore::AdamConfig;
use fairrec::recmodels::{ModelKind, TrainConfig};
use fairrec::{Error, Result};
use sha2::{Digest, Sha256};

/// Every recognised key with its default. `auto` defaults depend on the
/// dataset scale.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("attacker.learning_rate", "0.01"),
    ("attacker.max_epochs", "500"),
    ("attacker.patience", "20"),
    ("batch_size", "auto"),
    ("dataset", ""),
    ("dim", "64"),
    ("disc_steps", "10"),
    ("dump_embeddings", "false"),
    ("features", "all"),
    ("fixed_full_mask", "false"),
    ("l2", "0.0001"),
    ("lambda", "10"),
    ("lambda_grid", "auto"),
    ("learning_rate", "0.001"),
    ("mask_probability", "0.5"),
    ("max_epochs", "200"),
    ("method", "orig"),
    ("min_interactions", "4"),
    ("model", "pmf"),
    ("n_negatives", "100"),
    ("out", "out"),
    ("patience", "10"),
    ("prepared", "auto"),
    ("seed", "1"),
    ("split", "0.8,0.1,0.1"),
    ("synthetic.cardinalities", "2"),
    ("synthetic.dim", "8"),
    ("synthetic.interactions", "10"),
    ("synthetic.items", "50"),
    ("synthetic.strength", "1"),
    ("synthetic.users", "2000"),
    ("tabular.delimiter", "tab"),
    ("tabular.feature_columns", ""),
    ("tabular.group_min_count", "0"),
    ("tabular.item_column", "item"),
    ("tabular.user_column", "user"),
    ("top_n", "5"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message: format!("expected key = value, got {line:?}"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_override(text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {text:?} is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl Config {
    /// Defaults, then the file, then `overrides` in order; later wins.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Config::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            for (k, v) in parse_pairs(&text, p)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown config key {key:?}"))),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let v = self.get(key);
        v.parse()
            .map_err(|e| Error::Config(format!("{key} = {v:?}: {e}")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let v = self.get(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| s.trim().parse().map_err(|e| Error::Config(format!("{key} = {v:?}: {e}"))))
            .collect()
    }

    /// Sorted `key = value` lines.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Synthetic(SyntheticSpec),
    /// Directory holding `ratings.dat` and `users.dat`.
    MovieLens(PathBuf),
    Tabular(PathBuf, TabularSchema),
}

impl Source {
    fn is_small(&self) -> bool {
        !matches!(self, Source::MovieLens(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Orig,
    Filtered(FilterMethod),
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Orig => "orig",
            Method::Filtered(m) => m.as_str(),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orig" => Ok(Method::Orig),
            other => other.parse().map(Method::Filtered),
        }
    }
}

/// Typed view of a resolved [`Config`].
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: Config,
    pub source: Source,
    pub min_interactions: usize,
    pub features: Option<Vec<String>>,
    pub split: SplitRatios,
    pub model: ModelKind,
    pub method: Method,
    pub dim: usize,
    pub lambda_grid: Vec<f64>,
    pub adversary: AdversaryConfig,
    pub top_n: usize,
    pub n_negatives: usize,
    pub train: TrainConfig,
    pub attacker: AttackerConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub prepared: PathBuf,
    pub dump_embeddings: bool,
}

fn delimiter(text: &str) -> Result<char> {
    match text {
        "tab" | "\\t" => Ok('\t'),
        "comma" => Ok(','),
        "pipe" => Ok('|'),
        s if s.chars().count() == 1 => Ok(s.chars().next().unwrap()),
        s => Err(Error::Config(format!("tabular.delimiter {s:?} is not a single character"))),
    }
}

impl Experiment {
    pub fn resolve(config: Config) -> Result<Self> {
        let c = &config;
        let dataset = c.get("dataset");
        let source = match dataset.split_once(':') {
            _ if dataset == "synthetic" => Source::Synthetic(SyntheticSpec {
                n_users: c.parsed("synthetic.users")?,
                n_items: c.parsed("synthetic.items")?,
                embedding_dim: c.parsed("synthetic.dim")?,
                feature_cardinalities: c.list("synthetic.cardinalities")?,
                dependence_strength: c.parsed("synthetic.strength")?,
                interactions_per_user: c.parsed("synthetic.interactions")?,
            }),
            Some(("movielens", dir)) => Source::MovieLens(PathBuf::from(dir)),
            Some(("tabular", path)) => {
                let group_min: usize = c.parsed("tabular.group_min_count")?;
                Source::Tabular(
                    PathBuf::from(path),
                    TabularSchema {
                        delimiter: delimiter(c.get("tabular.delimiter"))?,
                        user_column: c.get("tabular.user_column").to_string(),
                        item_column: c.get("tabular.item_column").to_string(),
                        feature_columns: c.list("tabular.feature_columns")?,
                        group_min_count: (group_min > 0).then_some(group_min),
                    },
                )
            }
            _ if dataset.is_empty() => return Err(Error::Config("no dataset given".into())),
            _ => {
                return Err(Error::Config(format!(
                    "dataset {dataset:?}: expected synthetic, movielens:<dir> or tabular:<file>"
                )))
            }
        };
        let small = source.is_small();
        let split: Vec<f64> = c.list("split")?;
        if split.len() != 3 {
            return Err(Error::Config("split needs three ratios".into()));
        }
        let split = SplitRatios {
            train: split[0],
            validation: split[1],
            test: split[2],
        };
        split.validate()?;
        let lambda_grid = match c.get("lambda_grid") {
            "auto" if small => vec![100.0, 200.0, 500.0, 1000.0],
            "auto" => vec![10.0, 20.0, 50.0],
            _ => c.list("lambda_grid")?,
        };
        let batch_size = match c.get("batch_size") {
            "auto" if small => 64,
            "auto" => 256,
            _ => c.parsed("batch_size")?,
        };
        let adversary = AdversaryConfig {
            lambda: c.parsed("lambda")?,
            disc_steps: c.parsed("disc_steps")?,
            mask_probability: c.parsed("mask_probability")?,
            fixed_full_mask: c.parsed("fixed_full_mask")?,
        };
        adversary.validate()?;
        let top_n: usize = c.parsed("top_n")?;
        let train = TrainConfig {
            batch_size,
            l2: c.parsed("l2")?,
            adam: AdamConfig::with_learning_rate(c.parsed("learning_rate")?),
            max_epochs: c.parsed("max_epochs")?,
            patience: c.parsed("patience")?,
            top_n,
        };
        train.validate()?;
        let attacker = AttackerConfig {
            max_epochs: c.parsed("attacker.max_epochs")?,
            patience: c.parsed("attacker.patience")?,
            adam: AdamConfig::with_learning_rate(c.parsed("attacker.learning_rate")?),
            ..AttackerConfig::default()
        };
        let features = match c.get("features") {
            "all" => None,
            _ => Some(c.list("features")?),
        };
        let out = PathBuf::from(c.get("out"));
        let prepared = match c.get("prepared") {
            "auto" => out.join("prepared"),
            p => PathBuf::from(p),
        };
        let dim: usize = c.parsed("dim")?;
        if dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        Ok(Experiment {
            source,
            min_interactions: c.parsed("min_interactions")?,
            features,
            split,
            model: c.parsed("model")?,
            method: c.parsed("method")?,
            dim,
            lambda_grid,
            adversary,
            top_n,
            n_negatives: c.parsed("n_negatives")?,
            train,
            attacker,
            seed: c.parsed("seed")?,
            out,
            prepared,
            dump_embeddings: c.parsed("dump_embeddings")?,
            config,
        })
    }

    /// Same experiment with one key changed.
    pub fn with(&self, key: &str, value: &str) -> Result<Self> {
        let mut c = self.config.clone();
        c.set(key, value)?;
        Experiment::resolve(c)
    }

    /// Directory of the run this experiment trains.
    pub fn run_dir(&self) -> PathBuf {
        let name = match self.method {
            Method::Orig => format!("{}-orig", self.model),
            Method::Filtered(m) => format!("{}-{}-lambda{}", self.model, m.as_str(), self.adversary.lambda),
        };
        self.out.join("runs").join(name)
    }
}
