//! Declarative run configuration: a `key=value` file plus overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::corpus::Sampler;
use crate::error::{Error, Result};
use crate::model::{parse_bool, parse_num, ModelConfig, Variant};
use crate::retrieval::IndexedField;
use crate::seed;
use crate::text::Tokenizer;
use crate::training::TrainConfig;

/// Which scorer `rank` and `eval` use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ranker {
    #[default]
    Model,
    Bm25,
    Bm25Prf,
}

impl Ranker {
    pub fn as_str(&self) -> &'static str {
        match self {
            Ranker::Model => "model",
            Ranker::Bm25 => "bm25",
            Ranker::Bm25Prf => "bm25-prf",
        }
    }
}

impl std::str::FromStr for Ranker {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(Ranker::Model),
            "bm25" => Ok(Ranker::Bm25),
            "bm25-prf" | "prf" => Ok(Ranker::Bm25Prf),
            other => Err(Error::Config(format!(
                "ranker must be model|bm25|bm25-prf, got `{other}`"
            ))),
        }
    }
}

/// File locations; every one is optional until a command needs it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// External QA collection, `id<TAB>question<TAB>answer`.
    pub qa: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    /// Dialog file for `build-data`, dataset for `expand`.
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub log: Option<PathBuf>,
    /// Ranking file for `eval`.
    pub rankings: Option<PathBuf>,
}

impl Paths {
    fn slot(&mut self, key: &str) -> Option<&mut Option<PathBuf>> {
        Some(match key {
            "train" => &mut self.train,
            "valid" => &mut self.valid,
            "test" => &mut self.test,
            "qa" => &mut self.qa,
            "index" => &mut self.index,
            "checkpoint" => &mut self.checkpoint,
            "cache" => &mut self.cache,
            "embeddings" => &mut self.embeddings,
            "stopwords" => &mut self.stopwords,
            "input" => &mut self.input,
            "output" => &mut self.output,
            "log" => &mut self.log,
            "rankings" => &mut self.rankings,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub min_count: usize,
    pub sampler: Sampler,
    pub n_neg: usize,
    /// Root of every random stream; see [`RunConfig::seed_for`].
    pub seed: u64,
    /// Field to index; by default answers, or whole pairs for the
    /// knowledge-distillation variant.
    pub index_field: Option<IndexedField>,
    pub ranker: Ranker,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            lowercase: true,
            strip_punctuation: true,
            min_count: 1,
            sampler: Sampler::default(),
            n_neg: 9,
            seed: 1,
            index_field: None,
            ranker: Ranker::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Applies one `key=value` setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let value = value.trim();
        if key == "variant" {
            // a variant switch also resets the channel set to its default
            let v: Variant = value.parse()?;
            self.model.variant = v;
            self.model.channels = v.default_channels();
            return Ok(());
        }
        if self.model.set(key, value)? {
            return Ok(());
        }
        if self.train.set(key, value)? {
            return Ok(());
        }
        if let Some(slot) = self.paths.slot(key) {
            *slot = (!value.is_empty()).then(|| PathBuf::from(value));
            return Ok(());
        }
        match key {
            "lowercase" => self.lowercase = parse_bool(key, value)?,
            "strip_punctuation" => self.strip_punctuation = parse_bool(key, value)?,
            "min_count" => self.min_count = parse_num(key, value)?,
            "sampler" => self.sampler = value.parse()?,
            "n_neg" => self.n_neg = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "index_field" => self.index_field = Some(value.parse()?),
            "ranker" => self.ranker = value.parse()?,
            other => return Err(Error::Config(format!("unknown setting `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` string.
    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        self.set(k, v)
    }

    /// Parses a config file body: one `key=value` per line, `#` comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.apply(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    /// Reads an optional config file, then applies overrides in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        for o in overrides {
            cfg.apply(o)?;
        }
        Ok(cfg)
    }

    /// Seed of one named random stream, derived from [`RunConfig::seed`].
    pub fn seed_for(&self, component: &str) -> u64 {
        seed::derive(self.seed, component)
    }

    pub fn index_field(&self) -> IndexedField {
        self.index_field.unwrap_or(match self.model.variant {
            Variant::Kd => IndexedField::Concatenated,
            _ => IndexedField::Answer,
        })
    }

    pub fn tokenizer(&self) -> Result<Tokenizer> {
        let mut t = Tokenizer {
            lowercase: self.lowercase,
            strip_punctuation: self.strip_punctuation,
            ..Tokenizer::default()
        };
        if let Some(p) = &self.paths.stopwords {
            t.stopwords = Tokenizer::load_stopwords(p).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(t)
    }

    /// Training options with the derived training seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed_for("train"),
            ..self.train.clone()
        }
    }

    /// Checks numeric invariants.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// The path stored under `key`, which must be set and must exist.
    pub fn existing(&self, key: &str) -> Result<&Path> {
        let p = self.path(key)?;
        if !p.exists() {
            return Err(Error::Config(format!("{key}: {} does not exist", p.display())));
        }
        Ok(p)
    }

    /// The path stored under `key`, which must be set.
    pub fn path(&self, key: &str) -> Result<&Path> {
        self.optional(key)
            .ok_or_else(|| Error::Config(format!("`{key}` is required for this command")))
    }

    pub fn optional(&self, key: &str) -> Option<&Path> {
        let p = &self.paths;
        match key {
            "train" => p.train.as_deref(),
            "valid" => p.valid.as_deref(),
            "test" => p.test.as_deref(),
            "qa" => p.qa.as_deref(),
            "index" => p.index.as_deref(),
            "checkpoint" => p.checkpoint.as_deref(),
            "cache" => p.cache.as_deref(),
            "embeddings" => p.embeddings.as_deref(),
            "stopwords" => p.stopwords.as_deref(),
            "input" => p.input.as_deref(),
            "output" => p.output.as_deref(),
            "log" => p.log.as_deref(),
            "rankings" => p.rankings.as_deref(),
            _ => None,
        }
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .model
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let t = &self.train;
        for (k, v) in [
            ("epsilon", t.epsilon.to_string()),
            ("lambda", t.lambda.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("beta1", t.beta1.to_string()),
            ("beta2", t.beta2.to_string()),
            ("adam_eps", t.adam_eps.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("epochs", t.epochs.to_string()),
            ("patience", t.patience.to_string()),
            ("lowercase", self.lowercase.to_string()),
            ("strip_punctuation", self.strip_punctuation.to_string()),
            ("min_count", self.min_count.to_string()),
            ("sampler", self.sampler.as_str().to_string()),
            ("n_neg", self.n_neg.to_string()),
            ("seed", self.seed.to_string()),
            ("index_field", self.index_field().as_str().to_string()),
            ("ranker", self.ranker.as_str().to_string()),
        ] {
            out.push((k.to_string(), v));
        }
        for key in [
            "train",
            "valid",
            "test",
            "qa",
            "index",
            "checkpoint",
            "cache",
            "embeddings",
            "stopwords",
            "input",
            "output",
            "log",
            "rankings",
        ] {
            if let Some(p) = self.optional(key) {
                out.push((key.to_string(), p.display().to_string()));
            }
        }
        out
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}
