//! `key = value` run configuration. `#` starts a comment; unknown or
//! repeated keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use half_core::model::{Activation, HyperParams, ModelKind};
use half_core::train::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    /// `vocab_size` is the cap used when building the vocabulary.
    pub hp: HyperParams,
    pub train: TrainConfig,
    pub train_data: Option<PathBuf>,
    pub valid_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    /// Epoch log destination; defaults to the checkpoint path plus `.log.jsonl`.
    pub epoch_log: Option<PathBuf>,
}

pub const KEYS: &[&str] = &[
    "train_data",
    "valid_data",
    "test_data",
    "epoch_log",
    "model",
    "vocab_size",
    "embed_dim",
    "filters",
    "window",
    "review_len",
    "reviews_per_entity",
    "factor_dim",
    "attn_dim",
    "activation",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "batch_size",
    "max_epochs",
    "patience",
    "seed",
    "grad_clip",
];

fn bad(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("line {line}: {msg}"))
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| bad(line, format_args!("{key}: cannot parse {v:?}: {e}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut c = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| bad(line, format_args!("expected `key = value`, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(bad(line, format_args!("unknown key {key:?}")));
            }
            if !seen.insert(key) {
                return Err(bad(line, format_args!("duplicate key {key:?}")));
            }
            c.set(line, key, value)?;
        }
        Ok(c)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<(), CliError> {
        let hp = &mut self.hp;
        let t = &mut self.train;
        match key {
            "train_data" => self.train_data = Some(PathBuf::from(v)),
            "valid_data" => self.valid_data = Some(PathBuf::from(v)),
            "test_data" => self.test_data = Some(PathBuf::from(v)),
            "epoch_log" => self.epoch_log = Some(PathBuf::from(v)),
            "model" => {
                t.model = ModelKind::from_name(v)
                    .ok_or_else(|| bad(line, format_args!("model must be half or lfm, got {v:?}")))?
            }
            "vocab_size" => hp.vocab_size = num(line, key, v)?,
            "embed_dim" => hp.embed_dim = num(line, key, v)?,
            "filters" => hp.filters = num(line, key, v)?,
            "window" => hp.window = num(line, key, v)?,
            "review_len" => hp.review_len = num(line, key, v)?,
            "reviews_per_entity" => hp.reviews_per_entity = num(line, key, v)?,
            "factor_dim" => hp.factor_dim = num(line, key, v)?,
            "attn_dim" => hp.attn_dim = num(line, key, v)?,
            "activation" => {
                hp.activation = Activation::from_name(v).ok_or_else(|| {
                    bad(line, format_args!("activation must be relu, tanh or sigmoid, got {v:?}"))
                })?
            }
            "learning_rate" => t.adam.learning_rate = num(line, key, v)?,
            "adam_beta1" => t.adam.beta1 = num(line, key, v)?,
            "adam_beta2" => t.adam.beta2 = num(line, key, v)?,
            "adam_eps" => t.adam.eps = num(line, key, v)?,
            "batch_size" => t.batch_size = num(line, key, v)?,
            "max_epochs" => t.max_epochs = num(line, key, v)?,
            "patience" => t.patience = num(line, key, v)?,
            "seed" => t.seed = num(line, key, v)?,
            "grad_clip" => {
                t.grad_clip = if v == "none" {
                    None
                } else {
                    Some(num(line, key, v)?)
                }
            }
            _ => unreachable!("key list checked by the caller"),
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        for (key, p) in [
            ("train_data", path(&self.train_data)),
            ("valid_data", path(&self.valid_data)),
            ("test_data", path(&self.test_data)),
            ("epoch_log", path(&self.epoch_log)),
        ] {
            if let Some(p) = p {
                let _ = writeln!(s, "{key} = {p}");
            }
        }
        let (hp, t) = (&self.hp, &self.train);
        let _ = writeln!(s, "model = {}", t.model.name());
        for (key, v) in [
            ("vocab_size", hp.vocab_size),
            ("embed_dim", hp.embed_dim),
            ("filters", hp.filters),
            ("window", hp.window),
            ("review_len", hp.review_len),
            ("reviews_per_entity", hp.reviews_per_entity),
            ("factor_dim", hp.factor_dim),
            ("attn_dim", hp.attn_dim),
        ] {
            let _ = writeln!(s, "{key} = {v}");
        }
        let _ = writeln!(s, "activation = {}", hp.activation.name());
        for (key, v) in [
            ("learning_rate", t.adam.learning_rate),
            ("adam_beta1", t.adam.beta1),
            ("adam_beta2", t.adam.beta2),
            ("adam_eps", t.adam.eps),
        ] {
            // `{:?}` prints the shortest text that parses back to the same bits
            let _ = writeln!(s, "{key} = {v:?}");
        }
        for (key, v) in [
            ("batch_size", t.batch_size),
            ("max_epochs", t.max_epochs),
            ("patience", t.patience),
        ] {
            let _ = writeln!(s, "{key} = {v}");
        }
        let _ = writeln!(s, "seed = {}", t.seed);
        match t.grad_clip {
            Some(c) => {
                let _ = writeln!(s, "grad_clip = {c:?}");
            }
            None => s.push_str("grad_clip = none\n"),
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut c = Self::parse(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        c.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(c)
    }

    /// Makes relative data paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.train_data,
            &mut self.valid_data,
            &mut self.test_data,
            &mut self.epoch_log,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}
