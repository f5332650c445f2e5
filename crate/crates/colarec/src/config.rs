//! Run configuration: a flat `key = value` UTF-8 file validated against a
//! fixed schema, with command-line flags taking precedence over file values.

use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::cf::CfConfig;
use crate::eval::EvalConfig;
use crate::gid::GidStrategy;
use crate::seq2seq::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("config key {key:?}: expected {expected}, got {value:?}")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("config key {key:?} set twice")]
    DuplicateKey { key: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Numeric width for training and inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(format!("unknown precision {other:?} (expected f32|f64)")),
        }
    }
}

/// Every tunable of the pipeline, resolved from defaults, then an optional
/// config file, then flag overrides (flags win).
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // preparation
    pub min_degree: usize,
    // collaborative-filtering pretraining
    pub cf_dim: usize,
    pub cf_layers: usize,
    pub cf_lr: f64,
    pub cf_weight_decay: f64,
    pub cf_epochs: usize,
    pub cf_batch_size: usize,
    // identifier construction
    pub gid_strategy: GidStrategy,
    pub gid_k: usize,
    pub gid_l: usize,
    // recommender training
    pub model_dim: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub alpha: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub max_len: usize,
    pub items_per_user: usize,
    pub eval_beam: usize,
    pub use_content: bool,
    pub use_index: bool,
    pub use_bpr: bool,
    pub use_contrastive: bool,
    // evaluation
    pub cutoffs: Vec<usize>,
    pub beam: usize,
    pub repeats: usize,
    // global
    pub precision: Precision,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let c = CfConfig::default();
        let e = EvalConfig::default();
        RunConfig {
            min_degree: 5,
            cf_dim: c.dim,
            cf_layers: c.layers,
            cf_lr: c.lr,
            cf_weight_decay: c.weight_decay,
            cf_epochs: c.epochs,
            cf_batch_size: c.batch_size,
            gid_strategy: GidStrategy::Collaborative,
            gid_k: t.k,
            gid_l: t.l,
            model_dim: t.m,
            n_heads: t.n_heads,
            enc_layers: t.enc_layers,
            dec_layers: t.dec_layers,
            alpha: t.alpha,
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            epochs: t.epochs,
            patience: t.patience,
            max_len: t.max_len,
            items_per_user: t.items_per_user,
            eval_beam: t.eval_beam,
            use_content: t.use_content,
            use_index: t.use_index,
            use_bpr: t.use_bpr,
            use_contrastive: t.use_contrastive,
            cutoffs: e.cutoffs,
            beam: e.beam,
            repeats: e.repeats,
            precision: Precision::F32,
            seed: 0,
        }
    }
}

fn parse_as<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            expected: "true|false",
        }),
    }
}

fn parse_cutoffs(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    let bad = || ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        expected: "comma-separated positive integers, e.g. 5,10,20",
    };
    let cutoffs: Vec<usize> = value
        .split(',')
        .map(|part| part.trim().parse::<usize>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(bad());
    }
    Ok(cutoffs)
}

impl RunConfig {
    /// Set one key from its string value; the single schema shared by the
    /// config-file parser and the flag merger.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "min-degree" => self.min_degree = parse_as(key, value, "a positive integer")?,
            "cf-dim" => self.cf_dim = parse_as(key, value, "a positive integer")?,
            "cf-layers" => self.cf_layers = parse_as(key, value, "an integer")?,
            "cf-lr" => self.cf_lr = parse_as(key, value, "a number")?,
            "cf-weight-decay" => self.cf_weight_decay = parse_as(key, value, "a number")?,
            "cf-epochs" => self.cf_epochs = parse_as(key, value, "a positive integer")?,
            "cf-batch-size" => self.cf_batch_size = parse_as(key, value, "a positive integer")?,
            "gid-strategy" => {
                self.gid_strategy = parse_as(key, value, "collaborative|content|random|iad")?
            }
            "gid-k" => self.gid_k = parse_as(key, value, "a positive integer")?,
            "gid-l" => self.gid_l = parse_as(key, value, "a positive integer")?,
            "model-dim" => self.model_dim = parse_as(key, value, "a positive integer")?,
            "n-heads" => self.n_heads = parse_as(key, value, "a positive integer")?,
            "enc-layers" => self.enc_layers = parse_as(key, value, "a positive integer")?,
            "dec-layers" => self.dec_layers = parse_as(key, value, "a positive integer")?,
            "alpha" => self.alpha = parse_as(key, value, "a number")?,
            "lr" => self.lr = parse_as(key, value, "a number")?,
            "weight-decay" => self.weight_decay = parse_as(key, value, "a number")?,
            "batch-size" => self.batch_size = parse_as(key, value, "a positive integer")?,
            "epochs" => self.epochs = parse_as(key, value, "a positive integer")?,
            "patience" => self.patience = parse_as(key, value, "a positive integer")?,
            "max-len" => self.max_len = parse_as(key, value, "a positive integer")?,
            "items-per-user" => self.items_per_user = parse_as(key, value, "a positive integer")?,
            "eval-beam" => self.eval_beam = parse_as(key, value, "a positive integer")?,
            "use-content" => self.use_content = parse_bool(key, value)?,
            "use-index" => self.use_index = parse_bool(key, value)?,
            "use-bpr" => self.use_bpr = parse_bool(key, value)?,
            "use-contrastive" => self.use_contrastive = parse_bool(key, value)?,
            "cutoffs" => self.cutoffs = parse_cutoffs(key, value)?,
            "beam" => self.beam = parse_as(key, value, "a positive integer")?,
            "repeats" => self.repeats = parse_as(key, value, "a positive integer")?,
            "precision" => self.precision = parse_as(key, value, "f32|f64")?,
            "seed" => self.seed = parse_as(key, value, "an unsigned integer")?,
            _ => return Err(ConfigError::UnknownKey { key: key.to_string() }),
        }
        Ok(())
    }

    /// Parse a config file body. Blank lines and `#` comments are skipped;
    /// each remaining line must be `key = value` (spaces optional); keys
    /// must be unique.
    pub fn parse_str(text: &str, source: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |reason: String| ConfigError::Malformed {
                path: source.to_string(),
                line: i + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at("expected key = value".to_string()))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(at(ConfigError::DuplicateKey { key: key.to_string() }.to_string()));
            }
            cfg.apply(key, value).map_err(|e| at(e.to_string()))?;
        }
        Ok(cfg)
    }

    /// Defaults, optionally overlaid with a config file.
    pub fn load(path: Option<&Path>) -> Result<RunConfig, ConfigError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                Self::parse_str(&text, &p.display().to_string())
            }
        }
    }

    /// Range and combination checks beyond per-key parsing.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive: [(&str, usize); 14] = [
            ("min-degree", self.min_degree),
            ("cf-dim", self.cf_dim),
            ("cf-epochs", self.cf_epochs),
            ("cf-batch-size", self.cf_batch_size),
            ("gid-k", self.gid_k),
            ("gid-l", self.gid_l),
            ("model-dim", self.model_dim),
            ("batch-size", self.batch_size),
            ("epochs", self.epochs),
            ("patience", self.patience),
            ("items-per-user", self.items_per_user),
            ("eval-beam", self.eval_beam),
            ("beam", self.beam),
            ("repeats", self.repeats),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{key} must be positive")));
            }
        }
        if self.n_heads == 0 || self.model_dim % self.n_heads != 0 {
            return Err(ConfigError::Invalid(format!(
                "n-heads ({}) must be positive and divide model-dim ({})",
                self.n_heads, self.model_dim
            )));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(ConfigError::Invalid(
                "enc-layers and dec-layers must be positive".to_string(),
            ));
        }
        if self.max_len < 4 {
            return Err(ConfigError::Invalid(format!(
                "max-len ({}) is too small to hold a task token and one item tuple",
                self.max_len
            )));
        }
        for (key, v) in [
            ("alpha", self.alpha),
            ("lr", self.lr),
            ("weight-decay", self.weight_decay),
            ("cf-lr", self.cf_lr),
            ("cf-weight-decay", self.cf_weight_decay),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "{key} must be a non-negative finite number, got {v}"
                )));
            }
        }
        if self.cutoffs.is_empty() {
            return Err(ConfigError::Invalid("cutoffs must be non-empty".to_string()));
        }
        Ok(())
    }

    pub fn cf_config(&self) -> CfConfig {
        CfConfig {
            dim: self.cf_dim,
            layers: self.cf_layers,
            lr: self.cf_lr,
            weight_decay: self.cf_weight_decay,
            epochs: self.cf_epochs,
            batch_size: self.cf_batch_size,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            l: self.gid_l,
            k: self.gid_k,
            m: self.model_dim,
            n_heads: self.n_heads,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            alpha: self.alpha,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            patience: self.patience,
            max_len: self.max_len,
            items_per_user: self.items_per_user,
            seed: self.seed,
            eval_beam: self.eval_beam,
            use_index: self.use_index,
            use_bpr: self.use_bpr,
            use_contrastive: self.use_contrastive,
            use_content: self.use_content,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            cutoffs: self.cutoffs.clone(),
            beam: self.beam,
            repeats: self.repeats,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_mirror_the_module_configs() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.train_config(), TrainConfig::default());
        let c = cfg.cf_config();
        assert_eq!(
            (c.dim, c.layers, c.epochs, c.batch_size),
            (
                CfConfig::default().dim,
                CfConfig::default().layers,
                CfConfig::default().epochs,
                CfConfig::default().batch_size
            )
        );
        assert_eq!(cfg.eval_config(), EvalConfig::default());
        assert_eq!(cfg.gid_strategy, GidStrategy::Collaborative);
    }

    #[test]
    fn parses_a_file_with_comments_and_loose_spacing() {
        let text = "\
# experiment settings
seed = 42

gid-strategy=content
alpha = 0.1
cutoffs = 5, 10
use-bpr = false
precision = f64
";
        let cfg = RunConfig::parse_str(text, "test.cfg").unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.gid_strategy, GidStrategy::Content);
        assert_eq!(cfg.alpha, 0.1);
        assert_eq!(cfg.cutoffs, vec![5, 10]);
        assert!(!cfg.use_bpr);
        assert_eq!(cfg.precision, Precision::F64);
        // untouched keys keep their defaults
        assert_eq!(cfg.gid_k, RunConfig::default().gid_k);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = RunConfig::parse_str("leraning-rate = 0.1\n", "bad.cfg").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.cfg:1"), "{msg}");
        assert!(msg.contains("leraning-rate"), "{msg}");
    }

    #[test]
    fn bad_values_name_the_key_and_expected_type() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply("epochs", "many").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("epochs") && msg.contains("positive integer"), "{msg}");

        let err = cfg.apply("use-index", "TRUE").unwrap_err();
        assert!(err.to_string().contains("true|false"));

        let err = cfg.apply("cutoffs", "5,zero").unwrap_err();
        assert!(err.to_string().contains("comma-separated"));
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = RunConfig::parse_str("seed = 1\nseed = 2\n", "dup.cfg").unwrap_err();
        assert!(err.to_string().contains("set twice"));
    }

    #[test]
    fn later_apply_overrides_file_values() {
        let mut cfg = RunConfig::parse_str("seed = 1\nalpha = 0.2\n", "f.cfg").unwrap();
        cfg.apply("seed", "7").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.alpha, 0.2);
    }

    #[test]
    fn validate_rejects_inconsistent_combinations() {
        let mut cfg = RunConfig::default();
        cfg.n_heads = 3; // does not divide 64
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));

        let mut cfg = RunConfig::default();
        cfg.alpha = -0.5;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.repeats = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.min_degree = 0;
        assert!(cfg.validate().is_err());
    }
}
