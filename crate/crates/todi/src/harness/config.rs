//! Flat `key=value` experiment configs for the trainer and sweeps.
//!
//! The on-disk format is one `key=value` per line, `#` comments and blank
//! lines ignored, every key optional (defaults below), unknown keys
//! rejected loudly. `canonical_text` re-serializes a config into a stable
//! normal form whose digest identifies the run.

use serde::Serialize;

use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::harness::model::TeacherKind;
use crate::weighting::Beta;

/// Every key a config file may set, in canonical order.
///
/// Kept literally in sync with [`TrainConfig`]'s serialized field names; a
/// unit test diffs the two so a new field cannot be added to one side only.
pub const CONFIG_KEYS: [&str; 20] = [
    "kind",
    "lambda",
    "mix_ratio",
    "beta",
    "epochs",
    "lr",
    "optimizer",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "batch_size",
    "seed",
    "ce_mix",
    "teacher_kind",
    "teacher_vocab",
    "teacher_order",
    "teacher_seed",
    "temperature",
    "n_seq",
    "seq_len",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::ConfigParse(format!(
                "unknown optimizer {other:?}; supported: sgd, adam"
            ))),
        }
    }
}

/// One fully-resolved training run. Divergence parameters (`lambda`,
/// `mix_ratio`, `beta`) stay optional here and are validated against the
/// chosen `kind` when the [`DivergenceSpec`] is built.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub kind: String,
    pub lambda: Option<f64>,
    pub mix_ratio: Option<f64>,
    pub beta: Option<String>,
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub ce_mix: f64,
    pub teacher_kind: String,
    pub teacher_vocab: usize,
    pub teacher_order: usize,
    pub teacher_seed: u64,
    pub temperature: f64,
    pub n_seq: usize,
    pub seq_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: "todi".to_string(),
            lambda: None,
            mix_ratio: None,
            beta: None,
            epochs: 200,
            lr: 0.01,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            seed: 0,
            ce_mix: 0.5,
            teacher_kind: "mixture_markov".to_string(),
            teacher_vocab: 16,
            teacher_order: 1,
            teacher_seed: 3,
            temperature: 1.0,
            n_seq: 256,
            seq_len: 32,
        }
    }
}

impl TrainConfig {
    /// Parse the flat `key=value` text format. Later duplicates of a key
    /// are an error, as is any key outside [`CONFIG_KEYS`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::ConfigParse(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let canonical = CONFIG_KEYS
                .iter()
                .find(|&&k| k == key)
                .copied()
                .ok_or_else(|| Error::UnknownConfigKey {
                    key: key.to_string(),
                    accepted: CONFIG_KEYS.join(", "),
                })?;
            if seen.contains(&canonical) {
                return Err(Error::ConfigParse(format!(
                    "line {}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
            seen.push(canonical);
            cfg.set(canonical, value, lineno + 1)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, lineno: usize) -> Result<()> {
        let bad = |what: &str| {
            Error::ConfigParse(format!("line {lineno}: {key} must be {what}, got {value:?}"))
        };
        match key {
            "kind" => self.kind = value.to_string(),
            "lambda" => self.lambda = Some(value.parse().map_err(|_| bad("a float"))?),
            "mix_ratio" => self.mix_ratio = Some(value.parse().map_err(|_| bad("a float"))?),
            "beta" => self.beta = Some(value.to_string()),
            "epochs" => self.epochs = value.parse().map_err(|_| bad("a non-negative integer"))?,
            "lr" => self.lr = value.parse().map_err(|_| bad("a float"))?,
            "optimizer" => self.optimizer = OptimizerKind::parse(value)?,
            "adam_beta1" => self.adam_beta1 = value.parse().map_err(|_| bad("a float"))?,
            "adam_beta2" => self.adam_beta2 = value.parse().map_err(|_| bad("a float"))?,
            "adam_eps" => self.adam_eps = value.parse().map_err(|_| bad("a float"))?,
            "batch_size" => {
                self.batch_size = value.parse().map_err(|_| bad("a positive integer"))?
            }
            "seed" => self.seed = value.parse().map_err(|_| bad("an unsigned integer"))?,
            "ce_mix" => self.ce_mix = value.parse().map_err(|_| bad("a float"))?,
            "teacher_kind" => self.teacher_kind = value.to_string(),
            "teacher_vocab" => {
                self.teacher_vocab = value.parse().map_err(|_| bad("a positive integer"))?
            }
            "teacher_order" => {
                self.teacher_order = value.parse().map_err(|_| bad("a non-negative integer"))?
            }
            "teacher_seed" => {
                self.teacher_seed = value.parse().map_err(|_| bad("an unsigned integer"))?
            }
            "temperature" => self.temperature = value.parse().map_err(|_| bad("a float"))?,
            "n_seq" => self.n_seq = value.parse().map_err(|_| bad("a positive integer"))?,
            "seq_len" => self.seq_len = value.parse().map_err(|_| bad("a positive integer"))?,
            other => unreachable!("key {other} passed the CONFIG_KEYS filter"),
        }
        Ok(())
    }

    /// Range and cross-field checks that do not need the divergence spec.
    pub fn validate(&self) -> Result<()> {
        // also validates kind + divergence parameter presence
        self.spec()?;
        TeacherKind::parse(&self.teacher_kind)?;
        let positive = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {x}")))
            }
        };
        positive("lr", self.lr)?;
        positive("adam_eps", self.adam_eps)?;
        positive("temperature", self.temperature)?;
        for (name, x) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(x.is_finite() && (0.0..1.0).contains(&x)) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1), got {x}"
                )));
            }
        }
        if !(self.ce_mix.is_finite() && (0.0..=1.0).contains(&self.ce_mix)) {
            return Err(Error::InvalidParameter(format!(
                "ce_mix must lie in [0, 1], got {}",
                self.ce_mix
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if self.n_seq == 0 {
            return Err(Error::InvalidParameter("n_seq must be >= 1".into()));
        }
        if self.seq_len < self.teacher_order + 1 {
            return Err(Error::InvalidParameter(format!(
                "seq_len must be >= teacher_order + 1 = {}, got {}",
                self.teacher_order + 1,
                self.seq_len
            )));
        }
        Ok(())
    }

    /// The divergence this config trains with.
    pub fn spec(&self) -> Result<DivergenceSpec> {
        let beta = self.beta.as_deref().map(Beta::parse).transpose()?;
        DivergenceSpec::from_config(&self.kind, self.lambda, self.mix_ratio, beta)
    }

    pub fn teacher_kind(&self) -> Result<TeacherKind> {
        TeacherKind::parse(&self.teacher_kind)
    }

    /// Stable normal form: every key in canonical order, one per line,
    /// unset optional keys omitted. Parsing the output reproduces the
    /// config exactly; its digest is the run identity.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let value = match key {
                "kind" => self.kind.clone(),
                "lambda" => match self.lambda {
                    Some(x) => x.to_string(),
                    None => continue,
                },
                "mix_ratio" => match self.mix_ratio {
                    Some(x) => x.to_string(),
                    None => continue,
                },
                "beta" => match &self.beta {
                    Some(b) => b.clone(),
                    None => continue,
                },
                "epochs" => self.epochs.to_string(),
                "lr" => self.lr.to_string(),
                "optimizer" => self.optimizer.as_str().to_string(),
                "adam_beta1" => self.adam_beta1.to_string(),
                "adam_beta2" => self.adam_beta2.to_string(),
                "adam_eps" => self.adam_eps.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "seed" => self.seed.to_string(),
                "ce_mix" => self.ce_mix.to_string(),
                "teacher_kind" => self.teacher_kind.clone(),
                "teacher_vocab" => self.teacher_vocab.to_string(),
                "teacher_order" => self.teacher_order.to_string(),
                "teacher_seed" => self.teacher_seed.to_string(),
                "temperature" => self.temperature.to_string(),
                "n_seq" => self.n_seq.to_string(),
                "seq_len" => self.seq_len.to_string(),
                other => unreachable!("unhandled canonical key {other}"),
            };
            out.push_str(key);
            out.push('=');
            out.push_str(&value);
            out.push('\n');
        }
        out
    }

    /// Apply command-line overrides on top of a parsed config.
    pub fn with_overrides(mut self, seed: Option<u64>, beta: Option<&str>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(b) = beta {
            self.beta = Some(b.to_string());
        }
        self.validate()?;
        Ok(self)
    }
}
