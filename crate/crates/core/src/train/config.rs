//! Training configuration and its flat `key = value` file format.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMetric {
    /// Min-max normalized validation loss plus normalized ECE.
    Combined,
    Loss,
    Ece,
}

impl SelectionMetric {
    pub fn name(self) -> &'static str {
        match self {
            SelectionMetric::Combined => "combined",
            SelectionMetric::Loss => "loss",
            SelectionMetric::Ece => "ece",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "combined" => Some(SelectionMetric::Combined),
            "loss" => Some(SelectionMetric::Loss),
            "ece" => Some(SelectionMetric::Ece),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub max_lr: f64,
    pub cycle_epochs: f64,
    pub patience: usize,
    pub max_epochs: usize,
    /// Never stop (for any reason but NaN) before this many epochs.
    pub min_epochs: usize,
    pub seed: u64,
    pub selection: SelectionMetric,
    /// Stop once the epoch training loss drops below this fraction of the
    /// initial loss. Used for overfit smoke runs.
    pub target_loss_fraction: Option<f64>,
    /// Batch size for no-gradient evaluation passes.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            base_lr: 1e-6,
            max_lr: 1e-4,
            cycle_epochs: 8.0,
            patience: 8,
            max_epochs: 200,
            min_epochs: 1,
            seed: 0,
            selection: SelectionMetric::Combined,
            target_loss_fraction: None,
            eval_batch_size: 16,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`")]
    BadValue { line: usize, key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl TrainConfig {
    /// Settings for fine-tuning an already trained checkpoint.
    pub fn fine_tune() -> Self {
        Self { max_lr: 1e-5, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.base_lr > 0.0 && self.base_lr < self.max_lr && self.max_lr.is_finite()) {
            return fail("need 0 < base_lr < max_lr");
        }
        if self.patience < 1 {
            return fail("patience must be at least 1");
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2 (batch norm)");
        }
        if self.eval_batch_size < 1 || self.max_epochs < 1 {
            return fail("eval_batch_size and max_epochs must be positive");
        }
        if !(self.cycle_epochs > 0.0 && self.cycle_epochs.is_finite()) {
            return fail("cycle_epochs must be positive");
        }
        if self.min_epochs > self.max_epochs {
            return fail("min_epochs exceeds max_epochs");
        }
        if let Some(f) = self.target_loss_fraction {
            if !(f > 0.0 && f < 1.0) {
                return fail("target_loss_fraction must lie in (0, 1)");
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                reason: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || ConfigError::BadValue {
                line,
                key: key.to_string(),
                value: value.to_string(),
            };
            fn num<T: std::str::FromStr>(v: &str, bad: impl Fn() -> ConfigError) -> Result<T, ConfigError> {
                v.parse().map_err(|_| bad())
            }
            match key {
                "batch_size" => cfg.batch_size = num(value, bad)?,
                "base_lr" => cfg.base_lr = num(value, bad)?,
                "max_lr" => cfg.max_lr = num(value, bad)?,
                "cycle_epochs" => cfg.cycle_epochs = num(value, bad)?,
                "patience" => cfg.patience = num(value, bad)?,
                "max_epochs" => cfg.max_epochs = num(value, bad)?,
                "min_epochs" => cfg.min_epochs = num(value, bad)?,
                "seed" => cfg.seed = num(value, bad)?,
                "eval_batch_size" => cfg.eval_batch_size = num(value, bad)?,
                "selection" => cfg.selection = SelectionMetric::parse(value).ok_or_else(bad)?,
                "target_loss_fraction" => {
                    cfg.target_loss_fraction = if value == "none" { None } else { Some(num(value, bad)?) }
                }
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "base_lr = {}", self.base_lr);
        let _ = writeln!(s, "max_lr = {}", self.max_lr);
        let _ = writeln!(s, "cycle_epochs = {}", self.cycle_epochs);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "min_epochs = {}", self.min_epochs);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "selection = {}", self.selection.name());
        match self.target_loss_fraction {
            Some(f) => {
                let _ = writeln!(s, "target_loss_fraction = {f}");
            }
            None => s.push_str("target_loss_fraction = none\n"),
        }
        let _ = writeln!(s, "eval_batch_size = {}", self.eval_batch_size);
        s
    }
}
