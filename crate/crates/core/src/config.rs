//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Sources are applied in order (file first, then command-line overrides),
//! so later assignments win. Unknown keys are errors.

use std::collections::BTreeSet;
use std::path::Path;

use crate::dataio::Layout;
use crate::error::{Error, Result};
use crate::metrics::{DEFAULT_MARGIN, DEFAULT_THRESHOLD};
use crate::net::{NetworkConfig, SIDE_COUNT};
use crate::training::{ClassWeights, TrainConfig};

/// Every accepted key, in echo order.
pub const KEYS: [&str; 18] = [
    "in_channels",
    "base_channels",
    "dilation_rates",
    "with_mdm",
    "with_hf",
    "seed",
    "learning_rate",
    "min_learning_rate",
    "patience",
    "factor",
    "batch_size",
    "max_epochs",
    "side_weights",
    "class_weights",
    "epsilon_clamp",
    "threshold",
    "margin",
    "layout",
];

/// Settings merged from every source.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub net: NetworkConfig,
    pub train: TrainConfig,
    pub threshold: f64,
    pub margin: u32,
    pub layout: Layout,
    explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            net: NetworkConfig::default(),
            train: TrainConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            margin: DEFAULT_MARGIN,
            layout: Layout::Cfd,
            explicit: BTreeSet::new(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{value}'"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// Parses a comma-separated dilation-rate group such as `2,4,8,16`.
pub fn parse_rates(value: &str) -> Result<Vec<usize>> {
    let rates: Vec<usize> = parse_list("dilation_rates", value)?;
    let probe = NetworkConfig {
        dilation_rates: rates.clone(),
        ..Default::default()
    };
    probe.validate()?;
    Ok(rates)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "in_channels" => self.net.in_channels = parse(key, value)?,
            "base_channels" => self.net.base_channels = parse(key, value)?,
            "dilation_rates" => self.net.dilation_rates = parse_rates(value)?,
            "with_mdm" => self.net.with_mdm = parse_bool(key, value)?,
            "with_hf" => self.net.with_hf = parse_bool(key, value)?,
            "seed" => {
                let s: u64 = parse(key, value)?;
                self.net.seed = s;
                self.train.seed = s;
            }
            "learning_rate" => self.train.learning_rate = parse(key, value)?,
            "min_learning_rate" => self.train.min_learning_rate = parse(key, value)?,
            "patience" => self.train.patience = parse(key, value)?,
            "factor" => self.train.factor = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "max_epochs" => self.train.max_epochs = parse(key, value)?,
            "side_weights" => {
                let w: Vec<f64> = parse_list(key, value)?;
                self.train.side_weights = w
                    .try_into()
                    .map_err(|w: Vec<f64>| Error::Config(format!("side_weights needs {SIDE_COUNT} values, got {}", w.len())))?;
            }
            "class_weights" => {
                self.train.class_weights = if value.eq_ignore_ascii_case("auto") {
                    ClassWeights::AutoBalance
                } else {
                    match parse_list::<f64>(key, value)?.as_slice() {
                        &[beta, gamma] => ClassWeights::Fixed { beta, gamma },
                        _ => return Err(Error::Config(format!("class_weights: expected 'auto' or 'beta,gamma', got '{value}'"))),
                    }
                }
            }
            "epsilon_clamp" => self.train.epsilon_clamp = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "margin" => self.margin = parse(key, value)?,
            "layout" => {
                self.layout = value.parse()?;
                if let Some(c) = self.layout.channels() {
                    if !self.is_explicit("in_channels") {
                        self.net.in_channels = c;
                    }
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown key '{other}'; valid keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Applies every assignment in config-file text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.apply_override(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Defaults, then `file`, then `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut c = Self::default();
        if let Some(f) = file {
            c.apply_file(f)?;
        }
        for o in overrides {
            c.apply_override(o)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Whether `key` was assigned by any source.
    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// Whether any network key was assigned.
    pub fn net_explicit(&self) -> bool {
        ["in_channels", "base_channels", "dilation_rates", "with_mdm", "with_hf", "layout"]
            .iter()
            .any(|k| self.is_explicit(k))
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        Ok(())
    }

    /// Effective configuration in the same `key = value` syntax it is read from.
    pub fn echo(&self) -> String {
        let class_weights = match self.train.class_weights {
            ClassWeights::AutoBalance => "auto".to_string(),
            ClassWeights::Fixed { beta, gamma } => format!("{beta},{gamma}"),
        };
        let layout = match self.layout {
            Layout::Cfd => "cfd",
            Layout::AigleRn => "aiglern",
            Layout::Generic => "generic",
        };
        let values = [
            self.net.in_channels.to_string(),
            self.net.base_channels.to_string(),
            join(&self.net.dilation_rates),
            self.net.with_mdm.to_string(),
            self.net.with_hf.to_string(),
            self.train.seed.to_string(),
            self.train.learning_rate.to_string(),
            self.train.min_learning_rate.to_string(),
            self.train.patience.to_string(),
            self.train.factor.to_string(),
            self.train.batch_size.to_string(),
            self.train.max_epochs.to_string(),
            join(&self.train.side_weights),
            class_weights,
            self.train.epsilon_clamp.to_string(),
            self.threshold.to_string(),
            self.margin.to_string(),
            layout.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
