//! Flat `key = value` configuration covering every pipeline, network and
//! training setting. Lines starting with `#` are comments; unknown keys are
//! rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::color::{Aggregate, FEATURE_LEN};
use crate::filter::FilterKind;
use crate::mlp::TrainParams;
use crate::pipeline::PipelineParams;

/// Environment variable naming a default configuration file.
pub const CONFIG_ENV: &str = "MINESCAN_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("key {0:?} given twice")]
    Duplicate(String),
    #[error("{key}: {msg}")]
    Value { key: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub pipeline: PipelineParams,
    /// Hidden layer widths; input and output widths are implied.
    pub hidden_layers: Vec<usize>,
    pub slope: f64,
    /// Seed for the initial weights.
    pub init_seed: u64,
    pub train: TrainParams,
    pub model: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            pipeline: PipelineParams::default(),
            hidden_layers: vec![90],
            slope: 1.0,
            init_seed: 1,
            train: TrainParams::default(),
            model: None,
            out_dir: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "filter_kind",
    "seg_threshold",
    "seg_spatial_weight",
    "seg_max_iter",
    "seg_max_k",
    "blank_level",
    "feature_aggregate",
    "feature_scale_factor",
    "feature_bias",
    "hidden_layers",
    "slope",
    "init_seed",
    "learning_rate",
    "momentum",
    "mse_target",
    "max_epochs",
    "divergence_window",
    "divergence_factor",
    "train_seed",
    "model",
    "out_dir",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::Value {
        key: key.to_string(),
        msg: e.to_string(),
    })
}

fn check(key: &str, ok: bool, what: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Value {
            key: key.to_string(),
            msg: format!("must be {what}"),
        })
    }
}

impl Config {
    /// Layer sizes of the network this configuration describes.
    pub fn layer_sizes(&self, class_count: usize) -> Vec<usize> {
        let mut sizes = vec![FEATURE_LEN];
        sizes.extend(&self.hidden_layers);
        sizes.push(class_count);
        sizes
    }

    /// Sets one key from its text form, validating the value's range.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "filter_kind" => {
                self.pipeline.filter = value.parse::<FilterKind>().map_err(|msg| ConfigError::Value {
                    key: key.into(),
                    msg,
                })?
            }
            "seg_threshold" => {
                let v: f64 = parse_value(key, value)?;
                check(key, v.is_finite() && v >= 0.0, "a finite non-negative number")?;
                self.pipeline.segment.threshold = v;
            }
            "seg_spatial_weight" => {
                let v: f64 = parse_value(key, value)?;
                check(key, v.is_finite() && v >= 0.0, "a finite non-negative number")?;
                self.pipeline.segment.spatial_weight = v;
            }
            "seg_max_iter" => {
                let v: usize = parse_value(key, value)?;
                check(key, v >= 1, "at least 1")?;
                self.pipeline.segment.max_iter = v;
            }
            "seg_max_k" => {
                let v: usize = parse_value(key, value)?;
                check(key, v >= 1, "at least 1")?;
                self.pipeline.segment.max_k = v;
            }
            "blank_level" => self.pipeline.blank_level = parse_value(key, value)?,
            "feature_aggregate" => {
                self.pipeline.features.aggregate = value.parse::<Aggregate>().map_err(|msg| ConfigError::Value {
                    key: key.into(),
                    msg,
                })?
            }
            "feature_scale_factor" => {
                let v: f64 = parse_value(key, value)?;
                check(key, v.is_finite() && v > 0.0, "a finite positive number")?;
                self.pipeline.features.scale_factor = v;
            }
            "feature_bias" => {
                let v: f64 = parse_value(key, value)?;
                check(key, v.is_finite(), "finite")?;
                self.pipeline.features.bias = v;
            }
            "hidden_layers" => {
                let sizes = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_value::<usize>(key, s))
                    .collect::<Result<Vec<_>, _>>()?;
                check(key, sizes.iter().all(|&n| n >= 1), "a comma-separated list of positive widths")?;
                self.hidden_layers = sizes;
            }
            "slope" => {
                let v: f64 = parse_value(key, value)?;
                check(key, v.is_finite() && v > 0.0, "a finite positive number")?;
                self.slope = v;
            }
            "init_seed" => self.init_seed = parse_value(key, value)?,
            "learning_rate" => {
                let v: f64 = parse_value(key, value)?;
                check(key, v.is_finite() && v >= 0.0, "a finite non-negative number")?;
                self.train.learning_rate = v;
            }
            "momentum" => {
                let v: f64 = parse_value(key, value)?;
                check(key, (0.0..1.0).contains(&v), "in [0, 1)")?;
                self.train.momentum = v;
            }
            "mse_target" => {
                let v: f64 = parse_value(key, value)?;
                check(key, v.is_finite() && v > 0.0, "a finite positive number")?;
                self.train.mse_target = v;
            }
            "max_epochs" => {
                let v: usize = parse_value(key, value)?;
                check(key, v >= 1, "at least 1")?;
                self.train.max_epochs = v;
            }
            "divergence_window" => {
                let v: usize = parse_value(key, value)?;
                check(key, v >= 1, "at least 1")?;
                self.train.divergence_window = v;
            }
            "divergence_factor" => {
                let v: f64 = parse_value(key, value)?;
                check(key, v.is_finite() && v > 1.0, "a finite number above 1")?;
                self.train.divergence_factor = v;
            }
            "train_seed" => self.train.rng_seed = parse_value(key, value)?,
            "model" => self.model = (!value.is_empty()).then(|| PathBuf::from(value)),
            "out_dir" => self.out_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: idx + 1 })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: idx + 1 });
            }
            if seen.iter().any(|k| k == key) {
                return Err(ConfigError::Duplicate(key.to_string()));
            }
            self.set(key, value)?;
            seen.push(key.to_string());
        }
        Ok(())
    }

    /// Defaults overridden by `text`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        config.apply_text(text)?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Every key, one per line, in [`KEYS`] order.
    pub fn render(&self) -> String {
        let p = &self.pipeline;
        let t = &self.train;
        let hidden: Vec<String> = self.hidden_layers.iter().map(usize::to_string).collect();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("filter_kind", p.filter.to_string());
        put("seg_threshold", p.segment.threshold.to_string());
        put("seg_spatial_weight", p.segment.spatial_weight.to_string());
        put("seg_max_iter", p.segment.max_iter.to_string());
        put("seg_max_k", p.segment.max_k.to_string());
        put("blank_level", p.blank_level.to_string());
        put("feature_aggregate", p.features.aggregate.to_string());
        put("feature_scale_factor", p.features.scale_factor.to_string());
        put("feature_bias", p.features.bias.to_string());
        put("hidden_layers", hidden.join(","));
        put("slope", self.slope.to_string());
        put("init_seed", self.init_seed.to_string());
        put("learning_rate", t.learning_rate.to_string());
        put("momentum", t.momentum.to_string());
        put("mse_target", t.mse_target.to_string());
        put("max_epochs", t.max_epochs.to_string());
        put("divergence_window", t.divergence_window.to_string());
        put("divergence_factor", t.divergence_factor.to_string());
        put("train_seed", t.rng_seed.to_string());
        put("model", path(&self.model));
        put("out_dir", path(&self.out_dir));
        out
    }
}
