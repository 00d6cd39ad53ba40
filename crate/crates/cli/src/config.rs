//! Run configuration: one JSON document holding the model, training,
//! generator and evaluation settings plus optional data/output paths.
//!
//! A config file is layered over a preset. The optional `"extends"` key
//! names the preset (default `"default"`); every other key is merged into
//! the preset's JSON object by object, with arrays and scalars replaced
//! wholesale. The merged document is then parsed with unknown keys
//! rejected.

use std::path::{Path, PathBuf};

use mmgcn::data::GeneratorConfig;
use mmgcn::metrics::EvalOptions;
use mmgcn::model::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const PRESETS: [&str; 2] = ["default", "paper"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    /// Seed used by `generate`.
    pub data_seed: u64,
    pub eval: EvalOptions,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Settings sized for the 64-sequence toy dataset on one CPU core.
    pub fn desk() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig {
                learning_rate: 0.01,
                momentum: 0.9,
                milestones: vec![100, 150],
                decay_factor: 0.1,
                batch_size: 4,
                epochs: 200,
                ..TrainConfig::default()
            },
            generator: GeneratorConfig::default(),
            data_seed: 7,
            eval: EvalOptions::default(),
            data: None,
            out: None,
        }
    }

    /// Optimizer settings as published: batch 32, lr 1e-4, 60 epochs.
    pub fn paper() -> Self {
        Self {
            train: TrainConfig::default(),
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::desk()),
            "paper" => Some(Self::paper()),
            _ => None,
        }
    }

    /// A preset name or the path of a JSON config file.
    pub fn resolve(spec: &str) -> Result<Self, CliError> {
        if let Some(cfg) = Self::preset(spec) {
            return Ok(cfg);
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                CliError::Usage(format!(
                    "config `{spec}` is neither a preset ({}) nor an existing file",
                    PRESETS.join(", ")
                ))
            } else {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            }
        })?;
        let value: Value = serde_json::from_str(&text).map_err(|e| schema(spec, e))?;
        Self::from_value(value, spec)
    }

    /// Parse a config document, layering it over its `extends` preset.
    pub fn from_value(value: Value, origin: &str) -> Result<Self, CliError> {
        let Value::Object(mut map) = value else {
            return Err(schema(origin, "top level must be a JSON object"));
        };
        let base = match map.remove("extends") {
            None => "default".to_string(),
            Some(Value::String(s)) => s,
            Some(other) => return Err(schema(origin, format!("`extends` must be a preset name, got {other}"))),
        };
        let preset = Self::preset(&base).ok_or_else(|| {
            schema(origin, format!("unknown preset `{base}` (known: {})", PRESETS.join(", ")))
        })?;
        let mut merged = serde_json::to_value(&preset).expect("config serializes");
        merge(&mut merged, Value::Object(map));
        let cfg: Self = serde_json::from_value(merged).map_err(|e| schema(origin, e))?;
        cfg.validate().map_err(|e| schema(origin, e))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> mmgcn::Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.generator.validate()
    }

    /// SHA-256 of the compact JSON form.
    pub fn digest(&self) -> String {
        sha256_json(self)
    }
}

fn schema(origin: &str, msg: impl ToString) -> CliError {
    CliError::Schema {
        origin: origin.to_string(),
        msg: msg.to_string(),
    }
}

/// Recursive object merge; non-object values in `patch` replace.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_json<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("value serializes"))
}
