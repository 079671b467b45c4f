//! The run configuration shared by every subcommand: one JSON document
//! merged over a scale preset.

use std::path::Path;

use dpn::config::{MetricConfig, RenderConfig, RlConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scale: Scale,
    /// Copied into `train.seed` and `rl.seed` when the config is resolved.
    pub seed: u64,
    pub train: TrainConfig,
    pub render: RenderConfig,
    pub metric: MetricConfig,
    pub rl: RlConfig,
}

impl RunConfig {
    pub fn preset(scale: Scale) -> Self {
        let (train, render) = match scale {
            Scale::Desk => (TrainConfig::default(), RenderConfig::default()),
            Scale::Paper => (TrainConfig::paper(), RenderConfig::paper()),
        };
        Self {
            scale,
            seed: 0,
            train,
            render,
            metric: MetricConfig::default(),
            rl: RlConfig::default(),
        }
        .with_seed(0)
    }

    /// Parses `text` and lays it over the preset its `scale` key names.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let user: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if !user.is_object() {
            return Err("the config must be a JSON object".into());
        }
        let scale = match user.get("scale") {
            Some(v) => Scale::deserialize(v).map_err(|e| format!("scale: {e}"))?,
            None => Scale::Desk,
        };
        let mut merged = serde_json::to_value(Self::preset(scale)).map_err(|e| e.to_string())?;
        merge(&mut merged, user);
        let cfg: Self = serde_json::from_value(merged).map_err(|e| e.to_string())?;
        let seed = cfg.seed;
        Ok(cfg.with_seed(seed))
    }

    /// The desk preset when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::preset(Scale::Desk));
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.rl.seed = seed;
        self
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
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
