//! Run configuration: defaults < config file < `PCAD_*` environment < flags.
//!
//! Every layer is a tree of keys; later layers replace leaves of earlier ones
//! and the merged tree is deserialized once, so an unknown or ill-typed key
//! is reported with its full dotted path wherever it came from.

use std::path::Path;

use pcad_core::datasets::BenchmarkConfig;
use pcad_core::model::{Ablation, ModelConfig};
use pcad_core::pipeline::TrainConfig;
use pcad_core::tensor::{AdamWConfig, StepSchedule};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

pub const ENV_PREFIX: &str = "PCAD_";

/// File written next to every command's outputs.
pub const RESOLVED_CONFIG_FILE: &str = "pcad.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for generation and evaluation; 0 lets rayon decide.
    pub threads: usize,
    /// Model variant; anything but `full` overrides the model's masking and
    /// decoder switches.
    pub ablation: Ablation,
    pub synth: BenchmarkConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            ablation: Ablation::Full,
            synth: BenchmarkConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub lr_dropped: f64,
    pub lr_drop_epoch: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Intermediate checkpoint period in epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let schedule = StepSchedule::default();
        let opt = AdamWConfig::default();
        Self {
            epochs: 1000,
            lr: schedule.initial,
            lr_dropped: schedule.dropped,
            lr_drop_epoch: schedule.drop_epoch,
            weight_decay: opt.weight_decay,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            checkpoint_every: 100,
        }
    }
}

impl RunConfig {
    /// Model configuration with the ablation applied.
    pub fn effective_model(&self) -> ModelConfig {
        let mut model = self.model.clone();
        if self.ablation != Ablation::Full {
            self.ablation.apply(&mut model);
        }
        model
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            schedule: StepSchedule {
                initial: t.lr,
                dropped: t.lr_dropped,
                drop_epoch: t.lr_drop_epoch,
            },
            optimizer: AdamWConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
                weight_decay: t.weight_decay,
            },
            seed: self.seed,
            checkpoint_every: t.checkpoint_every,
            model: self.effective_model(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.synth
            .validate()
            .map_err(|e| CliError::Config(format!("synth: {e}")))?;
        self.train_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Flat `dotted.key = value` lines, sorted by key.
    pub fn to_dotted_toml(&self) -> String {
        let tree = toml::Value::try_from(self).expect("config serializes to toml");
        let mut lines = Vec::new();
        flatten(&tree, &mut String::new(), &mut lines);
        lines.sort();
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

fn flatten(value: &toml::Value, prefix: &mut String, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let len = prefix.len();
                if !prefix.is_empty() {
                    prefix.push('.');
                }
                prefix.push_str(k);
                flatten(v, prefix, out);
                prefix.truncate(len);
            }
        }
        leaf => out.push(format!("{prefix} = {leaf}")),
    }
}

/// One layer of overrides, addressed by dotted key paths.
#[derive(Clone, Debug, Default)]
pub struct Layer(Map<String, Value>);

impl Layer {
    pub fn set(&mut self, path: &str, value: Value) -> Result<(), CliError> {
        let keys: Vec<&str> = path.split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(CliError::Config(format!("malformed key `{path}`")));
        }
        let mut node = &mut self.0;
        for k in &keys[..keys.len() - 1] {
            let entry = node.entry(k.to_string()).or_insert_with(|| Value::Object(Map::new()));
            if !entry.is_object() {
                *entry = Value::Object(Map::new());
            }
            node = entry.as_object_mut().expect("just made an object");
        }
        node.insert(keys[keys.len() - 1].to_string(), value);
        Ok(())
    }

    /// `key=value` with the value read as a TOML literal, or as a bare
    /// string when it is not one.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected key=value, got `{assignment}`")))?;
        self.set(key.trim(), parse_literal(raw.trim()))
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, CliError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(format!("{origin}: {}", e.message())))?;
        match serde_json::to_value(table) {
            Ok(Value::Object(map)) => Ok(Self(map)),
            Ok(_) => unreachable!("a toml table maps to an object"),
            Err(e) => Err(CliError::Config(format!("{origin}: {e}"))),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// `PCAD_MODEL__BLOCKS=2` sets `model.blocks`; `__` separates levels.
    pub fn from_env(vars: impl IntoIterator<Item = (String, String)>) -> Result<Self, CliError> {
        let mut layer = Self::default();
        let mut vars: Vec<_> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        vars.sort();
        for (name, raw) in vars {
            let key = name[ENV_PREFIX.len()..].to_ascii_lowercase().replace("__", ".");
            layer.set(&key, parse_literal(&raw))?;
        }
        Ok(layer)
    }
}

fn parse_literal(raw: &str) -> Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("key present")).expect("toml value maps to json"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn merge(base: &mut Value, layer: &Map<String, Value>) {
    let Value::Object(base) = base else {
        unreachable!("config root is an object")
    };
    for (k, v) in layer {
        match (base.get_mut(k), v) {
            (Some(b @ Value::Object(_)), Value::Object(over)) => merge(b, over),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Applies `layers` in order over the defaults.
pub fn resolve(layers: &[Layer]) -> Result<RunConfig, CliError> {
    let mut tree = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    for layer in layers {
        merge(&mut tree, &layer.0);
    }
    let config: RunConfig = serde_path_to_error::deserialize(tree).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("`{path}`: {}", e.inner()))
    })?;
    config.validate()?;
    Ok(config)
}
