//! Engine configuration: one JSON document, `${VAR}` expanded from the
//! environment inside string values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use steerkit_core::backend::{RemoteConfig, SyntheticConfig};
use steerkit_core::elastic::{BandPreset, ElasticConfig};
use steerkit_core::llm::HttpLlmConfig;
use steerkit_core::select::EditType;

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Synthetic(SyntheticConfig),
    Remote(RemoteConfig),
    /// Answers from a recorded fixture file.
    Replay { fixture: PathBuf },
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Synthetic(SyntheticConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LlmConfig {
    Http(HttpLlmConfig),
    /// Canned replies from a JSON file (`{"rules": [...], "replies": [...]}`).
    Scripted { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerConfig {
    /// `POST /v1/score` on the backend base URL unless one is given.
    Remote {
        #[serde(default)]
        base_url: Option<String>,
    },
    /// Proportional to the synthetic world's response; needs the synthetic backend.
    Synthetic {
        #[serde(default = "one")]
        gain: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig::Synthetic { gain: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub backend: BackendConfig,
    pub llm: Option<LlmConfig>,
    pub scorer: ScorerConfig,
    /// Elastic search settings per edit type.
    pub presets: BTreeMap<EditType, ElasticConfig>,
    pub storage_root: PathBuf,
    pub seed: u64,
    /// Concept lexicon for rule-based token selection.
    pub lexicon: Option<PathBuf>,
    /// Name of the perceptual distance recorded with evaluation output.
    pub distance_oracle: String,
    pub question_template: String,
    pub listen: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            backend: BackendConfig::default(),
            llm: None,
            scorer: ScorerConfig::default(),
            presets: EditType::ALL
                .into_iter()
                .map(|e| (e, ElasticConfig::preset(BandPreset::for_edit(e))))
                .collect(),
            storage_root: PathBuf::from("steerkit-data"),
            seed: 0,
            lexicon: None,
            distance_oracle: "backend".into(),
            question_template: "Does the image show {concept}?".into(),
            listen: "127.0.0.1:8080".into(),
        }
    }
}

/// Replaces `${NAME}` with the environment variable `NAME` in every string.
pub fn interpolate(value: &mut Value, lookup: &dyn Fn(&str) -> Option<String>) -> AppResult<()> {
    match value {
        Value::String(s) => {
            *s = expand(s, lookup)?;
        }
        Value::Array(items) => {
            for v in items {
                interpolate(v, lookup)?;
            }
        }
        Value::Object(map) => {
            for v in map.values_mut() {
                interpolate(v, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn expand(s: &str, lookup: &dyn Fn(&str) -> Option<String>) -> AppResult<String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find("${") {
        out.push_str(&rest[..i]);
        let after = &rest[i + 2..];
        let end = after
            .find('}')
            .ok_or_else(|| AppError::usage(format!("unterminated `${{` in config value `{s}`")))?;
        let name = &after[..end];
        let val = lookup(name)
            .ok_or_else(|| AppError::usage(format!("environment variable `{name}` is not set")))?;
        out.push_str(&val);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

impl EngineConfig {
    pub fn from_json_str(text: &str) -> AppResult<Self> {
        Self::from_json_with(text, &|k| std::env::var(k).ok())
    }

    pub fn from_json_with(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> AppResult<Self> {
        let mut value: Value =
            serde_json::from_str(text).map_err(|e| AppError::usage(format!("config: {e}")))?;
        interpolate(&mut value, lookup)?;
        let cfg: Self =
            serde_json::from_value(value).map_err(|e| AppError::usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::usage(format!("config {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> AppResult<()> {
        for e in EditType::ALL {
            let preset = self
                .presets
                .get(&e)
                .ok_or_else(|| AppError::usage(format!("config lacks an elastic preset for {e} edits")))?;
            preset
                .validate()
                .map_err(|err| AppError::usage(format!("preset {e}: {err}")))?;
        }
        Ok(())
    }

    pub fn preset(&self, edit: EditType) -> ElasticConfig {
        self.presets
            .get(&edit)
            .cloned()
            .unwrap_or_else(|| ElasticConfig::for_edit(edit))
    }
}

/// Merges JSON overrides into an elastic configuration.
pub fn apply_overrides(cfg: &ElasticConfig, overrides: &serde_json::Map<String, Value>) -> AppResult<ElasticConfig> {
    let mut value = serde_json::to_value(cfg).expect("config serializes");
    let obj = value.as_object_mut().expect("config is an object");
    for (k, v) in overrides {
        if !obj.contains_key(k) {
            return Err(AppError::usage(format!("unknown elastic parameter `{k}`")));
        }
        obj.insert(k.clone(), v.clone());
    }
    let merged: ElasticConfig =
        serde_json::from_value(value).map_err(|e| AppError::usage(format!("overrides: {e}")))?;
    merged
        .validate()
        .map_err(|e| AppError::usage(e.to_string()))?;
    Ok(merged)
}

/// Parses `key=value` pairs; values are JSON when they parse as JSON and
/// strings otherwise.
pub fn parse_set_args(args: &[String]) -> AppResult<serde_json::Map<String, Value>> {
    let mut map = serde_json::Map::new();
    for a in args {
        let (k, v) = a
            .split_once('=')
            .ok_or_else(|| AppError::usage(format!("expected key=value, got `{a}`")))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        map.insert(k.trim().to_string(), value);
    }
    Ok(map)
}
