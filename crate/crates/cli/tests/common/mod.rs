#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde_json::json;
use steerkit::config::EngineConfig;
use steerkit::engine::Engine;
use steerkit_core::dataset::{ContrastiveDataset, ContrastivePair};

pub const SUBJECTS: [&str; 10] = [
    "man", "woman", "child", "farmer", "doctor", "teacher", "sailor", "dancer", "painter", "chef",
];

pub fn pairs() -> Vec<ContrastivePair> {
    SUBJECTS
        .iter()
        .map(|s| {
            ContrastivePair::new(
                "smiling",
                "neutral",
                format!("A photorealistic portrait of a {s} with a smiling expression."),
                format!("A photorealistic portrait of a {s} with a neutral expression."),
            )
        })
        .collect()
}

pub fn jsonl() -> String {
    ContrastiveDataset::new("smiling vs neutral", pairs()).unwrap().to_jsonl()
}

/// Scripted LLM file answering the dataset request and two token selections.
pub fn write_llm_script(dir: &Path) -> PathBuf {
    let script = json!({"rules": [
        {"contains": "Generate the 10 JSON Lines", "reply": jsonl()},
        {"contains": "PROMPT: \"a portrait of a man\"", "reply": "man"},
        {"contains": "PROMPT: \"a woman in a park\"", "reply": "woman park"},
    ]});
    let path = dir.join("llm.json");
    std::fs::write(&path, script.to_string()).unwrap();
    path
}

pub fn config_json(dir: &Path) -> serde_json::Value {
    json!({
        "backend": {"kind": "synthetic", "positive_words": ["smiling"], "negative_words": ["neutral"]},
        "llm": {"kind": "scripted", "path": write_llm_script(dir)},
        "scorer": {"kind": "synthetic"},
        "storage_root": dir.join("data"),
    })
}

pub fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, config_json(dir).to_string()).unwrap();
    path
}

pub fn engine(dir: &Path) -> Engine {
    Engine::from_config(EngineConfig::from_json_str(&config_json(dir).to_string()).unwrap()).unwrap()
}

/// Builds the smiling vector into storage and returns its path.
pub fn vector(engine: &Engine) -> PathBuf {
    let ds = ContrastiveDataset::new("smiling vs neutral", pairs()).unwrap();
    let (_, text) = engine.build_vector(&ds).unwrap();
    engine.storage.save_vector(ds.concept(), &text).unwrap()
}
