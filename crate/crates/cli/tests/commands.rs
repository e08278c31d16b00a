mod common;

use std::path::Path;

use serde_json::Value;
use steerkit::cli::run;
use steerkit_core::backend::{Backend, GenerateRequest};
use steerkit_core::profile::CalibrationProfile;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Out {
    fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }
}

fn steerkit(args: &[&str]) -> Out {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["steerkit"];
    argv.extend_from_slice(args);
    let code = run(argv, &mut out, &mut err);
    Out {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn with_config(cfg: &Path, args: &[&str]) -> Out {
    let mut v = vec!["--config", cfg.to_str().unwrap(), "--json"];
    v.extend_from_slice(args);
    steerkit(&v)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(steerkit(&["--help"]).code, 0);
    assert_eq!(steerkit(&["--version"]).code, 0);
    assert_eq!(steerkit(&["frobnicate"]).code, 2);
    assert_eq!(steerkit(&["evaluate", "--profile", "p.json", "--n", "1"]).code, 2);
    assert_eq!(steerkit(&["gen-dataset", "--concept", "x", "--out", "o", "--k", "0"]).code, 2);
    let bad = steerkit(&["steer", "--prompt", "a man", "--vector", "v.json", "--alpha", "1", "--schedule", "sideways"]);
    assert_eq!(bad.code, 2);
    assert!(bad.stderr.contains("sideways"));
}

#[test]
fn missing_env_var_in_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"storage_root": "${STEERKIT_TEST_SURELY_UNSET}"}"#).unwrap();
    let out = with_config(&cfg, &["select-tokens", "--prompt", "a man", "--concept", "smile", "--rules"]);
    assert_eq!(out.code, 2, "{}", out.stderr);
}

#[test]
fn gen_dataset_refuses_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_config(dir.path());
    let ds = dir.path().join("d.jsonl");
    let args = ["gen-dataset", "--concept", "smiling vs neutral", "--k", "10", "--out", s(&ds)];
    let first = with_config(&cfg, &args);
    assert_eq!(first.code, 0, "{}", first.stderr);
    assert_eq!(std::fs::read_to_string(&ds).unwrap().lines().count(), 10);
    assert_eq!(std::fs::read_to_string(&ds).unwrap(), common::jsonl());
    let again = with_config(&cfg, &args);
    assert_eq!(again.code, 4);
    assert!(again.stderr.contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(with_config(&cfg, &forced).code, 0);
    let other = dir.path().join("e.jsonl");
    let short = with_config(&cfg, &["gen-dataset", "--concept", "smiling vs neutral", "--k", "12", "--out", s(&other)]);
    // An LLM that cannot answer is a backend failure.
    assert_eq!(short.code, 3, "{}", short.stderr);
}

#[test]
fn build_vector_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_config(dir.path());
    let ds = dir.path().join("d.jsonl");
    std::fs::write(&ds, common::jsonl()).unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let first = with_config(&cfg, &["build-vector", "--dataset", s(&ds), "--out", s(&a)]);
    assert_eq!(first.code, 0, "{}", first.stderr);
    assert_eq!(with_config(&cfg, &["build-vector", "--dataset", s(&ds), "--out", s(&b)]).code, 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let info = first.json();
    assert_eq!(info["k"], 10);
    assert!(info["raw_norm"].as_f64().unwrap() > 0.0);
    assert!(info["encoder_id"].as_str().unwrap().starts_with("synthetic"));

    let stored = with_config(&cfg, &["build-vector", "--dataset", s(&ds)]);
    assert_eq!(stored.code, 0);
    let path = stored.json()["path"].as_str().unwrap().to_string();
    assert!(path.contains("vectors") && path.contains("smiling-vs-neutral"));
    // Same content lands on the same file.
    assert_eq!(with_config(&cfg, &["build-vector", "--dataset", s(&ds)]).json()["path"], path.as_str());

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(with_config(&cfg, &["build-vector", "--dataset", s(&empty)]).code, 4);
}

fn vector_file(dir: &Path, cfg: &Path) -> String {
    let ds = dir.join("d.jsonl");
    std::fs::write(&ds, common::jsonl()).unwrap();
    let out = with_config(cfg, &["build-vector", "--dataset", s(&ds)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    out.json()["path"].as_str().unwrap().to_string()
}

#[test]
fn calibrate_writes_reloadable_reproducible_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_config(dir.path());
    let vec = vector_file(dir.path(), &cfg);
    let args = ["calibrate", "--prompt", "a portrait of a man", "--vector", &vec, "--edit-type", "local"];
    let first = with_config(&cfg, &args);
    assert_eq!(first.code, 0, "{}", first.stderr);
    let info = first.json();
    assert!(info["valid_points"].as_array().unwrap().len() >= 2);
    assert!(info["generations_used"].as_u64().unwrap() > 0);
    let path = info["path"].as_str().unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let profile = CalibrationProfile::from_json(&text).unwrap();
    assert_eq!((profile.config.sim_min, profile.config.sim_max), (0.05, 0.15));
    assert_eq!(profile.selection.words, vec!["man".to_string()]);
    assert_eq!(profile.to_json(), text);

    let second = with_config(&cfg, &args);
    assert_eq!(second.json()["path"], info["path"]);
    assert_eq!(std::fs::read_to_string(path).unwrap(), text);

    let text_out = steerkit(&["--config", s(&cfg), "calibrate", "--prompt", "a portrait of a man", "--vector", &vec]);
    assert!(text_out.stdout.contains("generations_used"));
    assert!(text_out.stdout.contains("valid points"));
}

#[test]
fn calibrate_presets_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_config(dir.path());
    let vec = vector_file(dir.path(), &cfg);
    let out = dir.path().join("p.json");
    let global = with_config(
        &cfg,
        &["calibrate", "--prompt", "a woman in a park", "--vector", &vec, "--edit-type", "global", "--out", s(&out)],
    );
    assert_eq!(global.code, 0, "{}", global.stderr);
    let p = CalibrationProfile::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!((p.config.sim_min, p.config.sim_max), (0.15, 0.30));
    assert_eq!(p.selection.words, vec!["woman".to_string(), "park".to_string()]);

    let runtime = with_config(
        &cfg,
        &["calibrate", "--prompt", "a portrait of a man", "--vector", &vec, "--preset", "local-runtime", "--out", s(&out)],
    );
    assert_eq!(runtime.code, 0, "{}", runtime.stderr);
    let p = CalibrationProfile::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!((p.config.sim_min, p.config.sim_max), (0.15, 0.40));

    let empty = with_config(
        &cfg,
        &["calibrate", "--prompt", "a portrait of a man", "--vector", &vec, "--set", "sim_min=0.9", "--set", "sim_max=0.95"],
    );
    assert_eq!(empty.code, 0, "{}", empty.stderr);
    assert!(empty.json()["valid_points"].as_array().unwrap().is_empty());
    assert!(empty.stderr.contains("warning"));

    let bad_key = with_config(&cfg, &["calibrate", "--prompt", "a man", "--vector", &vec, "--set", "nope=1"]);
    assert_eq!(bad_key.code, 2);
    let negative = with_config(&cfg, &["calibrate", "--prompt", "a portrait of a man", "--vector", &vec, "--alpha-max", "-1", "--rules"]);
    assert_eq!(negative.code, 5, "{}", negative.stderr);
    let missing = with_config(&cfg, &["calibrate", "--prompt", "a man", "--vector", "nowhere.json"]);
    assert_eq!(missing.code, 4);
}

#[test]
fn steer_identity_and_schedules() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_config(dir.path());
    let vec = vector_file(dir.path(), &cfg);
    let engine = common::engine(dir.path());
    let emb = engine.backend.encode("a portrait of a man").unwrap();
    let plain = engine.backend.generate(&GenerateRequest::new(emb, 0)).unwrap();

    let zero = with_config(&cfg, &["steer", "--prompt", "a portrait of a man", "--vector", &vec, "--alpha", "0", "--words", "man"]);
    assert_eq!(zero.code, 0, "{}", zero.stderr);
    assert_eq!(zero.json()["image_id"], plain.id.as_str());

    let pos = with_config(&cfg, &["steer", "--prompt", "a portrait of a man", "--vector", &vec, "--alpha", "5", "--words", "man"]);
    let neg = with_config(
        &cfg,
        &["steer", "--prompt", "a portrait of a man", "--vector", &vec, "--alpha", "5", "--words", "man", "--schedule", "negated_uniform"],
    );
    assert_eq!(neg.json()["schedule"], "negated_uniform");
    assert_ne!(pos.json()["image_id"], neg.json()["image_id"]);
    let d = engine
        .backend
        .distance_ids(pos.json()["image_id"].as_str().unwrap(), neg.json()["image_id"].as_str().unwrap())
        .unwrap();
    assert!(d > 0.0);

    let plain_text = steerkit(&["--config", s(&cfg), "steer", "--prompt", "a portrait of a man", "--vector", &vec, "--alpha=-2"]);
    assert_eq!(plain_text.code, 0, "{}", plain_text.stderr);
    assert!(plain_text.stdout.trim().starts_with("syn-"));
    let seeded = steerkit(&["--config", s(&cfg), "--seed", "4", "steer", "--prompt", "a portrait of a man", "--vector", &vec, "--alpha=-2"]);
    assert_ne!(seeded.stdout, plain_text.stdout);
}

#[test]
fn evaluate_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_config(dir.path());
    let vec = vector_file(dir.path(), &cfg);
    let cal = with_config(&cfg, &["calibrate", "--prompt", "a portrait of a man", "--vector", &vec]);
    let profile = cal.json()["path"].as_str().unwrap().to_string();
    let csv = dir.path().join("curve.csv");
    let ev = with_config(&cfg, &["evaluate", "--profile", &profile, "--csv", s(&csv)]);
    assert_eq!(ev.code, 0, "{}", ev.stderr);
    let info = ev.json();
    assert_eq!(info["n"], 6);
    assert!(info["mid"].as_f64().unwrap() < 0.05);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("alpha,vqa,dreamsim\n"));
    assert_eq!(text.lines().count(), 7);
    let bundle: Value =
        serde_json::from_str(&std::fs::read_to_string(info["trace"].as_str().unwrap()).unwrap()).unwrap();
    assert_eq!(bundle["N"], 6);
    assert_eq!(bundle["alphas"][0], 0.0);
    assert_eq!(bundle["image_ids"].as_array().unwrap().len(), 6);
    assert!(csv.with_file_name(format!("{}-increments.csv", Path::new(info["trace"].as_str().unwrap()).file_stem().unwrap().to_str().unwrap())).exists());

    let n3 = with_config(&cfg, &["evaluate", "--profile", &profile, "--n", "3"]);
    assert_eq!(n3.json()["curve"].as_array().unwrap().len(), 3);
}

#[test]
fn select_tokens_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_config(dir.path());
    let rules = with_config(&cfg, &["select-tokens", "--prompt", "a portrait of a man", "--concept", "smiling vs neutral", "--rules"]);
    assert_eq!(rules.json()["words"], serde_json::json!(["man"]));
    assert_eq!(rules.json()["source"], "rule_fallback");
    let llm = with_config(&cfg, &["select-tokens", "--prompt", "a woman in a park", "--concept", "winter", "--edit-type", "global"]);
    assert_eq!(llm.json()["words"], serde_json::json!(["woman", "park"]));
    assert_eq!(llm.json()["source"], "llm");
    let none = with_config(&cfg, &["select-tokens", "--prompt", "the of a", "--concept", "smile", "--rules"]);
    assert_eq!(none.code, 4);
}
