//! The checked-in fuzz seeds must be valid inputs, otherwise the fuzzers
//! start from the error paths only.

use std::fs;
use std::path::PathBuf;

use meshrl::agent::PolicyCheckpoint;
use meshrl::config::ScenarioConfig;
use meshrl::io::{results_from_csv, trace_from_csv};
use meshrl::sysmodel::SystemModel;

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("seed_"))
        .map(|p| {
            let text = fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn trace_seeds_parse() {
    for (p, s) in seeds("trace_csv") {
        trace_from_csv(&s).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn results_seeds_parse() {
    for (p, s) in seeds("results_csv") {
        results_from_csv(&s).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn config_seeds_parse() {
    for (p, s) in seeds("config_toml") {
        ScenarioConfig::from_toml_str(&s).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn model_seeds_parse() {
    for (p, s) in seeds("model_json") {
        let m = SystemModel::from_json(&s).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        let (d1, d2) = m.predict(10.0, 10.0, 0.5, 0.5, 0.0, 0.0);
        assert!(d1.is_finite() && d2.is_finite());
    }
}

#[test]
fn policy_seeds_parse() {
    for (p, s) in seeds("policy_json") {
        PolicyCheckpoint::from_json(&s).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}
