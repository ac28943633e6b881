#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use gadgetscan::report::{analyze, Denylist, Report, ReportConfig};
use gadgetscan::runner::{replay, RunOutcome, RuntimeProfile};

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .expect("repo root")
}

pub fn corpus() -> PathBuf {
    repo_root().join("corpus")
}

pub fn golden() -> PathBuf {
    corpus().join("golden")
}

pub fn expected(name: &str) -> PathBuf {
    corpus().join("expected").join(name)
}

pub fn profile() -> RuntimeProfile {
    RuntimeProfile::load(&corpus().join("profile.json")).expect("corpus profile")
}

pub fn report_config() -> ReportConfig {
    let text = fs::read_to_string(corpus().join("report-config.json")).expect("report config");
    serde_json::from_str(&text).expect("report config parses")
}

pub fn golden_outcomes() -> Vec<RunOutcome> {
    let r = replay(&golden());
    assert!(r.errors.is_empty(), "golden replay errors: {:?}", r.errors);
    r.outcomes
}

pub fn golden_report() -> Report {
    analyze(&golden_outcomes(), &profile(), &report_config(), &Denylist::builtin(), &[]).expect("analyze goldens")
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_gadgetscan")
}
