//! Ground-truth gadget corpus: manifest loading and consistency checks of
//! the manifest against golden transcripts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::LogRecord;
use crate::report::{extract_events, TERMINATION_SINK_PREFIX};
use crate::runner::{classify_termination, Mode, RunOutcome, RuntimeProfile, TerminationClass};
use crate::stack::StackNormalizer;
use crate::taint::{match_flows, EVAL_SINK, TAINT_MARKER};

pub const ATTACK_TYPES: [&str; 8] = [
    "ACE",
    "SSRF",
    "Privilege Escalation",
    "Cryptographic Downgrade",
    "Path Traversal",
    "Unauthorized Modifications",
    "Log Pollution",
    "DoS",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub properties: BTreeSet<String>,
    pub sink: String,
    pub attack_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    pub name: String,
    pub test: PathBuf,
    pub api: String,
    #[serde(default)]
    pub ground_truth: Vec<GroundTruth>,
    #[serde(default)]
    pub expected_terminations: Vec<TerminationClass>,
    #[serde(default)]
    pub expected_noise_sinks: Vec<String>,
    #[serde(default)]
    pub expected_orphans: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub fixtures: Vec<FixtureEntry>,
}

impl CorpusManifest {
    pub fn fixture(&self, name: &str) -> Option<&FixtureEntry> {
        self.fixtures.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("reading manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate fixture name `{0}`")]
    DuplicateFixture(String),
    #[error("fixture `{fixture}`: ground_truth.attack_type `{label}` is not one of: {}", ATTACK_TYPES.join(", "))]
    UnknownAttackType { fixture: String, label: String },
    #[error("fixture `{fixture}`: ground_truth entry for sink `{sink}` lists no properties")]
    EmptyProperties { fixture: String, sink: String },
    #[error("fixture `{fixture}`: {field} is empty")]
    EmptyField { fixture: String, field: &'static str },
}

pub fn parse_manifest(text: &str) -> Result<CorpusManifest, ManifestError> {
    let manifest: CorpusManifest = serde_json::from_str(text)?;
    validate_manifest(&manifest)?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text)
}

pub fn validate_manifest(manifest: &CorpusManifest) -> Result<(), ManifestError> {
    let mut names = BTreeSet::new();
    for f in &manifest.fixtures {
        if !names.insert(f.name.as_str()) {
            return Err(ManifestError::DuplicateFixture(f.name.clone()));
        }
        let empty = |field| ManifestError::EmptyField {
            fixture: f.name.clone(),
            field,
        };
        if f.name.is_empty() {
            return Err(empty("name"));
        }
        if f.api.is_empty() {
            return Err(empty("api"));
        }
        for gt in &f.ground_truth {
            if !ATTACK_TYPES.contains(&gt.attack_type.as_str()) {
                return Err(ManifestError::UnknownAttackType {
                    fixture: f.name.clone(),
                    label: gt.attack_type.clone(),
                });
            }
            if gt.properties.is_empty() {
                return Err(ManifestError::EmptyProperties {
                    fixture: f.name.clone(),
                    sink: gt.sink.clone(),
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnknownFixture { fixture: String },
    MissingSink { fixture: String, sink: String },
    MissingTermination { fixture: String, expected: TerminationClass },
    UndeclaredTermination { fixture: String, run_id: String, observed: TerminationClass },
    OrphanCount { fixture: String, expected: usize, observed: usize },
    MarkerCollision { fixture: String, location: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownFixture { fixture } => write!(f, "{fixture}: no golden transcripts"),
            Violation::MissingSink { fixture, sink } => write!(f, "{fixture}: ground-truth sink `{sink}` never hit"),
            Violation::MissingTermination { fixture, expected } => {
                write!(f, "{fixture}: no crash run ends in {}: {}", expected.verdict, expected.evidence)
            }
            Violation::UndeclaredTermination { fixture, run_id, observed } => {
                write!(f, "{fixture}/{run_id}: undeclared {}: {}", observed.verdict, observed.evidence)
            }
            Violation::OrphanCount { fixture, expected, observed } => {
                write!(f, "{fixture}: expected {expected} orphan sinks, found {observed}")
            }
            Violation::MarkerCollision { fixture, location } => {
                write!(f, "{fixture}: taint marker in unpolluted data ({location})")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub fixtures_checked: usize,
    pub runs_checked: usize,
    pub violations: Vec<Violation>,
}

impl CorpusReport {
    pub fn is_consistent(&self) -> bool {
        self.violations.is_empty()
    }
}

fn marker_locations(outcome: &RunOutcome) -> Vec<String> {
    let mut found = Vec::new();
    let run = &outcome.plan.run_id;
    if outcome.stdout.contains(TAINT_MARKER) {
        found.push(format!("{run}/stdout.txt"));
    }
    if outcome.stderr.contains(TAINT_MARKER) {
        found.push(format!("{run}/stderr.txt"));
    }
    let in_log = outcome.records.iter().any(|r| match r {
        LogRecord::UndefProp(u) => u.prop.contains(TAINT_MARKER),
        LogRecord::AgentErr(e) => e.msg.contains(TAINT_MARKER),
        LogRecord::SinkHit(h) => h.value.contains(TAINT_MARKER),
        LogRecord::EvalHit(h) => h.value.contains(TAINT_MARKER),
        LogRecord::SrcAccess(_) => false,
    });
    if in_log {
        found.push(format!("{run}/agent.log"));
    }
    found
}

/// Checks every manifest claim against the golden outcomes. `sources`
/// optionally maps fixture names to their test program text, which must
/// not contain the marker either.
pub fn verify_corpus(
    manifest: &CorpusManifest,
    outcomes: &[RunOutcome],
    profile: &RuntimeProfile,
    sources: &BTreeMap<String, String>,
) -> CorpusReport {
    let normalizer = StackNormalizer::default();
    let mut by_fixture: BTreeMap<&str, Vec<&RunOutcome>> = BTreeMap::new();
    for o in outcomes {
        by_fixture.entry(o.plan.fixture.as_str()).or_default().push(o);
    }
    let mut violations = Vec::new();

    for f in &manifest.fixtures {
        let Some(runs) = by_fixture.get(f.name.as_str()) else {
            violations.push(Violation::UnknownFixture { fixture: f.name.clone() });
            continue;
        };

        let mut hit_sinks = BTreeSet::new();
        let mut orphans = 0;
        for o in runs.iter().filter(|o| o.plan.mode == Mode::Hunt) {
            for r in &o.records {
                match r {
                    LogRecord::SinkHit(h) => {
                        hit_sinks.insert(h.sink.clone());
                    }
                    LogRecord::EvalHit(_) => {
                        hit_sinks.insert(EVAL_SINK.to_string());
                    }
                    _ => {}
                }
            }
            let events = extract_events(o, &normalizer);
            if let Ok(m) = match_flows(&events.sources, &events.sinks) {
                orphans += m.orphans.len();
            }
        }
        let claimed: BTreeSet<&str> = f
            .ground_truth
            .iter()
            .map(|g| g.sink.as_str())
            .filter(|s| !s.starts_with(TERMINATION_SINK_PREFIX))
            .chain(f.expected_noise_sinks.iter().map(String::as_str))
            .collect();
        for sink in claimed {
            if !hit_sinks.contains(sink) {
                violations.push(Violation::MissingSink {
                    fixture: f.name.clone(),
                    sink: sink.to_string(),
                });
            }
        }
        if orphans != f.expected_orphans {
            violations.push(Violation::OrphanCount {
                fixture: f.name.clone(),
                expected: f.expected_orphans,
                observed: orphans,
            });
        }

        let mut observed: BTreeSet<TerminationClass> = BTreeSet::new();
        for o in runs.iter().filter(|o| o.plan.mode == Mode::Crash) {
            let class = classify_termination(o, profile);
            if !class.verdict.is_reportable() {
                continue;
            }
            if !f.expected_terminations.contains(&class) {
                violations.push(Violation::UndeclaredTermination {
                    fixture: f.name.clone(),
                    run_id: o.plan.run_id.clone(),
                    observed: class.clone(),
                });
            }
            observed.insert(class);
        }
        let mut declared: Vec<TerminationClass> = f.expected_terminations.clone();
        for g in &f.ground_truth {
            if let Some(v) = g.sink.strip_prefix(TERMINATION_SINK_PREFIX) {
                if !f.expected_terminations.iter().any(|t| t.verdict.as_str() == v) {
                    violations.push(Violation::MissingSink {
                        fixture: f.name.clone(),
                        sink: g.sink.clone(),
                    });
                }
            }
        }
        declared.sort();
        declared.dedup();
        for t in declared {
            if !observed.contains(&t) {
                violations.push(Violation::MissingTermination {
                    fixture: f.name.clone(),
                    expected: t,
                });
            }
        }

        for o in runs.iter().filter(|o| !o.plan.mode.pollutes()) {
            for location in marker_locations(o) {
                violations.push(Violation::MarkerCollision {
                    fixture: f.name.clone(),
                    location,
                });
            }
        }
        if let Some(text) = sources.get(&f.name) {
            if text.contains(TAINT_MARKER) {
                violations.push(Violation::MarkerCollision {
                    fixture: f.name.clone(),
                    location: f.test.display().to_string(),
                });
            }
        }
    }

    violations.sort();
    CorpusReport {
        fixtures_checked: manifest.fixtures.len(),
        runs_checked: outcomes.len(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"fixtures": [
        {"name": "01_spawn_test", "test": "01_spawn_test.js", "api": "spawn",
         "ground_truth": [{"properties": ["shell"], "sink": "process_wrap.spawn", "attack_type": "ACE"}]},
        {"name": "07_benign_test", "test": "07_benign_test.js", "api": "parse"}
    ]}"#;

    #[test]
    fn loads_minimal() {
        let m = parse_manifest(MINIMAL).unwrap();
        assert_eq!(m.fixtures.len(), 2);
        assert_eq!(m.fixtures[1].expected_orphans, 0);
        assert!(m.fixture("07_benign_test").unwrap().ground_truth.is_empty());
    }

    #[test]
    fn duplicate_name() {
        let text = MINIMAL.replace("07_benign_test\"", "01_spawn_test\"");
        let err = parse_manifest(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate fixture name `01_spawn_test`"), "{err}");
    }

    #[test]
    fn unknown_label_lists_allowed() {
        let text = MINIMAL.replace("\"ACE\"", "\"RCE\"");
        let err = parse_manifest(&text).unwrap_err().to_string();
        assert!(err.contains("`RCE`") && err.contains("Privilege Escalation") && err.contains("DoS"), "{err}");
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(parse_manifest(&MINIMAL.replace("\"api\": \"parse\"", "\"api\": \"parse\", \"apis\": 1")).is_err());
    }
}
