//! Precision and recall of a candidate listing against the corpus ground
//! truth. A ground-truth property counts once, however many candidates
//! match it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::CandidateListing;
use crate::corpus::CorpusManifest;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoreError {
    #[error("manifest fixture `{0}` does not appear in the candidate listing")]
    UnknownFixture(String),
}

/// An exact fraction with its decimal value for convenience.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub numerator: usize,
    pub denominator: usize,
    pub value: f64,
}

impl Ratio {
    fn of(numerator: usize, denominator: usize) -> Option<Ratio> {
        (denominator > 0).then(|| Ratio {
            numerator,
            denominator,
            value: numerator as f64 / denominator as f64,
        })
    }
}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{} ({:.3})", self.numerator, self.denominator, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthVerdict {
    pub fixture: String,
    pub api: String,
    pub sink: String,
    pub attack_type: String,
    pub found: BTreeSet<String>,
    pub missed: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnmatchedCandidate {
    pub fixture: String,
    pub property: String,
    pub api: String,
    pub sink: String,
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseCheck {
    pub fixture: String,
    pub sink: String,
    pub suppressed: bool,
    /// A candidate for this sink survived the denylist.
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrphanCheck {
    pub fixture: String,
    pub expected: usize,
    pub observed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: Option<Ratio>,
    pub recall: Option<Ratio>,
    pub candidates: usize,
    pub verdicts: Vec<GroundTruthVerdict>,
    pub false_positive_candidates: Vec<UnmatchedCandidate>,
    pub noise: Vec<NoiseCheck>,
    /// Suppressed candidates whose sink no fixture declares as noise.
    pub unexpected_suppressions: Vec<UnmatchedCandidate>,
    pub orphans: Vec<OrphanCheck>,
}

impl ScoreReport {
    /// Full recall, every declared noise sink suppressed and nothing else,
    /// and orphan counts as declared.
    pub fn meets_expectations(&self) -> bool {
        self.false_negatives == 0
            && self.noise.iter().all(|n| n.suppressed && !n.kept)
            && self.unexpected_suppressions.is_empty()
            && self.orphans.iter().all(|o| o.expected == o.observed)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("score serializes");
        s.push('\n');
        s
    }

    pub fn render_table(&self) -> String {
        let opt = |r: &Option<Ratio>| r.map_or_else(|| "n/a".to_string(), |r| r.to_string());
        let mut out = String::new();
        let _ = writeln!(out, "{:<28} {:<18} {:<30} {:<8} missed", "fixture", "api", "sink", "found");
        for v in &self.verdicts {
            let join = |s: &BTreeSet<String>| if s.is_empty() { "-".to_string() } else { s.iter().cloned().collect::<Vec<_>>().join(",") };
            let _ = writeln!(
                out,
                "{:<28} {:<18} {:<30} {:<8} {}",
                v.fixture,
                v.api,
                v.sink,
                format!("{}/{}", v.found.len(), v.found.len() + v.missed.len()),
                join(&v.missed)
            );
        }
        for c in &self.false_positive_candidates {
            let _ = writeln!(out, "false positive: {} {} -> {} via {}", c.fixture, c.property, c.sink, c.api);
        }
        for n in &self.noise {
            let state = match (n.suppressed, n.kept) {
                (true, false) => "suppressed",
                (_, true) => "KEPT",
                (false, false) => "not observed",
            };
            let _ = writeln!(out, "noise: {} {} {state}", n.fixture, n.sink);
        }
        for c in &self.unexpected_suppressions {
            let _ = writeln!(out, "unexpected suppression: {} {} -> {}", c.fixture, c.property, c.sink);
        }
        for o in &self.orphans {
            let _ = writeln!(out, "orphans: {} expected {} observed {}", o.fixture, o.expected, o.observed);
        }
        let _ = writeln!(
            out,
            "TP {}  FP {}  FN {}  precision {}  recall {}",
            self.true_positives,
            self.false_positives,
            self.false_negatives,
            opt(&self.precision),
            opt(&self.recall)
        );
        out
    }
}

fn unmatched(c: &super::GadgetCandidate) -> UnmatchedCandidate {
    UnmatchedCandidate {
        fixture: c.fixture.clone(),
        property: c.property.clone(),
        api: c.api.clone(),
        sink: c.sink.clone(),
        run_id: c.run_id.as_str().to_string(),
    }
}

/// Scores kept candidates against the manifest. A candidate matches a
/// ground-truth entry when fixture, API, sink and property all agree.
pub fn score(listing: &CandidateListing, manifest: &CorpusManifest) -> Result<ScoreReport, ScoreError> {
    let known: BTreeSet<&str> = listing.fixtures.iter().map(String::as_str).collect();
    if let Some(f) = manifest.fixtures.iter().find(|f| !known.contains(f.name.as_str())) {
        return Err(ScoreError::UnknownFixture(f.name.clone()));
    }

    let found: BTreeSet<(&str, &str, &str, &str)> = listing
        .candidates
        .iter()
        .map(|c| (c.fixture.as_str(), c.api.as_str(), c.sink.as_str(), c.property.as_str()))
        .collect();

    let mut truth: BTreeSet<(&str, &str, &str, &str)> = BTreeSet::new();
    let mut verdicts = Vec::new();
    for f in &manifest.fixtures {
        for gt in &f.ground_truth {
            let mut v = GroundTruthVerdict {
                fixture: f.name.clone(),
                api: f.api.clone(),
                sink: gt.sink.clone(),
                attack_type: gt.attack_type.clone(),
                found: BTreeSet::new(),
                missed: BTreeSet::new(),
            };
            for p in &gt.properties {
                let key = (f.name.as_str(), f.api.as_str(), gt.sink.as_str(), p.as_str());
                truth.insert(key);
                if found.contains(&key) {
                    v.found.insert(p.clone());
                } else {
                    v.missed.insert(p.clone());
                }
            }
            verdicts.push(v);
        }
    }

    let tp = truth.iter().filter(|k| found.contains(*k)).count();
    let fn_ = truth.len() - tp;
    let false_positive_candidates: Vec<UnmatchedCandidate> = listing
        .candidates
        .iter()
        .filter(|c| !truth.contains(&(c.fixture.as_str(), c.api.as_str(), c.sink.as_str(), c.property.as_str())))
        .map(unmatched)
        .collect();
    let fp = false_positive_candidates.len();

    let declared_noise: BTreeSet<(&str, &str)> = manifest
        .fixtures
        .iter()
        .flat_map(|f| f.expected_noise_sinks.iter().map(move |s| (f.name.as_str(), s.as_str())))
        .collect();
    let noise = declared_noise
        .iter()
        .map(|(fixture, sink)| NoiseCheck {
            fixture: fixture.to_string(),
            sink: sink.to_string(),
            suppressed: listing
                .suppressed
                .iter()
                .any(|s| s.candidate.fixture == *fixture && s.candidate.sink == *sink),
            kept: listing.candidates.iter().any(|c| c.fixture == *fixture && c.sink == *sink),
        })
        .collect();
    let unexpected_suppressions = listing
        .suppressed
        .iter()
        .filter(|s| !declared_noise.contains(&(s.candidate.fixture.as_str(), s.candidate.sink.as_str())))
        .map(|s| unmatched(&s.candidate))
        .collect();

    let mut orphan_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for o in &listing.orphans {
        let fixture = o.sink.run_id().as_str().split('/').next().unwrap_or_default();
        *orphan_counts.entry(fixture).or_default() += 1;
    }
    let orphans = manifest
        .fixtures
        .iter()
        .map(|f| OrphanCheck {
            fixture: f.name.clone(),
            expected: f.expected_orphans,
            observed: orphan_counts.get(f.name.as_str()).copied().unwrap_or(0),
        })
        .collect();

    Ok(ScoreReport {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        precision: Ratio::of(tp, tp + fp),
        recall: Ratio::of(tp, tp + fn_),
        candidates: listing.candidates.len(),
        verdicts,
        false_positive_candidates,
        noise,
        unexpected_suppressions,
        orphans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{FixtureEntry, GroundTruth};
    use crate::report::candidates::test_candidate;
    use crate::report::ReportStats;

    fn listing(cands: &[(&str, &str, &str)]) -> CandidateListing {
        CandidateListing {
            fixtures: vec!["fx".into()],
            gadgets: vec![],
            candidates: cands.iter().map(|(p, a, s)| test_candidate(p, a, s)).collect(),
            suppressed: vec![],
            orphans: vec![],
            stats: ReportStats::default(),
        }
    }

    fn manifest(props: &[&str]) -> CorpusManifest {
        CorpusManifest {
            fixtures: vec![FixtureEntry {
                name: "fx".into(),
                test: "fx_test.js".into(),
                api: "fetch".into(),
                ground_truth: vec![GroundTruth {
                    properties: props.iter().map(|s| s.to_string()).collect(),
                    sink: "op_fetch".into(),
                    attack_type: "SSRF".into(),
                }],
                expected_terminations: vec![],
                expected_noise_sinks: vec![],
                expected_orphans: 0,
            }],
        }
    }

    const EIGHT: [&str; 8] = ["a", "b", "c", "d", "e", "f", "g", "h"];

    #[test]
    fn all_found_with_extras() {
        let mut cands: Vec<(&str, &str, &str)> = EIGHT.iter().map(|p| (*p, "fetch", "op_fetch")).collect();
        cands.extend([("x", "fetch", "op_fetch"), ("a", "other", "op_fetch"), ("a", "fetch", "op_other")]);
        let r = score(&listing(&cands), &manifest(&EIGHT)).unwrap();
        assert_eq!((r.true_positives, r.false_positives, r.false_negatives), (8, 3, 0));
        let p = r.precision.unwrap();
        assert_eq!((p.numerator, p.denominator), (8, 11));
        assert_eq!(r.recall.unwrap().value, 1.0);
        assert_eq!(r.true_positives + r.false_positives, r.candidates);
    }

    #[test]
    fn nothing_found() {
        let r = score(&listing(&[]), &manifest(&EIGHT)).unwrap();
        assert!(r.precision.is_none());
        assert_eq!(r.recall.unwrap().value, 0.0);
        assert_eq!(r.false_negatives, 8);
        assert!(!r.meets_expectations());
    }

    #[test]
    fn exact_match() {
        let r = score(&listing(&[("0", "fetch", "op_fetch"), ("method", "fetch", "op_fetch")]), &manifest(&["0", "method"])).unwrap();
        assert_eq!(r.precision.unwrap().value, 1.0);
        assert_eq!(r.recall.unwrap().value, 1.0);
        assert!(r.meets_expectations());
        assert!(r.render_table().contains("TP 2  FP 0  FN 0"));
    }

    #[test]
    fn unknown_fixture() {
        let mut m = manifest(&["a"]);
        m.fixtures[0].name = "missing".into();
        assert_eq!(score(&listing(&[]), &m), Err(ScoreError::UnknownFixture("missing".into())));
    }
}
