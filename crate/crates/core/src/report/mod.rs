//! From transcripts to analyst-ready findings.
//!
//! [`analyze`] is the whole reporting pipeline: extract taint events from
//! hunt runs and match them per run, triage crash runs, deduplicate both,
//! label each finding with the API it was reached through, drop
//! infrastructure sinks and group what is left into gadgets.

mod candidates;
mod dedup;
mod denylist;
mod extract;
mod sarif;
mod score;

use std::collections::BTreeSet;
use std::path::PathBuf;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runner::{classify_termination, Mode, RunOutcome, RuntimeProfile, TerminationClass, Verdict};
use crate::stack::{StackConfig, StackFrame, StackNormalizer};
use crate::taint::{match_flows, FlowPair, OrphanSink, PollutionType, RunId};

pub use candidates::{build_candidates, group_gadgets, ApiLabeler, Evidence, Gadget, GadgetCandidate, GadgetSummary};
pub use dedup::{dedup_flows, dedup_terminations, FlowKey, Scrubber, ScrubRule};
pub use denylist::{apply_denylist, DenyPattern, Denylist, DenylistConfig, Suppressed};
pub use extract::extract_events;
pub use sarif::{emit_sarif, SarifMetadata, RULE_FLOW, RULE_ORPHAN, RULE_TERMINATION};
pub use score::{score, GroundTruthVerdict, NoiseCheck, OrphanCheck, ScoreError, ScoreReport, UnmatchedCandidate};

/// Prefix of the sink label given to termination candidates.
pub const TERMINATION_SINK_PREFIX: &str = "termination:";

pub fn termination_sink(verdict: Verdict) -> String {
    format!("{TERMINATION_SINK_PREFIX}{verdict}")
}

/// A fatal or unexpected end of a crash-mode run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Termination {
    pub run_id: RunId,
    pub fixture: String,
    pub test: PathBuf,
    pub property: Option<String>,
    pub pollution_type: Option<PollutionType>,
    pub class: TerminationClass,
    /// Frames recovered from the run's error output, normalized.
    pub stack: Vec<StackFrame>,
    /// Tail of the run's stderr.
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub stack: StackConfig,
    /// Regexes over normalized frame files that mark public API code.
    pub api_paths: Vec<String>,
    pub scrub: Vec<ScrubRule>,
    /// Skip crash-mode terminations of tests that already fail at baseline.
    pub exclude_baseline_failures: bool,
    /// Lines of stderr kept as termination output.
    pub output_tail_lines: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            stack: StackConfig::default(),
            api_paths: Vec::new(),
            scrub: ScrubRule::defaults(),
            exclude_baseline_failures: true,
            output_tail_lines: 20,
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("invalid pattern `{pattern}`: {source}")]
    Pattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub(crate) fn compile(pattern: &str) -> Result<Regex, ReportError> {
    Regex::new(pattern).map_err(|source| ReportError::Pattern {
        pattern: pattern.to_string(),
        source,
    })
}

/// Counters describing how much each reduction step removed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportStats {
    pub runs: usize,
    pub hunt_runs: usize,
    pub crash_runs: usize,
    pub sink_hits: usize,
    pub flow_pairs: usize,
    pub unique_flow_pairs: usize,
    pub terminations: usize,
    pub unique_terminations: usize,
    pub baseline_failing_tests: Vec<PathBuf>,
    pub rejected_runs: Vec<String>,
    pub agent_errors: usize,
    pub log_lines_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub fixtures: Vec<String>,
    pub candidates: Vec<GadgetCandidate>,
    pub suppressed: Vec<Suppressed>,
    #[serde(skip)]
    pub gadgets: Vec<Gadget>,
    pub orphans: Vec<OrphanSink>,
    pub stats: ReportStats,
}

/// On-disk `candidates.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateListing {
    pub fixtures: Vec<String>,
    pub gadgets: Vec<GadgetSummary>,
    pub candidates: Vec<GadgetCandidate>,
    pub suppressed: Vec<Suppressed>,
    pub orphans: Vec<OrphanSink>,
    pub stats: ReportStats,
}

impl Report {
    pub fn listing(&self) -> CandidateListing {
        CandidateListing {
            fixtures: self.fixtures.clone(),
            gadgets: self.gadgets.iter().map(Gadget::summary).collect(),
            candidates: self.candidates.clone(),
            suppressed: self.suppressed.clone(),
            orphans: self.orphans.clone(),
            stats: self.stats.clone(),
        }
    }
}

impl CandidateListing {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("listing serializes");
        s.push('\n');
        s
    }
}

fn stderr_tail(stderr: &str, lines: usize) -> String {
    let all: Vec<&str> = stderr.lines().collect();
    all[all.len().saturating_sub(lines)..].join("\n")
}

/// Runs the reporting pipeline over replayed or freshly executed outcomes.
pub fn analyze(
    outcomes: &[RunOutcome],
    profile: &RuntimeProfile,
    config: &ReportConfig,
    denylist: &Denylist,
    extra_roots: &[String],
) -> Result<Report, ReportError> {
    let normalizer = StackNormalizer::new(&config.stack)
        .map_err(|source| ReportError::Pattern {
            pattern: "stack config".into(),
            source,
        })?
        .with_roots(extra_roots.iter().cloned());
    let labeler = ApiLabeler::new(&config.api_paths)?;
    let scrubber = Scrubber::new(&config.scrub)?;

    let mut stats = ReportStats {
        runs: outcomes.len(),
        ..ReportStats::default()
    };
    let fixtures: BTreeSet<String> = outcomes.iter().map(|o| o.plan.fixture.clone()).collect();

    let baseline_failing: BTreeSet<PathBuf> = outcomes
        .iter()
        .filter(|o| o.plan.mode == Mode::Baseline)
        .filter(|o| classify_termination(o, profile).verdict != Verdict::Clean)
        .map(|o| o.plan.test.clone())
        .collect();
    stats.baseline_failing_tests = baseline_failing.iter().cloned().collect();

    let mut pairs: Vec<FlowPair> = Vec::new();
    let mut orphans: Vec<OrphanSink> = Vec::new();
    let mut terminations: Vec<Termination> = Vec::new();

    for outcome in outcomes {
        stats.log_lines_skipped +=
            outcome.log_stats.not_protocol + outcome.log_stats.unknown_kind + outcome.log_stats.malformed;
        match outcome.plan.mode {
            Mode::Hunt => {
                stats.hunt_runs += 1;
                let events = extract_events(outcome, &normalizer);
                stats.agent_errors += events.agent_errors;
                stats.sink_hits += events.sinks.len();
                for w in &events.warnings {
                    log::warn!("{w}");
                }
                match match_flows(&events.sources, &events.sinks) {
                    Ok(m) => {
                        pairs.extend(m.pairs);
                        orphans.extend(m.orphans);
                    }
                    Err(e) => stats.rejected_runs.push(e.to_string()),
                }
            }
            Mode::Crash => {
                stats.crash_runs += 1;
                let class = classify_termination(outcome, profile);
                if !class.verdict.is_reportable() {
                    continue;
                }
                if config.exclude_baseline_failures && baseline_failing.contains(&outcome.plan.test) {
                    continue;
                }
                let frames: Vec<StackFrame> = outcome
                    .stderr
                    .lines()
                    .filter(|l| StackFrame::looks_like_frame(l))
                    .map(StackFrame::parse)
                    .collect();
                terminations.push(Termination {
                    run_id: extract::run_id(&outcome.plan),
                    fixture: outcome.plan.fixture.clone(),
                    test: outcome.plan.test.clone(),
                    property: outcome.plan.polluted_property.clone(),
                    pollution_type: outcome.plan.pollution_type,
                    class,
                    stack: normalizer.normalize(&frames),
                    output: stderr_tail(&outcome.stderr, config.output_tail_lines),
                });
            }
            Mode::Baseline | Mode::Collect => {}
        }
    }

    stats.flow_pairs = pairs.len();
    stats.terminations = terminations.len();
    let flows = dedup_flows(&pairs);
    let terminations = dedup_terminations(&terminations, &scrubber);
    stats.unique_flow_pairs = flows.len();
    stats.unique_terminations = terminations.len();

    let (candidates, _) = build_candidates(&flows, &terminations, &labeler);
    let (kept, suppressed) = apply_denylist(&candidates, denylist);
    let gadgets = group_gadgets(&kept);
    orphans.sort();

    Ok(Report {
        fixtures: fixtures.into_iter().collect(),
        candidates: kept,
        suppressed,
        gadgets,
        orphans,
        stats,
    })
}
