//! Termination triage.

use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::profile::RuntimeProfile;
use super::RunOutcome;
use crate::stack::StackFrame;

/// Verdicts, declared from highest to lowest precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Timeout,
    Segfault,
    Panic,
    #[serde(rename = "oom")]
    Oom,
    ExpectedFailure,
    UnexpectedError,
    Clean,
}

impl Verdict {
    pub const ALL: [Verdict; 7] = [
        Verdict::Timeout,
        Verdict::Segfault,
        Verdict::Panic,
        Verdict::Oom,
        Verdict::ExpectedFailure,
        Verdict::UnexpectedError,
        Verdict::Clean,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Timeout => "timeout",
            Verdict::Segfault => "segfault",
            Verdict::Panic => "panic",
            Verdict::Oom => "oom",
            Verdict::ExpectedFailure => "expected_failure",
            Verdict::UnexpectedError => "unexpected_error",
            Verdict::Clean => "clean",
        }
    }

    pub fn is_crash(self) -> bool {
        matches!(self, Verdict::Segfault | Verdict::Panic | Verdict::Oom)
    }

    /// Whether a run with this verdict is worth reporting as a termination.
    pub fn is_reportable(self) -> bool {
        !matches!(self, Verdict::Clean | Verdict::ExpectedFailure)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TerminationClass {
    pub verdict: Verdict,
    pub evidence: String,
}

fn matching_line<'a>(patterns: &[Regex], text: &'a str) -> Option<&'a str> {
    patterns.iter().find_map(|re| {
        re.find(text).map(|m| {
            let start = text[..m.start()].rfind('\n').map_or(0, |i| i + 1);
            let end = text[m.start()..].find('\n').map_or(text.len(), |i| m.start() + i);
            text[start..end].trim()
        })
    })
}

/// Picks the most telling line of a run's output: the first non-frame line
/// matching an excerpt pattern, else the last non-empty line.
pub fn excerpt_output(profile: &RuntimeProfile, stdout: &str, stderr: &str) -> String {
    for text in [stderr, stdout] {
        let hit = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !StackFrame::looks_like_frame(l))
            .find(|l| profile.excerpt.iter().any(|re| re.is_match(l)));
        if let Some(line) = hit {
            return line.trim().to_string();
        }
    }
    [stderr, stdout]
        .iter()
        .find_map(|t| t.lines().rev().find(|l| !l.trim().is_empty()))
        .map(|l| l.trim().to_string())
        .unwrap_or_default()
}

/// Triage verdict for a finished run. Precedence: timeout, segfault, panic,
/// OOM, expected failure, unexpected error; clean iff exit code 0 without a
/// timeout.
pub fn classify_termination(outcome: &RunOutcome, profile: &RuntimeProfile) -> TerminationClass {
    let class = |verdict, evidence: String| TerminationClass { verdict, evidence };
    if outcome.timed_out {
        return class(Verdict::Timeout, format!("timed out after {}s", outcome.plan.timeout_secs));
    }
    if outcome.exit.success() {
        return class(Verdict::Clean, String::new());
    }

    let output = format!("{}\n{}", outcome.stderr, outcome.stdout);
    let signal_verdict = outcome
        .exit
        .signal
        .and_then(|s| profile.config.signal_verdicts.get(&s).copied());

    for verdict in [Verdict::Segfault, Verdict::Panic, Verdict::Oom] {
        let patterns = profile
            .crash
            .iter()
            .find(|(v, _)| *v == verdict)
            .map(|(_, p)| p.as_slice())
            .unwrap_or(&[]);
        if let Some(line) = matching_line(patterns, &output) {
            return class(verdict, line.to_string());
        }
        if signal_verdict == Some(verdict) {
            let excerpt = excerpt_output(profile, &outcome.stdout, &outcome.stderr);
            let evidence = if excerpt.is_empty() {
                outcome.exit.to_string()
            } else {
                format!("{}: {excerpt}", outcome.exit)
            };
            return class(verdict, evidence);
        }
    }

    if let Some(line) = matching_line(&profile.expected_failure, &output) {
        return class(Verdict::ExpectedFailure, line.to_string());
    }
    let excerpt = excerpt_output(profile, &outcome.stdout, &outcome.stderr);
    let evidence = if excerpt.is_empty() {
        outcome.exit.to_string()
    } else {
        excerpt
    };
    class(Verdict::UnexpectedError, evidence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::ParseStats;
    use crate::runner::{ExitInfo, Mode, ProfileConfig, RunPlan};
    use std::path::Path;

    fn profile() -> RuntimeProfile {
        let c: ProfileConfig = serde_json::from_value(serde_json::json!({
            "name": "node",
            "launch": ["node", "{test}"],
            "expected_failure_patterns": ["^not ok ", "AssertionError"],
            "crash_patterns": {
                "segfault": ["Segmentation fault"],
                "panic": ["has panicked", "panicked at"],
                "oom": ["JavaScript heap out of memory"]
            }
        }))
        .unwrap();
        RuntimeProfile::from_config(c, Path::new(".")).unwrap()
    }

    fn outcome(exit: ExitInfo, timed_out: bool, stderr: &str) -> RunOutcome {
        RunOutcome {
            plan: RunPlan {
                run_id: "r".into(),
                fixture: "f".into(),
                test: "t.js".into(),
                mode: Mode::Crash,
                polluted_property: None,
                pollution_type: None,
                timeout_secs: 20.0,
            },
            exit,
            timed_out,
            duration_secs: 0.0,
            stdout: String::new(),
            stderr: stderr.into(),
            records: vec![],
            log_stats: ParseStats::default(),
        }
    }

    #[test]
    fn clean_and_expected_failure() {
        let p = profile();
        assert_eq!(classify_termination(&outcome(ExitInfo::code(0), false, ""), &p).verdict, Verdict::Clean);
        let c = classify_termination(&outcome(ExitInfo::code(1), false, "not ok 3 - body\n"), &p);
        assert_eq!(c.verdict, Verdict::ExpectedFailure);
        assert_eq!(c.evidence, "not ok 3 - body");
    }

    #[test]
    fn exit_zero_with_banner_is_clean() {
        let p = profile();
        let c = classify_termination(&outcome(ExitInfo::code(0), false, "Segmentation fault\n"), &p);
        assert_eq!(c.verdict, Verdict::Clean);
    }

    #[test]
    fn signal_and_banner_routes() {
        let p = profile();
        let c = classify_termination(&outcome(ExitInfo::signal(libc::SIGSEGV), false, ""), &p);
        assert_eq!(c.verdict, Verdict::Segfault);
        assert_eq!(c.evidence, "signal 11");
        let oom = "\n<--- Last few GCs --->\nFATAL ERROR: Reached heap limit Allocation failed - JavaScript heap out of memory\n";
        let c = classify_termination(&outcome(ExitInfo::signal(libc::SIGABRT), false, oom), &p);
        assert_eq!(c.verdict, Verdict::Oom);
        assert!(c.evidence.starts_with("FATAL ERROR"));
    }

    #[test]
    fn unexpected_error_evidence_skips_frames() {
        let p = profile();
        let stderr = "/srv/t.js:14\n  signal.addEventListener(\"abort\", onAbort)\n         ^\n\nTypeError: signal.addEventListener is not a function\n    at fetch (lib/fetch.js:14:10)\n\nNode.js v20.11.0\n";
        let c = classify_termination(&outcome(ExitInfo::code(1), false, stderr), &p);
        assert_eq!(c.verdict, Verdict::UnexpectedError);
        assert_eq!(c.evidence, "TypeError: signal.addEventListener is not a function");
    }

    #[test]
    fn timeout_beats_everything() {
        let p = profile();
        let c = classify_termination(&outcome(ExitInfo::signal(libc::SIGSEGV), true, "Segmentation fault"), &p);
        assert_eq!(c.verdict, Verdict::Timeout);
    }

    #[test]
    fn silent_failure_evidence_is_exit_code() {
        let p = profile();
        let c = classify_termination(&outcome(ExitInfo::code(3), false, ""), &p);
        assert_eq!(c.verdict, Verdict::UnexpectedError);
        assert_eq!(c.evidence, "exit code 3");
    }

    #[test]
    fn precedence_order_matches_declaration() {
        let mut sorted = Verdict::ALL;
        sorted.sort();
        assert_eq!(sorted, Verdict::ALL);
    }
}
