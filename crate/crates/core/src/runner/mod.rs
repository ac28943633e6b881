//! Test-suite driven run orchestration.
//!
//! A stage turns a list of test files into [`RunPlan`]s, executes each plan
//! in its own subprocess with the matching agent snippet injected at the top
//! of the test, and persists one transcript directory per run. Transcripts
//! are the only interface to the reporting side, so a stage can be replayed
//! from disk without a runtime installed.

mod classify;
mod discover;
mod exec;
mod inject;
mod plan;
mod profile;
mod replay;
mod stage;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{LogRecord, ParseStats};
use crate::taint::PollutionType;

pub use classify::{classify_termination, excerpt_output, TerminationClass, Verdict};
pub use discover::discover_tests;
pub use exec::execute;
pub use inject::inject;
pub use plan::{fixture_names, plan_pollution, plan_stage2, run_id_for, slug, FORIN_SENTINEL};
pub use profile::{ProfileConfig, RuntimeProfile, Snippets, TEST_PLACEHOLDER};
pub use replay::{replay, undef_props_by_test, ReplayError, ReplayResult};
pub use stage::{run_stage, RunSummary, StageOptions, StageSummary, TranscriptMeta};

/// Environment variable naming the polluted property.
pub const PROP_ENV: &str = "GHUNTER_PROP";
/// Environment variable naming the pollution type (`string`, `object`, `forin`).
pub const TYPE_ENV: &str = "GHUNTER_TYPE";

pub const DEFAULT_TIMEOUT_SECS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Uninstrumented run recording tests that already fail.
    Baseline,
    /// Undefined-property collection.
    Collect,
    /// Pollution with sink wrappers.
    Hunt,
    /// Pollution only, watching for fatal terminations.
    Crash,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Collect => "collect",
            Mode::Hunt => "hunt",
            Mode::Crash => "crash",
        }
    }

    pub fn pollutes(self) -> bool {
        matches!(self, Mode::Hunt | Mode::Crash)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub run_id: String,
    /// Transcript group; unique per test within a stage.
    pub fixture: String,
    pub test: PathBuf,
    pub mode: Mode,
    pub polluted_property: Option<String>,
    pub pollution_type: Option<PollutionType>,
    pub timeout_secs: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExitInfo {
    pub code: Option<i32>,
    pub signal: Option<i32>,
}

impl ExitInfo {
    pub fn code(code: i32) -> Self {
        ExitInfo {
            code: Some(code),
            signal: None,
        }
    }

    pub fn signal(signal: i32) -> Self {
        ExitInfo {
            code: None,
            signal: Some(signal),
        }
    }

    pub fn success(&self) -> bool {
        self.code == Some(0) && self.signal.is_none()
    }
}

impl fmt::Display for ExitInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.code, self.signal) {
            (_, Some(s)) => write!(f, "signal {s}"),
            (Some(c), None) => write!(f, "exit code {c}"),
            (None, None) => f.write_str("unknown exit"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub plan: RunPlan,
    pub exit: ExitInfo,
    pub timed_out: bool,
    pub duration_secs: f64,
    pub stdout: String,
    pub stderr: String,
    pub records: Vec<LogRecord>,
    pub log_stats: ParseStats,
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("launching `{program}` for {test}: {source}")]
    Launch {
        program: String,
        test: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("runtime profile {path}: {message}")]
    Profile { path: PathBuf, message: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("worker pool: {0}")]
    Pool(String),
}

impl RunnerError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        RunnerError::Io {
            context: context.into(),
            source,
        }
    }
}
