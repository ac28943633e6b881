//! Reconstruction of run outcomes from transcript directories.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use super::stage::TranscriptMeta;
use super::{Mode, RunOutcome};
use crate::protocol::{parse_log, LogRecord, ParseStats};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayError {
    pub dir: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayResult {
    /// Sorted by (fixture, run_id).
    pub outcomes: Vec<RunOutcome>,
    pub errors: Vec<ReplayError>,
    pub warnings: Vec<String>,
}

fn load_one(dir: &Path, warnings: &mut Vec<String>) -> Result<RunOutcome, String> {
    let meta_text = fs::read_to_string(dir.join("meta.json")).map_err(|e| format!("meta.json: {e}"))?;
    let meta: TranscriptMeta = serde_json::from_str(&meta_text).map_err(|e| format!("meta.json: {e}"))?;
    if let Some(err) = meta.error {
        return Err(format!("run failed: {err}"));
    }
    let outcome = meta.outcome.ok_or("meta.json has neither outcome nor error")?;
    let dir_name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    if dir_name != meta.plan.run_id {
        return Err(format!("directory name `{dir_name}` does not match run_id `{}`", meta.plan.run_id));
    }
    let read_text = |name: &str| fs::read(dir.join(name)).map(|b| String::from_utf8_lossy(&b).into_owned());
    let stdout = read_text("stdout.txt").map_err(|e| format!("stdout.txt: {e}"))?;
    let stderr = read_text("stderr.txt").map_err(|e| format!("stderr.txt: {e}"))?;
    let (records, log_stats): (Vec<LogRecord>, ParseStats) = match fs::read(dir.join("agent.log")) {
        Ok(bytes) => parse_log(&bytes),
        Err(e) => {
            warnings.push(format!("{}: agent.log unreadable ({e}); replaying with no records", dir.display()));
            (Vec::new(), ParseStats::default())
        }
    };
    Ok(RunOutcome {
        plan: meta.plan,
        exit: outcome.exit,
        timed_out: outcome.timed_out,
        duration_secs: outcome.duration_secs,
        stdout,
        stderr,
        records,
        log_stats,
    })
}

/// Loads every transcript (any directory holding a `meta.json`) below
/// `root`. Never launches a process; broken transcripts become error
/// entries instead of failing the whole replay.
pub fn replay(root: &Path) -> ReplayResult {
    let mut dirs: Vec<PathBuf> = WalkDir::new(root)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file() && e.file_name() == "meta.json")
        .filter_map(|e| e.path().parent().map(Path::to_path_buf))
        .collect();
    dirs.sort();

    let mut result = ReplayResult::default();
    for dir in dirs {
        match load_one(&dir, &mut result.warnings) {
            Ok(o) => result.outcomes.push(o),
            Err(message) => result.errors.push(ReplayError { dir, message }),
        }
    }
    for w in &result.warnings {
        log::warn!("{w}");
    }
    result
        .outcomes
        .sort_by(|a, b| (&a.plan.fixture, &a.plan.run_id).cmp(&(&b.plan.fixture, &b.plan.run_id)));
    result
}

/// Undefined property names per test, from collect outcomes. Every collected
/// test gets an entry, possibly empty.
pub fn undef_props_by_test(outcomes: &[RunOutcome]) -> BTreeMap<PathBuf, BTreeSet<String>> {
    let mut out: BTreeMap<PathBuf, BTreeSet<String>> = BTreeMap::new();
    for o in outcomes.iter().filter(|o| o.plan.mode == Mode::Collect) {
        let entry = out.entry(o.plan.test.clone()).or_default();
        for r in &o.records {
            if let LogRecord::UndefProp(u) = r {
                entry.insert(u.prop.clone());
            }
        }
    }
    out
}
