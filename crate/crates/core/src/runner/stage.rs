use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classify::{classify_termination, Verdict};
use super::exec::{agent_log_path, execute};
use super::plan::{fixture_names, plan_pollution, run_id_for};
use super::profile::RuntimeProfile;
use super::replay::{replay, undef_props_by_test};
use super::{ExitInfo, Mode, RunOutcome, RunPlan, RunnerError, DEFAULT_TIMEOUT_SECS};
use crate::stack::RUN_DIR_PREFIX;
use crate::taint::PollutionType;

#[derive(Debug, Clone)]
pub struct StageOptions {
    pub out: PathBuf,
    pub jobs: usize,
    pub timeout_secs: f64,
    pub pollution_types: BTreeSet<PollutionType>,
    pub forin_probe: bool,
    /// Properties never planned for pollution.
    pub suppress_props: BTreeSet<String>,
}

impl StageOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        StageOptions {
            out: out.into(),
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            pollution_types: [PollutionType::String, PollutionType::Object].into_iter().collect(),
            forin_probe: true,
            suppress_props: BTreeSet::new(),
        }
    }
}

/// Serialized form of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptMeta {
    pub plan: RunPlan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMeta {
    pub exit: ExitInfo,
    pub timed_out: bool,
    pub duration_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub fixture: String,
    pub test: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    pub records: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub mode: Mode,
    pub runs: Vec<RunSummary>,
    pub verdicts: BTreeMap<Verdict, usize>,
    /// Collect stage: undefined properties per test.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub undef_props: BTreeMap<PathBuf, BTreeSet<String>>,
    /// Baseline stage: tests failing without any pollution.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failing_tests: Vec<PathBuf>,
}

pub(crate) fn transcript_dir(out: &Path, plan: &RunPlan) -> PathBuf {
    out.join(&plan.fixture).join(&plan.run_id)
}

fn write_transcript(dir: &Path, meta: &TranscriptMeta, log: Option<&[u8]>, stdout: &str, stderr: &str) -> Result<(), RunnerError> {
    fs::create_dir_all(dir).map_err(|e| RunnerError::io(format!("creating {}", dir.display()), e))?;
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| RunnerError::io(format!("writing {}", p.display()), e))
    };
    let mut json = serde_json::to_string_pretty(meta).expect("meta serializes");
    json.push('\n');
    write("meta.json", json.as_bytes())?;
    write("agent.log", log.unwrap_or_default())?;
    write("stdout.txt", stdout.as_bytes())?;
    write("stderr.txt", stderr.as_bytes())
}

enum RunResult {
    Done(RunOutcome),
    Failed(RunPlan, String),
}

fn run_one(plan: &RunPlan, profile: &RuntimeProfile, out: &Path) -> Result<RunResult, RunnerError> {
    let workdir = tempfile::Builder::new()
        .prefix(RUN_DIR_PREFIX)
        .tempdir()
        .map_err(|e| RunnerError::io("creating run dir", e))?;
    let dir = transcript_dir(out, plan);
    match execute(plan, profile, workdir.path()) {
        Ok(outcome) => {
            let log = fs::read(agent_log_path(workdir.path())).ok();
            let meta = TranscriptMeta {
                plan: plan.clone(),
                outcome: Some(OutcomeMeta {
                    exit: outcome.exit,
                    timed_out: outcome.timed_out,
                    duration_secs: outcome.duration_secs,
                }),
                error: None,
            };
            write_transcript(&dir, &meta, log.as_deref(), &outcome.stdout, &outcome.stderr)?;
            Ok(RunResult::Done(outcome))
        }
        Err(e @ RunnerError::Launch { .. }) => Err(e),
        Err(e) => {
            let meta = TranscriptMeta {
                plan: plan.clone(),
                outcome: None,
                error: Some(e.to_string()),
            };
            write_transcript(&dir, &meta, None, "", "")?;
            Ok(RunResult::Failed(plan.clone(), e.to_string()))
        }
    }
}

fn plans_for(mode: Mode, tests: &[PathBuf], opts: &StageOptions) -> Result<Vec<RunPlan>, RunnerError> {
    let fixtures = fixture_names(tests);
    let simple = |test: &PathBuf| RunPlan {
        run_id: run_id_for(mode, None, None),
        fixture: fixtures[test].clone(),
        test: test.clone(),
        mode,
        polluted_property: None,
        pollution_type: None,
        timeout_secs: opts.timeout_secs,
    };
    match mode {
        Mode::Baseline | Mode::Collect => Ok(tests.iter().map(simple).collect()),
        Mode::Hunt | Mode::Crash => {
            let collected = replay(&opts.out);
            let props = undef_props_by_test(&collected.outcomes);
            let empty = BTreeSet::new();
            Ok(tests
                .iter()
                .flat_map(|test| {
                    let found = props.get(test).unwrap_or(&empty);
                    if found.is_empty() && !props.contains_key(test) {
                        log::warn!("no collect transcript for {}", test.display());
                    }
                    let wanted: BTreeSet<String> = found.difference(&opts.suppress_props).cloned().collect();
                    plan_pollution(
                        mode,
                        test,
                        &fixtures[test],
                        &wanted,
                        &opts.pollution_types,
                        opts.forin_probe,
                        opts.timeout_secs,
                    )
                })
                .collect())
        }
    }
}

/// Executes one stage over `tests` and writes its transcripts under
/// `opts.out/<fixture>/<run_id>/`. Hunt and Crash read the collect
/// transcripts already present in `opts.out`.
///
/// Individual run failures are recorded in the transcript and the summary;
/// only a launch failure (the runtime binary cannot be started) aborts.
pub fn run_stage(mode: Mode, tests: &[PathBuf], profile: &RuntimeProfile, opts: &StageOptions) -> Result<StageSummary, RunnerError> {
    let plans = plans_for(mode, tests, opts)?;
    fs::create_dir_all(&opts.out).map_err(|e| RunnerError::io(format!("creating {}", opts.out.display()), e))?;
    log::info!("{mode}: {} runs on {} workers", plans.len(), opts.jobs.max(1));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| RunnerError::Pool(e.to_string()))?;
    let mut results = pool.install(|| {
        plans
            .par_iter()
            .map(|plan| run_one(plan, profile, &opts.out))
            .collect::<Result<Vec<_>, _>>()
    })?;
    results.sort_by(|a, b| {
        let key = |r: &RunResult| match r {
            RunResult::Done(o) => (o.plan.fixture.clone(), o.plan.run_id.clone()),
            RunResult::Failed(p, _) => (p.fixture.clone(), p.run_id.clone()),
        };
        key(a).cmp(&key(b))
    });

    let mut summary = StageSummary {
        mode,
        runs: Vec::with_capacity(results.len()),
        verdicts: BTreeMap::new(),
        undef_props: BTreeMap::new(),
        failing_tests: Vec::new(),
    };
    let mut outcomes = Vec::new();
    for r in results {
        match r {
            RunResult::Done(outcome) => {
                let verdict = classify_termination(&outcome, profile).verdict;
                *summary.verdicts.entry(verdict).or_default() += 1;
                if mode == Mode::Baseline && verdict != Verdict::Clean {
                    summary.failing_tests.push(outcome.plan.test.clone());
                }
                summary.runs.push(RunSummary {
                    run_id: outcome.plan.run_id.clone(),
                    fixture: outcome.plan.fixture.clone(),
                    test: outcome.plan.test.clone(),
                    verdict: Some(verdict),
                    records: outcome.records.len(),
                    error: None,
                });
                outcomes.push(outcome);
            }
            RunResult::Failed(plan, error) => {
                log::warn!("{} {}: {error}", plan.fixture, plan.run_id);
                summary.runs.push(RunSummary {
                    run_id: plan.run_id,
                    fixture: plan.fixture,
                    test: plan.test,
                    verdict: None,
                    records: 0,
                    error: Some(error),
                });
            }
        }
    }
    if mode == Mode::Collect {
        summary.undef_props = undef_props_by_test(&outcomes);
    }

    let path = opts.out.join(format!("summary-{mode}.json"));
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    fs::write(&path, json).map_err(|e| RunnerError::io(format!("writing {}", path.display()), e))?;
    Ok(summary)
}
