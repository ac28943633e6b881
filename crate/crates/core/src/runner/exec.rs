//! Single-run subprocess execution.

use std::fs;
use std::io::{self, Read};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::inject::inject;
use super::profile::RuntimeProfile;
use super::{ExitInfo, RunOutcome, RunPlan, RunnerError, PROP_ENV, TYPE_ENV};
use crate::protocol::{read_log, LOG_ENV};

const AGENT_LOG: &str = "agent.log";

fn drain<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut p) = pipe {
            let _ = p.read_to_end(&mut buf);
        }
        buf
    })
}

/// Kills every process in the child's process group.
fn kill_group(child: &Child) {
    // SAFETY: kill(2) with a negative pid only sends a signal; the group id
    // is the child's pid because it was spawned with process_group(0).
    unsafe {
        libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
    }
}

/// Runs one plan. The instrumented test and the agent log live in
/// `workdir`, which must be private to this run.
pub fn execute(plan: &RunPlan, profile: &RuntimeProfile, workdir: &Path) -> Result<RunOutcome, RunnerError> {
    let source = fs::read_to_string(&plan.test)
        .map_err(|e| RunnerError::io(format!("reading test {}", plan.test.display()), e))?;
    let instrumented = inject(&source, profile.snippet(plan.mode));
    let file_name = plan.test.file_name().unwrap_or(plan.test.as_os_str());
    let test_path = workdir.join(file_name);
    fs::write(&test_path, instrumented)
        .map_err(|e| RunnerError::io(format!("writing {}", test_path.display()), e))?;
    let log_path = workdir.join(AGENT_LOG);

    let mut cmd = Command::new(profile.program());
    cmd.args(profile.args_for(&test_path))
        .env_clear()
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    if let Some(dir) = plan.test.parent().filter(|d| !d.as_os_str().is_empty()) {
        cmd.current_dir(dir);
    }
    for key in &profile.config.env_passthrough {
        if let Some(v) = std::env::var_os(key) {
            cmd.env(key, v);
        }
    }
    cmd.env(LOG_ENV, &log_path);
    if let Some(prop) = &plan.polluted_property {
        cmd.env(PROP_ENV, prop);
    }
    if let Some(ty) = plan.pollution_type {
        cmd.env(TYPE_ENV, ty.as_str());
    }

    let started = Instant::now();
    let mut child = cmd.spawn().map_err(|source| RunnerError::Launch {
        program: profile.program().to_string(),
        test: plan.test.clone(),
        source,
    })?;
    let stdout = drain(child.stdout.take());
    let stderr = drain(child.stderr.take());

    let timeout = Duration::from_secs_f64(plan.timeout_secs.max(0.0));
    let mut timed_out = false;
    let mut poll = Duration::from_millis(1);
    let status = loop {
        if let Some(status) = child.try_wait().map_err(|e| RunnerError::io("waiting for child", e))? {
            break status;
        }
        if started.elapsed() >= timeout {
            timed_out = true;
            kill_group(&child);
            break child.wait().map_err(|e| RunnerError::io("reaping child", e))?;
        }
        thread::sleep(poll);
        poll = (poll * 2).min(Duration::from_millis(25));
    };
    let duration_secs = started.elapsed().as_secs_f64();
    // Stragglers spawned by the test would otherwise hold the pipes open.
    kill_group(&child);

    let join = |h: thread::JoinHandle<Vec<u8>>| String::from_utf8_lossy(&h.join().unwrap_or_default()).into_owned();
    let stdout = join(stdout);
    let stderr = join(stderr);

    let (records, log_stats) = read_log(&log_path).map_err(|e| RunnerError::io(e.to_string(), io::Error::other("agent log")))?;

    Ok(RunOutcome {
        plan: plan.clone(),
        exit: ExitInfo {
            code: status.code(),
            signal: status.signal(),
        },
        timed_out,
        duration_secs,
        stdout,
        stderr,
        records,
        log_stats,
    })
}

pub(crate) fn agent_log_path(workdir: &Path) -> std::path::PathBuf {
    workdir.join(AGENT_LOG)
}
