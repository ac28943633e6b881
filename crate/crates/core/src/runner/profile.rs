use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::classify::Verdict;
use super::{Mode, RunnerError};

/// Placeholder replaced by the instrumented test path in launch arguments.
pub const TEST_PLACEHOLDER: &str = "{test}";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Snippets {
    pub collect: Option<PathBuf>,
    pub hunt: Option<PathBuf>,
    pub crash: Option<PathBuf>,
}

/// On-disk runtime profile (JSON).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub name: String,
    /// Program followed by its arguments; exactly one argument contains `{test}`.
    pub launch: Vec<String>,
    #[serde(default)]
    pub expected_failure_patterns: Vec<String>,
    /// Output patterns per crash verdict (segfault, panic, oom).
    #[serde(default)]
    pub crash_patterns: BTreeMap<Verdict, Vec<String>>,
    /// Terminating signal numbers mapped to a verdict. Defaults to the
    /// memory-fault signals (SEGV, BUS, ILL, FPE) as segfaults.
    #[serde(default = "default_signal_verdicts")]
    pub signal_verdicts: BTreeMap<i32, Verdict>,
    /// Lines matching these are preferred as termination evidence.
    #[serde(default = "default_excerpt_patterns")]
    pub excerpt_patterns: Vec<String>,
    #[serde(default = "default_env_passthrough")]
    pub env_passthrough: Vec<String>,
    /// Agent snippet files, relative to the profile file.
    #[serde(default)]
    pub snippets: Snippets,
}

fn default_signal_verdicts() -> BTreeMap<i32, Verdict> {
    [
        (libc::SIGSEGV, Verdict::Segfault),
        (libc::SIGBUS, Verdict::Segfault),
        (libc::SIGILL, Verdict::Segfault),
        (libc::SIGFPE, Verdict::Segfault),
    ]
    .into_iter()
    .collect()
}

fn default_excerpt_patterns() -> Vec<String> {
    vec![
        r"^\s*(?:Uncaught\s+)?[A-Z]\w*(?:Error|Exception)\b".into(),
        r"(?i)\b(?:fatal|panic(?:ked)?|segmentation fault|aborted)\b".into(),
    ]
}

fn default_env_passthrough() -> Vec<String> {
    vec!["PATH".into(), "HOME".into(), "LANG".into(), "TMPDIR".into()]
}

/// A validated profile with compiled patterns and loaded snippets.
#[derive(Debug, Clone)]
pub struct RuntimeProfile {
    pub config: ProfileConfig,
    pub(crate) expected_failure: Vec<Regex>,
    pub(crate) crash: Vec<(Verdict, Vec<Regex>)>,
    pub(crate) excerpt: Vec<Regex>,
    snippets: BTreeMap<Mode, String>,
}

fn compile_all(patterns: &[String], what: &str) -> Result<Vec<Regex>, String> {
    patterns
        .iter()
        .map(|p| Regex::new(&format!("(?m){p}")).map_err(|e| format!("{what} pattern `{p}`: {e}")))
        .collect()
}

impl RuntimeProfile {
    /// Builds a profile; relative snippet paths resolve against `base_dir`.
    pub fn from_config(config: ProfileConfig, base_dir: &Path) -> Result<Self, String> {
        let Some(program) = config.launch.first() else {
            return Err("launch template is empty".into());
        };
        if program.contains(TEST_PLACEHOLDER) {
            return Err(format!("launch program must not be the {TEST_PLACEHOLDER} placeholder"));
        }
        let placeholders: usize = config.launch.iter().map(|a| a.matches(TEST_PLACEHOLDER).count()).sum();
        if placeholders != 1 {
            return Err(format!(
                "launch template must contain {TEST_PLACEHOLDER} exactly once, found {placeholders}"
            ));
        }

        let mut crash = Vec::new();
        for (verdict, patterns) in &config.crash_patterns {
            if !verdict.is_crash() {
                return Err(format!("crash_patterns key `{verdict}` is not a crash verdict"));
            }
            crash.push((*verdict, compile_all(patterns, verdict.as_str())?));
        }
        for (signal, verdict) in &config.signal_verdicts {
            if !verdict.is_crash() {
                return Err(format!("signal {signal} mapped to non-crash verdict `{verdict}`"));
            }
        }

        let mut snippets = BTreeMap::new();
        for (mode, path) in [
            (Mode::Collect, &config.snippets.collect),
            (Mode::Hunt, &config.snippets.hunt),
            (Mode::Crash, &config.snippets.crash),
        ] {
            if let Some(path) = path {
                let full = base_dir.join(path);
                let text = fs::read_to_string(&full).map_err(|e| format!("snippet {}: {e}", full.display()))?;
                snippets.insert(mode, text);
            }
        }

        Ok(RuntimeProfile {
            expected_failure: compile_all(&config.expected_failure_patterns, "expected-failure")?,
            excerpt: compile_all(&config.excerpt_patterns, "excerpt")?,
            crash,
            snippets,
            config,
        })
    }

    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let err = |message: String| RunnerError::Profile {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let config: ProfileConfig = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RuntimeProfile::from_config(config, base).map_err(err)
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    /// Snippet injected for `mode`; baseline runs are never instrumented.
    pub fn snippet(&self, mode: Mode) -> &str {
        match mode {
            Mode::Baseline => "",
            m => self.snippets.get(&m).map(String::as_str).unwrap_or(""),
        }
    }

    /// Overrides a snippet in memory.
    pub fn with_snippet(mut self, mode: Mode, text: impl Into<String>) -> Self {
        self.snippets.insert(mode, text.into());
        self
    }

    pub fn program(&self) -> &str {
        &self.config.launch[0]
    }

    pub fn args_for(&self, test: &Path) -> Vec<String> {
        let test = test.to_string_lossy();
        self.config.launch[1..].iter().map(|a| a.replace(TEST_PLACEHOLDER, &test)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(launch: &[&str]) -> ProfileConfig {
        serde_json::from_value(serde_json::json!({
            "name": "t",
            "launch": launch,
        }))
        .unwrap()
    }

    #[test]
    fn placeholder_exactly_once() {
        let base = Path::new(".");
        assert!(RuntimeProfile::from_config(config(&["node", "{test}"]), base).is_ok());
        assert!(RuntimeProfile::from_config(config(&["node", "--x"]), base).is_err());
        assert!(RuntimeProfile::from_config(config(&["node", "{test}", "{test}"]), base).is_err());
        assert!(RuntimeProfile::from_config(config(&[]), base).is_err());
    }

    #[test]
    fn embedded_placeholder_is_substituted() {
        let p = RuntimeProfile::from_config(config(&["deno", "test", "--file={test}"]), Path::new(".")).unwrap();
        assert_eq!(p.args_for(Path::new("/t/a.js")), vec!["test", "--file=/t/a.js"]);
    }

    #[test]
    fn defaults_map_memory_fault_signals() {
        let c = config(&["sh", "{test}"]);
        assert_eq!(c.signal_verdicts.get(&libc::SIGSEGV), Some(&Verdict::Segfault));
        assert!(!c.signal_verdicts.contains_key(&libc::SIGABRT));
    }

    #[test]
    fn rejects_non_crash_pattern_keys() {
        let mut c = config(&["sh", "{test}"]);
        c.crash_patterns.insert(Verdict::Clean, vec!["x".into()]);
        assert!(RuntimeProfile::from_config(c, Path::new(".")).is_err());
    }

    #[test]
    fn loads_snippets_relative_to_profile() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("collect.sh"), "echo collect\n").unwrap();
        fs::write(
            dir.path().join("profile.json"),
            r#"{"name":"sh","launch":["sh","{test}"],"snippets":{"collect":"collect.sh"}}"#,
        )
        .unwrap();
        let p = RuntimeProfile::load(&dir.path().join("profile.json")).unwrap();
        assert_eq!(p.snippet(Mode::Collect), "echo collect\n");
        assert_eq!(p.snippet(Mode::Hunt), "");
        assert_eq!(p.snippet(Mode::Baseline), "");
    }
}
