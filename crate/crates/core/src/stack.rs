//! Stack frames as rendered by V8-style runtimes, and their normalization.

use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Directory prefix of per-run instrumentation dirs created by the runner.
pub const RUN_DIR_PREFIX: &str = "gadgetscan-run-";

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StackFrame {
    pub function: String,
    pub file: String,
    pub line: u32,
    pub column: u32,
}

impl StackFrame {
    pub fn new(function: impl Into<String>, file: impl Into<String>, line: u32, column: u32) -> Self {
        StackFrame {
            function: function.into(),
            file: file.into(),
            line,
            column,
        }
    }

    /// Parses one rendered frame.
    ///
    /// Accepts `at fn (file:line:col)`, `at file:line:col` and `fn@file:line:col`.
    /// Text that does not look like a located frame is kept verbatim as the
    /// function name with an empty file.
    pub fn parse(raw: &str) -> StackFrame {
        let text = raw.trim();
        let text = text.strip_prefix("at ").unwrap_or(text).trim();

        if let Some(body) = text.strip_suffix(')') {
            if let Some(open) = body.rfind(" (") {
                let function = body[..open].trim();
                let (file, line, column) = split_location(&body[open + 2..]);
                return StackFrame::new(function, file, line, column);
            }
        }
        if let Some((function, loc)) = text.split_once('@') {
            if !loc.is_empty() {
                let (file, line, column) = split_location(loc);
                return StackFrame::new(function, file, line, column);
            }
        }
        let (file, line, column) = split_location(text);
        if line > 0 {
            return StackFrame::new("", file, line, column);
        }
        StackFrame::new(text, "", 0, 0)
    }

    /// Heuristic used when scanning free-form output for stack lines.
    pub fn looks_like_frame(line: &str) -> bool {
        let t = line.trim_start();
        t.starts_with("at ") && (t.ends_with(')') || split_location(&t[3..]).1 > 0)
    }
}

fn split_location(loc: &str) -> (String, u32, u32) {
    let mut parts = loc.rsplitn(3, ':');
    let last = parts.next();
    let mid = parts.next();
    let head = parts.next();
    match (head, mid, last) {
        (Some(file), Some(line), Some(col)) => match (line.parse(), col.parse()) {
            (Ok(l), Ok(c)) => (file.to_string(), l, c),
            _ => (loc.to_string(), 0, 0),
        },
        _ => (loc.to_string(), 0, 0),
    }
}

impl fmt::Display for StackFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.function.is_empty(), self.file.is_empty()) {
            (_, true) => f.write_str(&self.function),
            (true, false) => write!(f, "{}:{}:{}", self.file, self.line, self.column),
            (false, false) => write!(f, "{} ({}:{}:{})", self.function, self.file, self.line, self.column),
        }
    }
}

/// Serialized normalization settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackConfig {
    /// Literal path prefixes removed from frame files.
    pub strip_prefixes: Vec<String>,
    /// Regexes; the first match anchored at the start of the file is removed.
    pub strip_patterns: Vec<String>,
    /// Frames whose function matches any of these are dropped (agent frames).
    pub drop_functions: Vec<String>,
    pub max_frames: Option<usize>,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig {
            strip_prefixes: vec!["file://".into()],
            strip_patterns: vec![format!("^.*/{RUN_DIR_PREFIX}[^/]+/")],
            drop_functions: vec!["^__ghunter".into()],
            max_frames: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StackNormalizer {
    strip_prefixes: Vec<String>,
    strip_patterns: Vec<Regex>,
    drop_functions: Vec<Regex>,
    max_frames: Option<usize>,
}

impl Default for StackNormalizer {
    fn default() -> Self {
        StackNormalizer::new(&StackConfig::default()).expect("default stack patterns compile")
    }
}

impl StackNormalizer {
    pub fn new(config: &StackConfig) -> Result<Self, regex::Error> {
        let anchored = |p: &String| {
            if p.starts_with('^') {
                Regex::new(p)
            } else {
                Regex::new(&format!("^(?:{p})"))
            }
        };
        Ok(StackNormalizer {
            strip_prefixes: config.strip_prefixes.clone(),
            strip_patterns: config.strip_patterns.iter().map(anchored).collect::<Result<_, _>>()?,
            drop_functions: config.drop_functions.iter().map(|p| Regex::new(p)).collect::<Result<_, _>>()?,
            max_frames: config.max_frames,
        })
    }

    /// Adds literal roots, e.g. from `--stack-root`.
    pub fn with_roots(mut self, roots: impl IntoIterator<Item = String>) -> Self {
        self.strip_prefixes.extend(roots);
        self
    }

    pub fn normalize_path(&self, path: &str) -> String {
        let mut out = path;
        for prefix in &self.strip_prefixes {
            if let Some(rest) = out.strip_prefix(prefix.as_str()) {
                out = rest;
            }
        }
        for re in &self.strip_patterns {
            if let Some(m) = re.find(out) {
                out = &out[m.end()..];
            }
        }
        out.to_string()
    }

    pub fn normalize(&self, frames: &[StackFrame]) -> Vec<StackFrame> {
        let kept = frames
            .iter()
            .filter(|f| !self.drop_functions.iter().any(|re| re.is_match(&f.function)))
            .map(|f| StackFrame {
                function: f.function.clone(),
                file: self.normalize_path(&f.file),
                line: f.line,
                column: f.column,
            });
        match self.max_frames {
            Some(n) => kept.take(n).collect(),
            None => kept.collect(),
        }
    }

    /// Parses and normalizes pre-rendered frame strings.
    pub fn parse_stack<S: AsRef<str>>(&self, lines: &[S]) -> Vec<StackFrame> {
        let frames: Vec<_> = lines.iter().map(|l| StackFrame::parse(l.as_ref())).collect();
        self.normalize(&frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_v8_forms() {
        assert_eq!(
            StackFrame::parse("    at spawn (/srv/lib/child_process.js:88:20)"),
            StackFrame::new("spawn", "/srv/lib/child_process.js", 88, 20)
        );
        assert_eq!(
            StackFrame::parse("at /srv/test.js:3:1"),
            StackFrame::new("", "/srv/test.js", 3, 1)
        );
        assert_eq!(
            StackFrame::parse("at async Object.fetch [as f] (node:internal/deps/undici:12:5)"),
            StackFrame::new("async Object.fetch [as f]", "node:internal/deps/undici", 12, 5)
        );
        assert_eq!(
            StackFrame::parse("run@file:///srv/a.js:2:9"),
            StackFrame::new("run", "file:///srv/a.js", 2, 9)
        );
        assert_eq!(StackFrame::parse("at new Promise (<anonymous>)"), StackFrame::new("new Promise", "<anonymous>", 0, 0));
        assert_eq!(StackFrame::parse("garbage"), StackFrame::new("garbage", "", 0, 0));
    }

    #[test]
    fn display_round_trips_located_frames() {
        let f = StackFrame::new("spawn", "lib/a.js", 1, 2);
        assert_eq!(StackFrame::parse(&f.to_string()), f);
    }

    #[test]
    fn normalization_strips_roots_and_agent_frames() {
        let n = StackNormalizer::default().with_roots(["/home/ci/corpus/".to_string()]);
        let frames = vec![
            StackFrame::new("__ghunterGet", "/tmp/gadgetscan-run-a1/t.js", 4, 2),
            StackFrame::new("spawn", "/home/ci/corpus/lib/cp.js", 10, 3),
            StackFrame::new("", "/tmp/gadgetscan-run-zz9/t.js", 30, 1),
        ];
        assert_eq!(
            n.normalize(&frames),
            vec![StackFrame::new("spawn", "lib/cp.js", 10, 3), StackFrame::new("", "t.js", 30, 1)]
        );
    }

    #[test]
    fn frame_limit() {
        let n = StackNormalizer::new(&StackConfig {
            max_frames: Some(1),
            ..StackConfig::default()
        })
        .unwrap();
        let frames = vec![StackFrame::new("a", "x", 1, 1), StackFrame::new("b", "y", 1, 1)];
        assert_eq!(n.normalize(&frames).len(), 1);
    }

    #[test]
    fn frame_detection() {
        assert!(StackFrame::looks_like_frame("    at fetch (lib/fetch.js:3:1)"));
        assert!(StackFrame::looks_like_frame("at lib/fetch.js:3:1"));
        assert!(!StackFrame::looks_like_frame("TypeError: at is not defined"));
    }
}
