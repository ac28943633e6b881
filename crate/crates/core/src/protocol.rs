//! The `GH1` agent log protocol.
//!
//! One record per line: `GH1<TAB>KIND<TAB>{json payload}`. Payload keys are
//! emitted in a fixed order:
//!
//! | kind         | keys                                   |
//! |--------------|----------------------------------------|
//! | `UNDEF_PROP` | `prop`                                 |
//! | `SRC_ACCESS` | `prop`, `id`, `type`, `stack`          |
//! | `SINK_HIT`   | `sink`, `arg`, `path`, `value`, `stack`|
//! | `EVAL_HIT`   | `value`, `stack`                       |
//! | `AGENT_ERR`  | `msg`                                  |
//!
//! Stacks travel as pre-rendered frame strings. JSON escaping keeps tabs and
//! newlines out of the raw line, so each line has exactly two raw tabs.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taint::PollutionType;

pub const PROTOCOL_TAG: &str = "GH1";
/// Environment variable through which the agent learns its log file.
pub const LOG_ENV: &str = "GHUNTER_LOG";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefProp {
    pub prop: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrcAccess {
    pub prop: String,
    pub id: u64,
    #[serde(rename = "type")]
    pub pollution_type: PollutionType,
    pub stack: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinkHitRecord {
    pub sink: String,
    pub arg: u32,
    pub path: String,
    pub value: String,
    pub stack: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalHitRecord {
    pub value: String,
    pub stack: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentErr {
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogRecord {
    UndefProp(UndefProp),
    SrcAccess(SrcAccess),
    SinkHit(SinkHitRecord),
    EvalHit(EvalHitRecord),
    AgentErr(AgentErr),
}

impl LogRecord {
    pub fn kind(&self) -> &'static str {
        match self {
            LogRecord::UndefProp(_) => "UNDEF_PROP",
            LogRecord::SrcAccess(_) => "SRC_ACCESS",
            LogRecord::SinkHit(_) => "SINK_HIT",
            LogRecord::EvalHit(_) => "EVAL_HIT",
            LogRecord::AgentErr(_) => "AGENT_ERR",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SkipVerdict {
    NotProtocol,
    UnknownKind,
    Malformed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub records: usize,
    pub not_protocol: usize,
    pub unknown_kind: usize,
    pub malformed: usize,
}

impl ParseStats {
    fn count(&mut self, verdict: SkipVerdict) {
        match verdict {
            SkipVerdict::NotProtocol => self.not_protocol += 1,
            SkipVerdict::UnknownKind => self.unknown_kind += 1,
            SkipVerdict::Malformed => self.malformed += 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("reading agent log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Renders a record as one protocol line, without the trailing newline.
pub fn serialize_record(record: &LogRecord) -> String {
    let payload = match record {
        LogRecord::UndefProp(p) => serde_json::to_string(p),
        LogRecord::SrcAccess(p) => serde_json::to_string(p),
        LogRecord::SinkHit(p) => serde_json::to_string(p),
        LogRecord::EvalHit(p) => serde_json::to_string(p),
        LogRecord::AgentErr(p) => serde_json::to_string(p),
    }
    .expect("payload structs always serialize");
    format!("{PROTOCOL_TAG}\t{}\t{payload}", record.kind())
}

pub fn parse_record(line: &str) -> Result<LogRecord, SkipVerdict> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let rest = line
        .strip_prefix(PROTOCOL_TAG)
        .and_then(|r| r.strip_prefix('\t'))
        .ok_or(SkipVerdict::NotProtocol)?;
    let Some((kind, payload)) = rest.split_once('\t') else {
        return Err(SkipVerdict::Malformed);
    };
    fn decode<T: for<'de> Deserialize<'de>>(payload: &str) -> Result<T, SkipVerdict> {
        serde_json::from_str(payload).map_err(|_| SkipVerdict::Malformed)
    }
    match kind {
        "UNDEF_PROP" => decode(payload).map(LogRecord::UndefProp),
        "SRC_ACCESS" => decode(payload).map(LogRecord::SrcAccess),
        "SINK_HIT" => decode(payload).map(LogRecord::SinkHit),
        "EVAL_HIT" => decode(payload).map(LogRecord::EvalHit),
        "AGENT_ERR" => decode(payload).map(LogRecord::AgentErr),
        _ => Err(SkipVerdict::UnknownKind),
    }
}

/// Parses a whole log image. A final unterminated fragment is a truncated
/// write when it is a prefix of the protocol tag, so it counts as malformed
/// rather than as foreign output.
pub fn parse_log(bytes: &[u8]) -> (Vec<LogRecord>, ParseStats) {
    let mut records = Vec::new();
    let mut stats = ParseStats::default();
    let mut lines = bytes.split(|&b| b == b'\n').peekable();
    while let Some(raw) = lines.next() {
        let last = lines.peek().is_none();
        if last && raw.is_empty() {
            break;
        }
        let verdict = match std::str::from_utf8(raw) {
            Err(_) => Err(SkipVerdict::Malformed),
            Ok(line) => match parse_record(line) {
                Err(SkipVerdict::NotProtocol)
                    if last && !line.is_empty() && format!("{PROTOCOL_TAG}\t").starts_with(line) =>
                {
                    Err(SkipVerdict::Malformed)
                }
                other => other,
            },
        };
        match verdict {
            Ok(record) => records.push(record),
            Err(v) => {
                if v == SkipVerdict::UnknownKind {
                    log::warn!("skipping agent record of unknown kind");
                }
                stats.count(v);
            }
        }
    }
    stats.records = records.len();
    (records, stats)
}

/// Reads an agent log. A log that never got created (the run crashed before
/// the agent wrote anything) reads as empty.
pub fn read_log(path: &Path) -> Result<(Vec<LogRecord>, ParseStats), ProtocolError> {
    match fs::read(path) {
        Ok(bytes) => Ok(parse_log(&bytes)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok((Vec::new(), ParseStats::default())),
        Err(source) => Err(ProtocolError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}

/// Appends one record with a single write call.
pub fn append_record(path: &Path, record: &LogRecord) -> io::Result<()> {
    let mut line = serialize_record(record);
    line.push('\n');
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(line.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn undef_prop_exact_bytes() {
        let r = LogRecord::UndefProp(UndefProp { prop: "method".into() });
        assert_eq!(serialize_record(&r), "GH1\tUNDEF_PROP\t{\"prop\":\"method\"}");
    }

    #[test]
    fn key_order_is_fixed() {
        let r = LogRecord::SinkHit(SinkHitRecord {
            sink: "op_fetch".into(),
            arg: 1,
            path: "".into(),
            value: "0xEFFACED4".into(),
            stack: vec!["at fetch (lib/fetch.js:1:1)".into()],
        });
        assert_eq!(
            serialize_record(&r),
            "GH1\tSINK_HIT\t{\"sink\":\"op_fetch\",\"arg\":1,\"path\":\"\",\"value\":\"0xEFFACED4\",\"stack\":[\"at fetch (lib/fetch.js:1:1)\"]}"
        );
        let s = LogRecord::SrcAccess(SrcAccess {
            prop: "shell".into(),
            id: 0,
            pollution_type: PollutionType::String,
            stack: vec![],
        });
        assert_eq!(
            serialize_record(&s),
            "GH1\tSRC_ACCESS\t{\"prop\":\"shell\",\"id\":0,\"type\":\"string\",\"stack\":[]}"
        );
        assert_eq!(parse_record(&serialize_record(&s)), Ok(s));
    }

    #[test]
    fn skip_verdicts() {
        assert_eq!(parse_record("hello world"), Err(SkipVerdict::NotProtocol));
        assert_eq!(parse_record("GH1\tFUTURE_KIND\t{}"), Err(SkipVerdict::UnknownKind));
        assert_eq!(parse_record("GH1\tUNDEF_PROP\t{\"prop\":"), Err(SkipVerdict::Malformed));
        assert_eq!(parse_record("GH1\tUNDEF_PROP"), Err(SkipVerdict::Malformed));
        assert_eq!(parse_record("GH1\tSRC_ACCESS\t{\"prop\":\"a\",\"id\":-1,\"type\":\"string\",\"stack\":[]}"), Err(SkipVerdict::Malformed));
        assert_eq!(parse_record("GH1\tAGENT_ERR\t{\"msg\":\"x\"} trailing"), Err(SkipVerdict::Malformed));
    }

    #[test]
    fn unknown_kind_is_tallied() {
        let (recs, stats) = parse_log(b"GH1\tFUTURE_KIND\t{}\nGH1\tUNDEF_PROP\t{\"prop\":\"a\"}\n");
        assert_eq!(recs.len(), 1);
        assert_eq!(stats.unknown_kind, 1);
    }

    #[test]
    fn read_log_cases() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.log");
        fs::write(&empty, "").unwrap();
        assert_eq!(read_log(&empty).unwrap(), (vec![], ParseStats::default()));

        let missing = dir.path().join("missing.log");
        assert_eq!(read_log(&missing).unwrap().0, vec![]);

        let mixed = dir.path().join("mixed.log");
        let a = LogRecord::UndefProp(UndefProp { prop: "a".into() });
        let b = LogRecord::AgentErr(AgentErr { msg: "m".into() });
        append_record(&mixed, &a).unwrap();
        fs::OpenOptions::new().append(true).open(&mixed).unwrap().write_all(b"test noise\n").unwrap();
        append_record(&mixed, &b).unwrap();
        let (recs, stats) = read_log(&mixed).unwrap();
        assert_eq!(recs, vec![a, b]);
        assert_eq!(stats.not_protocol, 1);
        assert_eq!(stats.records, 2);
    }

    #[test]
    fn read_log_directory_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_log(dir.path()).unwrap_err();
        assert!(err.to_string().contains(&dir.path().display().to_string()));
    }

    #[test]
    fn truncated_tag_fragment_is_malformed() {
        let (_, stats) = parse_log(b"GH1\tUNDEF_PROP\t{\"prop\":\"a\"}\nGH");
        assert_eq!(stats.malformed, 1);
        assert_eq!(stats.not_protocol, 0);
    }

    proptest! {
        #[test]
        fn control_characters_never_leak(prop in "[\\x00-\\x1f\t\n a-z]{0,20}") {
            let line = serialize_record(&LogRecord::UndefProp(UndefProp { prop: prop.clone() }));
            prop_assert_eq!(line.matches('\t').count(), 2);
            prop_assert!(!line.contains('\n'));
            prop_assert_eq!(parse_record(&line), Ok(LogRecord::UndefProp(UndefProp { prop })));
        }
    }
}
