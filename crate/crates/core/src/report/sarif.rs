//! SARIF 2.1.0 output.
//!
//! One result per gadget candidate and one per orphan sink. Candidates of a
//! gadget share a `correlationGuid` and a `gadget/v1` fingerprint so viewers
//! show them together. Output is byte-stable: no timestamps, fixed struct
//! field order, sorted property bags, results in gadget order.

use std::collections::BTreeMap;

use percent_encoding::{utf8_percent_encode, AsciiSet, CONTROLS};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use uuid::Builder;

use super::candidates::{Evidence, Gadget, GadgetCandidate};
use crate::stack::StackFrame;
use crate::taint::{OrphanReason, OrphanSink, SinkEvent};

pub const RULE_FLOW: &str = "pp-gadget/flow";
pub const RULE_TERMINATION: &str = "pp-gadget/termination";
pub const RULE_ORPHAN: &str = "pp-gadget/orphan-sink";

const SCHEMA_URI: &str = "https://json.schemastore.org/sarif-2.1.0.json";

const URI_UNSAFE: &AsciiSet = &CONTROLS
    .add(b' ')
    .add(b'"')
    .add(b'#')
    .add(b'%')
    .add(b'<')
    .add(b'>')
    .add(b'\\')
    .add(b'^')
    .add(b'`')
    .add(b'{')
    .add(b'|')
    .add(b'}');

#[derive(Debug, Clone)]
pub struct SarifMetadata {
    pub tool_name: String,
    pub tool_version: String,
    pub information_uri: Option<String>,
    /// Extra run-level properties (counts, profile name).
    pub properties: BTreeMap<String, Value>,
}

impl Default for SarifMetadata {
    fn default() -> Self {
        SarifMetadata {
            tool_name: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            information_uri: None,
            properties: BTreeMap::new(),
        }
    }
}

#[derive(Serialize)]
struct Log<'a> {
    #[serde(rename = "$schema")]
    schema: &'static str,
    version: &'static str,
    runs: Vec<Run<'a>>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Run<'a> {
    tool: Tool<'a>,
    column_kind: &'static str,
    results: Vec<SarifResult>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    properties: &'a BTreeMap<String, Value>,
}

#[derive(Serialize)]
struct Tool<'a> {
    driver: Driver<'a>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Driver<'a> {
    name: &'a str,
    version: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    information_uri: Option<&'a str>,
    rules: Vec<Rule>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Rule {
    id: &'static str,
    name: &'static str,
    short_description: Message,
    full_description: Message,
    default_configuration: RuleConfig,
}

#[derive(Serialize)]
struct RuleConfig {
    level: &'static str,
}

#[derive(Serialize)]
struct Message {
    text: String,
}

fn msg(text: impl Into<String>) -> Message {
    Message { text: text.into() }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SarifResult {
    rule_id: &'static str,
    rule_index: usize,
    level: &'static str,
    message: Message,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    locations: Vec<Location>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    stacks: Vec<Stack>,
    #[serde(skip_serializing_if = "Option::is_none")]
    correlation_guid: Option<String>,
    partial_fingerprints: BTreeMap<String, String>,
    properties: BTreeMap<String, Value>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Location {
    #[serde(skip_serializing_if = "Option::is_none")]
    physical_location: Option<PhysicalLocation>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    logical_locations: Vec<LogicalLocation>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct PhysicalLocation {
    artifact_location: ArtifactLocation,
    #[serde(skip_serializing_if = "Option::is_none")]
    region: Option<Region>,
}

#[derive(Serialize)]
struct ArtifactLocation {
    uri: String,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Region {
    start_line: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    start_column: Option<u32>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct LogicalLocation {
    name: String,
    kind: &'static str,
}

#[derive(Serialize)]
struct Stack {
    message: Message,
    frames: Vec<Frame>,
}

#[derive(Serialize)]
struct Frame {
    location: Location,
}

fn rules() -> Vec<Rule> {
    vec![
        Rule {
            id: RULE_FLOW,
            name: "PollutedPropertyReachesSink",
            short_description: msg("A polluted property flows into a security-relevant sink."),
            full_description: msg(
                "An undefined property read during normal API use was polluted on the root prototype and its value reached a native or function-from-string sink.",
            ),
            default_configuration: RuleConfig { level: "warning" },
        },
        Rule {
            id: RULE_TERMINATION,
            name: "PollutedPropertyTerminatesProcess",
            short_description: msg("Polluting a property makes the process terminate unexpectedly."),
            full_description: msg(
                "With the property polluted the test crashed, ran out of memory, timed out, or failed with an error other than a test failure.",
            ),
            default_configuration: RuleConfig { level: "error" },
        },
        Rule {
            id: RULE_ORPHAN,
            name: "TaintAtSinkWithoutSource",
            short_description: msg("A sink received a tainted value that matches no recorded source."),
            full_description: msg(
                "The marker reached a sink but its counter does not identify a source access, usually because the value was modified on the way.",
            ),
            default_configuration: RuleConfig { level: "note" },
        },
    ]
}

fn uri(file: &str) -> String {
    utf8_percent_encode(file, URI_UNSAFE).to_string()
}

fn location(frame: &StackFrame) -> Location {
    let physical_location = (!frame.file.is_empty()).then(|| PhysicalLocation {
        artifact_location: ArtifactLocation { uri: uri(&frame.file) },
        region: (frame.line > 0).then(|| Region {
            start_line: frame.line,
            start_column: (frame.column > 0).then_some(frame.column),
        }),
    });
    let logical_locations = if frame.function.is_empty() {
        Vec::new()
    } else {
        vec![LogicalLocation {
            name: frame.function.clone(),
            kind: "function",
        }]
    };
    Location {
        physical_location,
        logical_locations,
    }
}

fn stack(label: &str, frames: &[StackFrame]) -> Option<Stack> {
    (!frames.is_empty()).then(|| Stack {
        message: msg(label),
        frames: frames.iter().map(|f| Frame { location: location(f) }).collect(),
    })
}

fn hex_digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Name-based UUID over the gadget key, laid out as version 5 with the
/// first 16 bytes of a SHA-256 digest.
fn gadget_guid(api: &str, sink: &str) -> String {
    let mut h = Sha256::new();
    h.update(b"gadget\0");
    h.update(api.as_bytes());
    h.update([0u8]);
    h.update(sink.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 16];
    bytes.copy_from_slice(&digest[..16]);
    Builder::from_sha1_bytes(bytes).into_uuid().to_string()
}

fn string(s: impl Into<String>) -> Value {
    Value::String(s.into())
}

fn candidate_result(gadget: &Gadget, c: &GadgetCandidate) -> SarifResult {
    let mut properties = BTreeMap::new();
    properties.insert("property".into(), string(&c.property));
    properties.insert("api".into(), string(&c.api));
    properties.insert("sink".into(), string(&c.sink));
    properties.insert("fixture".into(), string(&c.fixture));
    properties.insert("runId".into(), string(c.run_id.as_str()));
    properties.insert(
        "gadgetProperties".into(),
        Value::Array(gadget.properties.iter().map(string).collect()),
    );
    if let Some(v) = &c.observed_value {
        properties.insert("observedValue".into(), string(v));
    }

    let mut partial_fingerprints = BTreeMap::new();
    partial_fingerprints.insert("gadget/v1".to_string(), hex_digest(&[&c.api, &c.sink]));
    partial_fingerprints.insert("candidate/v1".to_string(), hex_digest(&[&c.api, &c.sink, &c.property]));

    let locations: Vec<Location> = c.api_frame().map(location).into_iter().collect();

    let (rule_id, rule_index, level, text, stacks) = match &c.evidence {
        Evidence::Flow { pair } => {
            if let SinkEvent::Sink(hit) = &pair.sink {
                properties.insert("argumentIndex".into(), Value::from(hit.arg_index));
                properties.insert("accessPath".into(), string(&hit.access_path));
            }
            properties.insert("pollutionType".into(), string(pair.source.pollution_type.as_str()));
            let where_ = match &pair.sink {
                SinkEvent::Sink(hit) if hit.access_path.is_empty() => format!(" (argument {})", hit.arg_index),
                SinkEvent::Sink(hit) => format!(" (argument {}, path `{}`)", hit.arg_index, hit.access_path),
                SinkEvent::Eval(_) => String::new(),
            };
            let text = format!(
                "Polluted property `{}` reaches sink `{}`{} through `{}`; observed value: {}",
                c.property,
                c.sink,
                where_,
                c.api,
                pair.sink.observed_value()
            );
            let stacks = [stack("sink stack", pair.sink.stack()), stack("source stack", &pair.source.stack)]
                .into_iter()
                .flatten()
                .collect();
            (RULE_FLOW, 0, "warning", text, stacks)
        }
        Evidence::Termination { termination } => {
            properties.insert("verdict".into(), string(termination.class.verdict.as_str()));
            properties.insert("evidence".into(), string(&termination.class.evidence));
            properties.insert("test".into(), string(termination.test.to_string_lossy()));
            properties.insert("output".into(), string(&termination.output));
            if let Some(t) = termination.pollution_type {
                properties.insert("pollutionType".into(), string(t.as_str()));
            }
            let text = format!(
                "Polluting property `{}` makes test `{}` end with {}: {}",
                c.property,
                termination.test.display(),
                termination.class.verdict,
                termination.class.evidence
            );
            let stacks = stack("termination stack", &termination.stack).into_iter().collect();
            (RULE_TERMINATION, 1, "error", text, stacks)
        }
    };

    let locations = if locations.is_empty() {
        match &c.evidence {
            Evidence::Termination { termination } => vec![Location {
                physical_location: Some(PhysicalLocation {
                    artifact_location: ArtifactLocation {
                        uri: uri(&termination.test.to_string_lossy()),
                    },
                    region: None,
                }),
                logical_locations: Vec::new(),
            }],
            Evidence::Flow { .. } => locations,
        }
    } else {
        locations
    };

    SarifResult {
        rule_id,
        rule_index,
        level,
        message: msg(text),
        locations,
        stacks,
        correlation_guid: Some(gadget_guid(&gadget.api, &gadget.sink)),
        partial_fingerprints,
        properties,
    }
}

fn orphan_result(o: &OrphanSink) -> SarifResult {
    let reason = match o.reason {
        OrphanReason::NoMatchingSource => "no_matching_source",
        OrphanReason::UnparsableId => "unparsable_id",
    };
    let mut properties = BTreeMap::new();
    properties.insert("reason".into(), string(reason));
    properties.insert("sink".into(), string(o.sink.sink_name()));
    properties.insert("observedValue".into(), string(o.sink.observed_value()));
    let run = o.sink.run_id().as_str();
    properties.insert("runId".into(), string(run));
    properties.insert("fixture".into(), string(run.split('/').next().unwrap_or_default()));
    if let SinkEvent::Sink(hit) = &o.sink {
        properties.insert("argumentIndex".into(), Value::from(hit.arg_index));
        properties.insert("accessPath".into(), string(&hit.access_path));
    }
    let mut partial_fingerprints = BTreeMap::new();
    partial_fingerprints.insert(
        "orphan/v1".to_string(),
        hex_digest(&[o.sink.sink_name(), o.sink.observed_value(), reason, run]),
    );
    SarifResult {
        rule_id: RULE_ORPHAN,
        rule_index: 2,
        level: "note",
        message: msg(format!(
            "Sink `{}` received tainted value {} that matches no recorded source ({reason})",
            o.sink.sink_name(),
            o.sink.observed_value()
        )),
        locations: o.sink.stack().first().map(location).into_iter().collect(),
        stacks: stack("sink stack", o.sink.stack()).into_iter().collect(),
        correlation_guid: None,
        partial_fingerprints,
        properties,
    }
}

/// Renders gadgets and orphans as a single-run SARIF log, pretty-printed
/// with a trailing newline.
pub fn emit_sarif(gadgets: &[Gadget], orphans: &[OrphanSink], metadata: &SarifMetadata) -> Result<String, serde_json::Error> {
    let mut results: Vec<SarifResult> = gadgets
        .iter()
        .flat_map(|g| g.members.iter().map(move |c| candidate_result(g, c)))
        .collect();
    results.extend(orphans.iter().map(orphan_result));

    let log = Log {
        schema: SCHEMA_URI,
        version: "2.1.0",
        runs: vec![Run {
            tool: Tool {
                driver: Driver {
                    name: &metadata.tool_name,
                    version: &metadata.tool_version,
                    information_uri: metadata.information_uri.as_deref(),
                    rules: rules(),
                },
            },
            column_kind: "utf16CodeUnits",
            results,
            properties: &metadata.properties,
        }],
    };
    let mut out = serde_json::to_string_pretty(&log)?;
    out.push('\n');
    Ok(out)
}
