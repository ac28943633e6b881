//! Taint values and source/sink matching.
//!
//! The in-runtime agent hands out string taints of the form `0xEFFACED<n>`,
//! where `<n>` is a per-run access counter. Everything the orchestrator
//! knows about a flow is recovered from that counter: a sink observation is
//! paired with the source access that minted the same number in the same
//! run.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stack::StackFrame;

/// Base of every minted taint string.
pub const TAINT_MARKER: &str = "0xEFFACED";

/// Sink name used for function-from-string observations.
pub const EVAL_SINK: &str = "eval";

/// Per-run access counter carried by a taint string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaintId(pub u64);

impl fmt::Display for TaintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Identifier of one subprocess run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RunId(pub String);

impl RunId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RunId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RunId {
    fn from(s: &str) -> Self {
        RunId(s.to_string())
    }
}

/// How the polluted property was populated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PollutionType {
    String,
    Object,
    #[serde(rename = "forin")]
    ForInProbe,
}

impl PollutionType {
    /// Wire name, shared by the log protocol, `GHUNTER_TYPE` and the CLI.
    pub fn as_str(self) -> &'static str {
        match self {
            PollutionType::String => "string",
            PollutionType::Object => "object",
            PollutionType::ForInProbe => "forin",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "string" => Some(PollutionType::String),
            "object" => Some(PollutionType::Object),
            "forin" => Some(PollutionType::ForInProbe),
            _ => None,
        }
    }
}

impl fmt::Display for PollutionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Renders the taint string for `index`.
pub fn mint_taint(index: TaintId) -> String {
    format!("{TAINT_MARKER}{}", index.0)
}

/// Recovers the counter following the first marker occurrence in `value`.
///
/// Only the first occurrence is considered; if it is not followed by at
/// least one decimal digit the value is unparsable even when a later
/// occurrence would be.
pub fn parse_taint(value: &str) -> Option<TaintId> {
    let start = value.find(TAINT_MARKER)? + TAINT_MARKER.len();
    let rest = &value[start..];
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    rest[..digits].parse().ok().map(TaintId)
}

/// A read of the polluted property, i.e. the moment a taint was minted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceAccess {
    pub run_id: RunId,
    pub property: String,
    pub taint_id: TaintId,
    pub pollution_type: PollutionType,
    pub stack: Vec<StackFrame>,
}

/// A tainted string observed in an argument of a wrapped native function.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SinkHit {
    pub run_id: RunId,
    pub sink_name: String,
    pub arg_index: u32,
    /// Dot path into the argument; empty when the argument itself is tainted.
    pub access_path: String,
    pub observed_value: String,
    pub taint_id: Option<TaintId>,
    pub stack: Vec<StackFrame>,
}

impl SinkHit {
    pub fn new(
        run_id: RunId,
        sink_name: impl Into<String>,
        arg_index: u32,
        access_path: impl Into<String>,
        observed_value: impl Into<String>,
        stack: Vec<StackFrame>,
    ) -> Self {
        let observed_value = observed_value.into();
        SinkHit {
            run_id,
            sink_name: sink_name.into(),
            arg_index,
            access_path: access_path.into(),
            taint_id: parse_taint(&observed_value),
            observed_value,
            stack,
        }
    }
}

/// A tainted code string handed to a function-from-string constructor.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EvalHit {
    pub run_id: RunId,
    pub observed_value: String,
    pub taint_id: Option<TaintId>,
    pub stack: Vec<StackFrame>,
}

impl EvalHit {
    pub fn new(run_id: RunId, observed_value: impl Into<String>, stack: Vec<StackFrame>) -> Self {
        let observed_value = observed_value.into();
        EvalHit {
            run_id,
            taint_id: parse_taint(&observed_value),
            observed_value,
            stack,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SinkEvent {
    Sink(SinkHit),
    Eval(EvalHit),
}

impl SinkEvent {
    pub fn run_id(&self) -> &RunId {
        match self {
            SinkEvent::Sink(h) => &h.run_id,
            SinkEvent::Eval(h) => &h.run_id,
        }
    }

    pub fn taint_id(&self) -> Option<TaintId> {
        match self {
            SinkEvent::Sink(h) => h.taint_id,
            SinkEvent::Eval(h) => h.taint_id,
        }
    }

    pub fn stack(&self) -> &[StackFrame] {
        match self {
            SinkEvent::Sink(h) => &h.stack,
            SinkEvent::Eval(h) => &h.stack,
        }
    }

    pub fn observed_value(&self) -> &str {
        match self {
            SinkEvent::Sink(h) => &h.observed_value,
            SinkEvent::Eval(h) => &h.observed_value,
        }
    }

    pub fn sink_name(&self) -> &str {
        match self {
            SinkEvent::Sink(h) => &h.sink_name,
            SinkEvent::Eval(_) => EVAL_SINK,
        }
    }

    pub fn stack_mut(&mut self) -> &mut Vec<StackFrame> {
        match self {
            SinkEvent::Sink(h) => &mut h.stack,
            SinkEvent::Eval(h) => &mut h.stack,
        }
    }
}

impl From<SinkHit> for SinkEvent {
    fn from(h: SinkHit) -> Self {
        SinkEvent::Sink(h)
    }
}

impl From<EvalHit> for SinkEvent {
    fn from(h: EvalHit) -> Self {
        SinkEvent::Eval(h)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowPair {
    pub source: SourceAccess,
    pub sink: SinkEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrphanReason {
    NoMatchingSource,
    UnparsableId,
}

/// A sink observation that no recorded source explains, usually because
/// the value was rewritten on its way to the sink.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OrphanSink {
    pub sink: SinkEvent,
    pub reason: OrphanReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowMatch {
    pub pairs: Vec<FlowPair>,
    pub orphans: Vec<OrphanSink>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaintError {
    #[error("records from different runs passed to one match: {first} and {other}")]
    MixedRuns { first: RunId, other: RunId },
    #[error("taint id {id} minted twice in run {run_id}")]
    DuplicateSourceId { run_id: RunId, id: TaintId },
}

fn sink_order_key(sink: &SinkEvent) -> (&[StackFrame], Option<TaintId>, &SinkEvent) {
    (sink.stack(), sink.taint_id(), sink)
}

/// Pairs the sinks of one run with the sources that minted their taints.
///
/// Sources that reach no sink are dropped. A single source may explain
/// several sink observations (the same value scanned at two argument paths,
/// or passed through two wrapped functions); each such observation yields
/// its own pair.
pub fn match_flows(sources: &[SourceAccess], sinks: &[SinkEvent]) -> Result<FlowMatch, TaintError> {
    let mut run: Option<&RunId> = None;
    for id in sources.iter().map(|s| &s.run_id).chain(sinks.iter().map(SinkEvent::run_id)) {
        match run {
            None => run = Some(id),
            Some(first) if first != id => {
                return Err(TaintError::MixedRuns {
                    first: first.clone(),
                    other: id.clone(),
                })
            }
            Some(_) => {}
        }
    }

    let mut by_id: HashMap<TaintId, &SourceAccess> = HashMap::with_capacity(sources.len());
    for source in sources {
        if by_id.insert(source.taint_id, source).is_some() {
            return Err(TaintError::DuplicateSourceId {
                run_id: source.run_id.clone(),
                id: source.taint_id,
            });
        }
    }

    let mut out = FlowMatch::default();
    for sink in sinks {
        match sink.taint_id() {
            None => out.orphans.push(OrphanSink {
                sink: sink.clone(),
                reason: OrphanReason::UnparsableId,
            }),
            Some(id) => match by_id.get(&id) {
                Some(source) => out.pairs.push(FlowPair {
                    source: (*source).clone(),
                    sink: sink.clone(),
                }),
                None => out.orphans.push(OrphanSink {
                    sink: sink.clone(),
                    reason: OrphanReason::NoMatchingSource,
                }),
            },
        }
    }

    out.pairs
        .sort_by(|a, b| sink_order_key(&a.sink).cmp(&sink_order_key(&b.sink)).then_with(|| a.source.cmp(&b.source)));
    out.orphans
        .sort_by(|a, b| sink_order_key(&a.sink).cmp(&sink_order_key(&b.sink)).then(a.reason.cmp(&b.reason)));
    Ok(out)
}
