use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{compile, termination_sink, ReportError, Termination};
use crate::stack::StackFrame;
use crate::taint::{FlowPair, RunId};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    Flow { pair: FlowPair },
    Termination { termination: Termination },
}

/// One (property, API, sink) finding.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GadgetCandidate {
    pub api: String,
    pub sink: String,
    pub property: String,
    pub fixture: String,
    pub run_id: RunId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observed_value: Option<String>,
    pub evidence: Evidence,
}

impl GadgetCandidate {
    pub fn is_flow(&self) -> bool {
        matches!(self.evidence, Evidence::Flow { .. })
    }

    /// Normalized frame locating the API entry point, when one is known.
    pub fn api_frame(&self) -> Option<&StackFrame> {
        let stack = match &self.evidence {
            Evidence::Flow { pair } if !pair.sink.stack().is_empty() => pair.sink.stack(),
            Evidence::Flow { pair } => &pair.source.stack,
            Evidence::Termination { termination } => &termination.stack,
        };
        stack
            .iter()
            .find(|f| ApiLabeler::clean_function(&f.function) == self.api)
            .or_else(|| stack.first())
    }
}

/// Candidates sharing (api, sink).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gadget {
    pub properties: BTreeSet<String>,
    pub api: String,
    pub sink: String,
    pub members: Vec<GadgetCandidate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GadgetSummary {
    pub api: String,
    pub sink: String,
    pub properties: BTreeSet<String>,
    pub candidates: usize,
}

impl Gadget {
    pub fn summary(&self) -> GadgetSummary {
        GadgetSummary {
            api: self.api.clone(),
            sink: self.sink.clone(),
            properties: self.properties.clone(),
            candidates: self.members.len(),
        }
    }
}

/// Labels a finding with the public API it went through: the innermost
/// frame whose file matches one of the configured API paths, else the
/// fixture name (the test file stem).
#[derive(Debug, Clone, Default)]
pub struct ApiLabeler {
    api_paths: Vec<Regex>,
}

impl ApiLabeler {
    pub fn new(api_paths: &[String]) -> Result<Self, ReportError> {
        Ok(ApiLabeler {
            api_paths: api_paths.iter().map(|p| compile(p)).collect::<Result<_, _>>()?,
        })
    }

    /// Strips `async `/`new ` prefixes and a trailing `[as alias]`.
    pub fn clean_function(function: &str) -> String {
        let mut f = function.trim();
        for prefix in ["async ", "new "] {
            f = f.strip_prefix(prefix).unwrap_or(f);
        }
        if let Some(i) = f.find(" [as ") {
            f = &f[..i];
        }
        f.to_string()
    }

    pub fn label(&self, stack: &[StackFrame], fallback: &str) -> String {
        stack
            .iter()
            .filter(|f| !f.function.is_empty())
            .find(|f| self.api_paths.iter().any(|re| re.is_match(&f.file)))
            .map(|f| Self::clean_function(&f.function))
            .unwrap_or_else(|| fallback.to_string())
    }
}

fn fixture_of(run: &RunId) -> String {
    run.as_str().split('/').next().unwrap_or_default().to_string()
}

fn flow_candidate(pair: &FlowPair, labeler: &ApiLabeler) -> GadgetCandidate {
    let stack = if pair.sink.stack().is_empty() {
        &pair.source.stack
    } else {
        pair.sink.stack()
    };
    let fixture = fixture_of(&pair.source.run_id);
    GadgetCandidate {
        api: labeler.label(stack, &fixture),
        sink: pair.sink.sink_name().to_string(),
        property: pair.source.property.clone(),
        fixture,
        run_id: pair.source.run_id.clone(),
        observed_value: Some(pair.sink.observed_value().to_string()),
        evidence: Evidence::Flow { pair: pair.clone() },
    }
}

fn termination_candidate(t: &Termination, labeler: &ApiLabeler) -> GadgetCandidate {
    GadgetCandidate {
        api: labeler.label(&t.stack, &t.fixture),
        sink: termination_sink(t.class.verdict),
        property: t.property.clone().unwrap_or_default(),
        fixture: t.fixture.clone(),
        run_id: t.run_id.clone(),
        observed_value: None,
        evidence: Evidence::Termination { termination: t.clone() },
    }
}

/// Groups candidates by (api, sink); gadgets come out sorted by that pair,
/// members by property.
pub fn group_gadgets(candidates: &[GadgetCandidate]) -> Vec<Gadget> {
    let mut groups: BTreeMap<(String, String), Vec<GadgetCandidate>> = BTreeMap::new();
    for c in candidates {
        groups.entry((c.api.clone(), c.sink.clone())).or_default().push(c.clone());
    }
    groups
        .into_iter()
        .map(|((api, sink), mut members)| {
            members.sort();
            Gadget {
                properties: members.iter().map(|m| m.property.clone()).collect(),
                api,
                sink,
                members,
            }
        })
        .collect()
}

/// One candidate per deduplicated flow and termination, sorted by
/// (api, sink, property), plus their grouping into gadgets.
pub fn build_candidates(
    flows: &[FlowPair],
    terminations: &[Termination],
    labeler: &ApiLabeler,
) -> (Vec<GadgetCandidate>, Vec<Gadget>) {
    let mut candidates: Vec<GadgetCandidate> = flows
        .iter()
        .map(|p| flow_candidate(p, labeler))
        .chain(terminations.iter().map(|t| termination_candidate(t, labeler)))
        .collect();
    candidates.sort();
    let gadgets = group_gadgets(&candidates);
    (candidates, gadgets)
}

#[cfg(test)]
pub(crate) fn test_candidate(property: &str, api: &str, sink: &str) -> GadgetCandidate {
    use crate::taint::{PollutionType, SinkHit, SourceAccess, TaintId};
    let run: RunId = "fx/hunt-string-p".into();
    GadgetCandidate {
        api: api.into(),
        sink: sink.into(),
        property: property.into(),
        fixture: "fx".into(),
        run_id: run.clone(),
        observed_value: Some("0xEFFACED0".into()),
        evidence: Evidence::Flow {
            pair: FlowPair {
                source: SourceAccess {
                    run_id: run.clone(),
                    property: property.into(),
                    taint_id: TaintId(0),
                    pollution_type: PollutionType::String,
                    stack: vec![],
                },
                sink: SinkHit::new(run, sink, 0, "", "0xEFFACED0", vec![]).into(),
            },
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::{TerminationClass, Verdict};
    use crate::taint::{PollutionType, SinkHit, SourceAccess, TaintId};

    fn labeler() -> ApiLabeler {
        ApiLabeler::new(&["^lib/".to_string()]).unwrap()
    }

    fn fetch_flow(prop: &str) -> FlowPair {
        let run: RunId = format!("03_fetch_test/hunt-string-{prop}").as_str().into();
        FlowPair {
            source: SourceAccess {
                run_id: run.clone(),
                property: prop.into(),
                taint_id: TaintId(0),
                pollution_type: PollutionType::String,
                stack: vec![StackFrame::new("fetch", "lib/fetch.js", 5, 3)],
            },
            sink: SinkHit::new(
                run,
                "op_fetch",
                0,
                "",
                "0xEFFACED0",
                vec![
                    StackFrame::new("fetch", "lib/fetch.js", 21, 10),
                    StackFrame::new("", "03_fetch_test.js", 9, 1),
                ],
            )
            .into(),
        }
    }

    #[test]
    fn two_properties_one_gadget() {
        let (cands, gadgets) = build_candidates(&[fetch_flow("method"), fetch_flow("0")], &[], &labeler());
        assert_eq!(cands.len(), 2);
        assert_eq!(gadgets.len(), 1);
        assert_eq!(gadgets[0].api, "fetch");
        assert_eq!(gadgets[0].sink, "op_fetch");
        assert_eq!(gadgets[0].properties, ["0".to_string(), "method".to_string()].into_iter().collect());
        assert_eq!(cands[0].property, "0");
    }

    #[test]
    fn termination_is_its_own_gadget() {
        let t = Termination {
            run_id: "04_abort/crash-string-signal".into(),
            fixture: "04_abort".into(),
            test: "fixtures/04_abort.js".into(),
            property: Some("signal".into()),
            pollution_type: Some(PollutionType::String),
            class: TerminationClass {
                verdict: Verdict::Segfault,
                evidence: "signal 11".into(),
            },
            stack: vec![],
            output: String::new(),
        };
        let (cands, gadgets) = build_candidates(&[], &[t], &labeler());
        assert_eq!(cands.len(), 1);
        assert!(!cands[0].is_flow());
        assert_eq!(cands[0].api, "04_abort");
        assert_eq!(cands[0].sink, "termination:segfault");
        assert_eq!(gadgets.len(), 1);
    }

    #[test]
    fn empty_in_empty_out() {
        let (c, g) = build_candidates(&[], &[], &labeler());
        assert!(c.is_empty() && g.is_empty());
    }

    #[test]
    fn labels_innermost_api_frame() {
        let l = labeler();
        let stack = vec![
            StackFrame::new("normalize", "internal/x.js", 1, 1),
            StackFrame::new("async Object.spawn [as spawn]", "lib/cp.js", 2, 1),
            StackFrame::new("fork", "lib/cp.js", 3, 1),
        ];
        assert_eq!(l.label(&stack, "t"), "Object.spawn");
        assert_eq!(l.label(&stack[..1], "t"), "t");
    }
}
