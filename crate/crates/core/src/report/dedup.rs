use std::collections::HashSet;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{compile, ReportError, Termination};
use crate::runner::Verdict;
use crate::stack::StackFrame;
use crate::taint::FlowPair;

/// Identity of a flow for deduplication. The taint id and run are not part
/// of it, so the same flow observed in many runs collapses to one.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FlowKey {
    pub property: String,
    pub sink_name: String,
    pub stack: KeyStack,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum KeyStack {
    Sink(Vec<StackFrame>),
    /// Used when the sink observation carried no stack.
    Source(Vec<StackFrame>),
}

impl FlowKey {
    pub fn of(pair: &FlowPair) -> Self {
        let stack = if pair.sink.stack().is_empty() {
            KeyStack::Source(pair.source.stack.clone())
        } else {
            KeyStack::Sink(pair.sink.stack().to_vec())
        };
        FlowKey {
            property: pair.source.property.clone(),
            sink_name: pair.sink.sink_name().to_string(),
            stack,
        }
    }
}

/// Keeps the first pair of every [`FlowKey`], preserving input order.
pub fn dedup_flows(pairs: &[FlowPair]) -> Vec<FlowPair> {
    let mut seen = HashSet::new();
    pairs.iter().filter(|p| seen.insert(FlowKey::of(p))).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrubRule {
    pub pattern: String,
    pub replacement: String,
}

impl ScrubRule {
    /// Paths, then hex addresses, then remaining decimal counters.
    pub fn defaults() -> Vec<ScrubRule> {
        let rule = |p: &str, r: &str| ScrubRule {
            pattern: p.into(),
            replacement: r.into(),
        };
        vec![
            rule(r"(?:[A-Za-z]:)?(?:[/\\][\w.@+~-]+){2,}", "<path>"),
            rule(r"\b0x[0-9A-Fa-f]+\b", "0x?"),
            rule(r"\b\d+\b", "N"),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Scrubber {
    rules: Vec<(Regex, String)>,
}

impl Scrubber {
    pub fn new(rules: &[ScrubRule]) -> Result<Self, ReportError> {
        Ok(Scrubber {
            rules: rules
                .iter()
                .map(|r| Ok((compile(&r.pattern)?, r.replacement.clone())))
                .collect::<Result<_, ReportError>>()?,
        })
    }

    pub fn scrub(&self, text: &str) -> String {
        let mut out = text.to_string();
        for (re, rep) in &self.rules {
            out = re.replace_all(&out, rep.as_str()).into_owned();
        }
        out
    }
}

/// Keeps the first termination of every (verdict, scrubbed evidence).
pub fn dedup_terminations(terminations: &[Termination], scrubber: &Scrubber) -> Vec<Termination> {
    let mut seen: HashSet<(Verdict, String)> = HashSet::new();
    terminations
        .iter()
        .filter(|t| seen.insert((t.class.verdict, scrubber.scrub(&t.class.evidence))))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::TerminationClass;
    use crate::taint::{PollutionType, SinkHit, SourceAccess, TaintId};
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn pair(prop: &str, sink: &str, id: u64, stack_line: u32) -> FlowPair {
        let stack = vec![StackFrame::new("spawn", "lib/cp.js", stack_line, 1)];
        FlowPair {
            source: SourceAccess {
                run_id: "f/r".into(),
                property: prop.into(),
                taint_id: TaintId(id),
                pollution_type: PollutionType::String,
                stack: vec![StackFrame::new("get", "t.js", 1, 1)],
            },
            sink: SinkHit::new("f/r".into(), sink, 0, "", format!("0xEFFACED{id}"), stack).into(),
        }
    }

    fn term(verdict: Verdict, evidence: &str) -> Termination {
        Termination {
            run_id: "f/crash".into(),
            fixture: "f".into(),
            test: "t.js".into(),
            property: Some("signal".into()),
            pollution_type: Some(PollutionType::String),
            class: TerminationClass {
                verdict,
                evidence: evidence.into(),
            },
            stack: vec![],
            output: String::new(),
        }
    }

    #[test]
    fn taint_id_not_in_key() {
        assert_eq!(dedup_flows(&[pair("shell", "spawn", 3, 10), pair("shell", "spawn", 9, 10)]).len(), 1);
    }

    #[test]
    fn distinct_stacks_kept() {
        assert_eq!(dedup_flows(&[pair("shell", "spawn", 3, 10), pair("shell", "spawn", 3, 11)]).len(), 2);
    }

    #[test]
    fn thousand_replicas() {
        let pairs: Vec<_> = (0..1000).map(|i| pair("env", "spawn", i, 7)).collect();
        let groups: HashMap<FlowKey, usize> = pairs.iter().fold(HashMap::new(), |mut m, p| {
            *m.entry(FlowKey::of(p)).or_default() += 1;
            m
        });
        assert_eq!(groups.len(), 1);
        assert_eq!(dedup_flows(&pairs).len(), 1);
    }

    #[test]
    fn empty_sink_stack_falls_back_to_source_stack() {
        let mut a = pair("p", "s", 1, 1);
        a.sink.stack_mut().clear();
        let mut b = a.clone();
        b.source.stack = vec![StackFrame::new("other", "t.js", 9, 9)];
        assert_eq!(dedup_flows(&[a.clone(), b]).len(), 2);
        assert_eq!(dedup_flows(&[a.clone(), a]).len(), 1);
    }

    #[test]
    fn termination_examples() {
        let s = Scrubber::new(&ScrubRule::defaults()).unwrap();
        let seg = "Segmentation fault (core dumped)";
        assert_eq!(dedup_terminations(&[term(Verdict::Segfault, seg), term(Verdict::Segfault, seg)], &s).len(), 1);
        assert_eq!(dedup_terminations(&[term(Verdict::Segfault, seg), term(Verdict::Oom, seg)], &s).len(), 2);

        let a = "#  Fatal error in , line 0\n# Check failed: object at 0x3a7f0c2d1e40";
        let b = "#  Fatal error in , line 0\n# Check failed: object at 0x7ffd00aa1230";
        // by-hand scrub of the hex address
        let expected = "#  Fatal error in , line N\n# Check failed: object at 0x?";
        assert_eq!(s.scrub(a), expected);
        assert_eq!(s.scrub(b), expected);
        assert_eq!(dedup_terminations(&[term(Verdict::Segfault, a), term(Verdict::Segfault, b)], &s).len(), 1);
    }

    #[test]
    fn scrub_paths() {
        let s = Scrubber::new(&ScrubRule::defaults()).unwrap();
        assert_eq!(s.scrub("at /tmp/gadgetscan-run-x1/t.js:14"), "at <path>:N");
    }

    proptest! {
        #[test]
        fn idempotent(keys in proptest::collection::vec((0u8..4, 0u8..3, 0u32..3), 0..60)) {
            let pairs: Vec<_> = keys.iter().enumerate()
                .map(|(i, (p, s, l))| pair(&format!("p{p}"), &format!("s{s}"), i as u64, *l))
                .collect();
            let once = dedup_flows(&pairs);
            prop_assert_eq!(dedup_flows(&once), once.clone());
            prop_assert!(once.len() <= pairs.len());
            let distinct: HashSet<_> = keys.iter().collect();
            prop_assert_eq!(once.len(), distinct.len());
        }
    }
}
