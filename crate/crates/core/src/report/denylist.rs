//! Suppression of flows into infrastructure sinks (type checks, internal
//! utilities, async wrappers, error builders) that cannot lead anywhere
//! beyond a thrown error.

use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::candidates::GadgetCandidate;
use super::{compile, ReportError};

const DEFAULT_DENYLIST: &str = include_str!("../../data/default_denylist.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenyPattern {
    pub pattern: String,
    pub rationale: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenylistConfig {
    pub patterns: Vec<DenyPattern>,
}

#[derive(Debug, Clone, Default)]
pub struct Denylist {
    entries: Vec<(Regex, DenyPattern)>,
}

impl Denylist {
    pub fn new(config: &DenylistConfig) -> Result<Self, ReportError> {
        Ok(Denylist {
            entries: config
                .patterns
                .iter()
                .map(|p| Ok((compile(&p.pattern)?, p.clone())))
                .collect::<Result<_, ReportError>>()?,
        })
    }

    pub fn builtin() -> Self {
        let config: DenylistConfig = serde_json::from_str(DEFAULT_DENYLIST).expect("bundled denylist parses");
        Denylist::new(&config).expect("bundled denylist compiles")
    }

    pub fn builtin_config() -> DenylistConfig {
        serde_json::from_str(DEFAULT_DENYLIST).expect("bundled denylist parses")
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
            context: format!("reading denylist {}", path.display()),
            source,
        })?;
        let config: DenylistConfig = serde_json::from_str(&text).map_err(|source| ReportError::Json {
            context: format!("parsing denylist {}", path.display()),
            source,
        })?;
        Denylist::new(&config)
    }

    /// First pattern matching `sink`, in configuration order.
    pub fn matching(&self, sink: &str) -> Option<&DenyPattern> {
        self.entries.iter().find(|(re, _)| re.is_match(sink)).map(|(_, p)| p)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suppressed {
    pub candidate: GadgetCandidate,
    pub pattern: String,
    pub rationale: String,
}

/// Splits candidates into kept and suppressed; input order is preserved in
/// both lists.
pub fn apply_denylist(candidates: &[GadgetCandidate], denylist: &Denylist) -> (Vec<GadgetCandidate>, Vec<Suppressed>) {
    let mut kept = Vec::new();
    let mut suppressed = Vec::new();
    for c in candidates {
        match denylist.matching(&c.sink) {
            Some(p) => {
                log::debug!("suppressing {} -> {} ({})", c.property, c.sink, p.rationale);
                suppressed.push(Suppressed {
                    candidate: c.clone(),
                    pattern: p.pattern.clone(),
                    rationale: p.rationale.clone(),
                });
            }
            None => kept.push(c.clone()),
        }
    }
    (kept, suppressed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::candidates::test_candidate;
    use proptest::prelude::*;

    fn deny(patterns: &[(&str, &str)]) -> Denylist {
        Denylist::new(&DenylistConfig {
            patterns: patterns
                .iter()
                .map(|(p, r)| DenyPattern {
                    pattern: p.to_string(),
                    rationale: r.to_string(),
                })
                .collect(),
        })
        .unwrap()
    }

    #[test]
    fn internal_util_suppressed() {
        let c = test_candidate("encoding", "parse", "internal/util/types.check");
        let (kept, sup) = apply_denylist(&[c], &deny(&[("internal/util", "internal-utils")]));
        assert!(kept.is_empty());
        assert_eq!(sup[0].rationale, "internal-utils");
    }

    #[test]
    fn empty_config_keeps_all() {
        let cs = vec![test_candidate("a", "x", "op_a"), test_candidate("b", "x", "op_b")];
        let (kept, sup) = apply_denylist(&cs, &Denylist::default());
        assert_eq!(kept, cs);
        assert!(sup.is_empty());
    }

    #[test]
    fn first_pattern_reported_once() {
        let c = test_candidate("a", "x", "internal/util/types.check");
        let (_, sup) = apply_denylist(&[c], &deny(&[("types\\.check", "type-checking"), ("internal/util", "internal-utils")]));
        assert_eq!(sup.len(), 1);
        assert_eq!(sup[0].rationale, "type-checking");
    }

    #[test]
    fn builtin_covers_categories() {
        let d = Denylist::builtin();
        for sink in [
            "internal/util/types.check",
            "internal/validators.validateString",
            "internal/errors.NodeError",
            "internal/process/task_queues.nextTick",
        ] {
            assert!(d.matching(sink).is_some(), "{sink}");
        }
        for sink in ["op_fetch", "process_wrap.spawn", "fs.internalModuleStat", "eval", "config_binding.apply"] {
            assert!(d.matching(sink).is_none(), "{sink}");
        }
    }

    #[test]
    fn bad_pattern_is_an_error() {
        assert!(Denylist::new(&DenylistConfig {
            patterns: vec![DenyPattern {
                pattern: "(".into(),
                rationale: "x".into()
            }]
        })
        .is_err());
    }

    proptest! {
        #[test]
        fn adding_a_pattern_never_keeps_more(sinks in proptest::collection::vec("[a-c/._]{1,6}", 0..20), extra in "[a-c]{1,2}") {
            let cs: Vec<_> = sinks.iter().map(|s| test_candidate("p", "api", s)).collect();
            let base = deny(&[("^a", "r")]);
            let more = deny(&[("^a", "r"), (&extra, "r2")]);
            let (k1, s1) = apply_denylist(&cs, &base);
            let (k2, _) = apply_denylist(&cs, &more);
            prop_assert!(k2.len() <= k1.len());
            prop_assert!(k2.iter().all(|c| k1.contains(c)));
            prop_assert_eq!(k1.len() + s1.len(), cs.len());
        }
    }
}
