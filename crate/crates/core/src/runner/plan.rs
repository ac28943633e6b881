use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{Mode, RunPlan};
use crate::taint::PollutionType;

/// Property polluted (enumerably) by for-in probe runs.
pub const FORIN_SENTINEL: &str = "__ghunter_forin__";

fn short_hash(s: &str) -> String {
    let digest = Sha256::digest(s.as_bytes());
    digest[..4].iter().map(|b| format!("{b:02x}")).collect()
}

/// Filesystem-safe rendering of `s`. Lossy renderings get a hash suffix so
/// distinct inputs never share a slug.
pub fn slug(s: &str) -> String {
    let clean: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    if clean == s && !s.is_empty() {
        clean
    } else {
        format!("{clean}-{}", short_hash(s))
    }
}

pub fn run_id_for(mode: Mode, property: Option<&str>, pollution_type: Option<PollutionType>) -> String {
    match (property, pollution_type) {
        (Some(p), Some(t)) => format!("{mode}-{t}-{}", slug(p)),
        (Some(p), None) => format!("{mode}-{}", slug(p)),
        _ => mode.to_string(),
    }
}

/// Transcript group names for a test list: the file stem, disambiguated
/// with a path hash when two tests share a stem.
pub fn fixture_names(tests: &[PathBuf]) -> BTreeMap<PathBuf, String> {
    let stem = |p: &Path| slug(&p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in tests {
        *counts.entry(stem(t)).or_default() += 1;
    }
    tests
        .iter()
        .map(|t| {
            let s = stem(t);
            let name = if counts[&s] > 1 {
                format!("{s}-{}", short_hash(&t.to_string_lossy()))
            } else {
                s
            };
            (t.clone(), name)
        })
        .collect()
}

/// One plan per (property, type), then the for-in probe when enabled.
pub fn plan_pollution(
    mode: Mode,
    test: &Path,
    fixture: &str,
    undef_props: &BTreeSet<String>,
    types: &BTreeSet<PollutionType>,
    forin_probe: bool,
    timeout_secs: f64,
) -> Vec<RunPlan> {
    let plan = |prop: &str, ty: PollutionType| RunPlan {
        run_id: run_id_for(mode, Some(prop), Some(ty)),
        fixture: fixture.to_string(),
        test: test.to_path_buf(),
        mode,
        polluted_property: Some(prop.to_string()),
        pollution_type: Some(ty),
        timeout_secs,
    };
    let mut plans: Vec<RunPlan> = undef_props
        .iter()
        .filter(|p| p.as_str() != FORIN_SENTINEL)
        .flat_map(|prop| {
            types
                .iter()
                .filter(|t| **t != PollutionType::ForInProbe)
                .map(move |ty| plan(prop, *ty))
        })
        .collect();
    if forin_probe {
        plans.push(plan(FORIN_SENTINEL, PollutionType::ForInProbe));
    }
    plans
}

/// Hunt plans for one test from its collected undefined properties.
pub fn plan_stage2(
    test: &Path,
    fixture: &str,
    undef_props: &BTreeSet<String>,
    types: &BTreeSet<PollutionType>,
    forin_probe: bool,
    timeout_secs: f64,
) -> Vec<RunPlan> {
    plan_pollution(Mode::Hunt, test, fixture, undef_props, types, forin_probe, timeout_secs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn both() -> BTreeSet<PollutionType> {
        [PollutionType::String, PollutionType::Object].into_iter().collect()
    }

    fn props(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn two_props_two_types_probe() {
        let plans = plan_stage2(Path::new("t.js"), "t", &props(&["signal", "method"]), &both(), true, 20.0);
        assert_eq!(plans.len(), 2 * 2 + 1);
        let ids: Vec<_> = plans.iter().map(|p| p.run_id.as_str()).collect();
        assert_eq!(
            ids,
            vec![
                "hunt-string-method",
                "hunt-object-method",
                "hunt-string-signal",
                "hunt-object-signal",
                "hunt-forin-__ghunter_forin__"
            ]
        );
        assert!(plans.iter().all(|p| p.mode == Mode::Hunt && p.polluted_property.is_some()));
    }

    #[test]
    fn ninety_five_props() {
        let names: BTreeSet<String> = (0..95).map(|i| format!("p{i}")).collect();
        assert_eq!(plan_stage2(Path::new("t.js"), "t", &names, &both(), true, 20.0).len(), 191);
    }

    #[test]
    fn empty_props() {
        assert!(plan_stage2(Path::new("t.js"), "t", &BTreeSet::new(), &both(), false, 20.0).is_empty());
        assert_eq!(plan_stage2(Path::new("t.js"), "t", &BTreeSet::new(), &both(), true, 20.0).len(), 1);
    }

    #[test]
    fn slug_is_injective_on_lossy_names() {
        assert_eq!(slug("method"), "method");
        assert_ne!(slug("a.b"), slug("a/b"));
        assert!(slug("a.b").starts_with("a_b-"));
        assert_ne!(slug(""), "");
    }

    #[test]
    fn duplicate_stems_are_disambiguated() {
        let tests = vec![PathBuf::from("a/x_test.js"), PathBuf::from("b/x_test.js"), PathBuf::from("y_test.js")];
        let names = fixture_names(&tests);
        assert_ne!(names[&tests[0]], names[&tests[1]]);
        assert_eq!(names[&tests[2]], "y_test");
    }
}
