use crate::protocol::LogRecord;
use crate::runner::{RunOutcome, RunPlan};
use crate::stack::StackNormalizer;
use crate::taint::{EvalHit, RunId, SinkEvent, SinkHit, SourceAccess, TaintId};

/// Report-wide run identity: transcripts reuse run ids across fixtures.
pub(crate) fn run_id(plan: &RunPlan) -> RunId {
    RunId(format!("{}/{}", plan.fixture, plan.run_id))
}

#[derive(Debug, Default)]
pub struct RunEvents {
    pub sources: Vec<SourceAccess>,
    pub sinks: Vec<SinkEvent>,
    pub agent_errors: usize,
    pub warnings: Vec<String>,
}

/// Turns one run's agent records into taint events with normalized stacks.
/// Source accesses for a property other than the one the run polluted are
/// dropped with a warning.
pub fn extract_events(outcome: &RunOutcome, normalizer: &StackNormalizer) -> RunEvents {
    let id = run_id(&outcome.plan);
    let mut events = RunEvents::default();
    for record in &outcome.records {
        match record {
            LogRecord::SrcAccess(s) => {
                if outcome.plan.polluted_property.as_deref() != Some(s.prop.as_str()) {
                    events.warnings.push(format!(
                        "{id}: source access for `{}` in a run polluting {:?}",
                        s.prop, outcome.plan.polluted_property
                    ));
                    continue;
                }
                events.sources.push(SourceAccess {
                    run_id: id.clone(),
                    property: s.prop.clone(),
                    taint_id: TaintId(s.id),
                    pollution_type: s.pollution_type,
                    stack: normalizer.parse_stack(&s.stack),
                });
            }
            LogRecord::SinkHit(h) => events.sinks.push(
                SinkHit::new(id.clone(), &h.sink, h.arg, &h.path, &h.value, normalizer.parse_stack(&h.stack)).into(),
            ),
            LogRecord::EvalHit(h) => events
                .sinks
                .push(EvalHit::new(id.clone(), &h.value, normalizer.parse_stack(&h.stack)).into()),
            LogRecord::AgentErr(e) => {
                events.agent_errors += 1;
                events.warnings.push(format!("{id}: agent error: {}", e.msg));
            }
            LogRecord::UndefProp(_) => {}
        }
    }
    events
}
