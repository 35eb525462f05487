//! Deterministic rule-based policies that speak the action protocol. They
//! stand in for a trained model in end-to-end tests: the gold policy plays
//! a task's reference call sequence through the full runtime (searching
//! for each tool first in open-set mode), and the corrupted variant
//! injects one off-plan call to exercise path-metric degradation.
//!
//! A policy derives its position from the prompt alone (by scanning the
//! assistant segment for completed result blocks), so one policy value is
//! a pure function of the prompt and safely shared across concurrent
//! episodes.

use serde_json::Value;

use crate::backend::{
    BackendError, FinishReason, GenerationChunk, GenerationRequest, GenerationStream, Role,
    TextBackend,
};
use crate::protocol::{scan_all, EventKind};
use crate::toolpo::GoldCall;

use super::textworld::TextWorldTask;
use super::tooltask::SyntheticToolTask;

/// One planned call: what to emit, how to find its tool, and how to
/// recognize that the tool's documentation is already visible.
#[derive(Debug, Clone)]
struct PlannedCall {
    call: GoldCall,
    /// Query that ranks the tool first under the deterministic embedder.
    search_query: String,
    /// Substring proving the tool's definition is in the prompt.
    doc_marker: String,
}

/// A policy backend that works through a fixed call plan and then answers.
/// If a needed tool is not visible and searching is unavailable (or has
/// already been tried twice for this call), the policy gives up with a
/// wrong answer — the behavior that separates in-loop retrieval from
/// single upfront retrieval.
pub struct ScriptedPolicyBackend {
    plan: Vec<PlannedCall>,
    final_answer: String,
}

impl ScriptedPolicyBackend {
    /// Plays the task's gold chain.
    pub fn gold(task: &SyntheticToolTask) -> Self {
        let plan = task
            .gold_calls
            .iter()
            .map(|call| planned(task, call.clone()))
            .collect();
        ScriptedPolicyBackend { plan, final_answer: task.gold_answer.clone() }
    }

    /// Gold plan with one extra off-plan call injected after the first
    /// hop: the answer still completes, the path metric cannot stay 1.0.
    pub fn corrupted(task: &SyntheticToolTask) -> Self {
        let mut plan: Vec<PlannedCall> =
            task.gold_calls.iter().map(|call| planned(task, call.clone())).collect();
        let gold_names: Vec<&str> = task.gold_calls.iter().map(|c| c.name.as_str()).collect();
        let distractor = task
            .toolset
            .iter()
            .find(|d| !gold_names.contains(&d.name.as_str()))
            .expect("task has at least one distractor");
        let mut arguments = serde_json::Map::new();
        if let Some((param, _)) = distractor.parameters.properties.iter().next() {
            arguments.insert(param.clone(), Value::String("tok_000000000000".to_string()));
        }
        let wrong = PlannedCall {
            call: GoldCall { name: distractor.name.clone(), arguments },
            search_query: distractor.canonical_text(),
            doc_marker: format!("\"name\":\"{}\"", distractor.name),
        };
        plan.insert(1.min(plan.len()), wrong);
        ScriptedPolicyBackend { plan, final_answer: task.gold_answer.clone() }
    }

    /// Plays a text-world task's solver plan (labeled mode: the nine verbs
    /// are in the prompt).
    pub fn gold_text_world(task: &TextWorldTask) -> Self {
        let plan = task
            .gold_calls
            .iter()
            .map(|call| PlannedCall {
                call: call.clone(),
                search_query: format!("{} verb action", call.name),
                doc_marker: format!("\"name\":\"{}\"", call.name),
            })
            .collect();
        ScriptedPolicyBackend { plan, final_answer: "goal achieved".to_string() }
    }
}

fn planned(task: &SyntheticToolTask, call: GoldCall) -> PlannedCall {
    let doc = task
        .toolset
        .iter()
        .find(|d| d.name == call.name)
        .expect("gold call names a toolset entry");
    PlannedCall {
        search_query: doc.canonical_text(),
        doc_marker: format!("\"name\":\"{}\"", doc.name),
        call,
    }
}

impl TextBackend for ScriptedPolicyBackend {
    fn id(&self) -> &str {
        "scripted-policy"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationStream, BackendError> {
        let system = segment_text(request, Role::System);
        let assistant = segment_text(request, Role::Assistant);

        // position within the plan = completed call-result blocks
        let (events, _) = scan_all(&assistant);
        let calls_done =
            events.iter().filter(|e| e.kind == EventKind::ToolCallResult).count();
        let searches_done =
            events.iter().filter(|e| e.kind == EventKind::ToolSearchResult).count();

        let text = if calls_done >= self.plan.len() {
            format!(
                "All planned steps are complete. <final_answer>{}</final_answer>",
                self.final_answer
            )
        } else {
            let next = &self.plan[calls_done];
            let doc_visible =
                system.contains(&next.doc_marker) || assistant.contains(&next.doc_marker);
            let search_allowed = system.contains("Discover tools:");
            // searches spent on the current call so far
            let searches_for_current: usize =
                searches_done.saturating_sub(searches_consumed_by_calls(&events));
            if doc_visible {
                let body = serde_json::json!({
                    "name": next.call.name,
                    "arguments": Value::Object(next.call.arguments.clone()),
                });
                format!("Invoking the next service. <tool_call>{body}</tool_call>")
            } else if search_allowed && searches_for_current < 2 {
                format!(
                    "I need the {} service. <tool_search>{}</tool_search>",
                    next.call.name, next.search_query
                )
            } else {
                format!(
                    "The required service {} is not available to me. <final_answer>unable to locate the required service</final_answer>",
                    next.call.name
                )
            }
        };

        Ok(GenerationStream::from_chunks(vec![GenerationChunk {
            text,
            token_ids: None,
            logprobs: None,
            finish: Some(FinishReason::StopSequence),
        }]))
    }
}

/// Searches already consumed by completed calls: the count of search
/// results preceding the last call result in event order.
fn searches_consumed_by_calls(events: &[crate::protocol::ActionEvent]) -> usize {
    let mut searches_before_last_call = 0;
    let mut searches = 0;
    for event in events {
        match event.kind {
            EventKind::ToolSearchResult => searches += 1,
            EventKind::ToolCallResult => searches_before_last_call = searches,
            _ => {}
        }
    }
    searches_before_last_call
}

fn segment_text(request: &GenerationRequest, role: Role) -> String {
    request
        .prompt_segments
        .iter()
        .filter(|(r, _)| *r == role)
        .map(|(_, text)| text.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}
