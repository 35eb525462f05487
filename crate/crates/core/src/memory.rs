//! Structured memory folding: compress an interaction history into the
//! three-part memory (episodic, working, tool) and render it back as the
//! restart context.
//!
//! The aux model generates the three components in parallel, one request
//! per component, each constrained to its JSON schema. Invalid output is
//! retried with the violation list appended to the prompt; after the retry
//! budget a deterministic truncation summary takes over. A fold whose
//! rendered form would not be smaller than its source is rejected and
//! reported, and the episode continues unfolded.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{GenerationRequest, GenerationStream, Role, TextBackend};
use crate::exec::failure_keyword;
use crate::protocol::{parse_tool_call, EventKind};
use crate::tokens;
use crate::trajectory::Step;

/// Long-horizon log: key events, major decisions, overall progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodicMemory {
    pub task_description: String,
    pub key_events: Vec<KeyEvent>,
    pub current_progress: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyEvent {
    pub step: u64,
    pub description: String,
    pub outcome: String,
}

/// Immediate context: current sub-goal, obstacles, planned next steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkingMemory {
    pub immediate_goal: String,
    pub current_challenges: String,
    pub next_actions: Vec<NextAction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NextAction {
    #[serde(rename = "type")]
    pub action_type: NextActionType,
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NextActionType {
    ToolCall,
    Planning,
    Decision,
}

/// Per-tool experience accumulated over the folded history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolMemory {
    pub tools_used: Vec<ToolUsage>,
    pub derived_rules: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolUsage {
    pub tool_name: String,
    pub success_rate: f64,
    pub effective_parameters: Vec<String>,
    pub common_errors: Vec<String>,
    pub response_pattern: String,
    pub experience: String,
}

/// The full three-part snapshot produced by one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySnapshot {
    pub episodic: EpisodicMemory,
    pub working: WorkingMemory,
    pub tool: ToolMemory,
    pub folded_at_step: u64,
    pub source_token_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaViolation {
    pub path: String,
    pub reason: String,
}

impl std::fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("empty history: nothing to fold")]
    EmptyHistory,
    #[error("schema violations: {}", format_violations(.0))]
    Schema(Vec<SchemaViolation>),
    #[error("fold failed: deterministic fallback violated invariants: {}", format_violations(.0))]
    FoldFailed(Vec<SchemaViolation>),
}

fn format_violations(violations: &[SchemaViolation]) -> String {
    violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Outcome of a fold attempt. `Rejected` means the best available snapshot
/// would not have compressed the source; the episode continues unfolded.
#[derive(Debug, Clone, PartialEq)]
pub enum FoldOutcome {
    Folded(MemorySnapshot),
    Rejected { rendered_tokens: usize, source_tokens: usize },
}

/// Everything a fold consumes: the current context window's worth of
/// history. When the context itself began with a prior snapshot, that
/// snapshot rides along so tool experience carries forward.
pub struct FoldInput<'a> {
    pub question: &'a str,
    pub instruction: &'a str,
    pub prior: Option<&'a MemorySnapshot>,
    /// Steps since the last fold (or episode start).
    pub steps: &'a [Step],
    /// History text shown to the aux model.
    pub rendered_history: String,
    pub source_token_count: usize,
    pub folded_at_step: u64,
}

const FOLD_PROMPT: &str = include_str!("../prompts/fold_component.txt");
const RETRY_BUDGET: usize = 3;

const EPISODIC_SCHEMA: &str = r#"{"task_description": "<overall task and the goal being pursued>", "key_events": [{"step": <integer step number>, "description": "<what was done at this step and why>", "outcome": "<what resulted: observation, feedback, or state change>"}], "current_progress": "<what is complete and what remains>"}"#;
const WORKING_SCHEMA: &str = r#"{"immediate_goal": "<the sub-goal being worked on right now>", "current_challenges": "<main obstacles at this moment>", "next_actions": [{"type": "tool_call | planning | decision", "description": "<the concrete next step>"}]}"#;
const TOOL_SCHEMA: &str = r#"{"tools_used": [{"tool_name": "<string>", "success_rate": <float in [0,1]>, "effective_parameters": ["<param>"], "common_errors": ["<error>"], "response_pattern": "<typical output shape>", "experience": "<lessons from using this tool>"}], "derived_rules": ["<rule of thumb for future tool choices>"]}"#;

/// Compress a history into a snapshot via the aux backend, retrying schema
/// violations up to the retry budget and falling back to the deterministic
/// truncation summary. Fails only with `EmptyHistory` (precondition) or
/// `FoldFailed` (fallback produced an invalid snapshot — a programming
/// error, since the fallback is constructed to satisfy every invariant).
pub fn fold(input: &FoldInput, aux: &dyn TextBackend) -> Result<FoldOutcome, MemoryError> {
    if input.steps.is_empty() {
        return Err(MemoryError::EmptyHistory);
    }
    let known = known_tools(input);

    let mut episodic: Option<EpisodicMemory> = None;
    let mut working: Option<WorkingMemory> = None;
    let mut tool: Option<ToolMemory> = None;
    let mut violations: Vec<SchemaViolation> = Vec::new();

    for _attempt in 0..RETRY_BUDGET {
        let feedback = if violations.is_empty() {
            String::new()
        } else {
            format!(
                "- Your previous output was rejected; fix these violations: {}\n",
                format_violations(&violations)
            )
        };
        violations.clear();

        // the three component generations are independent; run them in parallel
        let mut raw_episodic = None;
        let mut raw_working = None;
        let mut raw_tool = None;
        std::thread::scope(|scope| {
            let handles = [
                episodic.is_none().then(|| {
                    scope.spawn(|| component_request(aux, "episodic", EPISODIC_SCHEMA, input, &feedback))
                }),
                working.is_none().then(|| {
                    scope.spawn(|| component_request(aux, "working", WORKING_SCHEMA, input, &feedback))
                }),
                tool.is_none().then(|| {
                    scope.spawn(|| component_request(aux, "tool", TOOL_SCHEMA, input, &feedback))
                }),
            ];
            let [h_e, h_w, h_t] = handles;
            raw_episodic = h_e.map(|h| h.join().expect("fold worker panicked"));
            raw_working = h_w.map(|h| h.join().expect("fold worker panicked"));
            raw_tool = h_t.map(|h| h.join().expect("fold worker panicked"));
        });

        if let Some(raw) = raw_episodic {
            match raw.and_then(|text| parse_component::<EpisodicMemory>("episodic", &text)) {
                Ok(part) => {
                    let v = check_episodic(&part);
                    if v.is_empty() {
                        episodic = Some(part);
                    } else {
                        violations.extend(v);
                    }
                }
                Err(v) => violations.push(v),
            }
        }
        if let Some(raw) = raw_working {
            match raw.and_then(|text| parse_component::<WorkingMemory>("working", &text)) {
                Ok(part) => {
                    let v = check_working(&part);
                    if v.is_empty() {
                        working = Some(part);
                    } else {
                        violations.extend(v);
                    }
                }
                Err(v) => violations.push(v),
            }
        }
        if let Some(raw) = raw_tool {
            match raw.and_then(|text| parse_component::<ToolMemory>("tool", &text)) {
                Ok(part) => {
                    let v = check_tool(&part, Some(&known));
                    if v.is_empty() {
                        tool = Some(part);
                    } else {
                        violations.extend(v);
                    }
                }
                Err(v) => violations.push(v),
            }
        }

        if let (Some(e), Some(w), Some(t)) = (&episodic, &working, &tool) {
            let snapshot = MemorySnapshot {
                episodic: e.clone(),
                working: w.clone(),
                tool: t.clone(),
                folded_at_step: input.folded_at_step,
                source_token_count: input.source_token_count as u64,
            };
            let rendered = tokens::count_tokens(&render_snapshot(&snapshot));
            if rendered < input.source_token_count {
                return Ok(FoldOutcome::Folded(snapshot));
            }
            // valid but not smaller: treat like an invalid attempt
            violations.push(SchemaViolation {
                path: "snapshot".to_string(),
                reason: format!(
                    "rendered size {rendered} tokens does not compress the {}-token source; be more concise",
                    input.source_token_count
                ),
            });
            episodic = None;
            working = None;
            tool = None;
        }
    }

    // retries exhausted: deterministic fallback
    let snapshot = fallback_fold(input);
    let mut all = check_episodic(&snapshot.episodic);
    all.extend(check_working(&snapshot.working));
    all.extend(check_tool(&snapshot.tool, Some(&known)));
    if !all.is_empty() {
        return Err(MemoryError::FoldFailed(all));
    }
    let rendered = tokens::count_tokens(&render_snapshot(&snapshot));
    if rendered >= input.source_token_count {
        return Ok(FoldOutcome::Rejected {
            rendered_tokens: rendered,
            source_tokens: input.source_token_count,
        });
    }
    Ok(FoldOutcome::Folded(snapshot))
}

fn component_request(
    aux: &dyn TextBackend,
    component: &str,
    schema: &str,
    input: &FoldInput,
    feedback: &str,
) -> Result<String, SchemaViolation> {
    let history = tokens::head_tail_truncate(&input.rendered_history, 8_192);
    let prompt = FOLD_PROMPT
        .replace("{component}", component)
        .replace("{schema}", schema)
        .replace("{violations}", feedback)
        .replace("{history}", &history);
    let request = GenerationRequest::new(vec![(Role::User, prompt)]);
    aux.generate(&request)
        .and_then(GenerationStream::collect_text)
        .map(|(text, _, _)| text)
        .map_err(|e| SchemaViolation {
            path: component.to_string(),
            reason: format!("aux generation failed: {e}"),
        })
}

fn parse_component<T: serde::de::DeserializeOwned>(
    component: &str,
    raw: &str,
) -> Result<T, SchemaViolation> {
    let stripped = strip_fences(raw);
    serde_json::from_str(stripped).map_err(|e| SchemaViolation {
        path: component.to_string(),
        reason: format!("not valid schema JSON: {e}"),
    })
}

/// Strip a single optional markdown fence wrapping the whole text.
fn strip_fences(raw: &str) -> &str {
    let trimmed = raw.trim();
    if let Some(rest) = trimmed.strip_prefix("```") {
        let rest = rest.strip_prefix("json").unwrap_or(rest);
        let rest = rest.trim_start_matches(['\r', '\n']);
        if let Some(inner) = rest.strip_suffix("```") {
            return inner.trim();
        }
    }
    trimmed
}

fn known_tools(input: &FoldInput) -> BTreeSet<String> {
    let mut known = BTreeSet::new();
    if let Some(prior) = input.prior {
        for usage in &prior.tool.tools_used {
            known.insert(usage.tool_name.clone());
        }
    }
    for step in input.steps {
        if step.action.kind == EventKind::ToolCall {
            if let Ok(call) = parse_tool_call(&step.action.payload) {
                known.insert(call.name);
            }
        }
    }
    known
}

// ---------------------------------------------------------------------------
// Invariant checks
// ---------------------------------------------------------------------------

fn check_episodic(m: &EpisodicMemory) -> Vec<SchemaViolation> {
    let mut v = Vec::new();
    let non_empty = |field: &str, value: &str, v: &mut Vec<SchemaViolation>| {
        if value.trim().is_empty() {
            v.push(SchemaViolation {
                path: format!("episodic.{field}"),
                reason: "must be non-empty".to_string(),
            });
        }
    };
    non_empty("task_description", &m.task_description, &mut v);
    non_empty("current_progress", &m.current_progress, &mut v);
    let mut last_step: Option<u64> = None;
    for (i, ev) in m.key_events.iter().enumerate() {
        if let Some(last) = last_step {
            if ev.step <= last {
                v.push(SchemaViolation {
                    path: format!("episodic.key_events[{i}].step"),
                    reason: format!("steps must be strictly increasing ({} then {})", last, ev.step),
                });
            }
        }
        last_step = Some(ev.step);
        non_empty(&format!("key_events[{i}].description"), &ev.description, &mut v);
        non_empty(&format!("key_events[{i}].outcome"), &ev.outcome, &mut v);
    }
    v
}

fn check_working(m: &WorkingMemory) -> Vec<SchemaViolation> {
    let mut v = Vec::new();
    if m.immediate_goal.trim().is_empty() {
        v.push(SchemaViolation {
            path: "working.immediate_goal".to_string(),
            reason: "must be non-empty".to_string(),
        });
    }
    if m.next_actions.is_empty() {
        v.push(SchemaViolation {
            path: "working.next_actions".to_string(),
            reason: "must be non-empty after a non-terminal fold".to_string(),
        });
    }
    for (i, action) in m.next_actions.iter().enumerate() {
        if action.description.trim().is_empty() {
            v.push(SchemaViolation {
                path: format!("working.next_actions[{i}].description"),
                reason: "must be non-empty".to_string(),
            });
        }
    }
    v
}

fn check_tool(m: &ToolMemory, known: Option<&BTreeSet<String>>) -> Vec<SchemaViolation> {
    let mut v = Vec::new();
    for (i, usage) in m.tools_used.iter().enumerate() {
        if !(0.0..=1.0).contains(&usage.success_rate) {
            v.push(SchemaViolation {
                path: format!("tool.tools_used[{i}].success_rate"),
                reason: format!("{} is outside [0, 1]", usage.success_rate),
            });
        }
        if let Some(known) = known {
            if !known.contains(&usage.tool_name) {
                v.push(SchemaViolation {
                    path: format!("tool.tools_used[{i}].tool_name"),
                    reason: format!("{:?} does not appear in the folded history", usage.tool_name),
                });
            }
        }
    }
    v
}

/// Validate a raw snapshot text: either a single JSON object with the five
/// snapshot fields, or the rendered prompt-block form produced by
/// [`render_snapshot`]. Markdown fencing around the whole text is
/// stripped. Returns every violation, for retry prompting.
pub fn validate_snapshot(raw: &str) -> Result<MemorySnapshot, MemoryError> {
    validate_snapshot_with_tools(raw, None)
}

/// As [`validate_snapshot`], additionally checking that tool-memory names
/// refer to tools in `known`.
pub fn validate_snapshot_with_tools(
    raw: &str,
    known: Option<&BTreeSet<String>>,
) -> Result<MemorySnapshot, MemoryError> {
    let stripped = strip_fences(raw);
    let snapshot = if stripped.trim_start().starts_with('{') {
        serde_json::from_str::<MemorySnapshot>(stripped).map_err(|e| {
            MemoryError::Schema(vec![SchemaViolation {
                path: "snapshot".to_string(),
                reason: format!("not valid snapshot JSON: {e}"),
            }])
        })?
    } else {
        parse_rendered(stripped)?
    };
    let mut violations = check_episodic(&snapshot.episodic);
    violations.extend(check_working(&snapshot.working));
    violations.extend(check_tool(&snapshot.tool, known));
    if violations.is_empty() {
        Ok(snapshot)
    } else {
        Err(MemoryError::Schema(violations))
    }
}

fn parse_rendered(text: &str) -> Result<MemorySnapshot, MemoryError> {
    let mut violations = Vec::new();
    let meta = |key: &str| -> Option<u64> {
        text.lines()
            .find_map(|l| l.trim().strip_prefix(&format!("{key}:")))
            .and_then(|v| v.trim().parse().ok())
    };
    let folded_at_step = meta("folded_at_step").unwrap_or(0);
    let source_token_count = meta("source_token_count").unwrap_or(0);

    fn section<T: serde::de::DeserializeOwned>(
        text: &str,
        heading: &str,
        violations: &mut Vec<SchemaViolation>,
    ) -> Option<T> {
        let at = match text.find(heading) {
            Some(at) => at + heading.len(),
            None => {
                violations.push(SchemaViolation {
                    path: heading.trim_start_matches(['#', ' ']).to_string(),
                    reason: "section heading missing".to_string(),
                });
                return None;
            }
        };
        let rest = &text[at..];
        let brace = match rest.find('{') {
            Some(b) => b,
            None => {
                violations.push(SchemaViolation {
                    path: heading.trim_start_matches(['#', ' ']).to_string(),
                    reason: "no JSON object after heading".to_string(),
                });
                return None;
            }
        };
        // parse exactly one JSON value; trailing prose is the next section
        let mut stream =
            serde_json::Deserializer::from_str(&rest[brace..]).into_iter::<T>();
        match stream.next() {
            Some(Ok(value)) => Some(value),
            Some(Err(e)) => {
                violations.push(SchemaViolation {
                    path: heading.trim_start_matches(['#', ' ']).to_string(),
                    reason: format!("invalid JSON: {e}"),
                });
                None
            }
            None => {
                violations.push(SchemaViolation {
                    path: heading.trim_start_matches(['#', ' ']).to_string(),
                    reason: "no JSON value after heading".to_string(),
                });
                None
            }
        }
    }

    let episodic: Option<EpisodicMemory> = section(text, "## Episodic Memory", &mut violations);
    let working: Option<WorkingMemory> = section(text, "## Working Memory", &mut violations);
    let tool: Option<ToolMemory> = section(text, "## Tool Memory", &mut violations);

    match (episodic, working, tool) {
        (Some(episodic), Some(working), Some(tool)) => Ok(MemorySnapshot {
            episodic,
            working,
            tool,
            folded_at_step,
            source_token_count,
        }),
        _ => Err(MemoryError::Schema(violations)),
    }
}

/// Render a snapshot as the prompt block that replaces raw history:
/// meta header, then the three schemas pretty-printed under fixed
/// headings in episodic → working → tool order.
pub fn render_snapshot(snapshot: &MemorySnapshot) -> String {
    format!(
        "# Folded Memory\nfolded_at_step: {}\nsource_token_count: {}\n\n## Episodic Memory\n{}\n\n## Working Memory\n{}\n\n## Tool Memory\n{}\n",
        snapshot.folded_at_step,
        snapshot.source_token_count,
        serde_json::to_string_pretty(&snapshot.episodic).expect("episodic serializes"),
        serde_json::to_string_pretty(&snapshot.working).expect("working serializes"),
        serde_json::to_string_pretty(&snapshot.tool).expect("tool serializes"),
    )
}

// ---------------------------------------------------------------------------
// Deterministic fallback
// ---------------------------------------------------------------------------

struct Tier {
    events: usize,
    excerpt: usize,
    tools: usize,
}

const TIERS: &[Tier] = &[
    Tier { events: 10, excerpt: 200, tools: 12 },
    Tier { events: 6, excerpt: 120, tools: 8 },
    Tier { events: 3, excerpt: 60, tools: 4 },
];

/// Deterministic truncation summary used when aux folding exhausts its
/// retries: the original question, the last 10 (action, observation
/// excerpt) pairs, working memory synthesized from the last action, and
/// tool memory aggregated from per-tool call outcomes. Shrinks through
/// smaller tiers if the rendered form would not compress the source.
pub fn fallback_fold(input: &FoldInput) -> MemorySnapshot {
    let target = compression_target(input.source_token_count);
    let mut best: Option<MemorySnapshot> = None;
    for tier in TIERS {
        let snapshot = fallback_tier(input, tier);
        let rendered = tokens::count_tokens(&render_snapshot(&snapshot));
        if rendered <= target {
            return snapshot;
        }
        best = Some(snapshot);
    }
    best.expect("at least one tier")
}

fn compression_target(source: usize) -> usize {
    // 40% of source, and always strictly under the source itself
    (source * 2 / 5).min(source.saturating_sub(1)).max(1)
}

fn excerpt(text: &str, limit: usize) -> String {
    if text.len() <= limit {
        return text.to_string();
    }
    let mut end = limit;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &text[..end])
}

fn fallback_tier(input: &FoldInput, tier: &Tier) -> MemorySnapshot {
    let actionable: Vec<(usize, &Step)> = input
        .steps
        .iter()
        .enumerate()
        .filter(|(_, s)| s.action.kind.is_action())
        .collect();

    let tail_start = actionable.len().saturating_sub(tier.events);
    let key_events: Vec<KeyEvent> = actionable[tail_start..]
        .iter()
        .map(|(i, step)| KeyEvent {
            step: (*i as u64) + 1,
            description: excerpt(&describe_action(step), tier.excerpt),
            outcome: match &step.observation {
                Some(obs) => excerpt(&obs.content, tier.excerpt),
                None => "(no observation)".to_string(),
            },
        })
        .collect();

    let episodic = EpisodicMemory {
        task_description: if input.question.trim().is_empty() {
            "(no question provided)".to_string()
        } else {
            input.question.to_string()
        },
        key_events,
        current_progress: format!(
            "{} steps taken so far ({} actions); history folded at step {}.",
            input.steps.len(),
            actionable.len(),
            input.folded_at_step
        ),
    };

    let last = input.steps.last().expect("fold requires non-empty history");
    let last_desc = excerpt(&describe_action(last), tier.excerpt);
    let challenge = input
        .steps
        .iter()
        .rev()
        .find_map(|s| {
            s.observation.as_ref().and_then(|o| {
                failure_keyword(&o.content)
                    .map(|kw| format!("last failure was {kw} on {}", excerpt(&describe_action(s), 80)))
            })
        })
        .unwrap_or_else(|| "no failures observed recently".to_string());
    let working = WorkingMemory {
        immediate_goal: format!("Continue the task after: {last_desc}"),
        current_challenges: challenge,
        next_actions: vec![NextAction {
            action_type: NextActionType::Planning,
            description: format!("Decide the next step following: {last_desc}"),
        }],
    };

    let tool = aggregate_tool_memory(input, tier);

    MemorySnapshot {
        episodic,
        working,
        tool,
        folded_at_step: input.folded_at_step,
        source_token_count: input.source_token_count as u64,
    }
}

fn describe_action(step: &Step) -> String {
    match step.action.kind {
        EventKind::ToolSearch => format!("tool_search: {}", step.action.payload.trim()),
        EventKind::ToolCall => match parse_tool_call(&step.action.payload) {
            Ok(call) => format!(
                "tool_call {} {}",
                call.name,
                crate::canonical::canonical_json(&serde_json::Value::Object(call.arguments))
            ),
            Err(_) => format!("tool_call (malformed): {}", step.action.payload.trim()),
        },
        EventKind::MemoryFold => "memory fold".to_string(),
        EventKind::Think => format!("thinking: {}", step.action.payload.trim()),
        other => format!("{other:?}"),
    }
}

#[derive(Default)]
struct ToolStats {
    total: usize,
    ok: usize,
    params_ok: BTreeSet<String>,
    errors: Vec<String>,
    sample_response: String,
}

fn aggregate_tool_memory(input: &FoldInput, tier: &Tier) -> ToolMemory {
    let mut stats: BTreeMap<String, ToolStats> = BTreeMap::new();
    for step in input.steps {
        if step.action.kind != EventKind::ToolCall {
            continue;
        }
        let Ok(call) = parse_tool_call(&step.action.payload) else {
            continue;
        };
        let entry = stats.entry(call.name.clone()).or_default();
        entry.total += 1;
        let content = step.observation.as_ref().map(|o| o.content.as_str()).unwrap_or("");
        match failure_keyword(content) {
            Some(kw) => {
                let line = excerpt(content.lines().next().unwrap_or(kw), 80);
                if !entry.errors.contains(&line) && entry.errors.len() < 3 {
                    entry.errors.push(line);
                }
            }
            None => {
                entry.ok += 1;
                for key in call.arguments.keys() {
                    if entry.params_ok.len() < 8 {
                        entry.params_ok.insert(key.clone());
                    }
                }
                if entry.sample_response.is_empty() && !content.is_empty() {
                    entry.sample_response = excerpt(content, 60);
                }
            }
        }
    }

    // most-called tools first, then name, capped per tier
    let mut ordered: Vec<(String, ToolStats)> = stats.into_iter().collect();
    ordered.sort_by(|a, b| b.1.total.cmp(&a.1.total).then_with(|| a.0.cmp(&b.0)));
    let truncated = ordered.len() > tier.tools;
    ordered.truncate(tier.tools);

    let mut derived_rules = Vec::new();
    let mut tools_used = Vec::new();
    for (name, s) in ordered {
        let rate = s.ok as f64 / s.total as f64;
        if s.ok > 0 && s.ok < s.total {
            derived_rules.push(format!(
                "{name} succeeds with parameters ({}); repeat those argument shapes.",
                s.params_ok.iter().cloned().collect::<Vec<_>>().join(", ")
            ));
        }
        tools_used.push(ToolUsage {
            tool_name: name,
            success_rate: rate,
            effective_parameters: s.params_ok.into_iter().collect(),
            common_errors: s.errors,
            response_pattern: if s.sample_response.is_empty() {
                "no successful response observed".to_string()
            } else {
                format!("e.g. {}", s.sample_response)
            },
            experience: format!("{} calls, {} succeeded", s.total, s.ok),
        });
    }
    // carry forward prior-fold experience for tools not re-observed
    if let Some(prior) = input.prior {
        let seen: BTreeSet<String> =
            tools_used.iter().map(|t| t.tool_name.clone()).collect();
        for usage in &prior.tool.tools_used {
            if !seen.contains(&usage.tool_name) && tools_used.len() < tier.tools {
                tools_used.push(usage.clone());
            }
        }
    }
    if truncated {
        derived_rules.push("Older low-traffic tool experience was truncated at this fold.".to_string());
    }
    ToolMemory { tools_used, derived_rules }
}

/// Build the post-fold context: system instruction, the question and
/// instruction, the three memory sections, and the continue sentence.
pub fn post_fold_context(
    system: &str,
    question: &str,
    instruction: &str,
    snapshot: &MemorySnapshot,
) -> Vec<(Role, String)> {
    vec![
        (Role::System, system.to_string()),
        (Role::User, format!("Question: {question}\n\nInstruction: {instruction}")),
        (
            Role::User,
            format!("{}\nContinue the task from this state.", render_snapshot(snapshot)),
        ),
    ]
}
