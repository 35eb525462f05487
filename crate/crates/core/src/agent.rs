//! The episode loop: assemble prompts, stream generation through the
//! protocol scanner, dispatch actions, inject observations, fold memory,
//! enforce budgets, and record the trajectory.
//!
//! One episode is one logical task. The loop generates until an action tag
//! or stop, executes the first actionable event of each generation
//! (discarding any text after it, which preserves the alternating
//! act/observe contract), and injects the rendered observation before the
//! next generation. Budgets are enforced before each generation — token
//! budget first, then action budget — and a breach grants one final
//! "answer now" generation before termination.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{
    FinishReason, GenerationParams, GenerationRequest, GenerationStream, Role, TextBackend,
};
use crate::exec;
use crate::memory::{self, FoldInput, FoldOutcome, MemorySnapshot};
use crate::protocol::{
    parse_tool_call, render_observation, ActionEvent, EventKind, Observation, ObservationKind,
    ProtocolError,
};
use crate::registry::{Embedder, ToolRegistry};
use crate::tokens;
use crate::trajectory::{FoldRecord, GeneratedToken, Step, Termination, Trajectory};

/// Gold tools in the prompt vs. discovery via retrieval over the full
/// toolset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ToolMode {
    Labeled,
    #[default]
    OpenSet,
}

/// Per-episode limits and switches. Defaults follow the reference setup:
/// 50 actions, 81,920 generated tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub max_actions: usize,
    pub max_total_tokens: usize,
    pub retrieval_k: usize,
    pub fold_enabled: bool,
    pub tool_mode: ToolMode,
    pub sampling: GenerationParams,
    pub tool_timeout_ms: u64,
    /// Tool-call results longer than this many tokens are summarized.
    pub call_result_budget: usize,
    /// Retrieved-doc blocks longer than this many tokens are summarized.
    pub search_result_budget: usize,
    /// Comparison-harness mode: one upfront retrieval is injected into the
    /// prompt and in-loop tool search is disabled.
    pub upfront_retrieval: bool,
    /// How many tools the upfront retrieval injects.
    pub upfront_k: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_actions: 50,
            max_total_tokens: 81_920,
            retrieval_k: 5,
            fold_enabled: true,
            tool_mode: ToolMode::OpenSet,
            sampling: GenerationParams::default(),
            tool_timeout_ms: exec::DEFAULT_TOOL_TIMEOUT_MS,
            call_result_budget: 2_048,
            search_result_budget: 4_096,
            upfront_retrieval: false,
            upfront_k: 8,
        }
    }
}

/// The loop's view of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub instruction: String,
    /// Gold tool docs rendered into the system prompt in labeled mode.
    #[serde(default)]
    pub labeled_tools: Vec<crate::registry::ToolDoc>,
}

/// Main and auxiliary generation backends. The aux backend summarizes,
/// simulates tools, and folds memory.
pub struct Backends {
    pub main: Arc<dyn TextBackend>,
    pub aux: Arc<dyn TextBackend>,
}

impl Backends {
    /// One backend playing both roles (the common scripted-test setup).
    pub fn single(backend: Arc<dyn TextBackend>) -> Self {
        Backends { main: Arc::clone(&backend), aux: backend }
    }
}

/// Hook for inspecting the episode as it runs; used by tests that assert
/// on prompt contents.
pub trait EpisodeObserver {
    fn on_generation(&mut self, _prompt: &[(Role, String)]) {}
    fn on_note(&mut self, _note: &str) {}
}

struct NoopObserver;

impl EpisodeObserver for NoopObserver {}

const SYSTEM_PROMPT: &str = include_str!("../prompts/system.txt");
const SALVAGE_ALLOWANCE: usize = 512;

struct Context {
    system: String,
    user_blocks: Vec<String>,
    assistant: String,
}

impl Context {
    fn segments(&self) -> Vec<(Role, String)> {
        let mut segments = vec![(Role::System, self.system.clone())];
        for block in &self.user_blocks {
            segments.push((Role::User, block.clone()));
        }
        segments.push((Role::Assistant, self.assistant.clone()));
        segments
    }

    fn folded_size_tokens(&self) -> usize {
        let text: String =
            self.user_blocks.iter().map(String::as_str).collect::<Vec<_>>().join("\n")
                + "\n"
                + &self.assistant;
        tokens::count_tokens(&text)
    }
}

fn build_system_prompt(task: &TaskSpec, config: &EpisodeConfig, upfront_docs: &[String]) -> String {
    let search_section = if config.tool_mode == ToolMode::OpenSet && !config.upfront_retrieval {
        "- Discover tools: emit <tool_search>natural language query</tool_search>. The top matching tool definitions arrive as <tool_search_result>...</tool_search_result>.\n"
    } else {
        ""
    };
    let fold_section = if config.fold_enabled {
        "- Fold memory: when the history grows long or an exploration path failed, emit the bare token <fold_thought>. The runtime compresses prior interactions into structured memory and restarts your context from it."
    } else {
        ""
    };
    let tools_section = if config.upfront_retrieval {
        format!(
            "Tool search is not available. The only callable tools are:\n{}",
            upfront_docs.join("\n")
        )
    } else {
        match config.tool_mode {
            ToolMode::Labeled => format!(
                "Available tools:\n{}",
                task.labeled_tools
                    .iter()
                    .map(|d| d.function_definition().to_string())
                    .collect::<Vec<_>>()
                    .join("\n")
            ),
            ToolMode::OpenSet => {
                "No tools are pre-loaded; search for the tools you need.".to_string()
            }
        }
    };
    SYSTEM_PROMPT
        .replace("{search_section}", search_section)
        .replace("{fold_section}", fold_section)
        .replace("{tools_section}", &tools_section)
}

/// Render retrieved tools as one function definition per line.
fn render_retrieval(registry: &ToolRegistry, ranked: &[(String, f64)]) -> String {
    ranked
        .iter()
        .filter_map(|(name, _)| registry.get(name))
        .map(|doc| doc.function_definition().to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Run one episode to completion.
pub fn run_episode(
    task: &TaskSpec,
    registry: &ToolRegistry,
    embedder: &dyn Embedder,
    backends: &Backends,
    config: &EpisodeConfig,
) -> Trajectory {
    run_episode_observed(task, registry, embedder, backends, config, &mut NoopObserver)
}

/// As [`run_episode`], reporting each generation's prompt to `observer`.
pub fn run_episode_observed(
    task: &TaskSpec,
    registry: &ToolRegistry,
    embedder: &dyn Embedder,
    backends: &Backends,
    config: &EpisodeConfig,
    observer: &mut dyn EpisodeObserver,
) -> Trajectory {
    let mut trajectory = Trajectory::new(&task.id, &task.question, &task.instruction);

    let upfront_docs: Vec<String> = if config.upfront_retrieval {
        match registry.search(&task.question, config.upfront_k, embedder) {
            Ok(result) => result
                .ranked
                .iter()
                .filter_map(|(name, _)| registry.get(name))
                .map(|d| d.function_definition().to_string())
                .collect(),
            Err(_) => Vec::new(),
        }
    } else {
        Vec::new()
    };

    let system = build_system_prompt(task, config, &upfront_docs);
    let mut ctx = Context {
        system,
        user_blocks: vec![format!(
            "Question: {}\n\nInstruction: {}",
            task.question, task.instruction
        )],
        assistant: String::new(),
    };

    let mut stop_sequences = crate::protocol::stop_sequences();
    stop_sequences.extend(config.sampling.stop_sequences.iter().cloned());

    // index of the first step belonging to the current (post-fold) context
    let mut ctx_start_step = 0usize;
    let mut prior_snapshot: Option<MemorySnapshot> = None;
    // set when the budget breached and the final answer-now generation was
    // granted; holds the termination to apply if it does not answer
    let mut salvage: Option<Termination> = None;
    let mut stream_base_bytes = 0usize;

    loop {
        // budgets: token budget first, then action budget
        if salvage.is_none() {
            let breach = if trajectory.generated_tokens.len() >= config.max_total_tokens {
                Some(Termination::TokenLimit)
            } else if trajectory.action_count() >= config.max_actions {
                Some(Termination::ActionLimit)
            } else {
                None
            };
            if let Some(term) = breach {
                salvage = Some(term);
                ctx.user_blocks.push(
                    "Budget exhausted: provide your final answer now inside <final_answer> tags."
                        .to_string(),
                );
            }
        }

        let mut params = config.sampling.clone();
        params.stop_sequences = stop_sequences.clone();
        params.max_tokens = if salvage.is_some() {
            SALVAGE_ALLOWANCE
        } else {
            params
                .max_tokens
                .min(config.max_total_tokens - trajectory.generated_tokens.len())
                .max(1)
        };
        let request = GenerationRequest {
            prompt_segments: ctx.segments(),
            params,
            want_logprobs: true,
        };
        observer.on_generation(&request.prompt_segments);

        let outcome = backends.main.generate(&request).and_then(GenerationStream::collect_text);
        let (raw_text, logprobs, finish) = match outcome {
            Ok(parts) => parts,
            Err(e) => {
                observer.on_note(&format!("main backend failed: {e}"));
                trajectory.termination = Termination::BackendError;
                return trajectory;
            }
        };

        let (text, events, errors) = scan_generation(raw_text.clone(), finish, &stop_sequences);

        // first actionable event decides the retained region; everything
        // after it in this generation is discarded
        let first_actionable = events.iter().find(|e| e.kind.is_actionable()).cloned();
        let cut = match (&first_actionable, errors.first()) {
            (Some(ev), _) => ev.span.end,
            (None, Some(ProtocolError::UnclosedTag { span, .. })) => span.start,
            (None, None) => text.len(),
        };
        let retained = &text[..cut];
        let kept_events: Vec<ActionEvent> =
            events.into_iter().filter(|e| e.span.end <= cut).collect();

        // record retained tokens and map events to steps with token spans;
        // logprobs align with the raw (pre-completion) tokenization
        let token_base = trajectory.generated_tokens.len();
        let piece_spans =
            append_tokens(&mut trajectory, retained, logprobs.as_deref(), &raw_text);
        for event in &kept_events {
            let token_span = map_token_span(&piece_spans, event.span.start, event.span.end);
            let mut action = event.clone();
            action.span.start += stream_base_bytes;
            action.span.end += stream_base_bytes;
            action.ordinal = trajectory.steps.len() + 1;
            trajectory.steps.push(Step {
                action,
                observation: None,
                token_span: (token_base + token_span.0, token_base + token_span.1),
            });
        }
        stream_base_bytes += retained.len();
        ctx.assistant.push_str(retained);

        let Some(event) = first_actionable else {
            // nothing actionable: the model stopped without an answer
            match salvage.take() {
                Some(term) => {
                    trajectory.termination = term;
                    return trajectory;
                }
                None => {
                    // classify the stall: exhausted tokens or just stopped
                    salvage = if trajectory.generated_tokens.len() >= config.max_total_tokens {
                        Some(Termination::TokenLimit)
                    } else {
                        Some(Termination::ActionLimit)
                    };
                    ctx.user_blocks.push(
                        "No action detected. Provide your final answer now inside <final_answer> tags."
                            .to_string(),
                    );
                    continue;
                }
            }
        };

        if event.kind == EventKind::FinalAnswer {
            trajectory.final_answer = Some(event.payload.trim().to_string());
            trajectory.termination = Termination::Answered;
            return trajectory;
        }

        if let Some(term) = salvage {
            // the answer-now generation spent its grace on another action
            trajectory.termination = term;
            return trajectory;
        }

        match event.kind {
            EventKind::ToolSearch => {
                let content = execute_search(&event.payload, registry, embedder, backends, config);
                let obs = Observation { kind: ObservationKind::ToolSearchResult, content };
                attach_observation(&mut trajectory, &obs);
                inject(&mut ctx, &obs);
            }
            EventKind::ToolCall => {
                let content = match parse_tool_call(&event.payload) {
                    Err(malformed) => format!("validation_error: {malformed}"),
                    Ok(call) => {
                        let result =
                            exec::dispatch(registry, &call, &backends.aux, config.tool_timeout_ms);
                        let content = result.observation_content();
                        if tokens::count_tokens(&content) > config.call_result_budget {
                            backends.aux.summarize(&content, config.call_result_budget)
                        } else {
                            content
                        }
                    }
                };
                let obs = Observation { kind: ObservationKind::ToolCallResult, content };
                attach_observation(&mut trajectory, &obs);
                inject(&mut ctx, &obs);
            }
            EventKind::MemoryFold => {
                if config.fold_enabled {
                    handle_fold(
                        task,
                        &mut trajectory,
                        &mut ctx,
                        &mut ctx_start_step,
                        &mut prior_snapshot,
                        backends,
                        observer,
                    );
                } else {
                    observer.on_note("fold requested but folding is disabled; ignored");
                }
            }
            _ => unreachable!("non-actionable kinds are filtered above"),
        }
    }
}

/// Scan one generation's text. When a remote backend stops at a close-tag
/// stop sequence without echoing it, the tag is completed before scanning
/// (scripted backends include the tag, so this only fires for remote
/// truncation). Length-truncated tags stay unclosed and are discarded.
/// Returns the possibly-completed text alongside its events.
fn scan_generation(
    text: String,
    finish: Option<FinishReason>,
    stops: &[String],
) -> (String, Vec<ActionEvent>, Vec<ProtocolError>) {
    let (events, errors) = crate::protocol::scan_all(&text);
    if finish == Some(FinishReason::Length) {
        return (text, events, errors);
    }
    if let Some(ProtocolError::UnclosedTag { kind, .. }) = errors.first() {
        let close = match kind {
            EventKind::ToolSearch => "</tool_search>",
            EventKind::ToolCall => "</tool_call>",
            EventKind::FinalAnswer => "</final_answer>",
            _ => return (text, events, errors),
        };
        if stops.iter().any(|s| s == close) {
            let completed = format!("{text}{close}");
            let (events, errors) = crate::protocol::scan_all(&completed);
            return (completed, events, errors);
        }
    }
    (text, events, errors)
}

fn execute_search(
    payload: &str,
    registry: &ToolRegistry,
    embedder: &dyn Embedder,
    backends: &Backends,
    config: &EpisodeConfig,
) -> String {
    if config.upfront_retrieval {
        return "tool_search failed: retrieval is disabled; only the tools listed in the instructions are available".to_string();
    }
    let query = payload.trim();
    if query.is_empty() {
        return "tool_search failed: empty query".to_string();
    }
    match registry.search(query, config.retrieval_k, embedder) {
        Ok(result) => {
            let block = render_retrieval(registry, &result.ranked);
            if tokens::count_tokens(&block) > config.search_result_budget {
                backends.aux.summarize(&block, config.search_result_budget)
            } else {
                block
            }
        }
        Err(e) => format!("tool_search failed: {e}"),
    }
}

fn attach_observation(trajectory: &mut Trajectory, obs: &Observation) {
    let step = trajectory.steps.last_mut().expect("action step was just recorded");
    step.observation = Some(obs.clone());
}

fn inject(ctx: &mut Context, obs: &Observation) {
    ctx.assistant.push('\n');
    ctx.assistant.push_str(&render_observation(obs));
    ctx.assistant.push('\n');
}

#[allow(clippy::too_many_arguments)]
fn handle_fold(
    task: &TaskSpec,
    trajectory: &mut Trajectory,
    ctx: &mut Context,
    ctx_start_step: &mut usize,
    prior_snapshot: &mut Option<MemorySnapshot>,
    backends: &Backends,
    observer: &mut dyn EpisodeObserver,
) {
    let fold_step_index = trajectory.steps.len() - 1;
    let steps = &trajectory.steps[*ctx_start_step..fold_step_index];
    let rendered_history: String = ctx.user_blocks.join("\n") + "\n" + &ctx.assistant;
    let input = FoldInput {
        question: &task.question,
        instruction: &task.instruction,
        prior: prior_snapshot.as_ref(),
        steps,
        source_token_count: ctx.folded_size_tokens(),
        rendered_history,
        folded_at_step: (fold_step_index + 1) as u64,
    };
    match memory::fold(&input, backends.aux.as_ref()) {
        Ok(FoldOutcome::Folded(snapshot)) => {
            let context = memory::post_fold_context(
                &ctx.system,
                &task.question,
                &task.instruction,
                &snapshot,
            );
            ctx.user_blocks = context
                .into_iter()
                .filter(|(role, _)| *role == Role::User)
                .map(|(_, text)| text)
                .collect();
            ctx.assistant.clear();
            *ctx_start_step = trajectory.steps.len();
            trajectory.folds.push(FoldRecord { step_index: fold_step_index, snapshot: snapshot.clone() });
            *prior_snapshot = Some(snapshot);
        }
        Ok(FoldOutcome::Rejected { rendered_tokens, source_tokens }) => {
            observer.on_note(&format!(
                "fold rejected: rendered {rendered_tokens} tokens would not compress {source_tokens}-token source"
            ));
        }
        Err(e) => {
            observer.on_note(&format!("fold skipped: {e}"));
        }
    }
}

/// Record the retained text's pieces (with logprobs where the backend
/// supplied aligned ones) and return each piece's byte span.
fn append_tokens(
    trajectory: &mut Trajectory,
    retained: &str,
    logprobs: Option<&[f64]>,
    full_text: &str,
) -> Vec<(usize, usize)> {
    let retained_pieces = tokens::tokenize_pieces(retained);
    let full_pieces = tokens::tokenize_pieces(full_text);
    let mut spans = Vec::with_capacity(retained_pieces.len());
    let mut offset = 0;
    for (i, piece) in retained_pieces.iter().enumerate() {
        let lp = match logprobs {
            Some(lps) if full_pieces.get(i) == Some(piece) => lps.get(i).copied(),
            _ => None,
        };
        trajectory
            .generated_tokens
            .push(GeneratedToken { piece: piece.to_string(), logprob: lp });
        spans.push((offset, offset + piece.len()));
        offset += piece.len();
    }
    spans
}

/// Map a byte span to the token-index range of the pieces it owns. A piece
/// belongs to the event containing its last byte, so events that tile the
/// text map to disjoint, ordered token spans.
fn map_token_span(piece_spans: &[(usize, usize)], start: usize, end: usize) -> (usize, usize) {
    let first = piece_spans.partition_point(|&(_, pe)| pe - 1 < start);
    let after = piece_spans.partition_point(|&(_, pe)| pe - 1 < end);
    (first, after)
}
