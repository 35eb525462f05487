//! Uniform generation interface over a remote chat-completion endpoint and
//! a deterministic scripted replayer, plus the auxiliary roles layered on
//! generation: tool simulation, and summarization of oversized tool output.

mod http;
mod scripted;

pub use http::{HttpBackend, HttpBackendConfig};
pub use scripted::{Fixture, FixtureFile, FixtureMatch, ScriptedBackend};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::ToolCallRequest;
use crate::registry::ToolDoc;
use crate::tokens;

/// Chat role of a prompt segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// Sampling parameters. Defaults follow the reference generation setup:
/// 81,920 max tokens, temperature 0.7, top_p 0.8, top_k 20, repetition
/// penalty 1.05.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub max_tokens: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub repetition_penalty: f64,
    pub stop_sequences: Vec<String>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            max_tokens: 81_920,
            temperature: 0.7,
            top_p: 0.8,
            top_k: 20,
            repetition_penalty: 1.05,
            stop_sequences: Vec::new(),
        }
    }
}

/// A generation request: ordered prompt segments plus sampling parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt_segments: Vec<(Role, String)>,
    pub params: GenerationParams,
    #[serde(default)]
    pub want_logprobs: bool,
}

impl GenerationRequest {
    pub fn new(prompt_segments: Vec<(Role, String)>) -> Self {
        GenerationRequest { prompt_segments, params: GenerationParams::default(), want_logprobs: false }
    }

    /// Canonical flattened prompt text used for fixture matching and
    /// token estimation.
    pub fn prompt_text(&self) -> String {
        let mut out = String::new();
        for (role, text) in &self.prompt_segments {
            out.push_str(role.as_str());
            out.push_str(": ");
            out.push_str(text);
            out.push('\n');
        }
        out
    }
}

/// Why a stream ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    StopSequence,
    Length,
}

/// One streamed piece of a completion. When `logprobs` is present it has
/// the same length as `token_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationChunk {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_ids: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish: Option<FinishReason>,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("context overflow: needs {tokens_needed} tokens, window is {limit}")]
    ContextOverflow { tokens_needed: usize, limit: usize },
    #[error("fixture file error: {0}")]
    Fixture(String),
}

/// Stream of generation chunks; concatenating chunk texts yields the full
/// completion.
pub struct GenerationStream(Box<dyn Iterator<Item = Result<GenerationChunk, BackendError>> + Send>);

impl std::fmt::Debug for GenerationStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("GenerationStream")
    }
}

impl GenerationStream {
    pub fn from_chunks(chunks: Vec<GenerationChunk>) -> Self {
        GenerationStream(Box::new(chunks.into_iter().map(Ok)))
    }

    pub fn from_iter<I>(iter: I) -> Self
    where
        I: Iterator<Item = Result<GenerationChunk, BackendError>> + Send + 'static,
    {
        GenerationStream(Box::new(iter))
    }

    /// Drain the stream into (full text, per-token logprobs if complete,
    /// finish reason).
    pub fn collect_text(self) -> Result<(String, Option<Vec<f64>>, Option<FinishReason>), BackendError> {
        let mut text = String::new();
        let mut logprobs: Option<Vec<f64>> = Some(Vec::new());
        let mut finish = None;
        for chunk in self {
            let chunk = chunk?;
            text.push_str(&chunk.text);
            match (&mut logprobs, chunk.logprobs) {
                (Some(acc), Some(lp)) => acc.extend(lp),
                (acc, None) if !chunk.text.is_empty() => *acc = None,
                _ => {}
            }
            if chunk.finish.is_some() {
                finish = chunk.finish;
            }
        }
        Ok((text, logprobs.filter(|l| !l.is_empty()), finish))
    }
}

impl Iterator for GenerationStream {
    type Item = Result<GenerationChunk, BackendError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.0.next()
    }
}

const SIMULATE_TOOL_PROMPT: &str = include_str!("../../prompts/simulate_tool.txt");
const SUMMARIZE_PROMPT: &str = include_str!("../../prompts/summarize.txt");

/// Render the tool-simulator prompt for a call against a tool doc.
pub fn simulator_prompt(doc: &ToolDoc, call: &ToolCallRequest) -> String {
    let persona = match &doc.endpoint_config {
        Some(crate::registry::EndpointConfig::Simulated(cfg)) if !cfg.persona.is_empty() => {
            format!("\nPersona: {}\n", cfg.persona)
        }
        _ => String::new(),
    };
    SIMULATE_TOOL_PROMPT
        .replace("{name}", &doc.name)
        .replace("{doc}", &serde_json::to_string_pretty(&doc.function_definition()).unwrap_or_default())
        .replace(
            "{arguments}",
            &serde_json::to_string_pretty(&serde_json::Value::Object(call.arguments.clone()))
                .unwrap_or_default(),
        )
        .replace("{persona}", &persona)
}

/// Text generation backend. Aux roles (simulation, summarization) default
/// to prompting the same backend; deterministic backends override them.
pub trait TextBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Stream a completion. Generation stops at (and includes) the first
    /// stop sequence hit.
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationStream, BackendError>;

    /// Answer a tool call the way the real API would.
    fn simulate_tool(
        &self,
        doc: &ToolDoc,
        call: &ToolCallRequest,
    ) -> Result<String, BackendError> {
        let request = GenerationRequest::new(vec![(Role::User, simulator_prompt(doc, call))]);
        let (text, _, _) = self.generate(&request)?.collect_text()?;
        Ok(text.trim().to_string())
    }

    /// Condense `text` to at most `budget_tokens` pieces. Never fails: the
    /// deterministic head-tail truncation backs any generation error, and
    /// overlong model output is truncated to the budget.
    fn summarize(&self, text: &str, budget_tokens: usize) -> String {
        let prompt = SUMMARIZE_PROMPT
            .replace("{budget}", &budget_tokens.to_string())
            .replace("{text}", text);
        let request = GenerationRequest::new(vec![(Role::User, prompt)]);
        match self.generate(&request).and_then(GenerationStream::collect_text) {
            Ok((out, _, _)) if !out.trim().is_empty() => {
                tokens::head_tail_truncate(out.trim(), budget_tokens)
            }
            _ => tokens::head_tail_truncate(text, budget_tokens),
        }
    }
}

/// Truncate `text` at the first occurrence of any stop sequence,
/// inclusive: the output ends with the matched sequence. Returns the
/// truncated text and whether a stop hit.
pub fn apply_stop_sequences(text: &str, stops: &[String]) -> (String, bool) {
    let mut cut: Option<usize> = None;
    for stop in stops {
        if stop.is_empty() {
            continue;
        }
        if let Some(pos) = text.find(stop.as_str()) {
            let end = pos + stop.len();
            cut = Some(cut.map_or(end, |c| c.min(end)));
        }
    }
    match cut {
        Some(end) => (text[..end].to_string(), true),
        None => (text.to_string(), false),
    }
}

/// Deterministic pseudo-logprob for a token piece, for fixtures that carry
/// none. Stable across runs and platforms.
pub fn pseudo_logprob(piece: &str) -> f64 {
    let h = crate::canonical::fnv1a_64(0x1097, piece.as_bytes());
    -0.05 - (h % 997) as f64 / 997.0 * 3.0
}
