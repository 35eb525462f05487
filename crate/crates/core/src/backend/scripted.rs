//! Deterministic scripted backend: replays canned completions from a
//! fixture file, keyed by prompt suffix or prompt hash. Repeated episodes
//! against the same fixtures are byte-identical, which is what makes
//! golden-trajectory tests possible.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    apply_stop_sequences, BackendError, FinishReason, GenerationChunk, GenerationRequest,
    GenerationStream, TextBackend,
};
use crate::canonical::{canonical_json, fnv1a_64};
use crate::protocol::ToolCallRequest;
use crate::registry::ToolDoc;
use crate::tokens;

/// How a fixture matches an incoming prompt. A bare string in the fixture
/// file is shorthand for `Suffix`. An empty suffix matches every prompt,
/// which together with `once` gives ordered scripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureMatch {
    /// Prompt text ends with this string.
    Suffix(String),
    /// FNV-1a 64 hash of the full prompt text, lowercase hex.
    Hash(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fixture {
    #[serde(deserialize_with = "match_or_string")]
    pub r#match: FixtureMatch,
    pub response: String,
    /// Per-token logprobs aligned to the piece tokenization of `response`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    /// Consume this fixture after its first use.
    #[serde(default)]
    pub once: bool,
}

fn match_or_string<'de, D>(de: D) -> Result<FixtureMatch, D::Error>
where
    D: serde::Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Plain(String),
        Tagged(FixtureMatch),
    }
    Ok(match Raw::deserialize(de)? {
        Raw::Plain(s) => FixtureMatch::Suffix(s),
        Raw::Tagged(m) => m,
    })
}

/// On-disk fixture file: generation fixtures plus lookup tables for
/// simulated tool responses and canned summaries.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureFile {
    pub generations: Vec<Fixture>,
    /// Keyed by `"{tool_name} {canonical_arguments_json}"`.
    pub tool_responses: BTreeMap<String, String>,
    /// Simulated context window in tokens, if bounded.
    pub context_window: Option<usize>,
}

impl FixtureFile {
    pub fn load(path: &std::path::Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))
    }
}

/// Lookup key for a simulated tool response.
pub fn tool_response_key(name: &str, arguments: &serde_json::Map<String, serde_json::Value>) -> String {
    format!("{name} {}", canonical_json(&serde_json::Value::Object(arguments.clone())))
}

/// Fixture-replay backend. A pure function of (fixtures, prompt), modulo
/// `once` consumption which is itself deterministic in episode order.
pub struct ScriptedBackend {
    fixtures: FixtureFile,
    consumed: Mutex<Vec<bool>>,
    /// Byte width of streamed chunks; a prime keeps splits landing inside
    /// tags so chunk-boundary handling stays exercised.
    chunk_bytes: usize,
}

impl ScriptedBackend {
    pub fn new(fixtures: FixtureFile) -> Self {
        let n = fixtures.generations.len();
        ScriptedBackend { fixtures, consumed: Mutex::new(vec![false; n]), chunk_bytes: 13 }
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, BackendError> {
        Ok(Self::new(FixtureFile::load(path)?))
    }

    /// Convenience: an ordered script where response i answers the i-th
    /// generation request regardless of prompt content.
    pub fn from_script(responses: &[&str]) -> Self {
        let generations = responses
            .iter()
            .map(|r| Fixture {
                r#match: FixtureMatch::Suffix(String::new()),
                response: r.to_string(),
                logprobs: None,
                once: true,
            })
            .collect();
        Self::new(FixtureFile { generations, ..FixtureFile::default() })
    }

    /// Register a simulated tool response (builder-style, for tests).
    pub fn with_tool_response(mut self, name: &str, arguments: serde_json::Value, response: &str) -> Self {
        let args = match arguments {
            serde_json::Value::Object(map) => map,
            _ => serde_json::Map::new(),
        };
        self.fixtures.tool_responses.insert(tool_response_key(name, &args), response.to_string());
        self
    }

    /// Find the first live fixture matching `prompt`, atomically consuming
    /// it when marked `once` (fold components run concurrently).
    fn lookup(&self, prompt: &str) -> Option<Fixture> {
        let hash = format!("{:016x}", fnv1a_64(0, prompt.as_bytes()));
        let mut consumed = self.consumed.lock().expect("fixture lock");
        for (i, fixture) in self.fixtures.generations.iter().enumerate() {
            if consumed[i] {
                continue;
            }
            let hit = match &fixture.r#match {
                FixtureMatch::Suffix(s) => prompt.ends_with(s.as_str()),
                FixtureMatch::Hash(h) => *h == hash,
            };
            if hit {
                if fixture.once {
                    consumed[i] = true;
                }
                return Some(fixture.clone());
            }
        }
        None
    }
}

impl TextBackend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationStream, BackendError> {
        let prompt = request.prompt_text();
        if let Some(window) = self.fixtures.context_window {
            let needed = tokens::count_tokens(&prompt);
            if needed > window {
                return Err(BackendError::ContextOverflow { tokens_needed: needed, limit: window });
            }
        }
        let Some(fixture) = self.lookup(&prompt) else {
            // No matching fixture: the script has nothing more to say.
            // Surface an empty natural stop rather than an error so budget
            // boundaries terminate episodes cleanly.
            return Ok(GenerationStream::from_chunks(vec![GenerationChunk {
                text: String::new(),
                token_ids: None,
                logprobs: None,
                finish: Some(FinishReason::Stop),
            }]));
        };

        let (stopped_text, stopped) =
            apply_stop_sequences(&fixture.response, &request.params.stop_sequences);
        let full_piece_count = tokens::count_tokens(&stopped_text);
        let length_hit = full_piece_count > request.params.max_tokens;
        let text = if length_hit {
            tokens::tokenize_pieces(&stopped_text)[..request.params.max_tokens].concat()
        } else {
            stopped_text
        };

        // Per-piece logprobs: fixture-provided when aligned, else a stable
        // pseudo value per piece.
        let pieces = tokens::tokenize_pieces(&text);
        let logprobs: Vec<f64> = match &fixture.logprobs {
            Some(lp) if lp.len() >= pieces.len() => lp[..pieces.len()].to_vec(),
            _ => pieces.iter().map(|p| super::pseudo_logprob(p)).collect(),
        };

        // Stream in fixed-width chunks (split only at char boundaries),
        // attaching each piece's logprob to the chunk where the piece ends.
        let mut chunks = Vec::new();
        let mut start = 0;
        let mut piece_idx = 0;
        let mut piece_end = 0; // byte offset where pieces[piece_idx] ends
        while start < text.len() {
            let mut end = (start + self.chunk_bytes).min(text.len());
            while !text.is_char_boundary(end) {
                end += 1;
            }
            let mut chunk_lps = Vec::new();
            while piece_idx < pieces.len() {
                let next_end = piece_end + pieces[piece_idx].len();
                if next_end <= end {
                    chunk_lps.push(logprobs[piece_idx]);
                    piece_end = next_end;
                    piece_idx += 1;
                } else {
                    break;
                }
            }
            chunks.push(GenerationChunk {
                text: text[start..end].to_string(),
                token_ids: None,
                // always Some when logprobs were requested, even if empty,
                // so downstream accumulation stays aligned
                logprobs: request.want_logprobs.then_some(chunk_lps),
                finish: None,
            });
            start = end;
        }
        let finish = if stopped {
            FinishReason::StopSequence
        } else if length_hit {
            FinishReason::Length
        } else {
            FinishReason::Stop
        };
        chunks.push(GenerationChunk {
            text: String::new(),
            token_ids: None,
            logprobs: None,
            finish: Some(finish),
        });
        Ok(GenerationStream::from_chunks(chunks))
    }

    fn simulate_tool(&self, doc: &ToolDoc, call: &ToolCallRequest) -> Result<String, BackendError> {
        let key = tool_response_key(&call.name, &call.arguments);
        match self.fixtures.tool_responses.get(&key) {
            Some(response) => Ok(response.clone()),
            None => Err(BackendError::BackendUnavailable(format!(
                "no scripted response for tool {} (key {key:?}, doc {})",
                call.name, doc.name
            ))),
        }
    }

    /// Scripted mode summarizes deterministically: head-tail truncation.
    fn summarize(&self, text: &str, budget_tokens: usize) -> String {
        tokens::head_tail_truncate(text, budget_tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Role;

    fn request(prompt: &str) -> GenerationRequest {
        GenerationRequest::new(vec![(Role::User, prompt.to_string())])
    }

    #[test]
    fn same_prompt_same_stream() {
        let backend = ScriptedBackend::new(FixtureFile {
            generations: vec![Fixture {
                r#match: FixtureMatch::Suffix("go\n".into()),
                response: "thinking <tool_search>q</tool_search>".into(),
                logprobs: None,
                once: false,
            }],
            ..FixtureFile::default()
        });
        let collect = |b: &ScriptedBackend| {
            b.generate(&request("go")).unwrap().collect_text().unwrap().0
        };
        assert_eq!(collect(&backend), collect(&backend));
        assert_eq!(collect(&backend), "thinking <tool_search>q</tool_search>");
    }

    #[test]
    fn stop_sequence_ends_stream_with_suffix() {
        let backend = ScriptedBackend::from_script(&[
            "a <tool_call>{\"name\":\"t\"}</tool_call> ignored trailing",
        ]);
        let mut req = request("x");
        req.params.stop_sequences = vec!["</tool_call>".to_string()];
        let (text, _, finish) = backend.generate(&req).unwrap().collect_text().unwrap();
        assert!(text.ends_with("</tool_call>"));
        assert!(!text.contains("ignored"));
        assert_eq!(finish, Some(FinishReason::StopSequence));
    }

    #[test]
    fn context_overflow_reported() {
        let backend = ScriptedBackend::new(FixtureFile {
            context_window: Some(4),
            ..FixtureFile::default()
        });
        let err = backend.generate(&request("far too many words for this window")).unwrap_err();
        assert!(matches!(err, BackendError::ContextOverflow { .. }));
    }

    #[test]
    fn no_match_is_empty_stop() {
        let backend = ScriptedBackend::new(FixtureFile::default());
        let (text, _, finish) = backend.generate(&request("x")).unwrap().collect_text().unwrap();
        assert!(text.is_empty());
        assert_eq!(finish, Some(FinishReason::Stop));
    }

    #[test]
    fn once_fixtures_play_in_order() {
        let backend = ScriptedBackend::from_script(&["first", "second"]);
        let get = || backend.generate(&request("p")).unwrap().collect_text().unwrap().0;
        assert_eq!(get(), "first");
        assert_eq!(get(), "second");
        assert_eq!(get(), "");
    }

    #[test]
    fn hash_match_hits_exact_prompt() {
        let prompt_text = request("exact").prompt_text();
        let hash = format!("{:016x}", fnv1a_64(0, prompt_text.as_bytes()));
        let backend = ScriptedBackend::new(FixtureFile {
            generations: vec![Fixture {
                r#match: FixtureMatch::Hash(hash),
                response: "hit".into(),
                logprobs: None,
                once: false,
            }],
            ..FixtureFile::default()
        });
        assert_eq!(backend.generate(&request("exact")).unwrap().collect_text().unwrap().0, "hit");
        assert_eq!(backend.generate(&request("other")).unwrap().collect_text().unwrap().0, "");
    }

    #[test]
    fn simulated_tool_lookup_uses_canonical_args() {
        let backend = ScriptedBackend::new(FixtureFile::default()).with_tool_response(
            "add",
            serde_json::json!({"b": 3, "a": 2}),
            "5",
        );
        let call = ToolCallRequest {
            name: "add".into(),
            arguments: serde_json::from_str(r#"{"a": 2.0, "b": 3}"#).unwrap(),
        };
        let doc = ToolDoc::new("add", "adds", Default::default());
        assert_eq!(backend.simulate_tool(&doc, &call).unwrap(), "5");
    }

    #[test]
    fn max_tokens_truncates() {
        let backend = ScriptedBackend::from_script(&["one two three four five six"]);
        let mut req = request("p");
        req.params.max_tokens = 3;
        let (text, _, finish) = backend.generate(&req).unwrap().collect_text().unwrap();
        assert_eq!(tokens::count_tokens(&text), 3);
        assert_eq!(finish, Some(FinishReason::Length));
    }

    #[test]
    fn logprobs_align_with_pieces() {
        let backend = ScriptedBackend::from_script(&["alpha beta gamma delta epsilon zeta"]);
        let mut req = request("p");
        req.want_logprobs = true;
        let (text, lps, _) = backend.generate(&req).unwrap().collect_text().unwrap();
        let lps = lps.expect("logprobs present");
        assert_eq!(lps.len(), tokens::count_tokens(&text));
    }
}
