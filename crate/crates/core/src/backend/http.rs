//! Remote backend speaking the de facto chat-completions HTTP interface:
//! a messages array with sampling parameters in, streamed delta chunks
//! (optionally with per-token logprobs) out.

use std::io::{BufRead, BufReader};

use serde::{Deserialize, Serialize};

use super::{
    BackendError, FinishReason, GenerationChunk, GenerationRequest, GenerationStream, TextBackend,
};
use crate::tokens;

/// Connection settings. The API key is read from the environment variable
/// named by `api_key_env`; config files never hold secrets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Prompt-size guard, in (approximate) tokens.
    #[serde(default = "default_context_window")]
    pub context_window: usize,
    #[serde(default = "default_timeout_s")]
    pub request_timeout_s: u64,
}

fn default_context_window() -> usize {
    131_072
}

fn default_timeout_s() -> u64 {
    120
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.request_timeout_s))
            .build()
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        Ok(HttpBackend { config, client })
    }

    fn payload(&self, request: &GenerationRequest) -> serde_json::Value {
        let messages: Vec<serde_json::Value> = request
            .prompt_segments
            .iter()
            .map(|(role, text)| serde_json::json!({ "role": role.as_str(), "content": text }))
            .collect();
        let mut body = serde_json::json!({
            "model": self.config.model,
            "messages": messages,
            "max_tokens": request.params.max_tokens,
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
            "stream": true,
        });
        // vLLM-style extensions; harmless for servers that ignore them.
        body["top_k"] = request.params.top_k.into();
        body["repetition_penalty"] = request.params.repetition_penalty.into();
        if !request.params.stop_sequences.is_empty() {
            body["stop"] = serde_json::json!(request.params.stop_sequences);
        }
        if request.want_logprobs {
            body["logprobs"] = serde_json::json!(true);
        }
        body
    }
}

impl TextBackend for HttpBackend {
    fn id(&self) -> &str {
        "http"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationStream, BackendError> {
        let needed = tokens::estimate_tokens(&request.prompt_text());
        if needed > self.config.context_window {
            return Err(BackendError::ContextOverflow {
                tokens_needed: needed,
                limit: self.config.context_window,
            });
        }

        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut req = self.client.post(&url).json(&self.payload(request));
        if let Some(var) = &self.config.api_key_env {
            match std::env::var(var) {
                Ok(key) if !key.is_empty() => req = req.bearer_auth(key),
                _ => {}
            }
        }
        let resp = req.send().map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        if !resp.status().is_success() {
            let status = resp.status();
            let body = resp.text().unwrap_or_default();
            return Err(BackendError::BackendUnavailable(format!(
                "{url} returned {status}: {}",
                body.chars().take(300).collect::<String>()
            )));
        }

        let reader = BufReader::new(resp);
        Ok(GenerationStream::from_iter(SseChunks { lines: reader.lines(), done: false }))
    }
}

struct SseChunks<R: BufRead> {
    lines: std::io::Lines<R>,
    done: bool,
}

impl<R: BufRead + Send> Iterator for SseChunks<R> {
    type Item = Result<GenerationChunk, BackendError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            let line = match self.lines.next() {
                None => {
                    self.done = true;
                    return None;
                }
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(BackendError::BackendUnavailable(format!(
                        "stream read failed: {e}"
                    ))));
                }
                Some(Ok(line)) => line,
            };
            let Some(data) = line.strip_prefix("data:").map(str::trim) else {
                continue;
            };
            if data == "[DONE]" {
                self.done = true;
                return None;
            }
            match parse_delta(data) {
                Ok(Some(chunk)) => return Some(Ok(chunk)),
                Ok(None) => continue,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

fn parse_delta(data: &str) -> Result<Option<GenerationChunk>, BackendError> {
    let value: serde_json::Value = serde_json::from_str(data)
        .map_err(|e| BackendError::BackendUnavailable(format!("bad stream payload: {e}")))?;
    let Some(choice) = value["choices"].get(0) else {
        return Ok(None);
    };
    let text = choice["delta"]["content"].as_str().unwrap_or("").to_string();
    let logprobs = choice["logprobs"]["content"].as_array().map(|entries| {
        entries.iter().filter_map(|e| e["logprob"].as_f64()).collect::<Vec<f64>>()
    });
    let finish = match choice["finish_reason"].as_str() {
        Some("stop") => Some(FinishReason::Stop),
        Some("length") => Some(FinishReason::Length),
        Some(_) => Some(FinishReason::Stop),
        None => None,
    };
    if text.is_empty() && logprobs.is_none() && finish.is_none() {
        return Ok(None);
    }
    Ok(Some(GenerationChunk { text, token_ids: None, logprobs, finish }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Role;
    use std::io::Write;
    use std::net::TcpListener;

    #[test]
    fn parses_delta_payloads() {
        let chunk = parse_delta(r#"{"choices":[{"delta":{"content":"hi"}}]}"#).unwrap().unwrap();
        assert_eq!(chunk.text, "hi");
        assert!(chunk.finish.is_none());

        let done = parse_delta(r#"{"choices":[{"delta":{},"finish_reason":"stop"}]}"#)
            .unwrap()
            .unwrap();
        assert_eq!(done.finish, Some(FinishReason::Stop));

        assert!(parse_delta("not json").is_err());
    }

    #[test]
    fn context_overflow_precedes_network() {
        let backend = HttpBackend::new(HttpBackendConfig {
            base_url: "http://127.0.0.1:1".into(),
            model: "m".into(),
            api_key_env: None,
            context_window: 2,
            request_timeout_s: 1,
        })
        .unwrap();
        let req = GenerationRequest::new(vec![(
            Role::User,
            "clearly more than two tokens of text".into(),
        )]);
        assert!(matches!(
            backend.generate(&req),
            Err(BackendError::ContextOverflow { .. })
        ));
    }

    /// Loopback smoke test: a one-shot local server speaking SSE.
    #[test]
    fn streams_from_local_server() {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            // drain request headers + body enough to respond
            let mut buf = [0u8; 4096];
            use std::io::Read;
            let _ = stream.read(&mut buf);
            let body = concat!(
                "data: {\"choices\":[{\"delta\":{\"content\":\"hel\"}}]}\n\n",
                "data: {\"choices\":[{\"delta\":{\"content\":\"lo\"},\"finish_reason\":\"stop\"}]}\n\n",
                "data: [DONE]\n\n",
            );
            let resp = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: text/event-stream\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            stream.write_all(resp.as_bytes()).unwrap();
        });

        let backend = HttpBackend::new(HttpBackendConfig {
            base_url: format!("http://{addr}"),
            model: "m".into(),
            api_key_env: None,
            context_window: 10_000,
            request_timeout_s: 5,
        })
        .unwrap();
        let req = GenerationRequest::new(vec![(Role::User, "hi".into())]);
        let (text, _, finish) = backend.generate(&req).unwrap().collect_text().unwrap();
        assert_eq!(text, "hello");
        assert_eq!(finish, Some(FinishReason::Stop));
        server.join().unwrap();
    }
}
