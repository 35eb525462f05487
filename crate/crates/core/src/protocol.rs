//! Streaming scanner for the tagged action protocol.
//!
//! The model requests actions by emitting tagged regions inside its
//! generation stream, and the runtime injects result blocks in the same
//! form:
//!
//! ```text
//! <tool_search>query</tool_search>
//! <tool_search_result>retrieved docs</tool_search_result>
//! <tool_call>{"name": "...", "arguments": {...}}</tool_call>
//! <tool_call_result>output</tool_call_result>
//! <fold_thought>
//! ```
//!
//! `<fold_thought>` is a bare self-closing token. The runtime additionally
//! recognizes `<final_answer>...</final_answer>` as the episode terminator.
//! Text outside tags surfaces as `Think` events, flushed at the next tag or
//! at finalize.
//!
//! The scanner is incremental and chunking-invariant: for any partition of
//! the same stream into chunks, the concatenated event list is identical to
//! single-chunk scanning. The protocol is flat — an open tag inside another
//! tagged region is literal payload text, and unknown angle-bracket
//! sequences are literal text everywhere. Tags are case-sensitive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Event kinds: the four action kinds, the two observation kinds, and the
/// final-answer terminator. Only the four action kinds and `FinalAnswer`
/// occur as trajectory steps; observation kinds appear when scanning full
/// transcripts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Think,
    ToolSearch,
    ToolCall,
    MemoryFold,
    ToolSearchResult,
    ToolCallResult,
    FinalAnswer,
}

impl EventKind {
    /// True for the action kinds the agent loop dispatches on.
    pub fn is_action(self) -> bool {
        matches!(
            self,
            EventKind::ToolSearch | EventKind::ToolCall | EventKind::MemoryFold
        )
    }

    /// True for kinds the loop reacts to at all (actions plus the
    /// final-answer terminator).
    pub fn is_actionable(self) -> bool {
        self.is_action() || self == EventKind::FinalAnswer
    }
}

/// Half-open byte range into the scanned stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// A parsed occurrence of one tagged region (or a run of untagged think
/// text). `span` covers the whole tagged region including the tags;
/// `payload` is the text between them. Ordinals are 1-based and strictly
/// increasing in textual order.
///
/// The runtime, not the scanner, enforces that a `ToolSearch` payload is
/// non-empty after trimming: an empty query still scans, and dispatch turns
/// it into an error observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionEvent {
    pub kind: EventKind,
    pub payload: String,
    pub span: Span,
    pub ordinal: usize,
}

/// Structural errors reported at finalize.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("unclosed {kind:?} tag spanning bytes {}..{}", span.start, span.end)]
    UnclosedTag { kind: EventKind, span: Span },
}

/// A tool invocation parsed from a `<tool_call>` payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallRequest {
    pub name: String,
    #[serde(default)]
    pub arguments: serde_json::Map<String, serde_json::Value>,
}

/// Payload between `<tool_call>` tags that is not a single well-formed
/// object with a usable name. The runtime renders the reason as a
/// `tool_call_result` so the episode continues.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed tool call: {0}")]
pub struct MalformedCall(pub String);

/// A result block injected back into the stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub kind: ObservationKind,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    ToolSearchResult,
    ToolCallResult,
}

impl ObservationKind {
    pub fn open_tag(self) -> &'static str {
        match self {
            ObservationKind::ToolSearchResult => "<tool_search_result>",
            ObservationKind::ToolCallResult => "<tool_call_result>",
        }
    }

    pub fn close_tag(self) -> &'static str {
        match self {
            ObservationKind::ToolSearchResult => "</tool_search_result>",
            ObservationKind::ToolCallResult => "</tool_call_result>",
        }
    }

    pub fn event_kind(self) -> EventKind {
        match self {
            ObservationKind::ToolSearchResult => EventKind::ToolSearchResult,
            ObservationKind::ToolCallResult => EventKind::ToolCallResult,
        }
    }
}

/// Wrap an observation in its exact tag pair. Render-then-rescan yields a
/// single event of the matching kind with identical content.
pub fn render_observation(obs: &Observation) -> String {
    format!("{}{}{}", obs.kind.open_tag(), obs.content, obs.kind.close_tag())
}

struct TagDef {
    kind: EventKind,
    open: &'static str,
    close: Option<&'static str>,
}

const TAGS: &[TagDef] = &[
    TagDef { kind: EventKind::ToolSearch, open: "<tool_search>", close: Some("</tool_search>") },
    TagDef {
        kind: EventKind::ToolSearchResult,
        open: "<tool_search_result>",
        close: Some("</tool_search_result>"),
    },
    TagDef { kind: EventKind::ToolCall, open: "<tool_call>", close: Some("</tool_call>") },
    TagDef {
        kind: EventKind::ToolCallResult,
        open: "<tool_call_result>",
        close: Some("</tool_call_result>"),
    },
    TagDef { kind: EventKind::MemoryFold, open: "<fold_thought>", close: None },
    TagDef { kind: EventKind::FinalAnswer, open: "<final_answer>", close: Some("</final_answer>") },
];

/// The open tags of every recognized tagged region, in protocol order.
pub fn open_tags() -> impl Iterator<Item = &'static str> {
    TAGS.iter().map(|t| t.open)
}

/// Close tags plus the bare fold token: the stop sequences the runtime
/// registers so generation pauses after each action.
pub fn stop_sequences() -> Vec<String> {
    let mut seqs: Vec<String> = TAGS.iter().filter_map(|t| t.close.map(str::to_string)).collect();
    seqs.push("<fold_thought>".to_string());
    seqs
}

enum State {
    /// Buffer holds pending think text; `base` is its absolute start.
    Text,
    /// Buffer holds the open tag plus the payload seen so far.
    Tagged { tag: usize, payload_off: usize },
}

enum TagFind {
    Found { at: usize, tag: usize },
    /// A tag may be starting at `at` but the buffer ends before it can be
    /// decided; wait for more input.
    Partial { at: usize },
    None,
}

/// Incremental protocol scanner. One scanner owns one stream; distinct
/// scanners never share state.
pub struct Scanner {
    buf: String,
    base: usize,
    state: State,
    scan_from: usize,
    next_ordinal: usize,
}

impl Default for Scanner {
    fn default() -> Self {
        Self::new()
    }
}

impl Scanner {
    pub fn new() -> Self {
        Scanner { buf: String::new(), base: 0, state: State::Text, scan_from: 0, next_ordinal: 1 }
    }

    /// Absolute byte length of the stream consumed so far.
    pub fn stream_len(&self) -> usize {
        self.base + self.buf.len()
    }

    /// Feed the next chunk and return any events completed by it. Chunks
    /// may split tags at any char boundary.
    pub fn feed_chunk(&mut self, chunk: &str) -> Vec<ActionEvent> {
        self.buf.push_str(chunk);
        self.drain()
    }

    /// End of stream: flush trailing think text and report any unclosed
    /// tag with its span.
    pub fn finalize(mut self) -> (Vec<ActionEvent>, Vec<ProtocolError>) {
        let mut events = Vec::new();
        let mut errors = Vec::new();
        match self.state {
            State::Text => {
                if !self.buf.is_empty() {
                    let payload = std::mem::take(&mut self.buf);
                    let span = Span::new(self.base, self.base + payload.len());
                    events.push(ActionEvent {
                        kind: EventKind::Think,
                        payload,
                        span,
                        ordinal: self.next_ordinal,
                    });
                }
            }
            State::Tagged { tag, .. } => {
                errors.push(ProtocolError::UnclosedTag {
                    kind: TAGS[tag].kind,
                    span: Span::new(self.base, self.base + self.buf.len()),
                });
            }
        }
        (events, errors)
    }

    fn emit(&mut self, out: &mut Vec<ActionEvent>, kind: EventKind, payload: String, span: Span) {
        out.push(ActionEvent { kind, payload, span, ordinal: self.next_ordinal });
        self.next_ordinal += 1;
    }

    fn drain(&mut self) -> Vec<ActionEvent> {
        let mut out = Vec::new();
        loop {
            match self.state {
                State::Text => match find_tag(&self.buf, self.scan_from) {
                    TagFind::Found { at, tag } => {
                        if at > 0 {
                            let payload: String = self.buf[..at].to_string();
                            let span = Span::new(self.base, self.base + at);
                            self.emit(&mut out, EventKind::Think, payload, span);
                        }
                        let open_len = TAGS[tag].open.len();
                        if TAGS[tag].close.is_none() {
                            let span = Span::new(self.base + at, self.base + at + open_len);
                            self.emit(&mut out, TAGS[tag].kind, String::new(), span);
                            self.buf.drain(..at + open_len);
                            self.base += at + open_len;
                            self.scan_from = 0;
                        } else {
                            self.buf.drain(..at);
                            self.base += at;
                            self.state = State::Tagged { tag, payload_off: open_len };
                            self.scan_from = open_len;
                        }
                    }
                    TagFind::Partial { at } => {
                        self.scan_from = at;
                        return out;
                    }
                    TagFind::None => {
                        self.scan_from = self.buf.len();
                        return out;
                    }
                },
                State::Tagged { tag, payload_off } => {
                    let close = TAGS[tag].close.expect("tagged state implies close tag");
                    let from = self.scan_from.min(self.buf.len());
                    match self.buf[from..].find(close) {
                        Some(idx) => {
                            let close_at = from + idx;
                            let payload = self.buf[payload_off..close_at].to_string();
                            let end = close_at + close.len();
                            let span = Span::new(self.base, self.base + end);
                            self.emit(&mut out, TAGS[tag].kind, payload, span);
                            self.buf.drain(..end);
                            self.base += end;
                            self.state = State::Text;
                            self.scan_from = 0;
                        }
                        None => {
                            // keep the tail that could still complete the close tag
                            self.scan_from =
                                self.buf.len().saturating_sub(close.len() - 1).max(payload_off);
                            return out;
                        }
                    }
                }
            }
        }
    }
}

fn find_tag(buf: &str, from: usize) -> TagFind {
    let bytes = buf.as_bytes();
    let mut p = from;
    while p < bytes.len() {
        if bytes[p] != b'<' {
            p += 1;
            continue;
        }
        let rest = &buf[p..];
        for (i, tag) in TAGS.iter().enumerate() {
            if rest.starts_with(tag.open) {
                return TagFind::Found { at: p, tag: i };
            }
        }
        if TAGS.iter().any(|t| rest.len() < t.open.len() && t.open.starts_with(rest)) {
            return TagFind::Partial { at: p };
        }
        p += 1;
    }
    TagFind::None
}

/// One-shot scan of a complete text.
pub fn scan_all(text: &str) -> (Vec<ActionEvent>, Vec<ProtocolError>) {
    let mut scanner = Scanner::new();
    let mut events = scanner.feed_chunk(text);
    let (tail, errors) = scanner.finalize();
    events.extend(tail);
    (events, errors)
}

/// Parse the body between `<tool_call>` tags: a single JSON object with a
/// required `"name"` and an optional `"arguments"` object (absent means an
/// empty mapping).
pub fn parse_tool_call(payload: &str) -> Result<ToolCallRequest, MalformedCall> {
    let trimmed = payload.trim();
    if trimmed.is_empty() {
        return Err(MalformedCall("empty call body".to_string()));
    }
    let value: serde_json::Value = serde_json::from_str(trimmed)
        .map_err(|e| MalformedCall(format!("invalid JSON: {e}")))?;
    let obj = match value {
        serde_json::Value::Object(map) => map,
        other => {
            return Err(MalformedCall(format!(
                "expected a JSON object, got {}",
                json_type_name(&other)
            )))
        }
    };
    let name = match obj.get("name") {
        None => return Err(MalformedCall("missing name".to_string())),
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(other) => {
            return Err(MalformedCall(format!(
                "name must be a string, got {}",
                json_type_name(other)
            )))
        }
    };
    if name.is_empty() {
        return Err(MalformedCall("name is empty".to_string()));
    }
    if name.chars().any(char::is_whitespace) {
        return Err(MalformedCall(format!("name contains whitespace: {name:?}")));
    }
    let arguments = match obj.get("arguments") {
        None | Some(serde_json::Value::Null) => serde_json::Map::new(),
        Some(serde_json::Value::Object(map)) => map.clone(),
        Some(other) => {
            return Err(MalformedCall(format!(
                "arguments must be an object, got {}",
                json_type_name(other)
            )))
        }
    };
    Ok(ToolCallRequest { name, arguments })
}

pub(crate) fn json_type_name(v: &serde_json::Value) -> &'static str {
    match v {
        serde_json::Value::Null => "null",
        serde_json::Value::Bool(_) => "boolean",
        serde_json::Value::Number(_) => "number",
        serde_json::Value::String(_) => "string",
        serde_json::Value::Array(_) => "array",
        serde_json::Value::Object(_) => "object",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(events: &[ActionEvent]) -> Vec<EventKind> {
        events.iter().map(|e| e.kind).collect()
    }

    #[test]
    fn think_then_search() {
        let (events, errors) =
            scan_all("plan first <tool_search>vimeo documentary search</tool_search>");
        assert!(errors.is_empty());
        assert_eq!(kinds(&events), vec![EventKind::Think, EventKind::ToolSearch]);
        assert_eq!(events[0].payload, "plan first ");
        assert_eq!(events[1].payload, "vimeo documentary search");
        assert_eq!(events[0].ordinal, 1);
        assert_eq!(events[1].ordinal, 2);
    }

    #[test]
    fn empty_input_no_events() {
        let mut scanner = Scanner::new();
        assert!(scanner.feed_chunk("").is_empty());
        let (events, errors) = scanner.finalize();
        assert!(events.is_empty());
        assert!(errors.is_empty());
    }

    #[test]
    fn split_tag_equals_unsplit() {
        let full = "<tool_search>q</tool_search>";
        let (expected, _) = scan_all(full);
        let mut scanner = Scanner::new();
        let mut events = scanner.feed_chunk("<tool_se");
        events.extend(scanner.feed_chunk("arch>q</tool_search>"));
        let (tail, errors) = scanner.finalize();
        events.extend(tail);
        assert!(errors.is_empty());
        assert_eq!(events, expected);
    }

    #[test]
    fn fold_token_is_self_closing() {
        let (events, errors) = scan_all("a<fold_thought>b");
        assert!(errors.is_empty());
        assert_eq!(kinds(&events), vec![EventKind::Think, EventKind::MemoryFold, EventKind::Think]);
        assert!(events[1].payload.is_empty());
        assert_eq!(events[1].span, Span::new(1, 1 + "<fold_thought>".len()));
    }

    #[test]
    fn unknown_tags_are_literal() {
        let (events, errors) = scan_all("x <b>bold</b> y <tool_searchy>z");
        assert!(errors.is_empty());
        assert_eq!(kinds(&events), vec![EventKind::Think]);
        assert_eq!(events[0].payload, "x <b>bold</b> y <tool_searchy>z");
    }

    #[test]
    fn nested_open_tag_is_payload() {
        let (events, errors) = scan_all("<tool_call>a <tool_search>b</tool_call>");
        assert!(errors.is_empty());
        assert_eq!(kinds(&events), vec![EventKind::ToolCall]);
        assert_eq!(events[0].payload, "a <tool_search>b");
    }

    #[test]
    fn unclosed_tag_reported() {
        let (events, errors) = scan_all("pre <tool_call>{\"name\":");
        assert_eq!(kinds(&events), vec![EventKind::Think]);
        assert_eq!(
            errors,
            vec![ProtocolError::UnclosedTag {
                kind: EventKind::ToolCall,
                span: Span::new(4, "pre <tool_call>{\"name\":".len()),
            }]
        );
    }

    #[test]
    fn trailing_partial_tag_becomes_think() {
        let (events, errors) = scan_all("hello <tool_se");
        assert!(errors.is_empty());
        assert_eq!(kinds(&events), vec![EventKind::Think]);
        assert_eq!(events[0].payload, "hello <tool_se");
    }

    #[test]
    fn spans_reconstruct_regions() {
        let text = "a<tool_search>q</tool_search>b<fold_thought>";
        let (events, _) = scan_all(text);
        for ev in &events {
            let region = &text[ev.span.start..ev.span.end];
            match ev.kind {
                EventKind::Think => assert_eq!(region, ev.payload),
                EventKind::MemoryFold => assert_eq!(region, "<fold_thought>"),
                EventKind::ToolSearch => {
                    assert_eq!(region, format!("<tool_search>{}</tool_search>", ev.payload))
                }
                _ => {}
            }
        }
    }

    #[test]
    fn render_observation_exact() {
        let obs =
            Observation { kind: ObservationKind::ToolCallResult, content: "ok".to_string() };
        assert_eq!(render_observation(&obs), "<tool_call_result>ok</tool_call_result>");
        let empty =
            Observation { kind: ObservationKind::ToolSearchResult, content: String::new() };
        assert_eq!(render_observation(&empty), "<tool_search_result></tool_search_result>");
    }

    #[test]
    fn observation_round_trip() {
        let obs = Observation {
            kind: ObservationKind::ToolSearchResult,
            content: "two tools found".to_string(),
        };
        let (events, errors) = scan_all(&render_observation(&obs));
        assert!(errors.is_empty());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, EventKind::ToolSearchResult);
        assert_eq!(events[0].payload, obs.content);
    }

    #[test]
    fn parse_call_with_arguments() {
        let req = parse_tool_call(
            r#"{"name": "search_videos", "arguments": {"query": "documentary", "sort": "most_liked"}}"#,
        )
        .unwrap();
        assert_eq!(req.name, "search_videos");
        assert_eq!(req.arguments["query"], "documentary");
        assert_eq!(req.arguments["sort"], "most_liked");
    }

    #[test]
    fn parse_call_missing_arguments_defaults_empty() {
        let req = parse_tool_call(r#"{"name": "t"}"#).unwrap();
        assert_eq!(req.name, "t");
        assert!(req.arguments.is_empty());
    }

    #[test]
    fn parse_call_missing_name() {
        let err = parse_tool_call(r#"{"arguments": {}}"#).unwrap_err();
        assert!(err.0.contains("missing name"), "{err}");
    }

    #[test]
    fn parse_call_rejects_trailing_garbage() {
        assert!(parse_tool_call(r#"{"name": "t"} extra"#).is_err());
        assert!(parse_tool_call("[1,2]").is_err());
        assert!(parse_tool_call(r#"{"name": "has space"}"#).is_err());
    }

    #[test]
    fn stop_sequences_cover_all_closeable_tags() {
        let seqs = stop_sequences();
        assert!(seqs.contains(&"</tool_call>".to_string()));
        assert!(seqs.contains(&"<fold_thought>".to_string()));
        assert!(seqs.contains(&"</final_answer>".to_string()));
    }
}
