//! Tool-call dispatch: argument validation against the parameter schema,
//! routing by tool source (local handler, HTTP endpoint, LLM simulator),
//! wall-clock timeout, and error encapsulation. Dispatch never throws into
//! the agent loop; every outcome is a `ToolResult`.

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::protocol::{json_type_name, ToolCallRequest};
use crate::registry::{EndpointConfig, HttpEndpointConfig, ToolDoc, ToolRegistry, ToolSource};
use crate::backend::TextBackend;

pub const DEFAULT_TOOL_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    ToolError,
    Timeout,
    ValidationError,
    UnknownTool,
}

impl ToolStatus {
    /// Keyword prefixed to failed-call observations so the model can see
    /// and recover from the failure class.
    pub fn keyword(self) -> &'static str {
        match self {
            ToolStatus::Ok => "ok",
            ToolStatus::ToolError => "tool_error",
            ToolStatus::Timeout => "timeout",
            ToolStatus::ValidationError => "validation_error",
            ToolStatus::UnknownTool => "unknown_tool",
        }
    }
}

/// If `content` is a failed-call observation, the failure keyword it
/// carries.
pub fn failure_keyword(content: &str) -> Option<&'static str> {
    ["tool_error", "timeout", "validation_error", "unknown_tool"]
        .into_iter()
        .find(|kw| content.starts_with(&format!("{kw}:")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub status: ToolStatus,
    pub content: String,
    pub latency_ms: u64,
}

impl ToolResult {
    fn failure(status: ToolStatus, content: String, started: Instant) -> Self {
        ToolResult { status, content, latency_ms: started.elapsed().as_millis() as u64 }
    }

    /// The observation text injected into the prompt: raw content for
    /// successes, `keyword: reason` for failures.
    pub fn observation_content(&self) -> String {
        match self.status {
            ToolStatus::Ok => self.content.clone(),
            status => format!("{}: {}", status.keyword(), self.content),
        }
    }
}

/// One argument-schema violation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub parameter: String,
    pub reason: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.parameter, self.reason)
    }
}

/// Validate call arguments against the tool's parameter schema: every
/// required parameter present, every provided value matching its declared
/// primitive type, no unknown extras. Numeric strings count as valid for
/// number/integer parameters (they are coerced at dispatch).
pub fn validate_arguments(doc: &ToolDoc, call: &ToolCallRequest) -> Vec<Violation> {
    let (_, violations) = coerce_arguments(doc, &call.arguments);
    violations
}

/// Validation plus the coerced argument map actually passed to backends:
/// numeric strings become declared number types, everything else is
/// strict.
pub fn coerce_arguments(
    doc: &ToolDoc,
    arguments: &serde_json::Map<String, Value>,
) -> (serde_json::Map<String, Value>, Vec<Violation>) {
    let mut violations = Vec::new();
    let mut coerced = serde_json::Map::new();
    let schema = &doc.parameters;

    for required in &schema.required {
        if !arguments.contains_key(required) {
            violations.push(Violation {
                parameter: required.clone(),
                reason: "missing required parameter".to_string(),
            });
        }
    }

    for (name, value) in arguments {
        let Some(prop) = schema.properties.get(name) else {
            violations.push(Violation {
                parameter: name.clone(),
                reason: "unexpected argument not declared in the schema".to_string(),
            });
            continue;
        };
        match check_type(value, &prop.type_name) {
            TypeCheck::Ok => {
                coerced.insert(name.clone(), value.clone());
            }
            TypeCheck::Coerced(new_value) => {
                coerced.insert(name.clone(), new_value);
            }
            TypeCheck::Mismatch => {
                violations.push(Violation {
                    parameter: name.clone(),
                    reason: format!(
                        "expected {}, got {}",
                        prop.type_name,
                        json_type_name(value)
                    ),
                });
            }
        }
    }
    (coerced, violations)
}

enum TypeCheck {
    Ok,
    Coerced(Value),
    Mismatch,
}

fn check_type(value: &Value, declared: &str) -> TypeCheck {
    match declared {
        "string" => match value {
            Value::String(_) => TypeCheck::Ok,
            _ => TypeCheck::Mismatch,
        },
        "number" => match value {
            Value::Number(_) => TypeCheck::Ok,
            Value::String(s) => match s.trim().parse::<f64>() {
                Ok(f) if f.is_finite() => serde_json::Number::from_f64(f)
                    .map(|n| TypeCheck::Coerced(Value::Number(n)))
                    .unwrap_or(TypeCheck::Mismatch),
                _ => TypeCheck::Mismatch,
            },
            _ => TypeCheck::Mismatch,
        },
        "integer" => match value {
            Value::Number(n) if n.is_i64() || n.is_u64() => TypeCheck::Ok,
            Value::Number(n) => match n.as_f64() {
                Some(f) if f.fract() == 0.0 => TypeCheck::Coerced(Value::from(f as i64)),
                _ => TypeCheck::Mismatch,
            },
            Value::String(s) => match s.trim().parse::<i64>() {
                Ok(i) => TypeCheck::Coerced(Value::from(i)),
                Err(_) => TypeCheck::Mismatch,
            },
            _ => TypeCheck::Mismatch,
        },
        "boolean" => match value {
            Value::Bool(_) => TypeCheck::Ok,
            _ => TypeCheck::Mismatch,
        },
        "array" => match value {
            Value::Array(_) => TypeCheck::Ok,
            _ => TypeCheck::Mismatch,
        },
        "object" => match value {
            Value::Object(_) => TypeCheck::Ok,
            _ => TypeCheck::Mismatch,
        },
        // unrecognized declared types accept anything
        _ => TypeCheck::Ok,
    }
}

/// Dispatch a call to its backend. Validates, routes by `doc.source`,
/// bounds wall-clock time with a watchdog, and encodes every outcome in
/// the result status — this function never fails.
pub fn dispatch(
    registry: &ToolRegistry,
    call: &ToolCallRequest,
    aux: &Arc<dyn TextBackend>,
    timeout_ms: u64,
) -> ToolResult {
    let started = Instant::now();
    let Some(doc) = registry.get(&call.name) else {
        return ToolResult::failure(
            ToolStatus::UnknownTool,
            format!(
                "no tool named {:?} is registered; use <tool_search> to discover available tools",
                call.name
            ),
            started,
        );
    };

    let (arguments, violations) = coerce_arguments(doc, &call.arguments);
    if !violations.is_empty() {
        let listed = violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        return ToolResult::failure(ToolStatus::ValidationError, listed, started);
    }

    // Route in a worker thread so a stuck backend cannot stall the
    // episode; on timeout the worker is abandoned.
    let doc = doc.clone();
    let handler = registry.handler(&call.name).cloned();
    let aux = Arc::clone(aux);
    let name = call.name.clone();
    let (sender, receiver) = mpsc::channel();
    std::thread::spawn(move || {
        let outcome = route(&doc, handler, &name, arguments, &aux);
        let _ = sender.send(outcome);
    });

    match receiver.recv_timeout(Duration::from_millis(timeout_ms)) {
        Ok(Ok(content)) => {
            ToolResult { status: ToolStatus::Ok, content, latency_ms: started.elapsed().as_millis() as u64 }
        }
        Ok(Err(reason)) => ToolResult::failure(ToolStatus::ToolError, reason, started),
        Err(_) => ToolResult::failure(
            ToolStatus::Timeout,
            format!("tool {:?} did not respond within {timeout_ms} ms", call.name),
            started,
        ),
    }
}

fn route(
    doc: &ToolDoc,
    handler: Option<crate::registry::LocalHandler>,
    name: &str,
    arguments: serde_json::Map<String, Value>,
    aux: &Arc<dyn TextBackend>,
) -> Result<String, String> {
    match doc.source {
        ToolSource::Local => match handler {
            Some(handler) => handler(&arguments),
            None => Err(format!("local tool {name:?} has no registered handler")),
        },
        ToolSource::Http => {
            let Some(EndpointConfig::Http(cfg)) = &doc.endpoint_config else {
                return Err(format!("http tool {name:?} has no endpoint configuration"));
            };
            http_call(cfg, &arguments)
        }
        ToolSource::Simulated => {
            let call = ToolCallRequest { name: name.to_string(), arguments };
            aux.simulate_tool(doc, &call).map_err(|e| e.to_string())
        }
    }
}

/// REST-style adapter: `{param}` placeholders in the URL template are
/// substituted first; remaining arguments go to the query string for GET
/// and to a JSON body otherwise.
fn http_call(
    cfg: &HttpEndpointConfig,
    arguments: &serde_json::Map<String, Value>,
) -> Result<String, String> {
    let mut url = cfg.url_template.clone();
    let mut remaining: BTreeMap<&String, &Value> = arguments.iter().collect();
    for (key, value) in arguments {
        let placeholder = format!("{{{key}}}");
        if url.contains(&placeholder) {
            url = url.replace(&placeholder, &value_as_text(value));
            remaining.remove(key);
        }
    }

    let client = reqwest::blocking::Client::new();
    let method: reqwest::Method =
        cfg.method.to_uppercase().parse().map_err(|_| format!("bad method {:?}", cfg.method))?;
    let mut req = client.request(method.clone(), &url);
    if method == reqwest::Method::GET {
        let query: Vec<(String, String)> =
            remaining.iter().map(|(k, v)| ((*k).clone(), value_as_text(v))).collect();
        req = req.query(&query);
    } else {
        let body: serde_json::Map<String, Value> =
            remaining.into_iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        req = req.json(&Value::Object(body));
    }
    for (key, value) in &cfg.headers {
        req = req.header(key, value);
    }
    if let Some(var) = &cfg.auth_env {
        if let Ok(token) = std::env::var(var) {
            req = req.bearer_auth(token);
        }
    }
    let resp = req.send().map_err(|e| format!("request failed: {e}"))?;
    let status = resp.status();
    let body = resp.text().map_err(|e| format!("reading response failed: {e}"))?;
    if status.is_success() {
        Ok(body)
    } else {
        Err(format!("endpoint returned {status}: {}", body.chars().take(200).collect::<String>()))
    }
}

fn value_as_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
