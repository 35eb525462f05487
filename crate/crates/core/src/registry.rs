//! Tool documentation store, dense embedding index, and top-k retrieval.
//!
//! Tools are registered as function-definition documents, embedded once
//! into a flat exact-scan index, and retrieved by cosine similarity.
//! Retrieval is deliberately exact (no approximate structures): a few
//! thousand vectors of dimension ≤ 1024 scan in microseconds and exactness
//! keeps every ranking test an oracle comparison.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::fnv1a_64;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("duplicate tool name: {0}")]
    DuplicateName(String),
    #[error("invalid tool doc {name}: {reason}")]
    InvalidDoc { name: String, reason: String },
    #[error("index is empty")]
    EmptyIndex,
    #[error("index is stale: tools were registered after the last build")]
    StaleIndex,
    #[error("no index built")]
    NoIndex,
    #[error("embedding dimension {query} does not match index dimension {index}")]
    DimensionMismatch { query: usize, index: usize },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("embedding tool {name} failed: {source}")]
    EmbedFailed {
        name: String,
        #[source]
        source: Box<RegistryError>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("toolset parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

/// One property in a function-definition parameter schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertySchema {
    #[serde(rename = "type")]
    pub type_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// Function-definition parameter schema: an object with typed properties
/// and a required-name list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSchema {
    #[serde(rename = "type", default = "default_object_type")]
    pub schema_type: String,
    #[serde(default)]
    pub properties: BTreeMap<String, PropertySchema>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub required: Vec<String>,
}

fn default_object_type() -> String {
    "object".to_string()
}

impl Default for ParameterSchema {
    fn default() -> Self {
        ParameterSchema {
            schema_type: "object".to_string(),
            properties: BTreeMap::new(),
            required: Vec::new(),
        }
    }
}

impl ParameterSchema {
    pub fn with_property(mut self, name: &str, type_name: &str, description: &str) -> Self {
        self.properties.insert(
            name.to_string(),
            PropertySchema {
                type_name: type_name.to_string(),
                description: if description.is_empty() {
                    None
                } else {
                    Some(description.to_string())
                },
                extra: serde_json::Map::new(),
            },
        );
        self
    }

    pub fn require(mut self, name: &str) -> Self {
        self.required.push(name.to_string());
        self
    }
}

/// Which backend executes calls to this tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ToolSource {
    Local,
    Http,
    #[default]
    Simulated,
}

/// Backend-specific settings carried alongside a tool doc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointConfig {
    Http(HttpEndpointConfig),
    Simulated(SimulatedEndpointConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEndpointConfig {
    /// URL with optional `{param}` placeholders filled from call arguments.
    pub url_template: String,
    #[serde(default = "default_get")]
    pub method: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub headers: BTreeMap<String, String>,
    /// Name of the environment variable holding the bearer token, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
}

fn default_get() -> String {
    "GET".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedEndpointConfig {
    /// Extra persona text appended to the simulator prompt.
    #[serde(default)]
    pub persona: String,
}

/// A tool's identity, description, and parameter schema: the unit of
/// retrieval and dispatch. Serializes to the standard function-definition
/// format ({"name", "description", "parameters": {...}}).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDoc {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub parameters: ParameterSchema,
    #[serde(default, skip_serializing_if = "is_default_source")]
    pub source: ToolSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_config: Option<EndpointConfig>,
    /// Calls to this tool are serialized when set (stateful backends).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub serialize_calls: bool,
}

fn is_default_source(s: &ToolSource) -> bool {
    *s == ToolSource::Simulated
}

impl ToolDoc {
    pub fn new(name: &str, description: &str, parameters: ParameterSchema) -> Self {
        ToolDoc {
            name: name.to_string(),
            description: description.to_string(),
            parameters,
            source: ToolSource::Simulated,
            endpoint_config: None,
            serialize_calls: false,
        }
    }

    pub fn with_source(mut self, source: ToolSource) -> Self {
        self.source = source;
        self
    }

    /// The function-definition JSON given to the model.
    pub fn function_definition(&self) -> serde_json::Value {
        serde_json::json!({
            "name": self.name,
            "description": self.description,
            "parameters": self.parameters,
        })
    }

    /// Canonical text embedded for retrieval.
    pub fn canonical_text(&self) -> String {
        let params: Vec<&str> =
            self.parameters.properties.keys().map(String::as_str).collect();
        format!(
            "name: {}\ndescription: {}\nparameters: {}",
            self.name,
            self.description,
            params.join(", ")
        )
    }

    fn check(&self) -> Result<(), RegistryError> {
        if self.name.is_empty() || self.name.chars().any(char::is_whitespace) {
            return Err(RegistryError::InvalidDoc {
                name: self.name.clone(),
                reason: "name must be non-empty without whitespace".to_string(),
            });
        }
        for req in &self.parameters.required {
            if !self.parameters.properties.contains_key(req) {
                return Err(RegistryError::InvalidDoc {
                    name: self.name.clone(),
                    reason: format!("required parameter {req:?} is not declared in properties"),
                });
            }
        }
        Ok(())
    }
}

/// Text-to-unit-vector embedding.
pub trait Embedder: Send + Sync {
    /// Stable identifier recorded in persisted indexes.
    fn id(&self) -> String;
    fn dimension(&self) -> usize;
    /// Seed recorded in persisted indexes; 0 for unseeded backends.
    fn seed(&self) -> u64 {
        0
    }
    /// Embed non-empty text to a unit-L2-norm vector of `dimension()` reals.
    fn embed(&self, text: &str) -> Result<Vec<f64>, RegistryError>;
}

/// Hashed bag-of-tokens embedder: tokenize on non-alphanumerics, hash each
/// token into one of `dimension` buckets with a fixed seed, accumulate
/// counts, L2-normalize. Fully deterministic; used by all ranking tests.
#[derive(Debug, Clone)]
pub struct DeterministicEmbedder {
    pub dimension: usize,
    pub seed: u64,
}

impl DeterministicEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        DeterministicEmbedder { dimension, seed }
    }
}

impl Default for DeterministicEmbedder {
    fn default() -> Self {
        DeterministicEmbedder::new(128, 0)
    }
}

impl Embedder for DeterministicEmbedder {
    fn id(&self) -> String {
        format!("hashed-bag-v1-d{}-s{}", self.dimension, self.seed)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RegistryError> {
        if text.is_empty() {
            return Err(RegistryError::EmptyText);
        }
        let mut counts = vec![0.0f64; self.dimension];
        let mut any = false;
        for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let bucket = (fnv1a_64(self.seed, token.as_bytes()) % self.dimension as u64) as usize;
            counts[bucket] += 1.0;
            any = true;
        }
        if !any {
            // no alphanumeric tokens: hash the raw text as a single token
            let bucket = (fnv1a_64(self.seed, text.as_bytes()) % self.dimension as u64) as usize;
            counts[bucket] += 1.0;
        }
        normalize(&mut counts);
        Ok(counts)
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Embedder backed by a remote embeddings endpoint (OpenAI-style
/// `POST {base_url}/embeddings`).
pub struct RemoteEmbedder {
    pub base_url: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub dimension: usize,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(base_url: &str, model: &str, api_key_env: Option<&str>, dimension: usize) -> Self {
        RemoteEmbedder {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key_env: api_key_env.map(str::to_string),
            dimension,
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote-{}-d{}", self.model, self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RegistryError> {
        if text.is_empty() {
            return Err(RegistryError::EmptyText);
        }
        let mut req = self
            .client
            .post(format!("{}/embeddings", self.base_url))
            .json(&serde_json::json!({ "model": self.model, "input": [text] }));
        if let Some(var) = &self.api_key_env {
            if let Ok(key) = std::env::var(var) {
                req = req.bearer_auth(key);
            }
        }
        let resp = req
            .send()
            .map_err(|e| RegistryError::BackendUnavailable(e.to_string()))?
            .error_for_status()
            .map_err(|e| RegistryError::BackendUnavailable(e.to_string()))?;
        let body: serde_json::Value =
            resp.json().map_err(|e| RegistryError::BackendUnavailable(e.to_string()))?;
        let raw = body["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| {
                RegistryError::BackendUnavailable("response missing data[0].embedding".into())
            })?
            .iter()
            .map(|v| v.as_f64().unwrap_or(0.0))
            .collect::<Vec<f64>>();
        if raw.len() != self.dimension {
            return Err(RegistryError::DimensionMismatch {
                query: raw.len(),
                index: self.dimension,
            });
        }
        let mut v = raw;
        normalize(&mut v);
        Ok(v)
    }
}

/// Ranked retrieval outcome: scores non-increasing, ties broken by
/// ascending tool name, at most k entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub ranked: Vec<(String, f64)>,
}

/// Flat exact-scan vector index over tool docs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolIndex {
    pub format_version: u32,
    pub dimension: usize,
    pub embedder_id: String,
    pub seed: u64,
    pub entries: Vec<(String, Vec<f64>)>,
}

impl ToolIndex {
    /// Exact top-k by cosine similarity. Vectors are unit-norm so cosine
    /// is a dot product.
    pub fn search(
        &self,
        query: &str,
        k: usize,
        embedder: &dyn Embedder,
    ) -> Result<RetrievalResult, RegistryError> {
        if self.entries.is_empty() {
            return Err(RegistryError::EmptyIndex);
        }
        if embedder.dimension() != self.dimension {
            return Err(RegistryError::DimensionMismatch {
                query: embedder.dimension(),
                index: self.dimension,
            });
        }
        let qv = embedder.embed(query)?;
        let mut scored: Vec<(&str, f64)> =
            self.entries.iter().map(|(name, v)| (name.as_str(), dot(&qv, v))).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        scored.truncate(k.max(1).min(scored.len()));
        Ok(RetrievalResult {
            ranked: scored.into_iter().map(|(n, s)| (n.to_string(), s)).collect(),
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), RegistryError> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path)?;
        let index: ToolIndex = serde_json::from_str(&text)?;
        for (name, v) in &index.entries {
            if v.len() != index.dimension {
                return Err(RegistryError::InvalidDoc {
                    name: name.clone(),
                    reason: format!(
                        "stored vector has dimension {}, index header says {}",
                        v.len(),
                        index.dimension
                    ),
                });
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(RegistryError::InvalidDoc {
                    name: name.clone(),
                    reason: format!("stored vector norm {norm} is not unit"),
                });
            }
        }
        Ok(index)
    }
}

/// Handler for a locally-executed tool: arguments in, text result or
/// one-line error out.
pub type LocalHandler = Arc<
    dyn Fn(&serde_json::Map<String, serde_json::Value>) -> Result<String, String> + Send + Sync,
>;

/// Tool store plus retrieval index. Mutable only during setup; after
/// `build_index` it is read-only and safely shareable across episodes.
#[derive(Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, ToolDoc>,
    handlers: BTreeMap<String, LocalHandler>,
    index: Option<ToolIndex>,
    stale: bool,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_tool(&mut self, doc: ToolDoc) -> Result<(), RegistryError> {
        doc.check()?;
        if self.tools.contains_key(&doc.name) {
            return Err(RegistryError::DuplicateName(doc.name));
        }
        self.stale = self.index.is_some();
        self.tools.insert(doc.name.clone(), doc);
        Ok(())
    }

    /// Register a locally-executed tool with its handler.
    pub fn register_local(
        &mut self,
        mut doc: ToolDoc,
        handler: LocalHandler,
    ) -> Result<(), RegistryError> {
        doc.source = ToolSource::Local;
        let name = doc.name.clone();
        self.register_tool(doc)?;
        self.handlers.insert(name, handler);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ToolDoc> {
        self.tools.get(name)
    }

    pub fn handler(&self, name: &str) -> Option<&LocalHandler> {
        self.handlers.get(name)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn tools(&self) -> impl Iterator<Item = &ToolDoc> {
        self.tools.values()
    }

    /// Embed every registered doc's canonical text into a fresh index.
    pub fn build_index(&mut self, embedder: &dyn Embedder) -> Result<(), RegistryError> {
        if self.tools.is_empty() {
            return Err(RegistryError::EmptyIndex);
        }
        let mut entries = Vec::with_capacity(self.tools.len());
        for doc in self.tools.values() {
            let v = embedder.embed(&doc.canonical_text()).map_err(|e| {
                RegistryError::EmbedFailed { name: doc.name.clone(), source: Box::new(e) }
            })?;
            entries.push((doc.name.clone(), v));
        }
        self.index = Some(ToolIndex {
            format_version: 1,
            dimension: embedder.dimension(),
            embedder_id: embedder.id(),
            seed: embedder.seed(),
            entries,
        });
        self.stale = false;
        Ok(())
    }

    pub fn index(&self) -> Option<&ToolIndex> {
        self.index.as_ref()
    }

    /// Adopt a previously persisted index (e.g. loaded from disk).
    pub fn set_index(&mut self, index: ToolIndex) {
        self.index = Some(index);
        self.stale = false;
    }

    /// Top-k retrieval against the built index.
    pub fn search(
        &self,
        query: &str,
        k: usize,
        embedder: &dyn Embedder,
    ) -> Result<RetrievalResult, RegistryError> {
        if self.stale {
            return Err(RegistryError::StaleIndex);
        }
        let index = self.index.as_ref().ok_or(RegistryError::NoIndex)?;
        index.search(query, k, embedder)
    }
}

/// Load a toolset file: either a JSON array of function definitions or
/// line-delimited JSON, in the standard format
/// `{"name", "description", "parameters": {"type": "object", ...}}`.
///
/// If `<path>.endpoints.json` exists it is read as a sidecar mapping tool
/// name to `{"source": ..., "endpoint_config": ...}`. Tools without a
/// sidecar entry default to the simulated source.
pub fn load_toolset(path: &std::path::Path) -> Result<Vec<ToolDoc>, RegistryError> {
    let text = std::fs::read_to_string(path)?;
    let mut docs: Vec<ToolDoc> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text)?
    } else {
        let mut docs = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            docs.push(serde_json::from_str(line)?);
        }
        docs
    };

    let sidecar_path = path.with_extension("endpoints.json");
    if sidecar_path.exists() {
        #[derive(Deserialize)]
        struct SidecarEntry {
            #[serde(default)]
            source: Option<ToolSource>,
            #[serde(default)]
            endpoint_config: Option<EndpointConfig>,
            #[serde(default)]
            serialize_calls: bool,
        }
        let sidecar: BTreeMap<String, SidecarEntry> =
            serde_json::from_str(&std::fs::read_to_string(&sidecar_path)?)?;
        for doc in &mut docs {
            if let Some(entry) = sidecar.get(&doc.name) {
                if let Some(source) = entry.source {
                    doc.source = source;
                }
                doc.endpoint_config = entry.endpoint_config.clone();
                doc.serialize_calls = entry.serialize_calls;
            }
        }
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(name: &str, desc: &str) -> ToolDoc {
        ToolDoc::new(
            name,
            desc,
            ParameterSchema::default().with_property("q", "string", "query").require("q"),
        )
    }

    #[test]
    fn deterministic_embedder_repeats() {
        let e = DeterministicEmbedder::new(64, 7);
        assert_eq!(e.embed("alpha").unwrap(), e.embed("alpha").unwrap());
        assert_ne!(e.embed("alpha").unwrap(), e.embed("beta gamma").unwrap());
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let e = DeterministicEmbedder::new(32, 0);
        for text in ["a", "a b c", "!!!", "  ", "many words in a long sentence here"] {
            let v = e.embed(text).unwrap();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-6, "norm {norm} for {text:?}");
        }
        assert!(matches!(e.embed(""), Err(RegistryError::EmptyText)));
    }

    #[test]
    fn self_similarity_is_one() {
        let e = DeterministicEmbedder::new(32, 0);
        let v = e.embed("x").unwrap();
        assert!((dot(&v, &v) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut reg = ToolRegistry::new();
        reg.register_tool(doc("a", "first")).unwrap();
        assert!(matches!(
            reg.register_tool(doc("a", "second")),
            Err(RegistryError::DuplicateName(_))
        ));
    }

    #[test]
    fn required_must_be_declared() {
        let mut reg = ToolRegistry::new();
        let mut bad = doc("b", "desc");
        bad.parameters.required.push("ghost".to_string());
        assert!(matches!(reg.register_tool(bad), Err(RegistryError::InvalidDoc { .. })));
    }

    #[test]
    fn self_description_query_ranks_first() {
        let mut reg = ToolRegistry::new();
        reg.register_tool(doc("alpha_search", "find clips by keyword")).unwrap();
        reg.register_tool(doc("beta_fetch", "download media metadata")).unwrap();
        let e = DeterministicEmbedder::new(128, 0);
        reg.build_index(&e).unwrap();
        let query = reg.get("alpha_search").unwrap().canonical_text();
        let result = reg.search(&query, 1, &e).unwrap();
        assert_eq!(result.ranked[0].0, "alpha_search");
        assert!((result.ranked[0].1 - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn k_exceeding_size_returns_all() {
        let mut reg = ToolRegistry::new();
        reg.register_tool(doc("a", "one")).unwrap();
        reg.register_tool(doc("b", "two")).unwrap();
        let e = DeterministicEmbedder::new(16, 0);
        reg.build_index(&e).unwrap();
        let result = reg.search("anything", 10, &e).unwrap();
        assert_eq!(result.ranked.len(), 2);
    }

    #[test]
    fn stale_index_detected() {
        let mut reg = ToolRegistry::new();
        reg.register_tool(doc("a", "one")).unwrap();
        let e = DeterministicEmbedder::new(16, 0);
        reg.build_index(&e).unwrap();
        reg.register_tool(doc("b", "two")).unwrap();
        assert!(matches!(reg.search("x", 1, &e), Err(RegistryError::StaleIndex)));
    }

    #[test]
    fn index_round_trips_through_disk() {
        let mut reg = ToolRegistry::new();
        reg.register_tool(doc("a", "alpha one")).unwrap();
        reg.register_tool(doc("b", "beta two")).unwrap();
        let e = DeterministicEmbedder::new(16, 3);
        reg.build_index(&e).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        reg.index().unwrap().save(&path).unwrap();
        let loaded = ToolIndex::load(&path).unwrap();
        assert_eq!(loaded.dimension, 16);
        assert_eq!(loaded.seed, 3);
        assert_eq!(loaded.entries, reg.index().unwrap().entries);
    }

    #[test]
    fn toolset_file_array_and_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let array_path = dir.path().join("tools.json");
        std::fs::write(
            &array_path,
            r#"[{"name": "t1", "description": "d1", "parameters": {"type": "object", "properties": {"x": {"type": "string"}}, "required": ["x"]}}]"#,
        )
        .unwrap();
        let docs = load_toolset(&array_path).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].name, "t1");
        assert_eq!(docs[0].source, ToolSource::Simulated);

        let jsonl_path = dir.path().join("tools.jsonl");
        std::fs::write(
            &jsonl_path,
            "{\"name\": \"t1\", \"description\": \"d1\", \"parameters\": {\"type\": \"object\", \"properties\": {}}}\n{\"name\": \"t2\", \"description\": \"d2\", \"parameters\": {\"type\": \"object\", \"properties\": {}}}\n",
        )
        .unwrap();
        let docs = load_toolset(&jsonl_path).unwrap();
        assert_eq!(docs.len(), 2);
    }

    #[test]
    fn endpoint_sidecar_applies() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tools.json");
        std::fs::write(
            &path,
            r#"[{"name": "web", "description": "d", "parameters": {"type": "object", "properties": {}}}]"#,
        )
        .unwrap();
        std::fs::write(
            dir.path().join("tools.endpoints.json"),
            r#"{"web": {"source": "http", "endpoint_config": {"http": {"url_template": "https://example.test/api", "method": "GET"}}}}"#,
        )
        .unwrap();
        let docs = load_toolset(&path).unwrap();
        assert_eq!(docs[0].source, ToolSource::Http);
        assert!(matches!(docs[0].endpoint_config, Some(EndpointConfig::Http(_))));
    }
}
