//! Vision-language model client.
//!
//! Two calls per frame: a vision call that returns the nine-attribute JSON
//! object, and (for the two-stage strategy) a text-only few-shot decision
//! call. Backends are pluggable; responses are cached on disk by request hash.

pub mod backend;
pub mod cache;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decision::OccupancyLabel;
pub use backend::{Backend, BackendError, ChatRequest, CountingBackend, HttpBackend, ImageInput, RecordedBackend, RecordingBackend};
pub use cache::{CachedResponse, ResponseCache};

/// User prompt for attribute extraction.
pub const VISION_PROMPT: &str = include_str!("../../prompts/vision_attributes.txt");
/// Few-shot decision prompt; [`DECISION_PLACEHOLDER`] marks where the building's attributes go.
pub const DECISION_TEMPLATE: &str = include_str!("../../prompts/decision_fewshot.txt");
pub const DECISION_PLACEHOLDER: &str = "{...JSON from vision model...}";
pub const SYSTEM_MESSAGE: &str = "You are a helpful assistant that analyzes images and outputs structured JSON.";

pub const TEMPERATURE: f64 = 0.0;
pub const MAX_TOKENS_VISION: u32 = 200;
pub const MAX_TOKENS_DECISION: u32 = 5;

/// Attribute keys in canonical order.
pub const ATTRIBUTE_KEYS: [&str; 9] = [
    "house_destruction",
    "structural_damage",
    "exterior_debris",
    "open_doors_windows",
    "site_accessible",
    "exterior_mud",
    "emergency_markings",
    "major_repairs",
    "vehicle_presence",
];

#[derive(Debug, Error)]
pub enum VlmError {
    #[error("no recorded response for request {0}")]
    FixtureMiss(String),
    #[error("backend transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("cache: {0}")]
    Cache(String),
}

/// The nine visual indicators extracted from one rectified frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeVector {
    pub house_destruction: bool,
    pub structural_damage: bool,
    pub exterior_debris: bool,
    pub open_doors_windows: bool,
    pub site_accessible: bool,
    pub exterior_mud: bool,
    pub emergency_markings: bool,
    pub major_repairs: bool,
    pub vehicle_presence: bool,
}

impl AttributeVector {
    /// Values in canonical key order.
    pub fn values(&self) -> [bool; 9] {
        [
            self.house_destruction,
            self.structural_damage,
            self.exterior_debris,
            self.open_doors_windows,
            self.site_accessible,
            self.exterior_mud,
            self.emergency_markings,
            self.major_repairs,
            self.vehicle_presence,
        ]
    }

    pub fn field_mut(&mut self, i: usize) -> &mut bool {
        match i {
            0 => &mut self.house_destruction,
            1 => &mut self.structural_damage,
            2 => &mut self.exterior_debris,
            3 => &mut self.open_doors_windows,
            4 => &mut self.site_accessible,
            5 => &mut self.exterior_mud,
            6 => &mut self.emergency_markings,
            7 => &mut self.major_repairs,
            8 => &mut self.vehicle_presence,
            _ => panic!("attribute index {i} out of range"),
        }
    }

    /// Bit `i` sets the `i`-th key in canonical order.
    pub fn from_bits(bits: u16) -> Self {
        let mut a = Self::default();
        for i in 0..9 {
            *a.field_mut(i) = bits & (1 << i) != 0;
        }
        a
    }

    pub fn to_bits(&self) -> u16 {
        self.values().iter().enumerate().fold(0, |acc, (i, &b)| acc | ((b as u16) << i))
    }

    /// Multi-line JSON in canonical key order, two-space indented.
    pub fn to_canonical_json(&self) -> String {
        let body: Vec<String> = ATTRIBUTE_KEYS
            .iter()
            .zip(self.values())
            .map(|(k, v)| format!("  \"{k}\": {v}"))
            .collect();
        format!("{{\n{}\n}}", body.join(",\n"))
    }

    /// Validates a JSON object against the closed nine-key boolean schema.
    pub fn from_json_value(v: &serde_json::Value) -> Result<Self, String> {
        let obj = v.as_object().ok_or("not a JSON object")?;
        if let Some(extra) = obj.keys().find(|k| !ATTRIBUTE_KEYS.contains(&k.as_str())) {
            return Err(format!("unexpected key {extra:?}"));
        }
        let mut a = Self::default();
        for (i, key) in ATTRIBUTE_KEYS.iter().enumerate() {
            match obj.get(*key) {
                Some(serde_json::Value::Bool(b)) => *a.field_mut(i) = *b,
                Some(other) => return Err(format!("key {key:?} is not boolean: {other}")),
                None => return Err(format!("missing key {key:?}")),
            }
        }
        Ok(a)
    }
}

/// Returns the first balanced `{...}` substring of `text` that parses as a
/// JSON object. String literals are respected when matching braces.
pub fn first_json_object(text: &str) -> Option<serde_json::Value> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let open = start + off;
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        let mut close = None;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_str {
                match (escaped, b) {
                    (true, _) => escaped = false,
                    (false, b'\\') => escaped = true,
                    (false, b'"') => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        if let Some(close) = close {
            if let Ok(v @ serde_json::Value::Object(_)) = serde_json::from_str(&text[open..=close]) {
                return Some(v);
            }
        }
        start = open + 1;
    }
    None
}

/// Parses a vision response into the attribute schema.
pub fn parse_attributes(text: &str) -> Result<AttributeVector, String> {
    let v = first_json_object(text).ok_or("no JSON object in response")?;
    AttributeVector::from_json_value(&v)
}

/// Maps a decision response to a label; anything other than the two
/// expected tokens is Uncertain.
pub fn parse_decision_token(text: &str) -> OccupancyLabel {
    let cleaned: String = text
        .trim()
        .trim_matches(|c: char| c == '\'' || c == '"' || c == '.' || c == '`' || c.is_whitespace())
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_ascii_lowercase();
    match cleaned.as_str() {
        "occupied" => OccupancyLabel::Occupied,
        "not occupied" => OccupancyLabel::NotOccupied,
        _ => OccupancyLabel::Uncertain,
    }
}

/// Decision prompt with `attrs` substituted for the placeholder.
pub fn decision_prompt(attrs: &AttributeVector) -> String {
    DECISION_TEMPLATE.replace(DECISION_PLACEHOLDER, &attrs.to_canonical_json())
}

/// The few-shot exemplars embedded in the decision prompt, in order.
pub fn fewshot_examples() -> Vec<(AttributeVector, OccupancyLabel)> {
    let mut out = Vec::new();
    let mut rest = DECISION_TEMPLATE;
    while let Some(pos) = rest.find("Example ") {
        rest = &rest[pos..];
        let Some(open) = rest.find('{') else { break };
        let Some(close) = rest[open..].find('}').map(|c| open + c) else { break };
        let attrs = serde_json::from_str::<serde_json::Value>(&rest[open..=close])
            .ok()
            .and_then(|v| AttributeVector::from_json_value(&v).ok());
        let label_line = rest[close + 1..].lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        if let (Some(a), Ok(l)) = (attrs, label_line.trim().parse::<OccupancyLabel>()) {
            out.push((a, l));
        }
        rest = &rest[close + 1..];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtractionStatus {
    Ok,
    ParseFailure,
    TransportError,
}

impl ExtractionStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExtractionStatus::Ok => "Ok",
            ExtractionStatus::ParseFailure => "ParseFailure",
            ExtractionStatus::TransportError => "TransportError",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionResult {
    pub raw_text: String,
    /// Present iff `status == Ok`.
    pub parsed: Option<AttributeVector>,
    pub status: ExtractionStatus,
    pub request_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionResult {
    pub raw_text: String,
    pub label: OccupancyLabel,
    pub request_hash: String,
}

/// Connection settings. Temperature is fixed at 0 and not configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub api_key_env_var: String,
    pub request_timeout_s: f64,
    pub max_concurrent_requests: usize,
    pub cache_dir: Option<std::path::PathBuf>,
    /// When set, responses are replayed from this fixture instead of the network.
    pub recorded_fixture: Option<std::path::PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-4o".into(),
            api_key_env_var: "OPENAI_API_KEY".into(),
            request_timeout_s: 60.0,
            max_concurrent_requests: 4,
            cache_dir: None,
            recorded_fixture: None,
        }
    }
}

impl BackendConfig {
    pub fn max_tokens_vision(&self) -> u32 {
        MAX_TOKENS_VISION
    }

    pub fn max_tokens_decision(&self) -> u32 {
        MAX_TOKENS_DECISION
    }
}

/// Transport retry schedule: `max_attempts` tries with doubling delays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

/// Hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct VlmClient {
    backend: Arc<dyn Backend>,
    cache: Option<ResponseCache>,
    model_name: String,
    retry: RetryPolicy,
}

impl VlmClient {
    pub fn new(backend: Arc<dyn Backend>, model_name: impl Into<String>) -> Self {
        Self { backend, cache: None, model_name: model_name.into(), retry: RetryPolicy::default() }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn vision_request(&self, image: ImageInput) -> ChatRequest {
        ChatRequest {
            model: self.model_name.clone(),
            system: SYSTEM_MESSAGE.to_string(),
            user_text: VISION_PROMPT.to_string(),
            image: Some(image),
            max_tokens: MAX_TOKENS_VISION,
            temperature: TEMPERATURE,
        }
    }

    pub fn decision_request(&self, attrs: &AttributeVector) -> ChatRequest {
        ChatRequest {
            model: self.model_name.clone(),
            system: SYSTEM_MESSAGE.to_string(),
            user_text: decision_prompt(attrs),
            image: None,
            max_tokens: MAX_TOKENS_DECISION,
            temperature: TEMPERATURE,
        }
    }

    /// Cache lookup, then backend with bounded retries on transport errors.
    fn complete(&self, req: &ChatRequest) -> Result<String, VlmError> {
        let hash = req.hash();
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&hash).map_err(|e| VlmError::Cache(e.to_string()))? {
                return Ok(hit.raw_text);
            }
        }
        let mut attempt = 0;
        let text = loop {
            attempt += 1;
            match self.backend.complete(req) {
                Ok(t) => break t,
                Err(BackendError::FixtureMiss(h)) => return Err(VlmError::FixtureMiss(h)),
                Err(e) if e.is_retryable() && attempt < self.retry.max_attempts => {
                    log::warn!("request {hash}: attempt {attempt} failed: {e}");
                    std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
                }
                Err(e) => return Err(VlmError::Transport { attempts: attempt, message: e.to_string() }),
            }
        };
        if let Some(cache) = &self.cache {
            let entry = CachedResponse {
                request_hash: hash,
                model: req.model.clone(),
                kind: if req.image.is_some() { "vision".into() } else { "decision".into() },
                image_sha256: req.image.as_ref().map(|i| i.sha256()),
                raw_text: text.clone(),
            };
            cache.put(&entry).map_err(|e| VlmError::Cache(e.to_string()))?;
        }
        Ok(text)
    }

    /// Runs the vision call. Transport failures become a `TransportError`
    /// status; a fixture miss is an error.
    pub fn extract_attributes(&self, image: ImageInput) -> Result<ExtractionResult, VlmError> {
        let req = self.vision_request(image);
        let request_hash = req.hash();
        match self.complete(&req) {
            Ok(raw_text) => Ok(match parse_attributes(&raw_text) {
                Ok(a) => ExtractionResult { raw_text, parsed: Some(a), status: ExtractionStatus::Ok, request_hash },
                Err(_) => ExtractionResult { raw_text, parsed: None, status: ExtractionStatus::ParseFailure, request_hash },
            }),
            Err(VlmError::Transport { message, .. }) => Ok(ExtractionResult {
                raw_text: message,
                parsed: None,
                status: ExtractionStatus::TransportError,
                request_hash,
            }),
            Err(e) => Err(e),
        }
    }

    pub fn decide_two_stage(&self, attrs: &AttributeVector) -> Result<DecisionResult, VlmError> {
        let req = self.decision_request(attrs);
        let request_hash = req.hash();
        let raw_text = self.complete(&req)?;
        let label = parse_decision_token(&raw_text);
        Ok(DecisionResult { raw_text, label, request_hash })
    }
}
