//! Chat-completion backends: live HTTP, recorded fixtures, and wrappers.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine;
use serde_json::json;
use thiserror::Error;

use super::sha256_hex;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response envelope: {0}")]
    Envelope(String),
    #[error("no recorded response for request {0}")]
    FixtureMiss(String),
    #[error("missing API key in ${0}")]
    MissingApiKey(String),
}

impl BackendError {
    /// Network failures, 429 and 5xx are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Encoded image attached to a vision request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageInput {
    bytes: Arc<Vec<u8>>,
    mime: String,
}

impl ImageInput {
    pub fn new(bytes: Vec<u8>, mime: impl Into<String>) -> Self {
        Self { bytes: Arc::new(bytes), mime: mime.into() }
    }

    /// Reads a JPEG or PNG file; the MIME type follows the extension.
    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        let mime = match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
            Some("png") => "image/png",
            _ => "image/jpeg",
        };
        Ok(Self::new(std::fs::read(path)?, mime))
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn mime(&self) -> &str {
        &self.mime
    }

    pub fn sha256(&self) -> String {
        sha256_hex(&self.bytes)
    }

    pub fn data_url(&self) -> String {
        format!("data:{};base64,{}", self.mime, base64::engine::general_purpose::STANDARD.encode(self.bytes.as_slice()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub user_text: String,
    pub image: Option<ImageInput>,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl ChatRequest {
    /// SHA-256 of the canonical request description (sorted keys, image by digest).
    pub fn hash(&self) -> String {
        let canon = json!({
            "image_sha256": self.image.as_ref().map(|i| i.sha256()),
            "max_tokens": self.max_tokens,
            "model": self.model,
            "system": self.system,
            "temperature": self.temperature,
            "user_text": self.user_text,
        });
        sha256_hex(canon.to_string().as_bytes())
    }

    /// OpenAI-compatible chat-completions body.
    pub fn to_wire(&self) -> serde_json::Value {
        let user_content = match &self.image {
            Some(img) => json!([
                {"type": "text", "text": self.user_text},
                {"type": "image_url", "image_url": {"url": img.data_url()}},
            ]),
            None => json!(self.user_text),
        };
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": self.system},
                {"role": "user", "content": user_content},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

pub trait Backend: Send + Sync {
    /// Returns the assistant message text.
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError>;
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { client, endpoint: endpoint.into(), api_key })
    }

    /// Reads the bearer key from `env_var`; an unset variable is an error.
    pub fn from_env(endpoint: impl Into<String>, env_var: &str, timeout: Duration) -> Result<Self, BackendError> {
        let key = std::env::var(env_var).map_err(|_| BackendError::MissingApiKey(env_var.to_string()))?;
        Self::new(endpoint, Some(key), timeout)
    }
}

impl Backend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let mut builder = self.client.post(&self.endpoint).json(&req.to_wire());
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Http { status: status.as_u16(), body });
        }
        let v: serde_json::Value = serde_json::from_str(&body).map_err(|e| BackendError::Envelope(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| BackendError::Envelope("missing choices[0].message.content".into()))
    }
}

/// Replays responses keyed by request hash.
pub struct RecordedBackend {
    responses: BTreeMap<String, String>,
}

impl RecordedBackend {
    pub fn from_map(responses: BTreeMap<String, String>) -> Self {
        Self { responses }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let responses = serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self { responses })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl Backend for RecordedBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let h = req.hash();
        self.responses.get(&h).cloned().ok_or(BackendError::FixtureMiss(h))
    }
}

/// Counts calls reaching the inner backend.
pub struct CountingBackend {
    inner: Arc<dyn Backend>,
    calls: AtomicU64,
}

impl CountingBackend {
    pub fn new(inner: Arc<dyn Backend>) -> Self {
        Self { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for CountingBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(req)
    }
}

/// Wraps a backend and records every successful response, for building fixtures.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    log: Mutex<BTreeMap<String, String>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>) -> Self {
        Self { inner, log: Mutex::new(BTreeMap::new()) }
    }

    pub fn recorded(&self) -> BTreeMap<String, String> {
        self.log.lock().unwrap().clone()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.recorded())?;
        std::fs::write(path, text)
    }
}

impl Backend for RecordingBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let out = self.inner.complete(req)?;
        self.log.lock().unwrap().insert(req.hash(), out.clone());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    fn request() -> ChatRequest {
        ChatRequest {
            model: "gpt-4o".into(),
            system: super::super::SYSTEM_MESSAGE.into(),
            user_text: "hello".into(),
            image: Some(ImageInput::new(vec![1, 2, 3], "image/png")),
            max_tokens: 200,
            temperature: 0.0,
        }
    }

    #[test]
    fn hash_depends_on_every_field() {
        let base = request();
        let h = base.hash();
        assert_eq!(h, request().hash());
        let variants = [
            ChatRequest { model: "other".into(), ..request() },
            ChatRequest { system: "x".into(), ..request() },
            ChatRequest { user_text: "hi".into(), ..request() },
            ChatRequest { image: Some(ImageInput::new(vec![1, 2, 4], "image/png")), ..request() },
            ChatRequest { image: None, ..request() },
            ChatRequest { max_tokens: 5, ..request() },
        ];
        for v in variants {
            assert_ne!(v.hash(), h);
        }
    }

    #[test]
    fn wire_format() {
        let w = request().to_wire();
        assert_eq!(w["temperature"], 0.0);
        assert_eq!(w["max_tokens"], 200);
        assert!(w.get("seed").is_none());
        assert_eq!(w["messages"][0]["role"], "system");
        assert_eq!(w["messages"][1]["content"][1]["image_url"]["url"], "data:image/png;base64,AQID");
        let text_only = ChatRequest { image: None, ..request() }.to_wire();
        assert_eq!(text_only["messages"][1]["content"], "hello");
    }

    /// Serves canned HTTP responses, one per connection, and returns the request bodies.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<(String, String)>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = line.trim().to_string();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push((auth, String::from_utf8(buf).unwrap()));
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            seen
        });
        (url, handle)
    }

    #[test]
    fn http_backend_against_local_server() {
        let ok = json!({"choices": [{"message": {"role": "assistant", "content": "Not Occupied"}}]}).to_string();
        let (url, handle) = serve(vec![(200, ok), (503, "busy".into()), (400, "bad".into())]);
        let backend = HttpBackend::new(url, Some("k123".into()), Duration::from_secs(5)).unwrap();
        assert_eq!(backend.complete(&request()).unwrap(), "Not Occupied");
        let e = backend.complete(&request()).unwrap_err();
        assert!(e.is_retryable(), "{e}");
        let e = backend.complete(&request()).unwrap_err();
        assert!(!e.is_retryable(), "{e}");
        let seen = handle.join().unwrap();
        assert!(seen[0].0.eq_ignore_ascii_case("authorization: Bearer k123"), "{}", seen[0].0);
        let body: serde_json::Value = serde_json::from_str(&seen[0].1).unwrap();
        assert_eq!(body, request().to_wire());
    }

    #[test]
    fn missing_key_is_reported() {
        let e = HttpBackend::from_env("http://127.0.0.1:9", "SVOCC_TEST_SURELY_UNSET_KEY", Duration::from_secs(1));
        assert!(matches!(e, Err(BackendError::MissingApiKey(_))));
    }

    #[test]
    fn refused_connection_is_retryable() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let backend = HttpBackend::new(format!("http://127.0.0.1:{port}/"), None, Duration::from_secs(2)).unwrap();
        assert!(backend.complete(&request()).unwrap_err().is_retryable());
    }

    #[test]
    fn recording_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let inner = RecordedBackend::from_map(BTreeMap::from([(request().hash(), "ok".to_string())]));
        let rec = RecordingBackend::new(Arc::new(inner));
        rec.complete(&request()).unwrap();
        let path = dir.path().join("fx.json");
        rec.save(&path).unwrap();
        let back = RecordedBackend::load(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.complete(&request()).unwrap(), "ok");
    }
}
