//! Chat backends: the `ChatBackend` abstraction the agent loop talks to, an
//! OpenAI-compatible HTTP client with retry/backoff, and a scripted backend
//! for deterministic tests. World-backed oracle backends live in
//! [`crate::synthworld`].

use std::sync::Mutex;
use std::time::Duration;

use base64::Engine as _;

use crate::media::Frame;
use crate::model::TokenUsage;

/// Environment variable holding the API key for the HTTP backend.
pub const ENV_API_KEY: &str = "SEEKLOOP_API_KEY";
/// Environment variable overriding the API base URL.
pub const ENV_API_BASE: &str = "SEEKLOOP_API_BASE";
/// Environment variable selecting the thinking model.
pub const ENV_MODEL: &str = "SEEKLOOP_MODEL";
/// Environment variable selecting a distinct vision model (optional).
pub const ENV_VISION_MODEL: &str = "SEEKLOOP_VISION_MODEL";

const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";

/// Errors from backend completion calls.
#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("authentication failed (status {0})")]
    AuthFailed(u16),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("api error (status {status}): {message}")]
    Api { status: u16, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// Message author role.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    fn wire_name(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// One content part: prompt text, or a frame with its timestamp label.
#[derive(Debug, Clone, PartialEq)]
pub enum Part {
    Text(String),
    Image { timestamp: f64, media_type: String, data: Vec<u8> },
}

/// A chat message. Assistant messages are only ever built from text; frames
/// travel exclusively in user messages.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Message { role: Role::System, parts: vec![Part::Text(text.into())] }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Message { role: Role::User, parts: vec![Part::Text(text.into())] }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Message { role: Role::Assistant, parts: vec![Part::Text(text.into())] }
    }

    /// A user message carrying prompt text followed by frames.
    pub fn user_with_frames(text: impl Into<String>, frames: Vec<Frame>) -> Self {
        let mut parts = vec![Part::Text(text.into())];
        parts.extend(frames.into_iter().map(|f| Part::Image {
            timestamp: f.timestamp,
            media_type: f.media_type,
            data: f.bytes,
        }));
        Message { role: Role::User, parts }
    }

    /// All text parts concatenated.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for part in &self.parts {
            if let Part::Text(t) = part {
                out.push_str(t);
            }
        }
        out
    }

    /// Timestamp labels of the image parts, in order.
    pub fn image_timestamps(&self) -> Vec<f64> {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Image { timestamp, .. } => Some(*timestamp),
                _ => None,
            })
            .collect()
    }
}

/// A completed backend reply.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub text: String,
    pub usage: TokenUsage,
}

/// Anything that can complete a chat transcript: HTTP models, scripted
/// replies, or world-backed oracles.
pub trait ChatBackend: Send + Sync {
    /// Stable identity recorded in trajectory logs.
    fn name(&self) -> String;
    fn complete(&self, messages: &[Message]) -> Result<BackendReply, BackendError>;
}

fn ceil_div4(chars: usize) -> u64 {
    (chars as u64 + 3) / 4
}

/// Usage estimate when an endpoint reports none: one token per four
/// characters of prompt text and reply text, flagged as estimated. Image
/// parts are not counted.
pub fn estimate_usage(messages: &[Message], reply_text: &str) -> TokenUsage {
    let input_chars: usize = messages.iter().map(|m| m.text().chars().count()).sum();
    TokenUsage {
        input_tokens: ceil_div4(input_chars),
        output_tokens: ceil_div4(reply_text.chars().count()),
        estimated: true,
    }
}

/// OpenAI-compatible `chat/completions` client. Frames are inlined as
/// base64 data URLs. Transport failures, 429s and 5xx responses are retried
/// with exponential backoff; other 4xx responses are never retried.
pub struct HttpChatBackend {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: String,
    model: String,
    max_attempts: u32,
    backoff_base: Duration,
}

impl HttpChatBackend {
    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        model: impl Into<String>,
    ) -> Self {
        let client = reqwest::blocking::Client::builder()
            .no_proxy()
            .timeout(Duration::from_secs(300))
            .build()
            .expect("default reqwest client");
        HttpChatBackend {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            model: model.into(),
            max_attempts: 5,
            backoff_base: Duration::from_secs(1),
        }
    }

    /// Overrides the retry schedule (used by tests to avoid real sleeps).
    pub fn with_backoff(mut self, base: Duration, max_attempts: u32) -> Self {
        self.backoff_base = base;
        self.max_attempts = max_attempts.max(1);
        self
    }

    /// Builds the thinking backend from `SEEKLOOP_*` environment variables.
    pub fn from_env() -> Result<Self, BackendError> {
        Self::from_env_model(std::env::var(ENV_MODEL).ok())
    }

    /// Builds the vision backend from the environment, falling back to the
    /// thinking model when `SEEKLOOP_VISION_MODEL` is unset.
    pub fn vision_from_env() -> Result<Self, BackendError> {
        Self::from_env_model(
            std::env::var(ENV_VISION_MODEL).ok().or_else(|| std::env::var(ENV_MODEL).ok()),
        )
    }

    fn from_env_model(model: Option<String>) -> Result<Self, BackendError> {
        let api_key = std::env::var(ENV_API_KEY)
            .map_err(|_| BackendError::Config(format!("{ENV_API_KEY} is not set")))?;
        let base =
            std::env::var(ENV_API_BASE).unwrap_or_else(|_| DEFAULT_API_BASE.to_string());
        let model =
            model.ok_or_else(|| BackendError::Config(format!("{ENV_MODEL} is not set")))?;
        Ok(Self::new(base, api_key, model))
    }

    fn request_body(&self, messages: &[Message]) -> serde_json::Value {
        let wire_messages: Vec<serde_json::Value> = messages
            .iter()
            .map(|m| {
                let only_text = m.parts.iter().all(|p| matches!(p, Part::Text(_)));
                let content = if only_text {
                    serde_json::Value::String(m.text())
                } else {
                    m.parts
                        .iter()
                        .map(|p| match p {
                            Part::Text(t) => serde_json::json!({"type": "text", "text": t}),
                            Part::Image { media_type, data, .. } => {
                                let b64 = base64::engine::general_purpose::STANDARD.encode(data);
                                serde_json::json!({
                                    "type": "image_url",
                                    "image_url": {"url": format!("data:{media_type};base64,{b64}")}
                                })
                            }
                        })
                        .collect()
                };
                serde_json::json!({"role": m.role.wire_name(), "content": content})
            })
            .collect();
        serde_json::json!({"model": self.model, "messages": wire_messages})
    }
}

#[derive(serde::Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(serde::Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(serde::Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(serde::Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl ChatBackend for HttpChatBackend {
    fn name(&self) -> String {
        format!("http:{}", self.model)
    }

    fn complete(&self, messages: &[Message]) -> Result<BackendReply, BackendError> {
        let url = format!("{}/chat/completions", self.base_url);
        let body = self.request_body(messages);
        let mut last_failure = String::new();
        let mut rate_limited = false;
        for attempt in 1..=self.max_attempts {
            if attempt > 1 {
                std::thread::sleep(self.backoff_base * 2u32.pow(attempt - 2));
            }
            let sent = self
                .client
                .post(&url)
                .bearer_auth(&self.api_key)
                .json(&body)
                .send();
            let response = match sent {
                Ok(r) => r,
                Err(e) => {
                    rate_limited = false;
                    last_failure = e.to_string();
                    continue;
                }
            };
            let status = response.status().as_u16();
            match status {
                200..=299 => {
                    let text = response
                        .text()
                        .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
                    let wire: WireResponse = serde_json::from_str(&text)
                        .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
                    let content = wire
                        .choices
                        .first()
                        .and_then(|c| c.message.content.clone())
                        .ok_or_else(|| {
                            BackendError::MalformedResponse("no choice content".into())
                        })?;
                    let usage = match wire.usage {
                        Some(u) => TokenUsage {
                            input_tokens: u.prompt_tokens,
                            output_tokens: u.completion_tokens,
                            estimated: false,
                        },
                        None => estimate_usage(messages, &content),
                    };
                    return Ok(BackendReply { text: content, usage });
                }
                401 | 403 => return Err(BackendError::AuthFailed(status)),
                429 => {
                    rate_limited = true;
                    last_failure = format!("status {status}");
                }
                500..=599 => {
                    rate_limited = false;
                    last_failure = format!("status {status}");
                }
                _ => {
                    let message = response.text().unwrap_or_default();
                    return Err(BackendError::Api { status, message });
                }
            }
        }
        if rate_limited {
            Err(BackendError::RateLimited { attempts: self.max_attempts })
        } else {
            Err(BackendError::Transport {
                attempts: self.max_attempts,
                message: last_failure,
            })
        }
    }
}

/// Reply returned once a scripted backend runs out of lines; it parses as a
/// sole answer, so scripted episodes always terminate.
pub const SCRIPT_EXHAUSTED_REPLY: &str = "Answer: UNKNOWN";

struct ScriptState {
    cursor: usize,
    prompts: Vec<Vec<Message>>,
}

/// A backend that replays a fixed list of replies and records every prompt
/// it receives. Bind one instance to one episode; usage is reported as zero
/// input tokens and one estimated token per four reply characters, keeping
/// token totals hand-computable in tests.
pub struct ScriptedBackend {
    name: String,
    replies: Vec<String>,
    state: Mutex<ScriptState>,
}

impl ScriptedBackend {
    pub fn new(replies: Vec<String>) -> Self {
        ScriptedBackend {
            name: "scripted".to_string(),
            replies,
            state: Mutex::new(ScriptState { cursor: 0, prompts: Vec::new() }),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Number of completion calls served so far.
    pub fn calls(&self) -> usize {
        self.state.lock().unwrap().prompts.len()
    }

    /// Every prompt received, in call order.
    pub fn recorded_prompts(&self) -> Vec<Vec<Message>> {
        self.state.lock().unwrap().prompts.clone()
    }
}

impl ChatBackend for ScriptedBackend {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn complete(&self, messages: &[Message]) -> Result<BackendReply, BackendError> {
        let mut state = self.state.lock().unwrap();
        state.prompts.push(messages.to_vec());
        let text = self
            .replies
            .get(state.cursor)
            .cloned()
            .unwrap_or_else(|| SCRIPT_EXHAUSTED_REPLY.to_string());
        state.cursor += 1;
        Ok(BackendReply {
            text: text.clone(),
            usage: TokenUsage {
                input_tokens: 0,
                output_tokens: ceil_div4(text.chars().count()),
                estimated: true,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    #[test]
    fn scripted_backend_replays_then_reports_exhaustion() {
        let backend = ScriptedBackend::new(vec!["one".into(), "two".into()]);
        let prompt = [Message::user("hi")];
        assert_eq!(backend.complete(&prompt).unwrap().text, "one");
        assert_eq!(backend.complete(&prompt).unwrap().text, "two");
        assert_eq!(backend.complete(&prompt).unwrap().text, SCRIPT_EXHAUSTED_REPLY);
        assert_eq!(backend.calls(), 3);
        assert_eq!(backend.recorded_prompts()[0][0].text(), "hi");
    }

    #[test]
    fn scripted_usage_is_a_quarter_of_reply_chars() {
        let backend = ScriptedBackend::new(vec!["abcdefgh!".into()]); // 9 chars
        let reply = backend.complete(&[Message::user("x")]).unwrap();
        assert_eq!(
            reply.usage,
            TokenUsage { input_tokens: 0, output_tokens: 3, estimated: true }
        );
    }

    #[test]
    fn usage_estimate_counts_text_chars_over_four() {
        let messages = [
            Message::system("abcd"),                       // 4 chars -> 1
            Message::user_with_frames(
                "efghij", // 6 chars
                vec![Frame { timestamp: 1.0, bytes: vec![0; 100], media_type: "image/jpeg".into() }],
            ),
        ];
        let usage = estimate_usage(&messages, "123456789"); // 9 chars -> 3
        assert_eq!(usage.input_tokens, ceil_div4(10));
        assert_eq!(usage.output_tokens, 3);
        assert!(usage.estimated);
    }

    /// Minimal HTTP/1.1 stub: serves the canned (status, body) list in
    /// order, one connection each, recording request bodies.
    struct StubServer {
        addr: String,
        bodies: Arc<Mutex<Vec<String>>>,
        handle: Option<std::thread::JoinHandle<()>>,
    }

    impl StubServer {
        fn start(responses: Vec<(u16, String)>) -> Self {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            let addr = format!("http://{}", listener.local_addr().unwrap());
            let bodies = Arc::new(Mutex::new(Vec::new()));
            let seen = bodies.clone();
            let handle = std::thread::spawn(move || {
                for (status, body) in responses {
                    let (mut stream, _) = listener.accept().unwrap();
                    let mut buf = Vec::new();
                    let mut chunk = [0u8; 4096];
                    let header_end = loop {
                        let n = stream.read(&mut chunk).unwrap();
                        buf.extend_from_slice(&chunk[..n]);
                        if let Some(pos) =
                            buf.windows(4).position(|w| w == b"\r\n\r\n")
                        {
                            break pos + 4;
                        }
                        if n == 0 {
                            break buf.len();
                        }
                    };
                    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
                    let content_length: usize = headers
                        .lines()
                        .find_map(|l| {
                            let (k, v) = l.split_once(':')?;
                            if k.eq_ignore_ascii_case("content-length") {
                                v.trim().parse().ok()
                            } else {
                                None
                            }
                        })
                        .unwrap_or(0);
                    while buf.len() < header_end + content_length {
                        let n = stream.read(&mut chunk).unwrap();
                        if n == 0 {
                            break;
                        }
                        buf.extend_from_slice(&chunk[..n]);
                    }
                    seen.lock()
                        .unwrap()
                        .push(String::from_utf8_lossy(&buf[header_end..]).to_string());
                    let reply = format!(
                        "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    stream.write_all(reply.as_bytes()).unwrap();
                }
            });
            StubServer { addr, bodies, handle: Some(handle) }
        }

        fn requests(&self) -> usize {
            self.bodies.lock().unwrap().len()
        }

        fn finish(mut self) -> Vec<String> {
            self.handle.take().unwrap().join().unwrap();
            Arc::try_unwrap(self.bodies).unwrap().into_inner().unwrap()
        }
    }

    fn ok_body(content: &str, with_usage: bool) -> String {
        let usage = if with_usage {
            r#","usage":{"prompt_tokens":42,"completion_tokens":7}"#
        } else {
            ""
        };
        format!(
            r#"{{"choices":[{{"message":{{"role":"assistant","content":"{content}"}}}}]{usage}}}"#
        )
    }

    fn fast_backend(addr: &str) -> HttpChatBackend {
        HttpChatBackend::new(addr, "test-key", "test-model")
            .with_backoff(Duration::from_millis(1), 5)
    }

    #[test]
    fn success_reports_exact_usage_and_sends_data_urls() {
        let server = StubServer::start(vec![(200, ok_body("hello", true))]);
        let backend = fast_backend(&server.addr);
        let frame = Frame { timestamp: 3.5, bytes: b"img".to_vec(), media_type: "image/png".into() };
        let reply = backend
            .complete(&[Message::user_with_frames("look", vec![frame])])
            .unwrap();
        assert_eq!(reply.text, "hello");
        assert_eq!(
            reply.usage,
            TokenUsage { input_tokens: 42, output_tokens: 7, estimated: false }
        );
        let bodies = server.finish();
        assert!(bodies[0].contains(r#""model":"test-model""#));
        let b64 = base64::engine::general_purpose::STANDARD.encode(b"img");
        assert!(bodies[0].contains(&format!("data:image/png;base64,{b64}")));
    }

    #[test]
    fn missing_usage_falls_back_to_character_estimate() {
        let server = StubServer::start(vec![(200, ok_body("hello", false))]);
        let backend = fast_backend(&server.addr);
        let reply = backend.complete(&[Message::user("12345678")]).unwrap();
        assert_eq!(
            reply.usage,
            TokenUsage { input_tokens: 2, output_tokens: 2, estimated: true }
        );
        server.finish();
    }

    #[test]
    fn rate_limits_and_server_errors_are_retried() {
        let server = StubServer::start(vec![
            (429, "slow down".into()),
            (503, "flaky".into()),
            (200, ok_body("recovered", true)),
        ]);
        let backend = fast_backend(&server.addr);
        let reply = backend.complete(&[Message::user("q")]).unwrap();
        assert_eq!(reply.text, "recovered");
        assert_eq!(server.finish().len(), 3);
    }

    #[test]
    fn persistent_rate_limit_exhausts_attempts() {
        let responses = vec![(429, "no".to_string()); 3];
        let server = StubServer::start(responses);
        let backend = HttpChatBackend::new(&server.addr, "k", "m")
            .with_backoff(Duration::from_millis(1), 3);
        let err = backend.complete(&[Message::user("q")]).unwrap_err();
        assert!(matches!(err, BackendError::RateLimited { attempts: 3 }));
        assert_eq!(server.finish().len(), 3);
    }

    #[test]
    fn auth_failures_and_client_errors_are_not_retried() {
        let server = StubServer::start(vec![(401, "who are you".into())]);
        let backend = fast_backend(&server.addr);
        assert!(matches!(
            backend.complete(&[Message::user("q")]).unwrap_err(),
            BackendError::AuthFailed(401)
        ));
        assert_eq!(server.requests(), 1);
        server.finish();

        let server = StubServer::start(vec![(400, "bad request".into())]);
        let backend = fast_backend(&server.addr);
        assert!(matches!(
            backend.complete(&[Message::user("q")]).unwrap_err(),
            BackendError::Api { status: 400, .. }
        ));
        assert_eq!(server.requests(), 1);
        server.finish();
    }

    #[test]
    fn unparsable_success_body_is_malformed_not_retried() {
        let server = StubServer::start(vec![(200, "not json at all".into())]);
        let backend = fast_backend(&server.addr);
        assert!(matches!(
            backend.complete(&[Message::user("q")]).unwrap_err(),
            BackendError::MalformedResponse(_)
        ));
        assert_eq!(server.finish().len(), 1);
    }
}
