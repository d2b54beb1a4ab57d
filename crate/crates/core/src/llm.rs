//! Chat-completions client with retries, and a local mock server that
//! answers from a regex script.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const DEFAULT_API_KEY_ENV: &str = "MODEL_API_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("authentication failed: {0}")]
    AuthError(String),
    #[error("gave up after {attempts} attempts: {last}")]
    TransportExhausted { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("invalid endpoint configuration: {0}")]
    InvalidConfig(String),
    #[error("mock server: {0}")]
    Mock(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model_name: String,
    /// Environment variable holding the bearer token; `None` sends no token.
    pub api_key_env: Option<String>,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_base_s: f64,
    pub max_concurrency: usize,
}

impl Default for ModelEndpoint {
    fn default() -> Self {
        ModelEndpoint {
            base_url: "https://api.openai.com/v1".to_string(),
            model_name: "gpt-4o-mini".to_string(),
            api_key_env: Some(DEFAULT_API_KEY_ENV.to_string()),
            timeout_s: 120.0,
            max_retries: 3,
            backoff_base_s: 1.0,
            max_concurrency: 4,
        }
    }
}

impl ModelEndpoint {
    /// Endpoint for a local mock server: no token, fast retries.
    pub fn local(base_url: &str) -> ModelEndpoint {
        ModelEndpoint {
            base_url: base_url.to_string(),
            model_name: "mock".to_string(),
            api_key_env: None,
            backoff_base_s: 0.01,
            ..ModelEndpoint::default()
        }
    }

    fn validate(&self) -> Result<(), LlmError> {
        if !(self.timeout_s > 0.0) {
            return Err(LlmError::InvalidConfig("timeout_s must be positive".into()));
        }
        if self.max_concurrency == 0 {
            return Err(LlmError::InvalidConfig("max_concurrency must be at least 1".into()));
        }
        if !(self.backoff_base_s >= 0.0) {
            return Err(LlmError::InvalidConfig("backoff_base_s must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            temperature: 0.9,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: f64,
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Semaphore {
        Semaphore {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Thread-safe client; share it behind an `Arc`.
pub struct LlmClient {
    endpoint: ModelEndpoint,
    agent: ureq::Agent,
    permits: Semaphore,
    transcript: Option<Mutex<File>>,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient").field("endpoint", &self.endpoint).finish()
    }
}

impl LlmClient {
    pub fn new(endpoint: ModelEndpoint) -> Result<LlmClient, LlmError> {
        endpoint.validate()?;
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(endpoint.timeout_s)))
            .http_status_as_error(false)
            .build();
        Ok(LlmClient {
            permits: Semaphore::new(endpoint.max_concurrency),
            agent: ureq::Agent::new_with_config(config),
            endpoint,
            transcript: None,
        })
    }

    /// Appends every exchange as one JSON line to `path`.
    pub fn with_transcript(mut self, path: &Path) -> Result<LlmClient, LlmError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::InvalidConfig(format!("{}: {e}", path.display())))?;
        self.transcript = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    fn api_key(&self) -> Result<Option<String>, LlmError> {
        match &self.endpoint.api_key_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.trim().is_empty() => Ok(Some(v)),
                _ => Err(LlmError::AuthError(format!("environment variable {var} is not set"))),
            },
        }
    }

    /// One system message and one user message in, the first choice's text out.
    pub fn complete(&self, system: &str, user: &str, decoding: Decoding) -> Result<Completion, LlmError> {
        let key = self.api_key()?;
        let mut body = json!({
            "model": self.endpoint.model_name,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": decoding.temperature,
        });
        if let Some(max) = decoding.max_tokens {
            body["max_tokens"] = json!(max);
        }
        let url = format!("{}/chat/completions", self.endpoint.base_url.trim_end_matches('/'));

        let _permit = self.permits.acquire();
        let started = Instant::now();
        let mut retries = 0;
        loop {
            let last = match self.send(&url, key.as_deref(), &body) {
                Ok((200..=299, text)) => {
                    let mut completion = parse_completion(&text)?;
                    if completion.usage.prompt_tokens == 0 {
                        completion.usage.prompt_tokens = estimate_tokens(system) + estimate_tokens(user);
                    }
                    if completion.usage.completion_tokens == 0 {
                        completion.usage.completion_tokens = estimate_tokens(&completion.text);
                    }
                    completion.usage.latency_ms = started.elapsed().as_secs_f64() * 1000.0;
                    completion.usage.retries = retries;
                    self.record(&body, &completion);
                    return Ok(completion);
                }
                Ok((status @ (401 | 403), text)) => {
                    return Err(LlmError::AuthError(format!("status {status}: {text}")))
                }
                Ok((status, text)) if status == 429 || status >= 500 => format!("status {status}: {text}"),
                Ok((status, text)) => return Err(LlmError::Rejected { status, body: text }),
                Err(e) => e.to_string(),
            };
            if retries >= self.endpoint.max_retries {
                return Err(LlmError::TransportExhausted {
                    attempts: retries + 1,
                    last,
                });
            }
            let wait = self.endpoint.backoff_base_s * 2f64.powi(retries as i32);
            log::warn!("model request failed ({last}); retrying in {wait:.2}s");
            std::thread::sleep(Duration::from_secs_f64(wait));
            retries += 1;
        }
    }

    fn send(&self, url: &str, key: Option<&str>, body: &Value) -> Result<(u16, String), ureq::Error> {
        let mut request = self.agent.post(url);
        if let Some(k) = key {
            request = request.header("Authorization", &format!("Bearer {k}"));
        }
        let mut response = request.send_json(body)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string()?;
        Ok((status, text))
    }

    fn record(&self, request: &Value, completion: &Completion) {
        if let Some(file) = &self.transcript {
            let line = json!({"request": request, "response": completion.text, "usage": completion.usage});
            let mut f = file.lock().unwrap_or_else(|e| e.into_inner());
            if let Err(e) = writeln!(f, "{line}") {
                log::warn!("could not write transcript: {e}");
            }
        }
    }
}

fn parse_completion(text: &str) -> Result<Completion, LlmError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| LlmError::MalformedResponse(format!("invalid JSON: {e}")))?;
    let content = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::MalformedResponse("missing choices[0].message.content".into()))?;
    let tokens = |k: &str| value.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(Completion {
        text: content.to_string(),
        usage: Usage {
            prompt_tokens: tokens("prompt_tokens"),
            completion_tokens: tokens("completion_tokens"),
            latency_ms: 0.0,
            retries: 0,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub pattern: String,
    pub reply: String,
}

/// Replies for the mock server: the first rule whose pattern matches the
/// user message wins, otherwise `default`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default = "default_reply")]
    pub default: String,
}

fn default_reply() -> String {
    "Action:0".to_string()
}

impl MockScript {
    pub fn new(rules: Vec<(&str, &str)>, default: &str) -> MockScript {
        MockScript {
            rules: rules
                .into_iter()
                .map(|(p, r)| MockRule {
                    pattern: p.to_string(),
                    reply: r.to_string(),
                })
                .collect(),
            default: default.to_string(),
        }
    }

    pub fn from_file(path: &Path) -> Result<MockScript, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Mock(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| LlmError::Mock(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub system: String,
    pub user: String,
    pub status: u16,
    pub reply: String,
}

struct MockShared {
    rules: Vec<(Regex, String)>,
    default: String,
    failures: Mutex<VecDeque<u16>>,
    transcript: Mutex<Vec<Exchange>>,
    transcript_file: Option<Mutex<File>>,
}

/// Local HTTP server speaking the chat-completions protocol.
pub struct MockServer {
    url: String,
    server: Arc<tiny_http::Server>,
    shared: Arc<MockShared>,
    worker: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(script: &MockScript) -> Result<MockServer, LlmError> {
        MockServer::start_with_transcript(script, None)
    }

    pub fn start_with_transcript(script: &MockScript, transcript: Option<PathBuf>) -> Result<MockServer, LlmError> {
        let rules = script
            .rules
            .iter()
            .map(|r| {
                Regex::new(&r.pattern)
                    .map(|re| (re, r.reply.clone()))
                    .map_err(|e| LlmError::Mock(format!("bad pattern `{}`: {e}", r.pattern)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let transcript_file = transcript
            .map(|p| {
                File::create(&p)
                    .map(Mutex::new)
                    .map_err(|e| LlmError::Mock(format!("{}: {e}", p.display())))
            })
            .transpose()?;
        let server = tiny_http::Server::http("127.0.0.1:0").map_err(|e| LlmError::Mock(e.to_string()))?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| LlmError::Mock("server has no IP address".into()))?;
        let server = Arc::new(server);
        let shared = Arc::new(MockShared {
            rules,
            default: script.default.clone(),
            failures: Mutex::new(VecDeque::new()),
            transcript: Mutex::new(Vec::new()),
            transcript_file,
        });
        let worker = {
            let server = Arc::clone(&server);
            let shared = Arc::clone(&shared);
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    handle(&shared, request);
                }
            })
        };
        Ok(MockServer {
            url: format!("http://127.0.0.1:{port}/v1"),
            server,
            shared,
            worker: Some(worker),
        })
    }

    /// Base URL to put into a [`ModelEndpoint`].
    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn endpoint(&self) -> ModelEndpoint {
        ModelEndpoint::local(&self.url)
    }

    /// The next requests are answered with these HTTP statuses, in order.
    pub fn inject_failures(&self, statuses: &[u16]) {
        self.shared
            .failures
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .extend(statuses);
    }

    pub fn transcript(&self) -> Vec<Exchange> {
        self.shared
            .transcript
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

fn handle(shared: &MockShared, mut request: tiny_http::Request) {
    let mut raw = String::new();
    let _ = request.as_reader().read_to_string(&mut raw);
    let is_chat = request.method() == &tiny_http::Method::Post && request.url().ends_with("/chat/completions");
    let body: Option<Value> = serde_json::from_str(&raw).ok();
    let message = |role: &str| -> String {
        body.as_ref()
            .and_then(|b| b.get("messages"))
            .and_then(Value::as_array)
            .and_then(|msgs| {
                msgs.iter()
                    .rev()
                    .find(|m| m.get("role").and_then(Value::as_str) == Some(role))
            })
            .and_then(|m| m.get("content"))
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string()
    };
    let (system, user) = (message("system"), message("user"));

    let injected = shared.failures.lock().unwrap_or_else(|e| e.into_inner()).pop_front();
    let (status, reply, payload) = if !is_chat || body.is_none() {
        (404, String::new(), json!({"error": "not found"}))
    } else if let Some(code) = injected {
        (code, String::new(), json!({"error": format!("injected failure {code}")}))
    } else {
        let reply = shared
            .rules
            .iter()
            .find(|(re, _)| re.is_match(&user))
            .map(|(_, r)| r.clone())
            .unwrap_or_else(|| shared.default.clone());
        let payload = json!({
            "id": "mock",
            "object": "chat.completion",
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": reply},
                "finish_reason": "stop",
            }],
            "usage": {
                "prompt_tokens": estimate_tokens(&system) + estimate_tokens(&user),
                "completion_tokens": estimate_tokens(&reply),
            },
        });
        (200, reply, payload)
    };

    let exchange = Exchange {
        system,
        user,
        status,
        reply,
    };
    if let Some(file) = &shared.transcript_file {
        if let Ok(line) = serde_json::to_string(&exchange) {
            let _ = writeln!(file.lock().unwrap_or_else(|e| e.into_inner()), "{line}");
        }
    }
    shared
        .transcript
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .push(exchange);

    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
        .expect("static header");
    let response = tiny_http::Response::from_string(payload.to_string())
        .with_status_code(status)
        .with_header(header);
    let _ = request.respond(response);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_reply() {
        let server = MockServer::start(&MockScript::new(vec![("Current State", "Action:4")], "Action:0")).unwrap();
        let client = LlmClient::new(server.endpoint()).unwrap();
        let c = client
            .complete("rules", "=== Current State ===\nA.", Decoding::default())
            .unwrap();
        assert_eq!(c.text, "Action:4");
        assert!(c.usage.latency_ms > 0.0);
        assert!(c.usage.prompt_tokens > 0 && c.usage.completion_tokens > 0);
        let other = client.complete("rules", "nothing here", Decoding::default()).unwrap();
        assert_eq!(other.text, "Action:0");
        let t = server.transcript();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].system, "rules");
    }

    #[test]
    fn retries_transient_failures() {
        let server = MockServer::start(&MockScript::new(vec![], "Action:2")).unwrap();
        server.inject_failures(&[503, 500]);
        let client = LlmClient::new(server.endpoint()).unwrap();
        let c = client.complete("s", "u", Decoding::default()).unwrap();
        assert_eq!(c.text, "Action:2");
        assert_eq!(c.usage.retries, 2);
    }

    #[test]
    fn gives_up_after_max_retries() {
        let server = MockServer::start(&MockScript::new(vec![], "Action:2")).unwrap();
        server.inject_failures(&[500, 502, 503, 429, 500]);
        let client = LlmClient::new(ModelEndpoint {
            max_retries: 2,
            ..server.endpoint()
        })
        .unwrap();
        match client.complete("s", "u", Decoding::default()) {
            Err(LlmError::TransportExhausted { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let server = MockServer::start(&MockScript::new(vec![], "Action:2")).unwrap();
        server.inject_failures(&[401, 401]);
        let client = LlmClient::new(server.endpoint()).unwrap();
        assert!(matches!(
            client.complete("s", "u", Decoding::default()),
            Err(LlmError::AuthError(_))
        ));
        assert_eq!(server.transcript().len(), 1);
    }

    #[test]
    fn missing_key_fails_before_network() {
        let endpoint = ModelEndpoint {
            base_url: "http://127.0.0.1:9".to_string(),
            api_key_env: Some("VGDL_BENCH_TEST_KEY_THAT_IS_UNSET".to_string()),
            ..ModelEndpoint::default()
        };
        let client = LlmClient::new(endpoint).unwrap();
        assert!(matches!(
            client.complete("s", "u", Decoding::default()),
            Err(LlmError::AuthError(_))
        ));
    }

    #[test]
    fn malformed_body() {
        assert!(matches!(parse_completion("{}"), Err(LlmError::MalformedResponse(_))));
        assert!(matches!(parse_completion("nope"), Err(LlmError::MalformedResponse(_))));
    }

    #[test]
    fn transcripts_persist() {
        let dir = tempfile::tempdir().unwrap();
        let server_log = dir.path().join("server.jsonl");
        let client_log = dir.path().join("client.jsonl");
        let server =
            MockServer::start_with_transcript(&MockScript::new(vec![], "Action:1"), Some(server_log.clone())).unwrap();
        let client = LlmClient::new(server.endpoint()).unwrap().with_transcript(&client_log).unwrap();
        client.complete("s", "u", Decoding::default()).unwrap();
        client.complete("s", "v", Decoding::default()).unwrap();
        drop(server);
        for path in [server_log, client_log] {
            let text = std::fs::read_to_string(path).unwrap();
            assert_eq!(text.lines().count(), 2);
            for line in text.lines() {
                serde_json::from_str::<Value>(line).unwrap();
            }
        }
    }

    #[test]
    fn invalid_endpoint() {
        assert!(LlmClient::new(ModelEndpoint { timeout_s: 0.0, ..ModelEndpoint::default() }).is_err());
    }
}
