//! Text-generation backends: a chat-completion HTTP client and a scripted mock.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub model: String,
    /// Pipeline stage issuing the request, e.g. `strategist` or
    /// `executor.debugging`. Routing metadata only; never sent on the wire.
    #[serde(skip)]
    pub stage: String,
    /// Session step issuing the request. Routing metadata only.
    #[serde(skip)]
    pub step: u32,
}

impl BackendRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("request has no messages".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub content: String,
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

impl BackendResponse {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            prompt_tokens: 0,
            completion_tokens: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("script exhausted: no reply left for stage `{stage}` at step {step}")]
    ScriptExhausted { stage: String, step: u32 },
    #[error("invalid mock script: {0}")]
    Script(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    InvalidResponse(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
}

/// A chat-style text generator. Each session owns its backend instance.
pub trait ChatBackend: Send {
    fn chat(&mut self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;

    /// True for the scripted mock; the session then uses canned text where
    /// the script has nothing to say (off-topic remarks).
    fn is_mock(&self) -> bool {
        false
    }
}

// ---------------------------------------------------------------------------
// Scripted mock

/// Parsed mock script.
///
/// Format: replies separated by header lines `=== <stage>` or
/// `=== <stage> step=<n>`. A stage is a full stage name
/// (`executor.debugging`), a stage family (`executor`) or `*`. Unkeyed
/// replies form per-stage queues consumed in order; keyed replies answer
/// every request for that step. A first line `#! cycle` makes queues wrap
/// around instead of running dry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Script {
    pub cycle: bool,
    keyed: BTreeMap<(u32, String), String>,
    queues: BTreeMap<String, Vec<String>>,
}

impl Script {
    pub fn parse(text: &str) -> Result<Self, BackendError> {
        let mut script = Script::default();
        let mut lines = text.lines().peekable();
        if let Some(first) = lines.peek() {
            if first.trim() == "#! cycle" {
                script.cycle = true;
                lines.next();
            }
        }
        let mut current: Option<(String, Option<u32>)> = None;
        let mut body: Vec<&str> = Vec::new();
        let flush = |current: &Option<(String, Option<u32>)>, body: &mut Vec<&str>, script: &mut Script| {
            if let Some((stage, step)) = current {
                let reply = body.join("\n").trim_matches('\n').to_string();
                match step {
                    Some(s) => {
                        script.keyed.insert((*s, stage.clone()), reply);
                    }
                    None => script.queues.entry(stage.clone()).or_default().push(reply),
                }
            }
            body.clear();
        };
        for (lineno, line) in lines.enumerate() {
            if let Some(header) = line.strip_prefix("=== ") {
                flush(&current, &mut body, &mut script);
                let mut parts = header.split_whitespace();
                let stage = parts
                    .next()
                    .ok_or_else(|| BackendError::Script(format!("empty header near line {}", lineno + 1)))?
                    .to_string();
                let mut step = None;
                for p in parts {
                    let n = p
                        .strip_prefix("step=")
                        .and_then(|v| v.parse::<u32>().ok())
                        .ok_or_else(|| BackendError::Script(format!("bad header attribute `{p}`")))?;
                    step = Some(n);
                }
                current = Some((stage, step));
            } else if current.is_some() {
                body.push(line);
            } else if !line.trim().is_empty() {
                return Err(BackendError::Script("text before the first `=== ` header".into()));
            }
        }
        flush(&current, &mut body, &mut script);
        if script.keyed.is_empty() && script.queues.is_empty() {
            return Err(BackendError::Script("script has no replies".into()));
        }
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Script(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Script that answers every request from one queue, in order.
    pub fn from_replies<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        let mut queues = BTreeMap::new();
        queues.insert("*".to_string(), replies.into_iter().map(Into::into).collect());
        Self {
            cycle: false,
            keyed: BTreeMap::new(),
            queues,
        }
    }

    pub fn len(&self) -> usize {
        self.keyed.len() + self.queues.values().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn stage_candidates(stage: &str) -> Vec<String> {
    let mut out = vec![stage.to_string()];
    if let Some((family, _)) = stage.split_once('.') {
        out.push(family.to_string());
    }
    out.push("*".to_string());
    out
}

/// Mock backend replaying a [`Script`]. Cursors are per instance, so every
/// session replays the script from the start.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    script: Arc<Script>,
    cursors: BTreeMap<String, usize>,
    log: Vec<BackendRequest>,
}

impl ScriptedBackend {
    pub fn new(script: Arc<Script>) -> Self {
        Self {
            script,
            cursors: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    pub fn from_replies<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(Arc::new(Script::from_replies(replies)))
    }

    /// Every request received so far.
    pub fn requests(&self) -> &[BackendRequest] {
        &self.log
    }

    fn next_reply(&mut self, stage: &str, step: u32) -> Option<String> {
        let candidates = stage_candidates(stage);
        for key in &candidates {
            if let Some(r) = self.script.keyed.get(&(step, key.clone())) {
                return Some(r.clone());
            }
        }
        for key in &candidates {
            let Some(queue) = self.script.queues.get(key) else {
                continue;
            };
            let cursor = self.cursors.entry(key.clone()).or_insert(0);
            if *cursor < queue.len() || (self.script.cycle && !queue.is_empty()) {
                let reply = queue[*cursor % queue.len()].clone();
                *cursor += 1;
                return Some(reply);
            }
        }
        None
    }
}

impl ChatBackend for ScriptedBackend {
    fn chat(&mut self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        request.validate()?;
        self.log.push(request.clone());
        self.next_reply(&request.stage, request.step)
            .map(BackendResponse::text)
            .ok_or_else(|| BackendError::ScriptExhausted {
                stage: request.stage.clone(),
                step: request.step,
            })
    }

    fn is_mock(&self) -> bool {
        true
    }
}

// ---------------------------------------------------------------------------
// HTTP

fn default_api_key_env() -> String {
    "STUDENTSIM_API_KEY".into()
}

fn default_timeout() -> f64 {
    120.0
}

fn default_max_retries() -> u32 {
    4
}

fn default_initial_backoff_ms() -> u64 {
    1000
}

fn default_max_backoff_ms() -> u64 {
    30_000
}

/// Connection settings for an OpenAI-style chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token. Unset means no auth
    /// header, which suits local servers.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Retries after the first attempt on transport errors, 429 and 5xx.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_initial_backoff_ms")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_max_backoff_ms")]
    pub max_backoff_ms: u64,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: default_api_key_env(),
            timeout_secs: default_timeout(),
            max_retries: default_max_retries(),
            initial_backoff_ms: default_initial_backoff_ms(),
            max_backoff_ms: default_max_backoff_ms(),
        }
    }

    /// Delay before retry number `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt.min(20)).unwrap_or(u64::MAX);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

enum Attempt {
    Done(BackendResponse),
    Retry(String),
    Fatal(BackendError),
}

/// Blocking chat-completions client. Cheap to clone; each clone keeps its
/// own retry state, so concurrent sessions do not interfere.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let agent_config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .build();
        Self {
            config,
            api_key,
            agent: ureq::Agent::new_with_config(agent_config),
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, request: &BackendRequest) -> Attempt {
        let model = if request.model.is_empty() {
            self.config.model.as_str()
        } else {
            request.model.as_str()
        };
        let wire = WireRequest {
            model,
            messages: &request.messages,
            temperature: request.temperature,
        };
        let mut req = self.agent.post(self.endpoint());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(&wire) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Attempt::Retry(format!("HTTP {status}: {body}"));
        }
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Attempt::Fatal(BackendError::Http { status, body });
        }
        let parsed: WireResponse = match resp.body_mut().read_json() {
            Ok(p) => p,
            Err(e) => return Attempt::Fatal(BackendError::InvalidResponse(e.to_string())),
        };
        let usage = parsed.usage.unwrap_or_default();
        match parsed.choices.into_iter().next().and_then(|c| c.message.content) {
            Some(content) => Attempt::Done(BackendResponse {
                content,
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            }),
            None => Attempt::Fatal(BackendError::InvalidResponse("no choices in response".into())),
        }
    }
}

impl ChatBackend for HttpBackend {
    fn chat(&mut self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        request.validate()?;
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.attempt(request) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(reason) => {
                    tracing::warn!(stage = %request.stage, attempt, %reason, "backend call failed");
                    last = reason;
                    if attempt + 1 < attempts {
                        std::thread::sleep(self.config.backoff(attempt));
                    }
                }
            }
        }
        Err(BackendError::RetriesExhausted { attempts, last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(stage: &str, step: u32) -> BackendRequest {
        BackendRequest {
            messages: vec![Message::user("hi")],
            temperature: 0.7,
            model: String::new(),
            stage: stage.into(),
            step,
        }
    }

    #[test]
    fn queue_runs_dry_loudly() {
        let mut b = ScriptedBackend::from_replies(["one", "two"]);
        assert_eq!(b.chat(&req("strategist", 0)).unwrap().content, "one");
        assert_eq!(b.chat(&req("executor.debugging", 1)).unwrap().content, "two");
        let err = b.chat(&req("strategist", 2)).unwrap_err();
        assert!(err.to_string().contains("script exhausted"), "{err}");
        assert_eq!(b.requests().len(), 3);
    }

    #[test]
    fn keyed_and_family_routing() {
        let text = "=== executor step=3\nkeyed\n=== executor\nfam1\n=== executor.assessing\nexact\n=== *\nany\n";
        let script = Arc::new(Script::parse(text).unwrap());
        let mut b = ScriptedBackend::new(script);
        assert_eq!(b.chat(&req("executor.debugging", 3)).unwrap().content, "keyed");
        assert_eq!(b.chat(&req("executor.debugging", 3)).unwrap().content, "keyed");
        assert_eq!(b.chat(&req("executor.assessing", 1)).unwrap().content, "exact");
        assert_eq!(b.chat(&req("executor.assessing", 1)).unwrap().content, "fam1");
        assert_eq!(b.chat(&req("strategist", 1)).unwrap().content, "any");
        assert!(b.chat(&req("strategist", 1)).is_err());
    }

    #[test]
    fn cycle_wraps_queues() {
        let script = Script::parse("#! cycle\n=== tutor\na\n\n=== tutor\nb\n").unwrap();
        let mut b = ScriptedBackend::new(Arc::new(script));
        let got: Vec<String> = (0..5).map(|i| b.chat(&req("tutor", i)).unwrap().content).collect();
        assert_eq!(got, ["a", "b", "a", "b", "a"]);
    }

    #[test]
    fn multi_line_replies_keep_inner_blank_lines() {
        let script = Script::parse("=== *\nMONOLOGUE: hi\n\n```python\nx=1\n```\n\n").unwrap();
        let mut b = ScriptedBackend::new(Arc::new(script));
        assert_eq!(b.chat(&req("x", 0)).unwrap().content, "MONOLOGUE: hi\n\n```python\nx=1\n```");
    }

    #[test]
    fn script_errors() {
        assert!(Script::parse("stray\n=== *\nx").is_err());
        assert!(Script::parse("=== * step=abc\nx").is_err());
        assert!(Script::parse("").is_err());
    }

    #[test]
    fn empty_request_rejected() {
        let mut b = ScriptedBackend::from_replies(["x"]);
        let mut r = req("s", 0);
        r.messages.clear();
        assert!(matches!(b.chat(&r), Err(BackendError::InvalidRequest(_))));
    }

    #[test]
    fn backoff_doubles_to_cap() {
        let mut c = HttpConfig::new("http://x", "m");
        c.initial_backoff_ms = 100;
        c.max_backoff_ms = 350;
        assert_eq!(c.backoff(0), Duration::from_millis(100));
        assert_eq!(c.backoff(1), Duration::from_millis(200));
        assert_eq!(c.backoff(2), Duration::from_millis(350));
        assert_eq!(c.backoff(60), Duration::from_millis(350));
    }
}
