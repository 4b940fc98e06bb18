use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    CallLog, CallLogEntry, ChatBackend, ChatRequest, ChatResponse, FinishReason, GatewayError,
    Role, Usage,
};

/// Exponential backoff between attempts of one call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub attempt_cap: u32,
    pub base_delay_ms: u64,
    pub factor: f64,
    /// Relative jitter, 0.2 means ±20%.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempt_cap: 3,
            base_delay_ms: 1000,
            factor: 2.0,
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, where `attempt` is 1-based.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let nominal = self.base_delay_ms as f64 * self.factor.powi(attempt.saturating_sub(1) as i32);
        let spread = if self.jitter > 0.0 {
            rand::thread_rng().gen_range(-self.jitter..=self.jitter)
        } else {
            0.0
        };
        Duration::from_secs_f64((nominal * (1.0 + spread)).max(0.0) / 1000.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub name: String,
    /// Base URL, e.g. `https://api.example.com/v1`.
    pub endpoint: String,
    #[serde(default = "default_path")]
    pub path: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: u64,
}

fn default_path() -> String {
    "/chat/completions".to_string()
}

fn default_timeout_secs() -> u64 {
    300
}

/// OpenAI-compatible chat-completions client.
pub struct HttpBackend {
    config: HttpBackendConfig,
    agent: ureq::Agent,
    log: CallLog,
}

enum AttemptError {
    Retryable { status: Option<u16>, message: String },
    Fatal(GatewayError),
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig, log: CallLog) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.request_timeout_secs.max(1))))
            .build()
            .into();
        Self { config, agent, log }
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!(
            "{}/{}",
            self.config.endpoint.trim_end_matches('/'),
            self.config.path.trim_start_matches('/')
        )
    }

    fn credential(&self) -> Result<Option<String>, GatewayError> {
        match &self.config.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| {
                GatewayError::Config(format!(
                    "backend {}: environment variable {var} is not set",
                    self.config.name
                ))
            }),
        }
    }

    fn attempt(&self, body: &Value, token: Option<&str>) -> Result<(u16, ChatResponse), AttemptError> {
        let mut builder = self.agent.post(&self.url()).header("Content-Type", "application/json");
        if let Some(token) = token {
            builder = builder.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = match builder.send_json(body) {
            Ok(r) => r,
            Err(e) => {
                return Err(AttemptError::Retryable {
                    status: None,
                    message: e.to_string(),
                })
            }
        };
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        match status {
            200..=299 => parse_completion(&text)
                .map(|r| (status, r))
                .map_err(|message| {
                    if message.contains("content") {
                        AttemptError::Fatal(GatewayError::MissingContent {
                            backend: self.config.name.clone(),
                        })
                    } else {
                        AttemptError::Fatal(GatewayError::Transport {
                            backend: self.config.name.clone(),
                            message,
                        })
                    }
                }),
            401 | 403 => Err(AttemptError::Fatal(GatewayError::Auth {
                backend: self.config.name.clone(),
                status,
            })),
            408 | 429 | 500..=599 => Err(AttemptError::Retryable {
                status: Some(status),
                message: format!("HTTP {status}: {}", truncate(&text, 200)),
            }),
            _ => Err(AttemptError::Fatal(GatewayError::Status {
                backend: self.config.name.clone(),
                status,
                body: truncate(&text, 500),
            })),
        }
    }

    fn log_attempt(&self, req: &ChatRequest, attempt: u32, status: Option<u16>, outcome: Result<String, String>) {
        self.log.push(CallLogEntry {
            backend: self.config.name.clone(),
            agent: req.meta.agent.clone(),
            entry_id: req.meta.entry_id.clone(),
            attempt,
            request_digest: req.digest(),
            status,
            outcome,
        });
    }
}

impl ChatBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn model(&self) -> &str {
        &self.config.model
    }

    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let token = self.credential()?;
        let body = wire_body(req);
        let cap = self.config.retry.attempt_cap.max(1);
        let mut last = String::new();
        for attempt in 1..=cap {
            match self.attempt(&body, token.as_deref()) {
                Ok((status, resp)) => {
                    self.log_attempt(req, attempt, Some(status), Ok(resp.content.clone()));
                    return Ok(resp);
                }
                Err(AttemptError::Fatal(e)) => {
                    let status = match &e {
                        GatewayError::Auth { status, .. } | GatewayError::Status { status, .. } => Some(*status),
                        _ => None,
                    };
                    self.log_attempt(req, attempt, status, Err(e.to_string()));
                    return Err(e);
                }
                Err(AttemptError::Retryable { status, message }) => {
                    log::warn!("{}: attempt {attempt}/{cap} failed: {message}", self.config.name);
                    self.log_attempt(req, attempt, status, Err(message.clone()));
                    last = message;
                    if attempt < cap {
                        std::thread::sleep(self.config.retry.delay_after(attempt));
                    }
                }
            }
        }
        Err(GatewayError::RetriesExhausted {
            backend: self.config.name.clone(),
            attempts: cap,
            last,
        })
    }
}

fn role_str(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

/// Request body in the chat-completions shape.
pub(crate) fn wire_body(req: &ChatRequest) -> Value {
    let messages: Vec<Value> = req
        .messages
        .iter()
        .map(|m| {
            if m.images.is_empty() {
                json!({ "role": role_str(m.role), "content": m.content })
            } else {
                let mut parts = vec![json!({ "type": "text", "text": m.content })];
                parts.extend(
                    m.images
                        .iter()
                        .map(|url| json!({ "type": "image_url", "image_url": { "url": url } })),
                );
                json!({ "role": role_str(m.role), "content": parts })
            }
        })
        .collect();
    json!({
        "model": req.model,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    })
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: Option<WireMessage>,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub(crate) fn parse_completion(text: &str) -> Result<ChatResponse, String> {
    let wire: WireResponse = serde_json::from_str(text).map_err(|e| format!("unparseable response: {e}"))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| "response has no choices (missing content)".to_string())?;
    let content = choice
        .message
        .and_then(|m| m.content)
        .filter(|c| !c.is_empty())
        .ok_or_else(|| "choices[0].message.content is missing".to_string())?;
    let finish_reason = match choice.finish_reason.as_deref() {
        Some("length") => FinishReason::Length,
        Some("error") => FinishReason::Error,
        _ => FinishReason::Stop,
    };
    Ok(ChatResponse {
        content,
        finish_reason,
        usage: wire.usage.map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        }),
    })
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        return s.to_string();
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &s[..end])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, RequestMeta};

    #[test]
    fn wire_body_shape() {
        let req = ChatRequest {
            model: "gen".into(),
            messages: vec![ChatMessage::system("sys"), ChatMessage::user("hi")],
            temperature: 0.1,
            max_tokens: 4096,
            meta: RequestMeta::default(),
        };
        let v = wire_body(&req);
        assert_eq!(v["model"], "gen");
        assert_eq!(v["messages"][1]["role"], "user");
        assert_eq!(v["messages"][1]["content"], "hi");
        assert_eq!(v["max_tokens"], 4096);
        assert!(v.get("meta").is_none());
    }

    #[test]
    fn image_messages_become_parts() {
        let mut m = ChatMessage::user("rate this");
        m.images.push("data:image/png;base64,AAAA".into());
        let req = ChatRequest {
            model: "judge".into(),
            messages: vec![m],
            temperature: 0.0,
            max_tokens: 256,
            meta: RequestMeta::default(),
        };
        let v = wire_body(&req);
        assert_eq!(v["messages"][0]["content"][0]["type"], "text");
        assert_eq!(v["messages"][0]["content"][1]["image_url"]["url"], "data:image/png;base64,AAAA");
    }

    #[test]
    fn parse_first_choice() {
        let r = parse_completion(
            r#"{"choices":[{"message":{"role":"assistant","content":"CODE_V1"},"finish_reason":"stop"},
                {"message":{"content":"other"}}],"usage":{"prompt_tokens":3,"completion_tokens":2}}"#,
        )
        .unwrap();
        assert_eq!(r.content, "CODE_V1");
        assert_eq!(r.finish_reason, FinishReason::Stop);
        assert_eq!(r.usage.unwrap().completion_tokens, 2);
        assert!(parse_completion(r#"{"choices":[{"message":{"content":null}}]}"#).is_err());
        assert!(parse_completion(r#"{"choices":[]}"#).is_err());
    }

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy {
            jitter: 0.0,
            ..RetryPolicy::default()
        };
        assert_eq!(p.delay_after(1), Duration::from_secs(1));
        assert_eq!(p.delay_after(2), Duration::from_secs(2));
        let j = RetryPolicy::default();
        for _ in 0..50 {
            let d = j.delay_after(2).as_secs_f64();
            assert!((1.6..=2.4).contains(&d), "{d}");
        }
    }
}
