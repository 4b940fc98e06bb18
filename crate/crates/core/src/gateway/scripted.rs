use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CallLog, CallLogEntry, ChatBackend, ChatRequest, ChatResponse, FinishReason, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedFailure {
    Transport,
    Auth,
    MissingContent,
}

/// One canned reply. Every present matcher must hold; absent ones match
/// anything. Rules are tried in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptRule {
    pub agent: Option<String>,
    pub turn: Option<u32>,
    pub digest_prefix: Option<String>,
    pub entry_id: Option<String>,
    pub prompt_contains: Option<String>,
    pub reply: Option<String>,
    pub fail: Option<ScriptedFailure>,
}

impl ScriptRule {
    pub fn reply(agent: &str, turn: u32, reply: impl Into<String>) -> Self {
        Self {
            agent: Some(agent.to_string()),
            turn: Some(turn),
            reply: Some(reply.into()),
            ..Self::default()
        }
    }

    /// Same reply for every turn of `agent`.
    pub fn always(agent: &str, reply: impl Into<String>) -> Self {
        Self {
            agent: Some(agent.to_string()),
            reply: Some(reply.into()),
            ..Self::default()
        }
    }

    fn matches(&self, req: &ChatRequest, digest: &str) -> bool {
        self.agent
            .as_deref()
            .is_none_or(|a| a == "*" || req.meta.agent.as_deref() == Some(a))
            && self.turn.is_none_or(|t| t == req.meta.turn)
            && self
                .digest_prefix
                .as_deref()
                .is_none_or(|p| digest.starts_with(&p.to_ascii_lowercase()))
            && self
                .entry_id
                .as_deref()
                .is_none_or(|id| req.meta.entry_id.as_deref() == Some(id))
            && self
                .prompt_contains
                .as_deref()
                .is_none_or(|needle| req.messages.iter().any(|m| m.content.contains(needle)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub default_reply: Option<String>,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("scenario {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| GatewayError::Config(format!("scenario {}: {e}", path.display())))
    }
}

/// Deterministic backend replaying a [`Scenario`].
pub struct ScriptedBackend {
    name: String,
    model: String,
    scenario: Scenario,
    log: CallLog,
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>, scenario: Scenario, log: CallLog) -> Self {
        let name = name.into();
        Self {
            model: format!("scripted:{name}"),
            name,
            scenario,
            log,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }
}

impl ChatBackend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let digest = req.digest();
        let rule = self.scenario.rules.iter().find(|r| r.matches(req, &digest));
        let result = match rule {
            Some(ScriptRule { fail: Some(f), .. }) => Err(match f {
                ScriptedFailure::Transport => GatewayError::RetriesExhausted {
                    backend: self.name.clone(),
                    attempts: 1,
                    last: "scripted transport failure".into(),
                },
                ScriptedFailure::Auth => GatewayError::Auth {
                    backend: self.name.clone(),
                    status: 401,
                },
                ScriptedFailure::MissingContent => GatewayError::MissingContent {
                    backend: self.name.clone(),
                },
            }),
            Some(ScriptRule { reply: Some(r), .. }) => Ok(r.clone()),
            _ => match &self.scenario.default_reply {
                Some(r) => Ok(r.clone()),
                None => Err(GatewayError::NoScriptedReply {
                    backend: self.name.clone(),
                    agent: req.meta.agent.clone(),
                    turn: req.meta.turn,
                    digest: digest.clone(),
                }),
            },
        };
        self.log.push(CallLogEntry {
            backend: self.name.clone(),
            agent: req.meta.agent.clone(),
            entry_id: req.meta.entry_id.clone(),
            attempt: 1,
            request_digest: digest,
            status: None,
            outcome: match &result {
                Ok(c) => Ok(c.clone()),
                Err(e) => Err(e.to_string()),
            },
        });
        result.map(|content| ChatResponse {
            content,
            finish_reason: FinishReason::Stop,
            usage: None,
        })
    }
}
