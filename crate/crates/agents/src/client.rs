//! Chat clients: a scripted mock for tests and demos, and a live HTTP client.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const API_KEY_VAR: &str = "CHAT_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum ChatError {
    #[error("no scripted reply left for role {0}")]
    FixtureExhausted(String),
    #[error("invalid fixture: {0}")]
    Fixture(String),
    #[error("environment variable {API_KEY_VAR} is not set")]
    MissingKey,
    #[error("chat endpoint unreachable: {0}")]
    Transport(String),
    #[error("chat endpoint returned HTTP {status}")]
    Http { status: u16 },
    #[error("malformed chat response: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub speaker: Speaker,
    pub content: String,
    /// PNG attachment (refiner only). Not written to transcripts.
    #[serde(skip)]
    pub image_png: Option<Vec<u8>>,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::System,
            content: content.into(),
            image_png: None,
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::User,
            content: content.into(),
            image_png: None,
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::Assistant,
            content: content.into(),
            image_png: None,
        }
    }

    pub fn with_image(mut self, png: Vec<u8>) -> Self {
        self.image_png = Some(png);
        self
    }
}

/// Role names used by the agents.
pub mod roles {
    pub const THEME: &str = "theme";
    pub const COGNITION: &str = "cognition";
    pub const ARRANGER: &str = "arranger";
    pub const REFINER: &str = "refiner";
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, role: &str, messages: &[Message]) -> Result<String, ChatError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub role: String,
    pub messages: Vec<Message>,
    pub reply: String,
}

/// One scripted reply. A string reply is sent as-is (so malformed text can be
/// scripted); anything else is sent as compact JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedReply {
    pub role: String,
    pub reply: Value,
}

/// Replies are consumed in order, separately per role.
#[derive(Debug, Default)]
pub struct MockClient {
    queues: Mutex<BTreeMap<String, VecDeque<String>>>,
    transcript: Mutex<Vec<Exchange>>,
}

impl MockClient {
    pub fn new(script: Vec<ScriptedReply>) -> Self {
        let mut queues: BTreeMap<String, VecDeque<String>> = BTreeMap::new();
        for entry in script {
            let text = match entry.reply {
                Value::String(s) => s,
                other => other.to_string(),
            };
            queues.entry(entry.role).or_default().push_back(text);
        }
        Self {
            queues: Mutex::new(queues),
            transcript: Mutex::new(Vec::new()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ChatError> {
        let script: Vec<ScriptedReply> = serde_json::from_str(text).map_err(|e| ChatError::Fixture(e.to_string()))?;
        Ok(Self::new(script))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ChatError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ChatError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn transcript(&self) -> Vec<Exchange> {
        self.transcript.lock().unwrap().clone()
    }

    pub fn remaining(&self, role: &str) -> usize {
        self.queues.lock().unwrap().get(role).map_or(0, VecDeque::len)
    }
}

impl ChatClient for MockClient {
    fn complete(&self, role: &str, messages: &[Message]) -> Result<String, ChatError> {
        let reply = self
            .queues
            .lock()
            .unwrap()
            .get_mut(role)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| ChatError::FixtureExhausted(role.to_owned()))?;
        self.transcript.lock().unwrap().push(Exchange {
            role: role.to_owned(),
            messages: messages.to_vec(),
            reply: reply.clone(),
        });
        Ok(reply)
    }
}

/// Chat-completions style endpoint: `{"model", "messages": [...]}` in,
/// `choices[0].message.content` out. Bearer key from `CHAT_API_KEY`.
#[derive(Debug, Clone)]
pub struct LiveClient {
    endpoint: String,
    model: String,
    key: String,
    agent: ureq::Agent,
}

impl LiveClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, key: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            key: key.into(),
            agent,
        }
    }

    pub fn from_env(endpoint: impl Into<String>, model: impl Into<String>) -> Result<Self, ChatError> {
        let key = std::env::var(API_KEY_VAR).map_err(|_| ChatError::MissingKey)?;
        Ok(Self::new(endpoint, model, key))
    }

    pub fn request_body(&self, messages: &[Message]) -> Value {
        let messages: Vec<Value> = messages
            .iter()
            .map(|m| {
                let content = match &m.image_png {
                    None => Value::String(m.content.clone()),
                    Some(png) => json!([
                        {"type": "text", "text": m.content},
                        {"type": "image_url",
                         "image_url": {"url": format!("data:image/png;base64,{}", STANDARD.encode(png))}}
                    ]),
                };
                json!({"role": m.speaker, "content": content})
            })
            .collect();
        json!({
            "model": self.model,
            "messages": messages,
            "response_format": {"type": "json_object"},
        })
    }
}

impl ChatClient for LiveClient {
    fn complete(&self, _role: &str, messages: &[Message]) -> Result<String, ChatError> {
        let body = serde_json::to_vec(&self.request_body(messages)).map_err(|e| ChatError::Protocol(e.to_string()))?;
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.key))
            .content_type("application/json")
            .send(&body[..])
            .map_err(|e| match e {
                ureq::Error::StatusCode(status) => ChatError::Http { status },
                other => ChatError::Transport(other.to_string()),
            })?;
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ChatError::Protocol(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| ChatError::Protocol("missing choices[0].message.content".into()))
    }
}
