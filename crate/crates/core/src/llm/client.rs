use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_TOKENS: u32 = 1000;
pub const DEFAULT_MODEL: &str = "gpt-4o-mini";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self { temperature: DEFAULT_TEMPERATURE, max_tokens: DEFAULT_MAX_TOKENS, model_id: DEFAULT_MODEL.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Chat-completions request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(system: &str, prompt: &str, params: &GenerationParams) -> Self {
        Self {
            model: params.model_id.clone(),
            messages: vec![
                ChatMessage { role: "system".into(), content: system.to_string() },
                ChatMessage { role: "user".into(), content: prompt.to_string() },
            ],
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        }
    }

    pub fn system(&self) -> &str {
        self.messages.iter().find(|m| m.role == "system").map(|m| m.content.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LlmError {
    #[error("LLM endpoint timed out after {timeout_ms} ms")]
    EndpointTimeout { timeout_ms: u64 },
    #[error("LLM endpoint returned status {0}")]
    EndpointError(u16),
    #[error("LLM endpoint unreachable: {0}")]
    Transport(String),
    #[error("LLM endpoint returned an unusable body: {0}")]
    BadResponse(String),
}

/// A chat-completions endpoint.
pub trait LlmClient: Send + Sync {
    fn name(&self) -> &'static str;

    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

/// Keeps at most `max_tokens` whitespace-separated tokens.
pub fn truncate_tokens(text: &str, max_tokens: u32) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() <= max_tokens as usize {
        text.trim().to_string()
    } else {
        tokens[..max_tokens as usize].join(" ")
    }
}

/// Sends the request and truncates the answer to the token budget.
pub fn generate(
    client: &dyn LlmClient,
    system: &str,
    prompt: &str,
    params: &GenerationParams,
) -> Result<String, LlmError> {
    let request = ChatRequest::new(system, prompt, params);
    let text = client.complete(&request)?;
    Ok(truncate_tokens(&text, params.max_tokens))
}

/// Offline stand-in: echoes the recipe, intent, status and top signal
/// carried in the system message.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockLlm;

impl MockLlm {
    fn field<'a>(system: &'a str, key: &str) -> &'a str {
        system.lines().find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(": "))).unwrap_or("unknown")
    }
}

impl LlmClient for MockLlm {
    fn name(&self) -> &'static str {
        "mock"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let s = request.system();
        Ok(format!(
            "{} ({}): {}. Strongest signal: {}.",
            Self::field(s, "Recipe"),
            Self::field(s, "Intent"),
            Self::field(s, "Status"),
            Self::field(s, "Top signal"),
        ))
    }
}

/// Counts calls and always fails; used to prove a code path stays offline.
#[derive(Debug, Default)]
pub struct FailOnContact {
    contacts: AtomicUsize,
}

impl FailOnContact {
    pub fn contacts(&self) -> usize {
        self.contacts.load(Ordering::SeqCst)
    }
}

impl LlmClient for FailOnContact {
    fn name(&self) -> &'static str {
        "fail-on-contact"
    }

    fn complete(&self, _request: &ChatRequest) -> Result<String, LlmError> {
        self.contacts.fetch_add(1, Ordering::SeqCst);
        Err(LlmError::Transport("endpoint contacted in offline mode".into()))
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

/// HTTP chat-completions client.
pub struct HttpLlm {
    endpoint: String,
    api_key: Option<String>,
    timeout: Duration,
    agent: ureq::Agent,
}

impl HttpLlm {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self { endpoint: endpoint.into(), api_key, timeout, agent }
    }
}

impl LlmClient for HttpLlm {
    fn name(&self) -> &'static str {
        "http"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let body = serde_json::to_vec(request).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(&body[..]).map_err(|e| match e {
            ureq::Error::Timeout(_) => LlmError::EndpointTimeout { timeout_ms: self.timeout.as_millis() as u64 },
            other => LlmError::Transport(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(LlmError::EndpointError(status));
        }
        let parsed: CompletionResponse = resp.body_mut().read_json().map_err(|e| match e {
            ureq::Error::Timeout(_) => LlmError::EndpointTimeout { timeout_ms: self.timeout.as_millis() as u64 },
            other => LlmError::BadResponse(other.to_string()),
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::BadResponse("no choices".into()))
    }
}
