//! Chat-completion providers with tool calling: one OpenAI-compatible HTTP
//! client for real gateways, one scripted double for tests.

pub mod http;
pub mod scripted;

pub use http::HttpProvider;
pub use scripted::{ScriptedProvider, ScriptedReply};

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::mcp::ToolDescriptor;

/// Who said a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

/// A tool invocation requested by the model. Arguments stay raw JSON text
/// exactly as the provider sent them; they are parsed only at dispatch.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolCallRequest {
    pub id: String,
    pub name: String,
    pub arguments: String,
}

/// One turn of the conversation. Constructors keep the role invariants:
/// tool_calls appear only on assistant messages, tool_call_id only on tool
/// messages.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    pub tool_calls: Vec<ToolCallRequest>,
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> ChatMessage {
        ChatMessage { role: Role::System, content: content.into(), tool_calls: vec![], tool_call_id: None }
    }

    pub fn user(content: impl Into<String>) -> ChatMessage {
        ChatMessage { role: Role::User, content: content.into(), tool_calls: vec![], tool_call_id: None }
    }

    pub fn assistant(content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
            tool_calls: vec![],
            tool_call_id: None,
        }
    }

    pub fn assistant_with_calls(content: impl Into<String>, calls: Vec<ToolCallRequest>) -> ChatMessage {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
            tool_calls: calls,
            tool_call_id: None,
        }
    }

    /// Reply to one tool call, carrying its id back to the model.
    pub fn tool_reply(tool_call_id: impl Into<String>, content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: Role::Tool,
            content: content.into(),
            tool_calls: vec![],
            tool_call_id: Some(tool_call_id.into()),
        }
    }
}

/// A tool as offered to the model: name, description, JSON-Schema
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

/// Project a pool/server tool descriptor into the schema shape chat APIs
/// expect: every input becomes a property, required inputs are listed.
pub fn tool_schema_from_descriptor(descriptor: &ToolDescriptor) -> ToolSchema {
    let mut properties = serde_json::Map::new();
    let mut required = Vec::new();
    for input in &descriptor.inputs {
        properties.insert(
            input.name.clone(),
            json!({ "type": input.input_type.as_str(), "description": input.description }),
        );
        if input.required {
            required.push(Value::String(input.name.clone()));
        }
    }
    ToolSchema {
        name: descriptor.tool_name.clone(),
        description: descriptor.tool_description.clone(),
        parameters: json!({
            "type": "object",
            "properties": Value::Object(properties),
            "required": Value::Array(required),
        }),
    }
}

/// Token counts for one completion (or a running episode total).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

impl TokenUsage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> TokenUsage {
        TokenUsage { prompt_tokens, completion_tokens, total_tokens: prompt_tokens + completion_tokens }
    }

    /// Build from provider-reported numbers, trusting the parts over the
    /// total. Returns whether the reported total had to be corrected.
    pub fn reconciled(
        prompt_tokens: u64,
        completion_tokens: u64,
        reported_total: Option<u64>,
    ) -> (TokenUsage, bool) {
        let usage = TokenUsage::new(prompt_tokens, completion_tokens);
        let corrected = reported_total.is_some_and(|t| t != usage.total_tokens);
        (usage, corrected)
    }

    pub fn is_consistent(&self) -> bool {
        self.total_tokens == self.prompt_tokens + self.completion_tokens
    }

    pub fn add(&mut self, other: TokenUsage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.total_tokens += other.total_tokens;
    }
}

/// Connection settings for an HTTP provider.
#[derive(Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub request_timeout: Duration,
}

impl ProviderConfig {
    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        model: impl Into<String>,
    ) -> ProviderConfig {
        ProviderConfig {
            base_url: base_url.into(),
            api_key: api_key.into(),
            model: model.into(),
            temperature: 0.0,
            max_retries: 2,
            request_timeout: Duration::from_secs(120),
        }
    }
}

// Keys must not leak through logs or error chains.
impl fmt::Debug for ProviderConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderConfig")
            .field("base_url", &self.base_url)
            .field("api_key", &"<redacted>")
            .field("model", &self.model)
            .field("temperature", &self.temperature)
            .field("max_retries", &self.max_retries)
            .field("request_timeout", &self.request_timeout)
            .finish()
    }
}

/// One model reply with its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub message: ChatMessage,
    pub usage: TokenUsage,
    /// Wall-clock time of the provider round trip, measured client-side.
    pub latency: Duration,
    /// The provider reported no usage; zeros were substituted.
    pub usage_missing: bool,
    /// The provider's total disagreed with prompt+completion and was
    /// replaced by the sum.
    pub usage_corrected: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("transport failure talking to provider: {detail}")]
    Transport { detail: String },
    #[error("provider rejected the request with authentication failure (status {status}): {body}")]
    Auth { status: u16, body: String },
    #[error("provider rate limit persisted after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("provider returned status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("provider response malformed: {detail}")]
    Malformed { detail: String },
    #[error("scripted provider exhausted after {replies} replies")]
    ScriptExhausted { replies: usize },
}

impl ProviderError {
    /// Authentication failures get a dedicated process exit code.
    pub fn is_auth(&self) -> bool {
        matches!(self, ProviderError::Auth { .. })
    }
}

/// Anything that can produce chat completions.
#[async_trait::async_trait]
pub trait ChatProvider: Send + Sync {
    async fn complete(
        &self,
        messages: &[ChatMessage],
        tools: &[ToolSchema],
    ) -> Result<Completion, ProviderError>;
}
