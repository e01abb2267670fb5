//! OpenAI-compatible chat-completions client. One wire dialect covers
//! every gateway the harness talks to.

use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tokio::sync::Mutex;

use super::{
    ChatMessage, ChatProvider, Completion, ProviderConfig, ProviderError, Role, TokenUsage,
    ToolCallRequest, ToolSchema,
};

/// Pause between retry attempts, multiplied by the attempt number.
const RETRY_BACKOFF: Duration = Duration::from_millis(300);

/// HTTP provider for `{base_url}/chat/completions` endpoints.
pub struct HttpProvider {
    config: ProviderConfig,
    client: reqwest::Client,
    rate: Option<Mutex<TokenBucket>>,
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<HttpProvider, ProviderError> {
        let client = reqwest::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|err| ProviderError::Transport { detail: err.to_string() })?;
        Ok(HttpProvider { config, client, rate: None })
    }

    /// Cap outgoing requests at `per_second`, shared across all users of
    /// this handle.
    pub fn with_rate_limit(mut self, per_second: f64) -> HttpProvider {
        if per_second > 0.0 {
            self.rate = Some(Mutex::new(TokenBucket::new(per_second)));
        }
        self
    }

    pub fn model(&self) -> &str {
        &self.config.model
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    async fn throttle(&self) {
        if let Some(bucket) = &self.rate {
            let wait = bucket.lock().await.take();
            if !wait.is_zero() {
                tokio::time::sleep(wait).await;
            }
        }
    }
}

/// Minimal token bucket: one token per request, refilled at a fixed rate,
/// burst capacity of one second's worth.
struct TokenBucket {
    per_second: f64,
    tokens: f64,
    last_refill: Instant,
}

impl TokenBucket {
    fn new(per_second: f64) -> TokenBucket {
        TokenBucket { per_second, tokens: per_second.max(1.0), last_refill: Instant::now() }
    }

    /// Take one token; returns how long the caller must sleep first.
    fn take(&mut self) -> Duration {
        let now = Instant::now();
        let elapsed = now.duration_since(self.last_refill).as_secs_f64();
        self.tokens = (self.tokens + elapsed * self.per_second).min(self.per_second.max(1.0));
        self.last_refill = now;
        self.tokens -= 1.0;
        if self.tokens >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-self.tokens / self.per_second)
        }
    }
}

/// Serialize the conversation into the wire message array.
fn messages_to_wire(messages: &[ChatMessage]) -> Vec<Value> {
    messages
        .iter()
        .map(|m| {
            let mut obj = json!({ "role": m.role.as_str(), "content": m.content });
            if m.role == Role::Assistant && !m.tool_calls.is_empty() {
                obj["tool_calls"] = m
                    .tool_calls
                    .iter()
                    .map(|c| {
                        json!({
                            "id": c.id,
                            "type": "function",
                            "function": { "name": c.name, "arguments": c.arguments },
                        })
                    })
                    .collect();
            }
            if let Some(id) = &m.tool_call_id {
                obj["tool_call_id"] = json!(id);
            }
            obj
        })
        .collect()
}

/// Build the full request body.
fn request_body(config: &ProviderConfig, messages: &[ChatMessage], tools: &[ToolSchema]) -> Value {
    let mut body = json!({
        "model": config.model,
        "messages": messages_to_wire(messages),
        "temperature": config.temperature,
    });
    if !tools.is_empty() {
        body["tools"] = tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {
                        "name": t.name,
                        "description": t.description,
                        "parameters": t.parameters,
                    },
                })
            })
            .collect();
    }
    body
}

/// Pull the assistant message and usage out of a response body.
fn parse_response(body: &Value) -> Result<(ChatMessage, TokenUsage, bool, bool), ProviderError> {
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| ProviderError::Malformed { detail: "no choices[0].message".to_string() })?;
    let content = message.get("content").and_then(Value::as_str).unwrap_or_default().to_string();
    let mut calls = Vec::new();
    if let Some(raw_calls) = message.get("tool_calls").and_then(Value::as_array) {
        for (i, call) in raw_calls.iter().enumerate() {
            let function = call.get("function").ok_or_else(|| ProviderError::Malformed {
                detail: format!("tool_calls[{i}] has no function"),
            })?;
            let name = function.get("name").and_then(Value::as_str).ok_or_else(|| {
                ProviderError::Malformed { detail: format!("tool_calls[{i}] has no name") }
            })?;
            // Arguments are kept as the raw JSON text the provider sent.
            let arguments = match function.get("arguments") {
                Some(Value::String(s)) => s.clone(),
                Some(other) => other.to_string(),
                None => "{}".to_string(),
            };
            let id = call
                .get("id")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| format!("call_{}", i + 1));
            calls.push(ToolCallRequest { id, name: name.to_string(), arguments });
        }
    }

    let (usage, missing, corrected) = match body.get("usage") {
        Some(u) => {
            let prompt = u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0);
            let completion = u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0);
            let total = u.get("total_tokens").and_then(Value::as_u64);
            let (usage, corrected) = TokenUsage::reconciled(prompt, completion, total);
            (usage, false, corrected)
        }
        None => (TokenUsage::default(), true, false),
    };

    Ok((ChatMessage::assistant_with_calls(content, calls), usage, missing, corrected))
}

fn is_retryable_status(status: u16) -> bool {
    status == 429 || status >= 500
}

#[async_trait::async_trait]
impl ChatProvider for HttpProvider {
    async fn complete(
        &self,
        messages: &[ChatMessage],
        tools: &[ToolSchema],
    ) -> Result<Completion, ProviderError> {
        let body = request_body(&self.config, messages, tools);
        let started = Instant::now();
        let attempts = self.config.max_retries + 1;
        let mut last_error = None;
        for attempt in 1..=attempts {
            if attempt > 1 {
                tokio::time::sleep(RETRY_BACKOFF * (attempt - 1)).await;
            }
            self.throttle().await;
            let sent = self
                .client
                .post(self.endpoint())
                .bearer_auth(&self.config.api_key)
                .json(&body)
                .send()
                .await;
            let response = match sent {
                Ok(r) => r,
                Err(err) => {
                    tracing::debug!(attempt, "provider transport error: {err}");
                    last_error = Some(ProviderError::Transport { detail: err.to_string() });
                    continue;
                }
            };
            let status = response.status().as_u16();
            let text = response.text().await.unwrap_or_default();
            if status == 401 || status == 403 {
                return Err(ProviderError::Auth { status, body: text });
            }
            if is_retryable_status(status) {
                tracing::debug!(attempt, status, "provider retryable status");
                last_error = Some(if status == 429 {
                    ProviderError::RateLimited { attempts }
                } else {
                    ProviderError::Http { status, body: text }
                });
                continue;
            }
            if status >= 400 {
                return Err(ProviderError::Http { status, body: text });
            }
            let parsed: Value = serde_json::from_str(&text)
                .map_err(|err| ProviderError::Malformed { detail: err.to_string() })?;
            let (message, usage, usage_missing, usage_corrected) = parse_response(&parsed)?;
            if usage_missing {
                tracing::warn!(model = %self.config.model, "provider reported no token usage");
            }
            return Ok(Completion {
                message,
                usage,
                latency: started.elapsed(),
                usage_missing,
                usage_corrected,
            });
        }
        Err(last_error.unwrap_or(ProviderError::Transport { detail: "no attempts made".to_string() }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ProviderConfig {
        ProviderConfig::new("https://gw.invalid/api/v1", "k", "test-model")
    }

    #[test]
    fn body_carries_model_messages_and_tools() {
        let messages = vec![
            ChatMessage::system("sys"),
            ChatMessage::user("q"),
            ChatMessage::assistant_with_calls(
                "",
                vec![ToolCallRequest {
                    id: "call_1".to_string(),
                    name: "floor".to_string(),
                    arguments: r#"{"value": "-29/3"}"#.to_string(),
                }],
            ),
            ChatMessage::tool_reply("call_1", "-10"),
        ];
        let tools = vec![ToolSchema {
            name: "floor".to_string(),
            description: "Round down.".to_string(),
            parameters: json!({"type": "object", "properties": {}, "required": []}),
        }];
        let body = request_body(&config(), &messages, &tools);
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][2]["tool_calls"][0]["function"]["name"], "floor");
        assert_eq!(body["messages"][3]["tool_call_id"], "call_1");
        assert_eq!(body["tools"][0]["type"], "function");
        assert_eq!(body["tools"][0]["function"]["name"], "floor");
    }

    #[test]
    fn tools_key_is_omitted_when_no_tools() {
        let body = request_body(&config(), &[ChatMessage::user("q")], &[]);
        assert!(body.get("tools").is_none());
    }

    #[test]
    fn response_parsing_extracts_calls_and_usage() {
        let body = json!({
            "choices": [{ "message": {
                "role": "assistant",
                "content": null,
                "tool_calls": [{
                    "id": "call_9",
                    "type": "function",
                    "function": { "name": "write_file", "arguments": "{\"path\": \"answer.jsonl\"}" },
                }],
            }}],
            "usage": { "prompt_tokens": 820, "completion_tokens": 610, "total_tokens": 1430 },
        });
        let (message, usage, missing, corrected) = parse_response(&body).unwrap();
        assert_eq!(message.tool_calls.len(), 1);
        assert_eq!(message.tool_calls[0].id, "call_9");
        assert_eq!(message.tool_calls[0].arguments, "{\"path\": \"answer.jsonl\"}");
        assert_eq!(usage, TokenUsage::new(820, 610));
        assert!(!missing && !corrected);
    }

    #[test]
    fn inconsistent_usage_total_is_corrected() {
        let body = json!({
            "choices": [{ "message": { "role": "assistant", "content": "hi" } }],
            "usage": { "prompt_tokens": 10, "completion_tokens": 5, "total_tokens": 99 },
        });
        let (_, usage, missing, corrected) = parse_response(&body).unwrap();
        assert_eq!(usage.total_tokens, 15);
        assert!(corrected && !missing);
    }

    #[test]
    fn missing_usage_is_flagged() {
        let body = json!({ "choices": [{ "message": { "role": "assistant", "content": "hi" } }] });
        let (_, usage, missing, _) = parse_response(&body).unwrap();
        assert_eq!(usage.total_tokens, 0);
        assert!(missing);
    }

    #[test]
    fn responses_without_choices_are_malformed() {
        assert!(matches!(
            parse_response(&json!({"usage": {}})),
            Err(ProviderError::Malformed { .. })
        ));
    }
}
