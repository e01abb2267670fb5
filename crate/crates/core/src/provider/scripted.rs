//! Deterministic provider double: replies come from a fixed script, and
//! every request transcript is recorded for assertions.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use super::{
    ChatMessage, ChatProvider, Completion, ProviderError, TokenUsage, ToolCallRequest, ToolSchema,
};

/// One canned reply: plain text, or a batch of tool calls.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedReply {
    pub content: String,
    /// (tool name, raw JSON arguments) pairs.
    pub tool_calls: Vec<(String, String)>,
    pub usage: TokenUsage,
}

impl ScriptedReply {
    pub fn text(content: impl Into<String>) -> ScriptedReply {
        ScriptedReply {
            content: content.into(),
            tool_calls: vec![],
            usage: TokenUsage::new(150, 50),
        }
    }

    pub fn tool_call(name: impl Into<String>, arguments: impl Into<String>) -> ScriptedReply {
        ScriptedReply {
            content: String::new(),
            tool_calls: vec![(name.into(), arguments.into())],
            usage: TokenUsage::new(150, 50),
        }
    }

    pub fn tool_calls(calls: Vec<(String, String)>) -> ScriptedReply {
        ScriptedReply { content: String::new(), tool_calls: calls, usage: TokenUsage::new(150, 50) }
    }

    pub fn with_usage(mut self, prompt_tokens: u64, completion_tokens: u64) -> ScriptedReply {
        self.usage = TokenUsage::new(prompt_tokens, completion_tokens);
        self
    }
}

/// Provider whose replies are issued in script order. Exhausting the
/// script is a typed error, which keeps runaway loops visible in tests.
pub struct ScriptedProvider {
    replies: Mutex<VecDeque<ScriptedReply>>,
    transcripts: Mutex<Vec<Vec<ChatMessage>>>,
    next_call_id: AtomicUsize,
    script_len: usize,
}

impl ScriptedProvider {
    pub fn new(replies: Vec<ScriptedReply>) -> ScriptedProvider {
        ScriptedProvider {
            script_len: replies.len(),
            replies: Mutex::new(replies.into()),
            transcripts: Mutex::new(Vec::new()),
            next_call_id: AtomicUsize::new(1),
        }
    }

    /// Everything the provider has been asked so far, one transcript per
    /// complete call.
    pub fn transcripts(&self) -> Vec<Vec<ChatMessage>> {
        self.transcripts.lock().expect("transcripts lock").clone()
    }
}

#[async_trait::async_trait]
impl ChatProvider for ScriptedProvider {
    async fn complete(
        &self,
        messages: &[ChatMessage],
        _tools: &[ToolSchema],
    ) -> Result<Completion, ProviderError> {
        self.transcripts.lock().expect("transcripts lock").push(messages.to_vec());
        let reply = self
            .replies
            .lock()
            .expect("script lock")
            .pop_front()
            .ok_or(ProviderError::ScriptExhausted { replies: self.script_len })?;

        let tool_calls = reply
            .tool_calls
            .into_iter()
            .map(|(name, arguments)| ToolCallRequest {
                id: format!("call_{}", self.next_call_id.fetch_add(1, Ordering::Relaxed)),
                name,
                arguments,
            })
            .collect();
        Ok(Completion {
            message: ChatMessage::assistant_with_calls(reply.content, tool_calls),
            usage: reply.usage,
            latency: Duration::ZERO,
            usage_missing: false,
            usage_corrected: false,
        })
    }
}
