//! MCP integration: server pool specifications, the JSON-RPC wire, and
//! stdio-backed protocol sessions.

pub mod jsonrpc;
pub mod pool;
pub mod session;

pub use pool::{
    load_mcp_pool, parse_mcp_pool, serialize_mcp_pool, InputType, McpServerSpec, PoolError,
    PortValue, RunConfigEntry, ToolDescriptor, ToolInput,
};
pub use session::{McpError, ServerInfo, Session, SessionState, SessionTimeouts, StdioCommand};

use std::time::Duration;

use serde_json::Value;

/// One block of tool output. MCP servers return a list of typed blocks;
/// anything that is not plain text is kept verbatim.
#[derive(Debug, Clone, PartialEq)]
pub enum ContentBlock {
    Text { text: String },
    Other(Value),
}

impl ContentBlock {
    pub fn from_value(v: &Value) -> ContentBlock {
        match (v.get("type").and_then(Value::as_str), v.get("text").and_then(Value::as_str)) {
            (Some("text"), Some(text)) => ContentBlock::Text { text: text.to_string() },
            _ => ContentBlock::Other(v.clone()),
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            ContentBlock::Text { text } => Some(text),
            ContentBlock::Other(_) => None,
        }
    }
}

/// Outcome of one tool invocation, successful or not. Errors the server
/// reports in-band arrive here with `is_error` set and an explanatory text
/// block, so they stay part of the trace instead of aborting the episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolCallResult {
    pub content: Vec<ContentBlock>,
    pub is_error: bool,
    pub elapsed: Duration,
    /// Verbatim result payload as received (or synthesized, for calls that
    /// never reached a server).
    pub raw: Value,
}

impl ToolCallResult {
    /// Result for a call that could not be dispatched at all (unknown tool,
    /// closed session). Counts as an erroneous call.
    pub fn synthetic_error(message: impl Into<String>) -> ToolCallResult {
        let message = message.into();
        ToolCallResult {
            raw: serde_json::json!({ "error": message }),
            content: vec![ContentBlock::Text { text: message }],
            is_error: true,
            elapsed: Duration::ZERO,
        }
    }

    /// All text blocks joined with newlines; empty string if none.
    pub fn text(&self) -> String {
        self.content.iter().filter_map(ContentBlock::as_text).collect::<Vec<_>>().join("\n")
    }
}
