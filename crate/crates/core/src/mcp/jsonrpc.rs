//! Line-delimited JSON-RPC 2.0 framing: build outgoing lines, classify
//! incoming ones.

use serde_json::{json, Value};

/// Protocol revision spoken by both the client and the bundled mock
/// servers. Sent in the initialize handshake and echoed back.
pub const PROTOCOL_VERSION: &str = "2025-03-26";

/// Error object from a JSON-RPC error response.
#[derive(Debug, Clone, PartialEq)]
pub struct RpcError {
    pub code: i64,
    pub message: String,
    pub data: Option<Value>,
}

/// One parsed incoming line.
#[derive(Debug, Clone, PartialEq)]
pub enum Incoming {
    Response { id: Value, result: Result<Value, RpcError> },
    Notification { method: String, params: Option<Value> },
    Request { id: Value, method: String, params: Option<Value> },
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("not JSON: {0}")]
    NotJson(#[from] serde_json::Error),
    #[error("not a JSON object")]
    NotAnObject,
    #[error("jsonrpc version field is {0:?}, expected \"2.0\"")]
    BadVersion(Option<String>),
    #[error("object is neither a request, a notification, nor a response")]
    UnknownShape,
}

/// Serialize a request line (no trailing newline).
pub fn request(id: u64, method: &str, params: Value) -> String {
    json!({ "jsonrpc": "2.0", "id": id, "method": method, "params": params }).to_string()
}

/// Serialize a notification line.
pub fn notification(method: &str, params: Value) -> String {
    json!({ "jsonrpc": "2.0", "method": method, "params": params }).to_string()
}

/// Serialize a success response line (mock server side).
pub fn response_ok(id: &Value, result: Value) -> String {
    json!({ "jsonrpc": "2.0", "id": id, "result": result }).to_string()
}

/// Serialize an error response line (mock server side).
pub fn response_err(id: &Value, code: i64, message: &str) -> String {
    json!({ "jsonrpc": "2.0", "id": id, "error": { "code": code, "message": message } }).to_string()
}

/// Parse and classify one incoming line.
pub fn parse_incoming(line: &str) -> Result<Incoming, FrameError> {
    let value: Value = serde_json::from_str(line)?;
    let obj = value.as_object().ok_or(FrameError::NotAnObject)?;
    match obj.get("jsonrpc").and_then(Value::as_str) {
        Some("2.0") => {}
        other => return Err(FrameError::BadVersion(other.map(str::to_string))),
    }

    if let Some(method) = obj.get("method") {
        let method = match method.as_str() {
            Some(m) => m.to_string(),
            None => return Err(FrameError::UnknownShape),
        };
        let params = obj.get("params").cloned();
        return Ok(match obj.get("id") {
            Some(id) => Incoming::Request { id: id.clone(), method, params },
            None => Incoming::Notification { method, params },
        });
    }

    let id = obj.get("id").cloned().ok_or(FrameError::UnknownShape)?;
    if let Some(err) = obj.get("error") {
        let rpc_error = RpcError {
            code: err.get("code").and_then(Value::as_i64).unwrap_or(0),
            message: err.get("message").and_then(Value::as_str).unwrap_or("").to_string(),
            data: err.get("data").cloned(),
        };
        return Ok(Incoming::Response { id, result: Err(rpc_error) });
    }
    if let Some(result) = obj.get("result") {
        return Ok(Incoming::Response { id, result: Ok(result.clone()) });
    }
    Err(FrameError::UnknownShape)
}
