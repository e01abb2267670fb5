//! One protocol session against one MCP server process (or an in-process
//! transport in tests).
//!
//! Lifecycle is `Spawned → Initialized → Closed`. Requests are serialized:
//! one outstanding request at a time, each with a fresh strictly-increasing
//! id, and the session waits for the matching response before anything
//! else is sent. A background task owns the read side and forwards whole
//! lines; whatever bytes arrive, the caller gets a result or a typed error,
//! never a panic.

use std::collections::BTreeMap;
use std::process::Stdio;
use std::time::Duration;

use serde_json::{json, Value};
use tokio::io::{AsyncBufReadExt, AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::process::{Child, Command};
use tokio::sync::mpsc;
use tokio::time::Instant;

use super::jsonrpc::{self, Incoming};
use super::pool::{InputType, McpServerSpec, ToolDescriptor, ToolInput};
use super::{ContentBlock, ToolCallResult};

/// Longest accepted line from a server. Anything bigger is treated as a
/// protocol failure rather than buffered without bound.
const MAX_LINE_BYTES: usize = 8 * 1024 * 1024;

/// How long raw server output quoted inside error messages may get.
const RAW_SNIPPET_BYTES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Spawned,
    Initialized,
    Closed,
}

impl std::fmt::Display for SessionState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SessionState::Spawned => "spawned",
            SessionState::Initialized => "initialized",
            SessionState::Closed => "closed",
        })
    }
}

/// Deadlines governing a session.
#[derive(Debug, Clone, Copy)]
pub struct SessionTimeouts {
    /// Budget for the initialize exchange (also the startup budget: a
    /// server that never writes gets cut off here).
    pub handshake: Duration,
    /// Budget per tools/* request.
    pub per_call: Duration,
    /// Grace between closing stdin and killing the child.
    pub shutdown: Duration,
}

impl Default for SessionTimeouts {
    fn default() -> Self {
        SessionTimeouts {
            handshake: Duration::from_secs(15),
            per_call: Duration::from_secs(60),
            shutdown: Duration::from_secs(3),
        }
    }
}

/// What the server said about itself during the handshake.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerInfo {
    pub name: String,
    pub version: String,
    pub protocol_version: String,
    pub capabilities: Value,
}

#[derive(Debug, thiserror::Error)]
pub enum McpError {
    #[error("server {server}: failed to spawn {command:?}: {source}")]
    Spawn {
        server: String,
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server {server}: cannot parse command {command:?}: {detail}")]
    CommandParse { server: String, command: String, detail: String },
    #[error("server {server}: no output within the {waited:?} startup deadline")]
    StartupTimeout { server: String, waited: Duration },
    #[error("server {server}: handshake did not complete within {waited:?}")]
    HandshakeTimeout { server: String, waited: Duration },
    #[error("server {server}: no response to {method} within {waited:?}")]
    Timeout { server: String, method: String, waited: Duration },
    #[error("server {server}: speaks protocol {theirs:?}, this client speaks {ours:?}")]
    VersionMismatch { server: String, ours: String, theirs: String },
    #[error("server {server}: {method} failed with code {code}: {message}")]
    Rpc { server: String, method: String, code: i64, message: String },
    #[error("server {server}: malformed output ({detail}): {raw:?}")]
    Malformed { server: String, detail: String, raw: String },
    #[error("server {server}: response id {got} does not match request id {expected}")]
    Correlation { server: String, expected: u64, got: String },
    #[error("server {server}: transport closed")]
    Closed { server: String },
    #[error("server {server}: io failure while {context}: {source}")]
    Io {
        server: String,
        context: &'static str,
        #[source]
        source: std::io::Error,
    },
    #[error("server {server}: {operation} requires state {wanted}, session is {actual}")]
    BadState { server: String, operation: &'static str, wanted: &'static str, actual: SessionState },
    #[error("server {server}: tools/list entry {index} is malformed: {detail}")]
    MalformedToolEntry { server: String, index: usize, detail: String },
}

enum ReaderEvent {
    Line(String),
    Oversized,
    Eof,
}

struct Transport {
    writer: Box<dyn AsyncWrite + Send + Unpin>,
    events: mpsc::Receiver<ReaderEvent>,
    saw_output: bool,
}

impl Transport {
    fn start(
        reader: impl AsyncRead + Send + Unpin + 'static,
        writer: impl AsyncWrite + Send + Unpin + 'static,
    ) -> Transport {
        let (tx, events) = mpsc::channel(64);
        tokio::spawn(read_lines(reader, tx));
        Transport { writer: Box::new(writer), events, saw_output: false }
    }
}

/// Forward whole lines from the server, bounding memory per line. Invalid
/// UTF-8 is replaced rather than rejected so the parse error downstream can
/// show what arrived.
async fn read_lines(reader: impl AsyncRead + Unpin, tx: mpsc::Sender<ReaderEvent>) {
    let mut reader = BufReader::new(reader);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let mut limited = (&mut reader).take(MAX_LINE_BYTES as u64 + 1);
        match limited.read_until(b'\n', &mut buf).await {
            Ok(0) => {
                let _ = tx.send(ReaderEvent::Eof).await;
                return;
            }
            Ok(_) if buf.len() > MAX_LINE_BYTES => {
                let _ = tx.send(ReaderEvent::Oversized).await;
                return;
            }
            Ok(_) => {
                let had_newline = buf.last() == Some(&b'\n');
                while matches!(buf.last(), Some(b'\n' | b'\r')) {
                    buf.pop();
                }
                if !buf.is_empty() {
                    let line = String::from_utf8_lossy(&buf).into_owned();
                    if tx.send(ReaderEvent::Line(line)).await.is_err() {
                        return;
                    }
                }
                if !had_newline {
                    // EOF arrived mid-line; the next read reports it.
                    continue;
                }
            }
            Err(_) => {
                let _ = tx.send(ReaderEvent::Eof).await;
                return;
            }
        }
    }
}

/// Split a command line into program + arguments. Single and double quotes
/// group words; no escape processing beyond that.
pub fn split_command(command: &str) -> Result<Vec<String>, String> {
    let mut words = Vec::new();
    let mut current = String::new();
    let mut quote: Option<char> = None;
    let mut started = false;
    for c in command.chars() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => current.push(c),
            None if c == '\'' || c == '"' => {
                quote = Some(c);
                started = true;
            }
            None if c.is_whitespace() => {
                if started {
                    words.push(std::mem::take(&mut current));
                    started = false;
                }
            }
            None => {
                current.push(c);
                started = true;
            }
        }
    }
    if quote.is_some() {
        return Err("unterminated quote".to_string());
    }
    if started {
        words.push(current);
    }
    if words.is_empty() {
        return Err("empty command".to_string());
    }
    Ok(words)
}

/// A parsed launch command, ready to spawn.
#[derive(Debug, Clone, PartialEq)]
pub struct StdioCommand {
    pub program: String,
    pub args: Vec<String>,
    pub env: BTreeMap<String, String>,
}

impl StdioCommand {
    pub fn from_spec(spec: &McpServerSpec) -> Result<StdioCommand, McpError> {
        let launch = spec.launch();
        let words = split_command(&launch.command).map_err(|detail| McpError::CommandParse {
            server: spec.name.clone(),
            command: launch.command.clone(),
            detail,
        })?;
        let mut words = words.into_iter();
        Ok(StdioCommand {
            program: words.next().expect("split_command yields at least one word"),
            args: words.collect(),
            env: launch.env.clone(),
        })
    }
}

/// Protocol session against one server.
pub struct Session {
    server_name: String,
    state: SessionState,
    next_request_id: u64,
    timeouts: SessionTimeouts,
    transport: Option<Transport>,
    child: Option<Child>,
    tools_cache: Option<Vec<ToolDescriptor>>,
}

impl Session {
    /// Launch the server subprocess described by `spec` with stdio pipes
    /// attached. The child's stderr is drained to the log.
    pub async fn spawn(spec: &McpServerSpec) -> Result<Session, McpError> {
        Self::spawn_with(spec, SessionTimeouts::default()).await
    }

    pub async fn spawn_with(
        spec: &McpServerSpec,
        timeouts: SessionTimeouts,
    ) -> Result<Session, McpError> {
        let cmd = StdioCommand::from_spec(spec)?;
        let mut child = Command::new(&cmd.program)
            .args(&cmd.args)
            .envs(&cmd.env)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .kill_on_drop(true)
            .spawn()
            .map_err(|source| McpError::Spawn {
                server: spec.name.clone(),
                command: spec.launch().command.clone(),
                source,
            })?;

        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        if let Some(stderr) = child.stderr.take() {
            let server = spec.name.clone();
            tokio::spawn(async move {
                let mut lines = BufReader::new(stderr).lines();
                while let Ok(Some(line)) = lines.next_line().await {
                    tracing::debug!(server = %server, "stderr: {line}");
                }
            });
        }

        Ok(Session {
            server_name: spec.name.clone(),
            state: SessionState::Spawned,
            next_request_id: 1,
            timeouts,
            transport: Some(Transport::start(stdout, stdin)),
            child: Some(child),
            tools_cache: None,
        })
    }

    /// Session over caller-provided streams; used for in-process servers
    /// and protocol fuzzing. Starts in `Spawned` state like a real child.
    pub fn from_transport(
        server_name: impl Into<String>,
        reader: impl AsyncRead + Send + Unpin + 'static,
        writer: impl AsyncWrite + Send + Unpin + 'static,
    ) -> Session {
        Session {
            server_name: server_name.into(),
            state: SessionState::Spawned,
            next_request_id: 1,
            timeouts: SessionTimeouts::default(),
            transport: Some(Transport::start(reader, writer)),
            child: None,
            tools_cache: None,
        }
    }

    pub fn set_timeouts(&mut self, timeouts: SessionTimeouts) {
        self.timeouts = timeouts;
    }

    pub fn server_name(&self) -> &str {
        &self.server_name
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    /// Tools from the last successful `list_tools`, if any.
    pub fn cached_tools(&self) -> Option<&[ToolDescriptor]> {
        self.tools_cache.as_deref()
    }

    fn bad_state(&self, operation: &'static str, wanted: &'static str) -> McpError {
        McpError::BadState {
            server: self.server_name.clone(),
            operation,
            wanted,
            actual: self.state,
        }
    }

    /// Run the initialize exchange and send the initialized notification.
    /// On any failure the state stays `Spawned`.
    pub async fn initialize(&mut self) -> Result<ServerInfo, McpError> {
        if self.state != SessionState::Spawned {
            return Err(self.bad_state("initialize", "spawned"));
        }
        let params = json!({
            "protocolVersion": jsonrpc::PROTOCOL_VERSION,
            "capabilities": {},
            "clientInfo": { "name": "toolradar", "version": env!("CARGO_PKG_VERSION") },
        });
        let handshake = self.timeouts.handshake;
        let result = match self.request("initialize", params, handshake).await {
            Ok(v) => v,
            Err(McpError::Timeout { server, waited, .. }) => {
                let saw_output = self.transport.as_ref().is_some_and(|t| t.saw_output);
                return Err(if saw_output {
                    McpError::HandshakeTimeout { server, waited }
                } else {
                    McpError::StartupTimeout { server, waited }
                });
            }
            Err(other) => return Err(other),
        };

        let theirs = result
            .get("protocolVersion")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        if theirs != jsonrpc::PROTOCOL_VERSION {
            return Err(McpError::VersionMismatch {
                server: self.server_name.clone(),
                ours: jsonrpc::PROTOCOL_VERSION.to_string(),
                theirs,
            });
        }

        self.send_line(&jsonrpc::notification("notifications/initialized", json!({}))).await?;
        self.state = SessionState::Initialized;

        let server_info = result.get("serverInfo").cloned().unwrap_or(Value::Null);
        Ok(ServerInfo {
            name: server_info.get("name").and_then(Value::as_str).unwrap_or_default().to_string(),
            version: server_info
                .get("version")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string(),
            protocol_version: theirs,
            capabilities: result.get("capabilities").cloned().unwrap_or(Value::Null),
        })
    }

    /// Ask the server what tools it offers. The result is cached on the
    /// session.
    pub async fn list_tools(&mut self) -> Result<Vec<ToolDescriptor>, McpError> {
        if self.state != SessionState::Initialized {
            return Err(self.bad_state("tools/list", "initialized"));
        }
        let result = self.request("tools/list", json!({}), self.timeouts.per_call).await?;
        let entries = result
            .get("tools")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();
        let mut tools = Vec::with_capacity(entries.len());
        for (index, entry) in entries.iter().enumerate() {
            tools.push(self.tool_from_entry(index, entry)?);
        }
        self.tools_cache = Some(tools.clone());
        Ok(tools)
    }

    fn tool_from_entry(&self, index: usize, entry: &Value) -> Result<ToolDescriptor, McpError> {
        let malformed = |detail: String| McpError::MalformedToolEntry {
            server: self.server_name.clone(),
            index,
            detail,
        };
        let name = entry
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed("missing tool name".to_string()))?;
        let description =
            entry.get("description").and_then(Value::as_str).unwrap_or_default().to_string();
        let schema = entry.get("inputSchema").cloned().unwrap_or_else(|| json!({}));
        let required: Vec<&str> = schema
            .get("required")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).collect())
            .unwrap_or_default();
        let mut inputs = Vec::new();
        if let Some(props) = schema.get("properties").and_then(Value::as_object) {
            for (prop_name, prop) in props {
                let type_text = prop.get("type").and_then(Value::as_str).unwrap_or("string");
                let input_type = InputType::parse_wire(type_text).ok_or_else(|| {
                    malformed(format!("input {prop_name:?} has unknown type {type_text:?}"))
                })?;
                inputs.push(ToolInput {
                    name: prop_name.clone(),
                    input_type,
                    required: required.contains(&prop_name.as_str()),
                    description: prop
                        .get("description")
                        .and_then(Value::as_str)
                        .unwrap_or_default()
                        .to_string(),
                });
            }
        }
        Ok(ToolDescriptor {
            tool_name: name.to_string(),
            tool_description: description,
            inputs,
        })
    }

    /// Invoke one tool. Server-side failures (including unknown tool
    /// names) come back as a result with `is_error` set so they can enter
    /// the trace; only transport-level problems are `Err`.
    pub async fn call_tool(
        &mut self,
        name: &str,
        arguments: Value,
    ) -> Result<ToolCallResult, McpError> {
        if self.state != SessionState::Initialized {
            return Err(self.bad_state("tools/call", "initialized"));
        }
        let started = Instant::now();
        let params = json!({ "name": name, "arguments": arguments });
        match self.request("tools/call", params, self.timeouts.per_call).await {
            Ok(result) => {
                let content = result
                    .get("content")
                    .and_then(Value::as_array)
                    .map(|blocks| blocks.iter().map(ContentBlock::from_value).collect())
                    .unwrap_or_default();
                let is_error = result.get("isError").and_then(Value::as_bool).unwrap_or(false);
                Ok(ToolCallResult { content, is_error, elapsed: started.elapsed(), raw: result })
            }
            // The server rejected the call itself (unknown tool, bad
            // params). That is an erroneous call, not a dead transport.
            Err(McpError::Rpc { code, message, .. }) => Ok(ToolCallResult {
                content: vec![ContentBlock::Text { text: message.clone() }],
                is_error: true,
                elapsed: started.elapsed(),
                raw: json!({ "error": { "code": code, "message": message } }),
            }),
            Err(other) => Err(other),
        }
    }

    /// Close the session: stdin is dropped so a well-behaved server exits;
    /// a hung one is killed after the shutdown grace. Idempotent, never
    /// fails.
    pub async fn shutdown(&mut self) {
        if self.state == SessionState::Closed {
            return;
        }
        self.state = SessionState::Closed;
        self.transport = None; // closes the child's stdin
        if let Some(mut child) = self.child.take() {
            match tokio::time::timeout(self.timeouts.shutdown, child.wait()).await {
                Ok(Ok(status)) => {
                    tracing::debug!(server = %self.server_name, %status, "server exited");
                }
                Ok(Err(err)) => {
                    tracing::warn!(server = %self.server_name, %err, "wait for server failed");
                }
                Err(_) => {
                    tracing::debug!(server = %self.server_name, "server ignored shutdown, killing");
                    let _ = child.kill().await;
                }
            }
        }
    }

    async fn send_line(&mut self, line: &str) -> Result<(), McpError> {
        let transport = self
            .transport
            .as_mut()
            .ok_or_else(|| McpError::Closed { server: self.server_name.clone() })?;
        let io_err = |source| McpError::Io {
            server: self.server_name.clone(),
            context: "writing request",
            source,
        };
        transport.writer.write_all(line.as_bytes()).await.map_err(io_err)?;
        transport.writer.write_all(b"\n").await.map_err(|source| McpError::Io {
            server: self.server_name.clone(),
            context: "writing request",
            source,
        })?;
        transport.writer.flush().await.map_err(|source| McpError::Io {
            server: self.server_name.clone(),
            context: "flushing request",
            source,
        })?;
        Ok(())
    }

    /// Send one request and wait for its correlated response. Unrelated
    /// notifications and server-initiated requests are skipped (logged);
    /// a response with any other id is a correlation failure.
    async fn request(
        &mut self,
        method: &str,
        params: Value,
        limit: Duration,
    ) -> Result<Value, McpError> {
        let id = self.next_request_id;
        self.next_request_id += 1;
        self.send_line(&jsonrpc::request(id, method, params)).await?;

        let server = self.server_name.clone();
        let transport = self
            .transport
            .as_mut()
            .ok_or_else(|| McpError::Closed { server: server.clone() })?;
        let deadline = Instant::now() + limit;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let event = match tokio::time::timeout(remaining, transport.events.recv()).await {
                Err(_) => {
                    return Err(McpError::Timeout {
                        server,
                        method: method.to_string(),
                        waited: limit,
                    })
                }
                Ok(None) | Ok(Some(ReaderEvent::Eof)) => {
                    return Err(McpError::Closed { server })
                }
                Ok(Some(ReaderEvent::Oversized)) => {
                    return Err(McpError::Malformed {
                        server,
                        detail: format!("line exceeds {MAX_LINE_BYTES} bytes"),
                        raw: String::new(),
                    });
                }
                Ok(Some(ReaderEvent::Line(line))) => line,
            };
            transport.saw_output = true;

            match jsonrpc::parse_incoming(&event) {
                Err(err) => {
                    return Err(McpError::Malformed {
                        server,
                        detail: err.to_string(),
                        raw: snippet(&event),
                    })
                }
                Ok(Incoming::Notification { method, .. }) => {
                    tracing::debug!(server = %server, %method, "notification ignored");
                }
                Ok(Incoming::Request { method, .. }) => {
                    tracing::debug!(server = %server, %method, "server-initiated request ignored");
                }
                Ok(Incoming::Response { id: got, result }) => {
                    if got.as_u64() != Some(id) {
                        return Err(McpError::Correlation {
                            server,
                            expected: id,
                            got: got.to_string(),
                        });
                    }
                    return match result {
                        Ok(value) => Ok(value),
                        Err(rpc) => Err(McpError::Rpc {
                            server,
                            method: method.to_string(),
                            code: rpc.code,
                            message: rpc.message,
                        }),
                    };
                }
            }
        }
    }
}

fn snippet(s: &str) -> String {
    if s.len() <= RAW_SNIPPET_BYTES {
        return s.to_string();
    }
    let mut end = RAW_SNIPPET_BYTES;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &s[..end])
}

impl InputType {
    /// Parse a JSON-Schema type string from a live server; same vocabulary
    /// as pool documents.
    pub(crate) fn parse_wire(s: &str) -> Option<InputType> {
        match s {
            "string" => Some(InputType::String),
            "number" => Some(InputType::Number),
            "integer" => Some(InputType::Integer),
            "boolean" => Some(InputType::Boolean),
            "object" => Some(InputType::Object),
            "array" => Some(InputType::Array),
            _ => None,
        }
    }
}
