//! Episode runner: system prompt, the model↔tool loop, and answer
//! extraction.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::time::Instant;

use crate::mcp::{McpError, McpServerSpec, Session, SessionTimeouts, ToolCallResult, ToolDescriptor};
use crate::provider::{
    tool_schema_from_descriptor, ChatMessage, ChatProvider, TokenUsage, ToolSchema,
};
use crate::task::{Domain, Task};

const PROMPT_MATH_HEAD: &str = "You are an math assistant that MUST use available tools to solve math problems. Never try to solve problems directly when tools can help.";
const PROMPT_CODE_HEAD: &str = "You are a code assistant that MUST use available tools to solve code problems. Never try to solve problems directly when tools can help.";
const PROMPT_GENERAL_HEAD: &str = "You are an assistant that MUST use available tools to solve problems. Never try to solve problems directly when tools can help.";

const PROMPT_BODY: &str = "

Process:

Analyze the problem
Choose appropriate tool(s)
Call tool(s) with correct parameters
Interpret results and use additional tools if needed
Provide final answer

Important:

Always use available tools
Show your tool-calling process
Format answer as: <answer>[YOUR FINAL ANSWER]</answer>
Use appropriate number formats or LaTeX for mathematical answers";

/// The fixed per-domain system prompt.
pub fn build_system_prompt(domain: Domain) -> String {
    let head = match domain {
        Domain::Math => PROMPT_MATH_HEAD,
        Domain::Coding => PROMPT_CODE_HEAD,
        Domain::General => PROMPT_GENERAL_HEAD,
    };
    format!("{head}{PROMPT_BODY}")
}

/// Content of the last complete `<answer>...</answer>` span, trimmed.
/// Tags are case-sensitive; the span may contain newlines.
pub fn extract_answer(text: &str) -> Option<String> {
    const OPEN: &str = "<answer>";
    const CLOSE: &str = "</answer>";
    let mut found = None;
    let mut from = 0;
    while let Some(start) = text[from..].find(OPEN) {
        let content_start = from + start + OPEN.len();
        let Some(end) = text[content_start..].find(CLOSE) else { break };
        found = Some(text[content_start..content_start + end].trim().to_string());
        from = content_start + end + CLOSE.len();
    }
    found
}

/// Budgets for one episode.
#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub max_rounds: u32,
    pub per_call_timeout: Duration,
    pub overall_deadline: Duration,
    /// When true, only an `<answer>` tag (or, for coding tasks, a written
    /// answer file) finishes the episode; plain text keeps it looping.
    /// When false, the first text-only reply finishes it.
    pub answer_required: bool,
    /// Where file-writing episodes leave `answer.jsonl`; consulted for
    /// coding tasks when the answer tag is absent.
    pub answer_file: Option<PathBuf>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_rounds: 12,
            per_call_timeout: Duration::from_secs(60),
            overall_deadline: Duration::from_secs(600),
            answer_required: true,
            answer_file: None,
        }
    }
}

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeOutcome {
    Answered,
    RoundLimit,
    Deadline,
    ProviderError,
}

/// One dispatched tool call, in invocation order (`index` is 1-based).
#[derive(Debug, Clone)]
pub struct ToolEvent {
    pub index: usize,
    pub name: String,
    pub arguments: String,
    pub result: ToolCallResult,
}

/// Everything one task attempt produced.
#[derive(Debug, Clone)]
pub struct Episode {
    pub task: Task,
    pub transcript: Vec<ChatMessage>,
    pub tool_events: Vec<ToolEvent>,
    pub usage_total: TokenUsage,
    pub prediction: Option<String>,
    pub outcome: EpisodeOutcome,
    pub started_at: DateTime<Utc>,
    pub ended_at: DateTime<Utc>,
}

/// The tool surface of one run: every server session plus the routing
/// table from exposed tool names to sessions.
///
/// Names are exposed bare when unique across the pool; a name offered by
/// several servers is exposed as `server.tool` for each of them.
pub struct SessionSet {
    sessions: Vec<Session>,
    routing: BTreeMap<String, (usize, String)>,
    schemas: Vec<ToolSchema>,
}

impl SessionSet {
    /// Spawn, initialize, and interrogate every server in the pool.
    pub async fn connect(
        specs: &[McpServerSpec],
        timeouts: SessionTimeouts,
    ) -> Result<SessionSet, McpError> {
        let mut sessions = Vec::with_capacity(specs.len());
        for spec in specs {
            let mut session = Session::spawn_with(spec, timeouts).await?;
            match session.initialize().await {
                Ok(_) => {}
                Err(err) => {
                    // Don't leak earlier children on a partial failure.
                    session.shutdown().await;
                    for s in &mut sessions {
                        Session::shutdown(s).await;
                    }
                    return Err(err);
                }
            }
            sessions.push(session);
        }
        Self::from_initialized(sessions).await
    }

    /// Build the routing table over sessions that are already initialized
    /// (used directly by in-process tests).
    pub async fn from_initialized(mut sessions: Vec<Session>) -> Result<SessionSet, McpError> {
        let mut listed: Vec<Vec<ToolDescriptor>> = Vec::with_capacity(sessions.len());
        for session in &mut sessions {
            let tools = match session.cached_tools() {
                Some(tools) => tools.to_vec(),
                None => session.list_tools().await?,
            };
            listed.push(tools);
        }

        let mut name_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for tools in &listed {
            for tool in tools {
                *name_counts.entry(tool.tool_name.as_str()).or_default() += 1;
            }
        }

        let mut routing = BTreeMap::new();
        let mut schemas = Vec::new();
        for (idx, tools) in listed.iter().enumerate() {
            for tool in tools {
                let exposed = if name_counts[tool.tool_name.as_str()] > 1 {
                    format!("{}.{}", sessions[idx].server_name(), tool.tool_name)
                } else {
                    tool.tool_name.clone()
                };
                let mut schema = tool_schema_from_descriptor(tool);
                schema.name = exposed.clone();
                schemas.push(schema);
                routing.insert(exposed, (idx, tool.tool_name.clone()));
            }
        }
        Ok(SessionSet { sessions, routing, schemas })
    }

    /// Tool schemas to hand the model.
    pub fn schemas(&self) -> &[ToolSchema] {
        &self.schemas
    }

    pub fn exposed_names(&self) -> Vec<&str> {
        self.routing.keys().map(String::as_str).collect()
    }

    /// Route one model-requested call to its server. Unknown names, broken
    /// argument JSON, and transport failures all come back as `is_error`
    /// results so the episode records them and continues.
    pub async fn dispatch(&mut self, exposed_name: &str, raw_arguments: &str) -> ToolCallResult {
        let arguments = if raw_arguments.trim().is_empty() {
            Ok(Value::Object(serde_json::Map::new()))
        } else {
            serde_json::from_str::<Value>(raw_arguments)
        };
        let arguments = match arguments {
            Ok(v @ Value::Object(_)) => v,
            Ok(other) => {
                return ToolCallResult::synthetic_error(format!(
                    "tool arguments must be a JSON object, got: {other}"
                ))
            }
            Err(err) => {
                return ToolCallResult::synthetic_error(format!(
                    "tool arguments are not valid JSON: {err}"
                ))
            }
        };
        let Some((idx, bare_name)) = self.routing.get(exposed_name).cloned() else {
            return ToolCallResult::synthetic_error(format!(
                "unknown tool {exposed_name:?}; available: {}",
                self.routing.keys().cloned().collect::<Vec<_>>().join(", ")
            ));
        };
        match self.sessions[idx].call_tool(&bare_name, arguments).await {
            Ok(result) => result,
            Err(err) => ToolCallResult::synthetic_error(format!("tool call failed: {err}")),
        }
    }

    pub async fn shutdown(&mut self) {
        for session in &mut self.sessions {
            session.shutdown().await;
        }
    }
}

/// Look up this task's answer in a written `answer.jsonl` file
/// (`{"unique_id": ..., "Answer": ...}` per line).
fn read_answer_file(path: &std::path::Path, unique_id: &str) -> Option<String> {
    let text = std::fs::read_to_string(path).ok()?;
    for line in text.lines() {
        let Ok(value) = serde_json::from_str::<Value>(line) else { continue };
        if value.get("unique_id").and_then(Value::as_str) != Some(unique_id) {
            continue;
        }
        let answer = value.get("Answer").or_else(|| value.get("answer"))?;
        return Some(match answer {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        });
    }
    None
}

/// Run one task to completion against the given tool surface and provider.
///
/// Each round asks the provider for a completion; tool calls are
/// dispatched in order and their results fed back, text replies end the
/// episode when they carry an answer (see [`EpisodeConfig`]). The episode
/// is bounded by `max_rounds` and `overall_deadline`, and a provider
/// failure ends it with the partial trace preserved.
pub async fn run_episode(
    task: &Task,
    sessions: &mut SessionSet,
    provider: &dyn ChatProvider,
    cfg: &EpisodeConfig,
) -> Episode {
    let started_at = Utc::now();
    let t0 = Instant::now();
    let mut transcript = vec![
        ChatMessage::system(build_system_prompt(task.domain)),
        ChatMessage::user(task.prompt.clone()),
    ];
    let mut tool_events: Vec<ToolEvent> = Vec::new();
    let mut usage_total = TokenUsage::default();
    let mut prediction: Option<String> = None;
    let mut outcome = EpisodeOutcome::RoundLimit;

    'rounds: for _round in 0..cfg.max_rounds {
        if t0.elapsed() >= cfg.overall_deadline {
            outcome = EpisodeOutcome::Deadline;
            break;
        }
        let completion = match provider.complete(&transcript, sessions.schemas()).await {
            Ok(c) => c,
            Err(err) => {
                tracing::warn!(task = %task.unique_id, "provider failed: {err}");
                outcome = EpisodeOutcome::ProviderError;
                break;
            }
        };
        usage_total.add(completion.usage);
        let message = completion.message;
        transcript.push(message.clone());

        if !message.tool_calls.is_empty() {
            for call in &message.tool_calls {
                if t0.elapsed() >= cfg.overall_deadline {
                    outcome = EpisodeOutcome::Deadline;
                    break 'rounds;
                }
                let result = sessions.dispatch(&call.name, &call.arguments).await;
                let feedback = {
                    let text = result.text();
                    if text.is_empty() {
                        result.raw.to_string()
                    } else {
                        text
                    }
                };
                tool_events.push(ToolEvent {
                    index: tool_events.len() + 1,
                    name: call.name.clone(),
                    arguments: call.arguments.clone(),
                    result,
                });
                transcript.push(ChatMessage::tool_reply(&call.id, feedback));
            }
            continue;
        }

        // Text-only reply: see whether it finishes the episode.
        if let Some(answer) = extract_answer(&message.content) {
            prediction = Some(answer);
            outcome = EpisodeOutcome::Answered;
            break;
        }
        if task.domain == Domain::Coding {
            if let Some(path) = &cfg.answer_file {
                if let Some(answer) = read_answer_file(path, &task.unique_id) {
                    prediction = Some(answer);
                    outcome = EpisodeOutcome::Answered;
                    break;
                }
            }
        }
        if !cfg.answer_required {
            prediction = Some(message.content.trim().to_string());
            outcome = EpisodeOutcome::Answered;
            break;
        }
    }

    // The episode ended without an in-band answer; a coding flow may still
    // have left its answer on disk.
    if prediction.is_none() && task.domain == Domain::Coding {
        if let Some(path) = &cfg.answer_file {
            prediction = read_answer_file(path, &task.unique_id);
        }
    }

    Episode {
        task: task.clone(),
        transcript,
        tool_events,
        usage_total,
        prediction,
        outcome,
        started_at,
        ended_at: Utc::now(),
    }
}
