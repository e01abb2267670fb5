//! Server pool documents: which MCP servers exist, the tools they claim to
//! offer, and how to launch them.
//!
//! The document is JSON with a top-level `"mcp_pool"` array. Parsing is done
//! by hand so that errors carry the full path of the offending key
//! (`mcp_pool[0].run_config[0].command`), which beats serde's one-line
//! messages for documents people edit by hand.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One MCP server: identity, advertised tools, and launch configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McpServerSpec {
    pub name: String,
    pub description: String,
    pub tools: Vec<ToolDescriptor>,
    pub run_config: Vec<RunConfigEntry>,
}

impl McpServerSpec {
    /// The launch entry in use. The wire format allows several; everything
    /// downstream uses the first.
    pub fn launch(&self) -> &RunConfigEntry {
        &self.run_config[0]
    }
}

/// How to start a server: a command line, extra environment, and an
/// optional port. The port is recorded for round-tripping but the stdio
/// transport never uses it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfigEntry {
    pub command: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub env: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port: Option<PortValue>,
}

/// Port field value. Hand-written pool files often carry placeholder text
/// ("your port") instead of a number; both forms are preserved verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PortValue {
    Number(i64),
    Placeholder(String),
}

/// A tool as described by the pool document (what the server is expected
/// to advertise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub tool_name: String,
    #[serde(default)]
    pub tool_description: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<ToolInput>,
}

/// One parameter of a tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInput {
    pub name: String,
    #[serde(rename = "type")]
    pub input_type: InputType,
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

/// JSON-Schema primitive type of a tool input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputType {
    String,
    Number,
    Integer,
    Boolean,
    Object,
    Array,
}

impl InputType {
    pub fn as_str(self) -> &'static str {
        match self {
            InputType::String => "string",
            InputType::Number => "number",
            InputType::Integer => "integer",
            InputType::Boolean => "boolean",
            InputType::Object => "object",
            InputType::Array => "array",
        }
    }

    fn parse(s: &str) -> Option<InputType> {
        Some(match s {
            "string" => InputType::String,
            "number" => InputType::Number,
            "integer" => InputType::Integer,
            "boolean" => InputType::Boolean,
            "object" => InputType::Object,
            "array" => InputType::Array,
            _ => return None,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PoolError {
    #[error("failed to read pool document {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("pool document is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> PoolError {
    PoolError::Invalid { path: path.into(), message: message.into() }
}

fn want_str(obj: &Value, parent: &str, key: &str) -> Result<String, PoolError> {
    match obj.get(key) {
        None => Err(invalid(format!("{parent}.{key}"), "required key missing")),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => {
            Err(invalid(format!("{parent}.{key}"), format!("expected a string, got {other}")))
        }
    }
}

fn opt_str(obj: &Value, parent: &str, key: &str) -> Result<String, PoolError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => {
            Err(invalid(format!("{parent}.{key}"), format!("expected a string, got {other}")))
        }
    }
}

/// Parse a pool document. Env values are kept verbatim, including
/// placeholder text like "your key".
pub fn parse_mcp_pool(document: &str) -> Result<Vec<McpServerSpec>, PoolError> {
    let doc: Value = serde_json::from_str(document)?;
    let pool = doc
        .get("mcp_pool")
        .ok_or_else(|| invalid("mcp_pool", "required key missing"))?
        .as_array()
        .ok_or_else(|| invalid("mcp_pool", "expected an array"))?;

    let mut specs = Vec::with_capacity(pool.len());
    for (i, entry) in pool.iter().enumerate() {
        let path = format!("mcp_pool[{i}]");
        if !entry.is_object() {
            return Err(invalid(path, "expected an object"));
        }
        let name = want_str(entry, &path, "name")?;
        if name.is_empty() {
            return Err(invalid(format!("{path}.name"), "server name must be non-empty"));
        }
        let description = opt_str(entry, &path, "description")?;
        let tools = parse_tools(entry.get("tools"), &path)?;
        let run_config = parse_run_config(entry.get("run_config"), &path)?;
        specs.push(McpServerSpec { name, description, tools, run_config });
    }
    Ok(specs)
}

fn parse_tools(tools: Option<&Value>, parent: &str) -> Result<Vec<ToolDescriptor>, PoolError> {
    let Some(tools) = tools else { return Ok(Vec::new()) };
    let arr = tools
        .as_array()
        .ok_or_else(|| invalid(format!("{parent}.tools"), "expected an array"))?;
    let mut out = Vec::with_capacity(arr.len());
    let mut seen = BTreeSet::new();
    for (j, tool) in arr.iter().enumerate() {
        let path = format!("{parent}.tools[{j}]");
        let tool_name = want_str(tool, &path, "tool_name")?;
        if !seen.insert(tool_name.clone()) {
            return Err(invalid(
                format!("{path}.tool_name"),
                format!("duplicate tool name {tool_name:?} within this server"),
            ));
        }
        let tool_description = opt_str(tool, &path, "tool_description")?;
        let inputs = parse_inputs(tool.get("inputs"), &path)?;
        out.push(ToolDescriptor { tool_name, tool_description, inputs });
    }
    Ok(out)
}

fn parse_inputs(inputs: Option<&Value>, parent: &str) -> Result<Vec<ToolInput>, PoolError> {
    let Some(inputs) = inputs else { return Ok(Vec::new()) };
    let arr = inputs
        .as_array()
        .ok_or_else(|| invalid(format!("{parent}.inputs"), "expected an array"))?;
    let mut out = Vec::with_capacity(arr.len());
    let mut seen = BTreeSet::new();
    for (k, input) in arr.iter().enumerate() {
        let path = format!("{parent}.inputs[{k}]");
        let name = want_str(input, &path, "name")?;
        if !seen.insert(name.clone()) {
            return Err(invalid(
                format!("{path}.name"),
                format!("duplicate input name {name:?}"),
            ));
        }
        let type_text = want_str(input, &path, "type")?;
        let input_type = InputType::parse(&type_text).ok_or_else(|| {
            invalid(format!("{path}.type"), format!("unknown input type {type_text:?}"))
        })?;
        let required = match input.get("required") {
            Some(Value::Bool(b)) => *b,
            None => return Err(invalid(format!("{path}.required"), "required key missing")),
            Some(other) => {
                return Err(invalid(
                    format!("{path}.required"),
                    format!("expected a boolean, got {other}"),
                ))
            }
        };
        let description = opt_str(input, &path, "description")?;
        out.push(ToolInput { name, input_type, required, description });
    }
    Ok(out)
}

fn parse_run_config(rc: Option<&Value>, parent: &str) -> Result<Vec<RunConfigEntry>, PoolError> {
    let rc = rc.ok_or_else(|| invalid(format!("{parent}.run_config"), "required key missing"))?;
    let arr = rc
        .as_array()
        .ok_or_else(|| invalid(format!("{parent}.run_config"), "expected an array"))?;
    if arr.is_empty() {
        return Err(invalid(format!("{parent}.run_config"), "needs at least one entry"));
    }
    let mut out = Vec::with_capacity(arr.len());
    for (j, entry) in arr.iter().enumerate() {
        let path = format!("{parent}.run_config[{j}]");
        let command = want_str(entry, &path, "command")?;
        if command.trim().is_empty() {
            return Err(invalid(format!("{path}.command"), "command must be non-empty"));
        }
        let mut env = BTreeMap::new();
        match entry.get("env") {
            None | Some(Value::Null) => {}
            Some(Value::Object(map)) => {
                for (key, val) in map {
                    match val {
                        Value::String(s) => {
                            env.insert(key.clone(), s.clone());
                        }
                        other => {
                            return Err(invalid(
                                format!("{path}.env.{key}"),
                                format!("expected a string, got {other}"),
                            ))
                        }
                    }
                }
            }
            Some(other) => {
                return Err(invalid(format!("{path}.env"), format!("expected an object, got {other}")))
            }
        }
        let port = match entry.get("port") {
            None | Some(Value::Null) => None,
            Some(Value::Number(n)) => match n.as_i64() {
                Some(v) => Some(PortValue::Number(v)),
                None => {
                    return Err(invalid(format!("{path}.port"), format!("not an integer: {n}")))
                }
            },
            // Placeholder text such as "your port" is preserved verbatim.
            Some(Value::String(s)) => Some(PortValue::Placeholder(s.clone())),
            Some(other) => {
                return Err(invalid(
                    format!("{path}.port"),
                    format!("expected an integer or placeholder string, got {other}"),
                ))
            }
        };
        out.push(RunConfigEntry { command, env, port });
    }
    Ok(out)
}

/// Serialize specs back into a pool document (pretty-printed, stable key
/// order). `parse_mcp_pool` of the output reproduces the input.
pub fn serialize_mcp_pool(specs: &[McpServerSpec]) -> String {
    let doc = serde_json::json!({ "mcp_pool": specs });
    serde_json::to_string_pretty(&doc).expect("pool specs serialize")
}

/// Read and parse a pool document from disk.
pub fn load_mcp_pool(path: impl AsRef<Path>) -> Result<Vec<McpServerSpec>, PoolError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| PoolError::Io { path: path.to_path_buf(), source })?;
    parse_mcp_pool(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIRECRAWL_DOC: &str = r#"{
      "mcp_pool": [
        {
          "name": "FireCrawl",
          "description": "A Model Context Protocol (MCP) server implementation that integrates with Firecrawl for web scraping capabilities.",
          "tools": [
            {
              "tool_name": "firecrawl_search",
              "tool_description": "Search the web and optionally extract content from search results.",
              "inputs": [
                {
                  "name": "query",
                  "type": "string",
                  "required": true,
                  "description": "your search query"
                }
              ]
            }
          ],
          "run_config": [
            {
              "command": "npx -y firecrawl-mcp",
              "env": {
                "FIRECRAWL_API_KEY": "your key"
              },
              "port": "your port"
            }
          ]
        }
      ]
    }"#;

    #[test]
    fn parses_firecrawl_pool() {
        let specs = parse_mcp_pool(FIRECRAWL_DOC).unwrap();
        assert_eq!(specs.len(), 1);
        let spec = &specs[0];
        assert_eq!(spec.name, "FireCrawl");
        assert_eq!(spec.tools.len(), 1);
        let tool = &spec.tools[0];
        assert_eq!(tool.tool_name, "firecrawl_search");
        assert_eq!(tool.inputs.len(), 1);
        assert_eq!(tool.inputs[0].name, "query");
        assert_eq!(tool.inputs[0].input_type, InputType::String);
        assert!(tool.inputs[0].required);
        assert_eq!(spec.launch().command, "npx -y firecrawl-mcp");
        assert_eq!(spec.launch().env["FIRECRAWL_API_KEY"], "your key");
        assert_eq!(spec.launch().port, Some(PortValue::Placeholder("your port".to_string())));
    }

    #[test]
    fn empty_pool_is_fine() {
        assert_eq!(parse_mcp_pool(r#"{"mcp_pool": []}"#).unwrap(), vec![]);
    }

    #[test]
    fn missing_command_error_is_path_qualified() {
        let doc = r#"{"mcp_pool": [{"name": "X", "run_config": [{"env": {}}]}]}"#;
        let err = parse_mcp_pool(doc).unwrap_err();
        match err {
            PoolError::Invalid { path, message } => {
                assert_eq!(path, "mcp_pool[0].run_config[0].command");
                assert!(message.contains("missing"));
            }
            other => panic!("expected invalid-key error, got {other}"),
        }
    }

    #[test]
    fn unknown_input_type_is_rejected() {
        let doc = r#"{"mcp_pool": [{"name": "X", "tools": [{"tool_name": "t", "inputs": [
            {"name": "p", "type": "decimal", "required": false}
        ]}], "run_config": [{"command": "true"}]}]}"#;
        let err = parse_mcp_pool(doc).unwrap_err();
        match err {
            PoolError::Invalid { path, message } => {
                assert_eq!(path, "mcp_pool[0].tools[0].inputs[0].type");
                assert!(message.contains("decimal"));
            }
            other => panic!("expected invalid-type error, got {other}"),
        }
    }

    #[test]
    fn duplicate_tool_names_are_rejected() {
        let doc = r#"{"mcp_pool": [{"name": "X", "tools": [
            {"tool_name": "t"}, {"tool_name": "t"}
        ], "run_config": [{"command": "true"}]}]}"#;
        assert!(matches!(parse_mcp_pool(doc), Err(PoolError::Invalid { .. })));
    }

    #[test]
    fn serialize_then_parse_is_identity() {
        let specs = parse_mcp_pool(FIRECRAWL_DOC).unwrap();
        let round = parse_mcp_pool(&serialize_mcp_pool(&specs)).unwrap();
        assert_eq!(round, specs);
    }

    #[test]
    fn integer_port_is_accepted() {
        let doc = r#"{"mcp_pool": [{"name": "X", "run_config": [{"command": "true", "port": 8080}]}]}"#;
        let specs = parse_mcp_pool(doc).unwrap();
        assert_eq!(specs[0].launch().port, Some(PortValue::Number(8080)));
    }
}
