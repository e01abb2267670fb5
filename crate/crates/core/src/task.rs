//! Benchmark task schema, JSONL dataset IO, and complexity grading.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checker::AnswerSpec;

/// Problem domain a task belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Math,
    Coding,
    General,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Math, Domain::Coding, Domain::General];

    /// Long-form heading used in report output.
    pub fn heading(self) -> &'static str {
        match self {
            Domain::Math => "Mathematics",
            Domain::Coding => "Code Generation",
            Domain::General => "General Web Search",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Domain::Math => "math",
            Domain::Coding => "coding",
            Domain::General => "general",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "math" => Ok(Domain::Math),
            "coding" => Ok(Domain::Coding),
            "general" => Ok(Domain::General),
            other => Err(format!("unknown domain {other:?} (expected math, coding, or general)")),
        }
    }
}

/// Task difficulty grade, defined by how many tool calls a solution needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ComplexityLevel {
    L1,
    L2,
    L3,
}

impl fmt::Display for ComplexityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComplexityLevel::L1 => "L1",
            ComplexityLevel::L2 => "L2",
            ComplexityLevel::L3 => "L3",
        })
    }
}

/// Grade a task by its expected tool call count: 1 call is L1, 2 through 4
/// is L2, anything above is L3. Zero calls has no grade.
pub fn classify_complexity(tool_call_count: u32) -> Result<ComplexityLevel, InvalidToolCount> {
    match tool_call_count {
        0 => Err(InvalidToolCount),
        1 => Ok(ComplexityLevel::L1),
        2..=4 => Ok(ComplexityLevel::L2),
        _ => Ok(ComplexityLevel::L3),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("tool call count must be at least 1 to have a complexity grade")]
pub struct InvalidToolCount;

/// One benchmark task as stored in the dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub unique_id: String,
    pub domain: Domain,
    pub complexity: ComplexityLevel,
    pub prompt: String,
    pub ground_truth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_spec: Option<AnswerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_tool_count: Option<u32>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

/// A single invariant breach found by [`validate_task`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Violation { field: field.to_string(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Check every per-task invariant and report each breach. An empty result
/// means the task is valid. Uniqueness of ids is a dataset-level property
/// and is checked by [`load_dataset`] instead.
pub fn validate_task(task: &Task) -> Vec<Violation> {
    let mut violations = Vec::new();
    if task.unique_id.is_empty() {
        violations.push(Violation::new("unique_id", "unique_id empty"));
    }
    if task.prompt.trim().is_empty() {
        violations.push(Violation::new("prompt", "prompt empty"));
    }
    if task.ground_truth.trim().is_empty() {
        violations.push(Violation::new("ground_truth", "ground_truth empty"));
    }
    if let Some(count) = task.expected_tool_count {
        match classify_complexity(count) {
            Ok(level) if level != task.complexity => {
                violations.push(Violation::new(
                    "expected_tool_count",
                    format!(
                        "expected_tool_count {count} grades as {level} but complexity says {}",
                        task.complexity
                    ),
                ));
            }
            Ok(_) => {}
            Err(_) => {
                violations.push(Violation::new(
                    "expected_tool_count",
                    "expected_tool_count 0 has no complexity grade",
                ));
            }
        }
    }
    if let Some(spec) = &task.answer_spec {
        for problem in spec.validate() {
            violations.push(Violation::new("answer_spec", problem));
        }
    }
    violations
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("failed to read dataset {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed task record: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: task {unique_id:?} is invalid: {}", format_violations(.violations))]
    InvalidTask {
        path: PathBuf,
        line: usize,
        unique_id: String,
        violations: Vec<Violation>,
    },
    #[error("duplicate unique_id {unique_id:?} in {path}: lines {first_line} and {second_line}")]
    DuplicateId {
        path: PathBuf,
        unique_id: String,
        first_line: usize,
        second_line: usize,
    },
}

fn format_violations(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// Load a JSONL dataset, one task object per line. Blank lines are skipped.
/// Every returned task passes [`validate_task`] and ids are unique; order
/// follows the file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Task>, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    parse_dataset(&text, path)
}

/// Parse dataset text that has already been read; `path` is used only in
/// error messages.
pub fn parse_dataset(text: &str, path: impl AsRef<Path>) -> Result<Vec<Task>, DatasetError> {
    let path = path.as_ref();
    let mut tasks = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let task: Task = serde_json::from_str(raw).map_err(|source| DatasetError::Parse {
            path: path.to_path_buf(),
            line,
            source,
        })?;
        let violations = validate_task(&task);
        if !violations.is_empty() {
            return Err(DatasetError::InvalidTask {
                path: path.to_path_buf(),
                line,
                unique_id: task.unique_id,
                violations,
            });
        }
        if let Some(&first_line) = seen.get(&task.unique_id) {
            return Err(DatasetError::DuplicateId {
                path: path.to_path_buf(),
                unique_id: task.unique_id,
                first_line,
                second_line: line,
            });
        }
        seen.insert(task.unique_id.clone(), line);
        tasks.push(task);
    }
    Ok(tasks)
}

/// Write tasks to a JSONL file, one object per line, in the given order.
pub fn save_dataset(tasks: &[Task], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let mut out = String::new();
    for task in tasks {
        // Task serialization cannot fail: all fields are plain data.
        out.push_str(&serde_json::to_string(task).expect("task serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}
