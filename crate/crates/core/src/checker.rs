//! Answer checking: decides whether a prediction matches the ground truth.

use serde::{Deserialize, Serialize};

use crate::task::{Domain, Task};

/// Matching rule for a task's final answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checker {
    /// Byte equality, no normalization.
    Exact,
    /// Equality after [`normalize`].
    Normalized,
    /// Both sides parse as reals and differ by at most `abs_tolerance`.
    Numeric { abs_tolerance: f64 },
    /// The whole normalized prediction matches the pattern.
    Regex { pattern: String },
}

impl Checker {
    pub fn method(&self) -> CheckMethod {
        match self {
            Checker::Exact => CheckMethod::Exact,
            Checker::Normalized => CheckMethod::Normalized,
            Checker::Numeric { .. } => CheckMethod::Numeric,
            Checker::Regex { .. } => CheckMethod::Regex,
        }
    }
}

/// Which matching rule produced a [`CheckResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMethod {
    Exact,
    Normalized,
    Numeric,
    Regex,
}

/// Normalization switches applied before Normalized, Numeric, and Regex
/// matching. All default to on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeOptions {
    #[serde(default = "yes")]
    pub case_fold: bool,
    #[serde(default = "yes")]
    pub collapse_whitespace: bool,
    #[serde(default = "yes")]
    pub strip_latex: bool,
}

fn yes() -> bool {
    true
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        NormalizeOptions { case_fold: true, collapse_whitespace: true, strip_latex: true }
    }
}

/// Per-task answer matching configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerSpec {
    pub checker: Checker,
    #[serde(default)]
    pub normalize: NormalizeOptions,
}

impl AnswerSpec {
    pub fn with_checker(checker: Checker) -> Self {
        AnswerSpec { checker, normalize: NormalizeOptions::default() }
    }

    /// Static problems with the spec itself (bad tolerance, bad pattern).
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        match &self.checker {
            Checker::Numeric { abs_tolerance } => {
                if !abs_tolerance.is_finite() || *abs_tolerance < 0.0 {
                    problems.push(format!("numeric tolerance {abs_tolerance} must be finite and >= 0"));
                }
            }
            Checker::Regex { pattern } => {
                if let Err(err) = regex::Regex::new(pattern) {
                    problems.push(format!("regex pattern does not compile: {err}"));
                }
            }
            Checker::Exact | Checker::Normalized => {}
        }
        problems
    }
}

/// Outcome of checking one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub success: bool,
    pub method: CheckMethod,
    pub detail: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckError {
    #[error("task {unique_id}: numeric checker but ground truth {ground_truth:?} does not parse as a number")]
    UnparseableGroundTruth { unique_id: String, ground_truth: String },
    #[error("task {unique_id}: answer pattern {pattern:?} does not compile: {source}")]
    BadPattern {
        unique_id: String,
        pattern: String,
        #[source]
        source: Box<regex::Error>,
    },
}

/// Canonicalize an answer string: trim, optionally strip LaTeX math
/// delimiters, collapse whitespace runs, case-fold, then drop trailing
/// periods. Idempotent.
pub fn normalize(s: &str, opts: &NormalizeOptions) -> String {
    let mut t = s.trim().to_string();
    if opts.strip_latex {
        for delim in ["\\left", "\\right", "\\(", "\\)", "\\[", "\\]"] {
            t = t.replace(delim, "");
        }
        t = t.replace('$', "");
    }
    if opts.collapse_whitespace {
        t = t.split_whitespace().collect::<Vec<_>>().join(" ");
    }
    if opts.case_fold {
        t = t.to_lowercase();
    }
    while t.ends_with('.') || t.ends_with(char::is_whitespace) {
        t.pop();
    }
    t.trim_start().to_string()
}

fn parse_number(s: &str) -> Option<f64> {
    let v: f64 = s.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

/// Effective answer spec for a task: the explicit one, or the domain
/// default. Math defaults to Numeric(1e-6) when the ground truth is
/// numeric and Normalized otherwise; Coding and General default to
/// Normalized.
pub fn effective_spec(task: &Task) -> AnswerSpec {
    if let Some(spec) = &task.answer_spec {
        return spec.clone();
    }
    let opts = NormalizeOptions::default();
    let checker = match task.domain {
        Domain::Math if parse_number(&normalize(&task.ground_truth, &opts)).is_some() => {
            Checker::Numeric { abs_tolerance: 1e-6 }
        }
        _ => Checker::Normalized,
    };
    AnswerSpec::with_checker(checker)
}

/// Decide success for a prediction against a task's ground truth.
pub fn check(prediction: &str, task: &Task) -> Result<CheckResult, CheckError> {
    let spec = effective_spec(task);
    let method = spec.checker.method();
    let opts = &spec.normalize;
    match &spec.checker {
        Checker::Exact => {
            let success = prediction == task.ground_truth;
            Ok(CheckResult {
                success,
                method,
                detail: if success {
                    "byte-equal".to_string()
                } else {
                    format!("prediction {prediction:?} != ground truth {:?}", task.ground_truth)
                },
            })
        }
        Checker::Normalized => {
            let p = normalize(prediction, opts);
            let g = normalize(&task.ground_truth, opts);
            let success = p == g;
            Ok(CheckResult {
                success,
                method,
                detail: if success {
                    format!("normalized forms equal: {p:?}")
                } else {
                    format!("normalized {p:?} != {g:?}")
                },
            })
        }
        Checker::Numeric { abs_tolerance } => {
            let g = parse_number(&normalize(&task.ground_truth, opts)).ok_or_else(|| {
                CheckError::UnparseableGroundTruth {
                    unique_id: task.unique_id.clone(),
                    ground_truth: task.ground_truth.clone(),
                }
            })?;
            match parse_number(&normalize(prediction, opts)) {
                Some(p) => {
                    let diff = (p - g).abs();
                    Ok(CheckResult {
                        success: diff <= *abs_tolerance,
                        method,
                        detail: format!("|{p} - {g}| = {diff}, tolerance {abs_tolerance}"),
                    })
                }
                None => Ok(CheckResult {
                    success: false,
                    method,
                    detail: format!("prediction {prediction:?} does not parse as a number"),
                }),
            }
        }
        Checker::Regex { pattern } => {
            let re = regex::Regex::new(&format!("^(?:{pattern})$")).map_err(|err| {
                CheckError::BadPattern {
                    unique_id: task.unique_id.clone(),
                    pattern: pattern.clone(),
                    source: Box::new(err),
                }
            })?;
            let p = normalize(prediction, opts);
            let success = re.is_match(&p);
            Ok(CheckResult {
                success,
                method,
                detail: if success {
                    format!("pattern matched {p:?}")
                } else {
                    format!("pattern {pattern:?} does not match {p:?}")
                },
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::ComplexityLevel;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn task_with(domain: Domain, ground_truth: &str, spec: Option<AnswerSpec>) -> Task {
        Task {
            unique_id: "000000000000001".to_string(),
            domain,
            complexity: ComplexityLevel::L1,
            prompt: "p".to_string(),
            ground_truth: ground_truth.to_string(),
            answer_spec: spec,
            expected_tool_count: None,
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn exact_match() {
        let task = task_with(Domain::Math, "2", Some(AnswerSpec::with_checker(Checker::Exact)));
        let res = check("2", &task).unwrap();
        assert!(res.success);
        assert_eq!(res.method, CheckMethod::Exact);
        let res = check(" 2", &task).unwrap();
        assert!(!res.success);
    }

    #[test]
    fn normalized_accepts_spacing_case_and_trailing_period() {
        let task =
            task_with(Domain::General, "41", Some(AnswerSpec::with_checker(Checker::Normalized)));
        let res = check(" 41. ", &task).unwrap();
        assert!(res.success, "{}", res.detail);
        assert_eq!(res.method, CheckMethod::Normalized);
        assert!(check("Forty-one", &task).unwrap().success == false);
        let word = task_with(Domain::General, "Paris", None);
        assert!(check("paris", &word).unwrap().success);
    }

    #[test]
    fn normalized_strips_latex_delimiters() {
        let task = task_with(Domain::Math, "(2)", Some(AnswerSpec::with_checker(Checker::Normalized)));
        assert!(check("$\\left(2\\right)$", &task).unwrap().success);
        let plain = task_with(Domain::General, "41", Some(AnswerSpec::with_checker(Checker::Normalized)));
        assert!(check("\\(41\\)", &plain).unwrap().success);
    }

    #[test]
    fn numeric_within_tolerance() {
        let task = task_with(
            Domain::Math,
            "0.333333",
            Some(AnswerSpec::with_checker(Checker::Numeric { abs_tolerance: 1e-3 })),
        );
        let res = check("0.3333", &task).unwrap();
        assert!(res.success, "{}", res.detail);
        assert!(!check("0.35", &task).unwrap().success);
        assert!(!check("a third", &task).unwrap().success);
    }

    #[test]
    fn numeric_with_unparseable_ground_truth_is_a_dataset_error() {
        let task = task_with(
            Domain::Math,
            "one third",
            Some(AnswerSpec::with_checker(Checker::Numeric { abs_tolerance: 1e-3 })),
        );
        let err = check("0.3333", &task).unwrap_err();
        assert!(matches!(err, CheckError::UnparseableGroundTruth { .. }));
    }

    #[test]
    fn math_default_is_numeric_for_numeric_truth() {
        let task = task_with(Domain::Math, "2", None);
        let res = check("2.0000001", &task).unwrap();
        assert!(res.success, "{}", res.detail);
        assert_eq!(res.method, CheckMethod::Numeric);
        assert!(!check("2.001", &task).unwrap().success);
    }

    #[test]
    fn math_default_falls_back_to_normalized_for_symbolic_truth() {
        let task = task_with(Domain::Math, "x = 2", None);
        let res = check("X = 2", &task).unwrap();
        assert!(res.success, "{}", res.detail);
        assert_eq!(res.method, CheckMethod::Normalized);
    }

    #[test]
    fn regex_requires_full_match() {
        let task = task_with(
            Domain::General,
            "yes",
            Some(AnswerSpec::with_checker(Checker::Regex { pattern: "yes|no".to_string() })),
        );
        assert!(check("Yes", &task).unwrap().success);
        assert!(!check("yes sir", &task).unwrap().success);
    }

    #[test]
    fn answer_spec_validation_catches_bad_configs() {
        let bad_tol = AnswerSpec::with_checker(Checker::Numeric { abs_tolerance: -1.0 });
        assert_eq!(bad_tol.validate().len(), 1);
        let bad_re = AnswerSpec::with_checker(Checker::Regex { pattern: "(".to_string() });
        assert_eq!(bad_re.validate().len(), 1);
        let fine = AnswerSpec::with_checker(Checker::Normalized);
        assert!(fine.validate().is_empty());
    }

    #[test]
    fn checker_serde_shapes() {
        let spec = AnswerSpec::with_checker(Checker::Numeric { abs_tolerance: 0.001 });
        let json = serde_json::to_value(&spec).unwrap();
        assert_eq!(json["checker"]["numeric"]["abs_tolerance"], 0.001);
        let plain: AnswerSpec = serde_json::from_str(r#"{"checker":"normalized"}"#).unwrap();
        assert_eq!(plain.checker, Checker::Normalized);
        assert!(plain.normalize.case_fold);
    }

    proptest! {
        #[test]
        fn exact_is_reflexive(s in ".*") {
            let task = task_with(Domain::General, &s, Some(AnswerSpec::with_checker(Checker::Exact)));
            prop_assert!(check(&s, &task).unwrap().success);
        }

        #[test]
        fn normalize_is_idempotent(s in ".*") {
            let opts = NormalizeOptions::default();
            let once = normalize(&s, &opts);
            prop_assert_eq!(normalize(&once, &opts), once.clone());
        }

        #[test]
        fn numeric_success_is_symmetric(a in -1e6f64..1e6, b in -1e6f64..1e6, tol in 0.0f64..10.0) {
            let spec = Some(AnswerSpec::with_checker(Checker::Numeric { abs_tolerance: tol }));
            let fwd = task_with(Domain::Math, &a.to_string(), spec.clone());
            let rev = task_with(Domain::Math, &b.to_string(), spec);
            let x = check(&b.to_string(), &fwd).unwrap().success;
            let y = check(&a.to_string(), &rev).unwrap().success;
            prop_assert_eq!(x, y);
        }
    }
}
