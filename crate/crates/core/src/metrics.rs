//! The five-dimension metric profile computed from per-task outcomes.
//!
//! * `ra` — result accuracy: fraction of tasks whose final answer checked out.
//! * `dtsr` — tool selection rate: one minus the mean per-task share of
//!   erroneous tool calls.
//! * `fep` — first-error position: mean proportional depth at which the
//!   first erroneous call happens (1.0 for a fully clean, successful task).
//! * `cre` — token cost: mean total tokens per task, plus an optional
//!   baseline/actual ratio.
//! * `rte` — response time: mean wall-clock ms per task, plus an optional
//!   baseline/actual ratio.

use serde::{Deserialize, Serialize};

/// What one task contributed to the metrics: did it succeed, which tool
/// calls were erroneous, and what it cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub success: bool,
    /// One flag per tool call, in call order; `true` marks an erroneous call.
    pub call_error_flags: Vec<bool>,
    pub total_tokens: u64,
    pub elapsed_ms: u64,
}

impl TaskOutcome {
    pub fn call_count(&self) -> usize {
        self.call_error_flags.len()
    }
}

/// Reference means used to turn raw costs into efficiency ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub tokens_mean: f64,
    pub elapsed_mean_ms: f64,
}

/// A cost metric in both presentations: the raw mean, and the
/// baseline/actual ratio when a baseline is configured (above 1.0 means
/// cheaper than the baseline).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyValue {
    pub raw: f64,
    pub ratio: Option<f64>,
}

/// The full metric profile of one run (one model over one task set).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub ra: f64,
    pub dtsr: f64,
    pub fep: f64,
    pub cre_raw: f64,
    pub rte_raw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cre_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rte_ratio: Option<f64>,
}

impl RunMetrics {
    /// Report presentation: rates to two decimals, raw costs to whole
    /// numbers, halves away from zero.
    pub fn rounded(&self) -> RunMetrics {
        RunMetrics {
            ra: round_rate(self.ra),
            dtsr: round_rate(self.dtsr),
            fep: round_rate(self.fep),
            cre_raw: self.cre_raw.round(),
            rte_raw: self.rte_raw.round(),
            cre_ratio: self.cre_ratio.map(round_rate),
            rte_ratio: self.rte_ratio.map(round_rate),
        }
    }
}

/// Round to two decimals, halves away from zero.
pub fn round_rate(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("metrics need at least one task outcome")]
    EmptyInput,
    #[error("{metric} ratio requested but the actual mean is 0")]
    ZeroActual { metric: &'static str },
    #[error("{metric} ratio requested but the baseline mean {value} is not positive")]
    NonPositiveBaseline { metric: &'static str, value: String },
}

fn mean_of(outcomes: &[TaskOutcome], f: impl Fn(&TaskOutcome) -> f64) -> Result<f64, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(outcomes.iter().map(f).sum::<f64>() / outcomes.len() as f64)
}

/// Fraction of tasks that succeeded.
pub fn result_accuracy(outcomes: &[TaskOutcome]) -> Result<f64, MetricsError> {
    mean_of(outcomes, |o| if o.success { 1.0 } else { 0.0 })
}

/// Share of a task's calls that were erroneous. A task with no calls
/// contributes 0 when it succeeded (nothing went wrong) and 1 when it
/// failed (it never even engaged the tools).
fn error_share(outcome: &TaskOutcome) -> f64 {
    let n = outcome.call_count();
    if n == 0 {
        return if outcome.success { 0.0 } else { 1.0 };
    }
    let erroneous = outcome.call_error_flags.iter().filter(|&&e| e).count();
    erroneous as f64 / n as f64
}

/// One minus the mean per-task error share: 1.0 when every call everywhere
/// was clean, 0.0 when every call was erroneous.
pub fn dynamic_tool_selection_rate(outcomes: &[TaskOutcome]) -> Result<f64, MetricsError> {
    Ok(1.0 - mean_of(outcomes, error_share)?)
}

/// Proportional depth of a task's first erroneous call. Successful tasks
/// score 1. A failed task with its first error at 1-based call k of n
/// scores (k-1)/n; a failed task whose n calls were all clean scores
/// n/(n+1), charging the failure to a virtual answer-synthesis step; a
/// failed task with no calls scores 0.
fn first_error_depth(outcome: &TaskOutcome) -> f64 {
    if outcome.success {
        return 1.0;
    }
    let n = outcome.call_count();
    if n == 0 {
        return 0.0;
    }
    match outcome.call_error_flags.iter().position(|&e| e) {
        Some(zero_based) => zero_based as f64 / n as f64,
        None => n as f64 / (n as f64 + 1.0),
    }
}

/// Mean first-error depth across tasks.
pub fn first_error_position(outcomes: &[TaskOutcome]) -> Result<f64, MetricsError> {
    mean_of(outcomes, first_error_depth)
}

fn efficiency(
    outcomes: &[TaskOutcome],
    baseline_mean: Option<f64>,
    metric: &'static str,
    per_task: impl Fn(&TaskOutcome) -> f64,
) -> Result<EfficiencyValue, MetricsError> {
    let raw = mean_of(outcomes, per_task)?;
    let ratio = match baseline_mean {
        None => None,
        Some(b) if !(b > 0.0) => {
            return Err(MetricsError::NonPositiveBaseline { metric, value: b.to_string() })
        }
        Some(_) if raw == 0.0 => return Err(MetricsError::ZeroActual { metric }),
        Some(b) => Some(b / raw),
    };
    Ok(EfficiencyValue { raw, ratio })
}

/// Token cost: raw mean tokens per task; ratio baseline/actual when a
/// baseline is given.
pub fn cre(
    outcomes: &[TaskOutcome],
    baseline: Option<&Baseline>,
) -> Result<EfficiencyValue, MetricsError> {
    efficiency(outcomes, baseline.map(|b| b.tokens_mean), "cre", |o| o.total_tokens as f64)
}

/// Response time: raw mean ms per task; ratio baseline/actual when a
/// baseline is given.
pub fn rte(
    outcomes: &[TaskOutcome],
    baseline: Option<&Baseline>,
) -> Result<EfficiencyValue, MetricsError> {
    efficiency(outcomes, baseline.map(|b| b.elapsed_mean_ms), "rte", |o| o.elapsed_ms as f64)
}

/// All five metrics for one run.
pub fn compute_run_metrics(
    outcomes: &[TaskOutcome],
    baseline: Option<&Baseline>,
) -> Result<RunMetrics, MetricsError> {
    let cre_value = cre(outcomes, baseline)?;
    let rte_value = rte(outcomes, baseline)?;
    Ok(RunMetrics {
        ra: result_accuracy(outcomes)?,
        dtsr: dynamic_tool_selection_rate(outcomes)?,
        fep: first_error_position(outcomes)?,
        cre_raw: cre_value.raw,
        rte_raw: rte_value.raw,
        cre_ratio: cre_value.ratio,
        rte_ratio: rte_value.ratio,
    })
}

/// Arithmetic mean of repeated runs, field by field. Ratios average only
/// when present in every run.
pub fn average_runs(runs: &[RunMetrics]) -> Result<RunMetrics, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = runs.len() as f64;
    let mean = |f: fn(&RunMetrics) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let mean_opt = |f: fn(&RunMetrics) -> Option<f64>| {
        runs.iter()
            .map(f)
            .collect::<Option<Vec<_>>>()
            .map(|vals| vals.iter().sum::<f64>() / n)
    };
    Ok(RunMetrics {
        ra: mean(|r| r.ra),
        dtsr: mean(|r| r.dtsr),
        fep: mean(|r| r.fep),
        cre_raw: mean(|r| r.cre_raw),
        rte_raw: mean(|r| r.rte_raw),
        cre_ratio: mean_opt(|r| r.cre_ratio),
        rte_ratio: mean_opt(|r| r.rte_ratio),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn outcome(success: bool, flags: &[bool]) -> TaskOutcome {
        TaskOutcome {
            success,
            call_error_flags: flags.to_vec(),
            total_tokens: 1000,
            elapsed_ms: 2000,
        }
    }

    #[test]
    fn accuracy_counts_successes() {
        let all_fail: Vec<_> = (0..10).map(|_| outcome(false, &[])).collect();
        assert_eq!(result_accuracy(&all_fail).unwrap(), 0.0);
        let all_pass: Vec<_> = (0..10).map(|_| outcome(true, &[false])).collect();
        assert_eq!(result_accuracy(&all_pass).unwrap(), 1.0);
        let mixed: Vec<_> =
            (0..100).map(|i| outcome(i < 91, &[false])).collect();
        assert!((result_accuracy(&mixed).unwrap() - 0.91).abs() < 1e-12);
    }

    #[test]
    fn accuracy_rejects_empty_input() {
        assert_eq!(result_accuracy(&[]).unwrap_err(), MetricsError::EmptyInput);
    }

    #[test]
    fn selection_rate_from_flag_shares() {
        let outcomes = vec![
            outcome(false, &[true, true, false, false, false]),
            outcome(true, &[false, false]),
        ];
        let v = dynamic_tool_selection_rate(&outcomes).unwrap();
        assert!((v - 0.8).abs() < 1e-12, "got {v}");

        let clean = vec![outcome(true, &[false, false, false]), outcome(true, &[false])];
        assert_eq!(dynamic_tool_selection_rate(&clean).unwrap(), 1.0);

        let hopeless = vec![outcome(false, &[true, true]), outcome(false, &[true])];
        assert_eq!(dynamic_tool_selection_rate(&hopeless).unwrap(), 0.0);
    }

    #[test]
    fn selection_rate_with_no_calls_depends_on_success() {
        assert_eq!(dynamic_tool_selection_rate(&[outcome(true, &[])]).unwrap(), 1.0);
        assert_eq!(dynamic_tool_selection_rate(&[outcome(false, &[])]).unwrap(), 0.0);
    }

    #[test]
    fn first_error_depth_cases() {
        let all_pass = vec![outcome(true, &[true, false]), outcome(true, &[])];
        assert_eq!(first_error_position(&all_pass).unwrap(), 1.0);

        let early = vec![outcome(false, &[true, false, false, false])];
        assert_eq!(first_error_position(&early).unwrap(), 0.0);

        let mid = vec![outcome(false, &[false, false, true, false, false])];
        assert!((first_error_position(&mid).unwrap() - 0.4).abs() < 1e-12);

        let clean_fail = vec![outcome(false, &[false, false, false])];
        assert!((first_error_position(&clean_fail).unwrap() - 0.75).abs() < 1e-12);

        let no_calls = vec![outcome(false, &[])];
        assert_eq!(first_error_position(&no_calls).unwrap(), 0.0);
    }

    #[test]
    fn cost_ratios_divide_baseline_by_actual() {
        let outcomes: Vec<_> = (0..4).map(|_| outcome(true, &[false])).collect();
        let baseline = Baseline { tokens_mean: 4000.0, elapsed_mean_ms: 1000.0 };
        let c = cre(&outcomes, Some(&baseline)).unwrap();
        assert_eq!(c.raw, 1000.0);
        assert_eq!(c.ratio, Some(4.0));
        let r = rte(&outcomes, Some(&baseline)).unwrap();
        assert_eq!(r.raw, 2000.0);
        assert_eq!(r.ratio, Some(0.5));

        let neutral = Baseline { tokens_mean: 1000.0, elapsed_mean_ms: 2000.0 };
        assert_eq!(cre(&outcomes, Some(&neutral)).unwrap().ratio, Some(1.0));
        assert_eq!(rte(&outcomes, Some(&neutral)).unwrap().ratio, Some(1.0));

        assert_eq!(cre(&outcomes, None).unwrap().ratio, None);
    }

    #[test]
    fn zero_actual_mean_cannot_form_a_ratio() {
        let free = vec![TaskOutcome {
            success: true,
            call_error_flags: vec![],
            total_tokens: 0,
            elapsed_ms: 0,
        }];
        let baseline = Baseline { tokens_mean: 100.0, elapsed_mean_ms: 100.0 };
        assert_eq!(
            cre(&free, Some(&baseline)).unwrap_err(),
            MetricsError::ZeroActual { metric: "cre" }
        );
        assert!(cre(&free, None).is_ok());
    }

    #[test]
    fn non_positive_baseline_is_rejected() {
        let outcomes = vec![outcome(true, &[false])];
        let bad = Baseline { tokens_mean: 0.0, elapsed_mean_ms: -5.0 };
        assert!(matches!(
            cre(&outcomes, Some(&bad)).unwrap_err(),
            MetricsError::NonPositiveBaseline { metric: "cre", .. }
        ));
    }

    fn plain(ra: f64, cre_raw: f64) -> RunMetrics {
        RunMetrics { ra, dtsr: 1.0, fep: 1.0, cre_raw, rte_raw: 0.0, cre_ratio: None, rte_ratio: None }
    }

    #[test]
    fn run_averages_match_published_aggregation() {
        let runs = vec![plain(0.87, 5890.0), plain(0.90, 5950.0), plain(0.90, 5935.0)];
        let avg = average_runs(&runs).unwrap().rounded();
        assert_eq!(avg.ra, 0.89);
        assert_eq!(avg.cre_raw, 5925.0);

        let runs = vec![plain(0.89, 0.0), plain(0.92, 0.0), plain(0.92, 0.0)];
        assert_eq!(average_runs(&runs).unwrap().rounded().ra, 0.91);
    }

    #[test]
    fn averaging_identical_runs_changes_nothing() {
        let m = RunMetrics {
            ra: 0.75,
            dtsr: 0.5,
            fep: 0.25,
            cre_raw: 4096.0,
            rte_raw: 1024.0,
            cre_ratio: Some(2.0),
            rte_ratio: None,
        };
        assert_eq!(average_runs(&[m, m, m]).unwrap(), m);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(round_rate(0.885), 0.89);
        assert_eq!(round_rate(-0.885), -0.89);
        assert_eq!(plain(0.0, 5924.5).rounded().cre_raw, 5925.0);
    }

    fn outcome_strategy() -> impl Strategy<Value = TaskOutcome> {
        (any::<bool>(), prop::collection::vec(any::<bool>(), 0..8), 0u64..20_000, 0u64..20_000)
            .prop_map(|(success, call_error_flags, total_tokens, elapsed_ms)| TaskOutcome {
                success,
                call_error_flags,
                total_tokens,
                elapsed_ms,
            })
    }

    proptest! {
        #[test]
        fn rates_stay_in_unit_interval(outcomes in prop::collection::vec(outcome_strategy(), 1..20)) {
            let m = compute_run_metrics(&outcomes, None).unwrap();
            prop_assert!((0.0..=1.0).contains(&m.ra));
            prop_assert!((0.0..=1.0).contains(&m.dtsr));
            prop_assert!((0.0..=1.0).contains(&m.fep));
        }

        #[test]
        fn averaging_commutes_with_run_order(
            mut runs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..6),
            swap in any::<prop::sample::Index>(),
        ) {
            let metrics: Vec<_> = runs.iter().map(|&(ra, dtsr)| RunMetrics {
                ra, dtsr, fep: 0.5, cre_raw: 100.0, rte_raw: 100.0, cre_ratio: None, rte_ratio: None,
            }).collect();
            let before = average_runs(&metrics).unwrap();
            let i = swap.index(runs.len());
            runs.swap(0, i);
            let swapped: Vec<_> = runs.iter().map(|&(ra, dtsr)| RunMetrics {
                ra, dtsr, fep: 0.5, cre_raw: 100.0, rte_raw: 100.0, cre_ratio: None, rte_ratio: None,
            }).collect();
            let after = average_runs(&swapped).unwrap();
            prop_assert!((before.ra - after.ra).abs() < 1e-12);
            prop_assert!((before.dtsr - after.dtsr).abs() < 1e-12);
        }
    }
}
