use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::executor::VerdictStatus;
use super::passk::{pass_at_k, PassKError};

/// How samples whose execution hit an infrastructure error are scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfraErrorPolicy {
    /// The sample counts toward `n` but never toward `c`.
    #[default]
    CountAsFail,
    /// The sample is removed from `n`.
    Exclude,
    /// Any infrastructure error aborts the report.
    Abort,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    /// One status per sample, in sample order.
    pub statuses: Vec<VerdictStatus>,
}

impl TaskOutcome {
    pub fn count(&self, status: VerdictStatus) -> u32 {
        self.statuses.iter().filter(|s| **s == status).count() as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: String,
    pub n: u32,
    pub c: u32,
    pub pass: u32,
    pub fail: u32,
    pub timeout: u32,
    pub crash: u32,
    pub infra_error: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub model: String,
    pub benchmark: String,
    pub config_hash: String,
}

/// Aggregate scores. Contains no timings, so identical inputs serialize to
/// identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassReport {
    pub model: String,
    pub benchmark: String,
    pub config_hash: String,
    pub infra_error_policy: InfraErrorPolicy,
    pub k: Vec<u32>,
    /// Fractions in [0, 1], aligned with `k`.
    pub score: Vec<f64>,
    /// Sorted by task id.
    pub per_task: Vec<TaskScore>,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no tasks to score")]
    NoTasks,
    #[error("no k values requested")]
    NoK,
    #[error("task {task_id}: {infra_errors} sample(s) hit infrastructure errors")]
    InfraAbort { task_id: String, infra_errors: u32 },
    #[error("task {task_id}: k = {k} exceeds its {n} scorable sample(s)")]
    InsufficientSamples { task_id: String, k: u32, n: u32 },
    #[error("task {task_id} appears more than once")]
    DuplicateTask { task_id: String },
    #[error(transparent)]
    PassK(#[from] PassKError),
}

pub fn aggregate_report(
    outcomes: &[TaskOutcome],
    ks: &[u32],
    policy: InfraErrorPolicy,
    meta: &ReportMeta,
) -> Result<PassReport, ReportError> {
    if outcomes.is_empty() {
        return Err(ReportError::NoTasks);
    }
    if ks.is_empty() {
        return Err(ReportError::NoK);
    }
    let mut sorted: Vec<&TaskOutcome> = outcomes.iter().collect();
    sorted.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].task_id == w[1].task_id) {
        return Err(ReportError::DuplicateTask {
            task_id: w[0].task_id.clone(),
        });
    }

    let mut per_task = Vec::with_capacity(sorted.len());
    for outcome in sorted {
        let infra = outcome.count(VerdictStatus::InfraError);
        if infra > 0 && policy == InfraErrorPolicy::Abort {
            return Err(ReportError::InfraAbort {
                task_id: outcome.task_id.clone(),
                infra_errors: infra,
            });
        }
        let total = outcome.statuses.len() as u32;
        let n = match policy {
            InfraErrorPolicy::Exclude => total - infra,
            _ => total,
        };
        let c = outcome.count(VerdictStatus::Pass);
        if let Some(&k) = ks.iter().find(|&&k| k > n) {
            return Err(ReportError::InsufficientSamples {
                task_id: outcome.task_id.clone(),
                k,
                n,
            });
        }
        per_task.push(TaskScore {
            task_id: outcome.task_id.clone(),
            n,
            c,
            pass: c,
            fail: outcome.count(VerdictStatus::Fail),
            timeout: outcome.count(VerdictStatus::Timeout),
            crash: outcome.count(VerdictStatus::Crash),
            infra_error: infra,
        });
    }

    let mut score = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut sum = 0.0;
        for t in &per_task {
            sum += pass_at_k(t.n, t.c, k)?;
        }
        score.push(sum / per_task.len() as f64);
    }

    Ok(PassReport {
        model: meta.model.clone(),
        benchmark: meta.benchmark.clone(),
        config_hash: meta.config_hash.clone(),
        infra_error_policy: policy,
        k: ks.to_vec(),
        score,
        per_task,
    })
}

/// Renders a fraction as a percentage with two decimals, truncating toward
/// zero (0.524390… → "52.43").
pub fn format_percent(fraction: f64) -> String {
    // The epsilon absorbs representation error in exact quotients such as 0.29.
    let hundredths = (fraction * 10_000.0 + 1e-6).floor().max(0.0) as u64;
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

pub fn render_table(report: &PassReport) -> String {
    let rows: Vec<(String, String)> = report
        .k
        .iter()
        .zip(&report.score)
        .map(|(k, s)| (format!("pass@{k}"), format_percent(*s)))
        .collect();
    let left = rows
        .iter()
        .map(|r| r.0.len())
        .max()
        .unwrap_or(0)
        .max("metric".len());
    let right = rows
        .iter()
        .map(|r| r.1.len())
        .max()
        .unwrap_or(0)
        .max("score".len());
    let mut out = format!("model: {}\nbenchmark: {}\n", report.model, report.benchmark);
    out.push_str(&format!("{:<left$}  {:>right$}\n", "metric", "score"));
    out.push_str(&format!("{}  {}\n", "-".repeat(left), "-".repeat(right)));
    for (metric, value) in rows {
        out.push_str(&format!("{metric:<left$}  {value:>right$}\n"));
    }
    out
}
