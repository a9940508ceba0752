use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::executor::{ExecLimits, ExecutionVerdict, Executor, VerdictStatus};
use super::program::assemble_program;

/// The shipped sample benchmark (HumanEval-compatible JSON Lines).
pub const SAMPLE_BENCHMARK: &str = include_str!("../../data/sample_benchmark.jsonl");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalTask {
    pub task_id: String,
    /// Function signature followed by a docstring describing the task.
    pub prompt: String,
    pub canonical_solution: String,
    /// Defines `check(candidate)`.
    pub test: String,
    pub entry_point: String,
}

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{source_name}:{line}: {message}")]
    Line {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("{source_name}:{line}: duplicate task_id {task_id:?}")]
    DuplicateTask {
        source_name: String,
        line: usize,
        task_id: String,
    },
    #[error("canonical solutions failed self-check: {}", failures.iter().map(|(id, v)| format!("{id} ({:?})", v.status)).collect::<Vec<_>>().join(", "))]
    SelfCheck {
        failures: Vec<(String, ExecutionVerdict)>,
    },
}

/// Parses JSON Lines text; blank lines are skipped. `source_name` labels errors.
pub fn parse_benchmark(text: &str, source_name: &str) -> Result<Vec<EvalTask>, BenchmarkError> {
    let mut tasks = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let task: EvalTask = serde_json::from_str(line).map_err(|e| BenchmarkError::Line {
            source_name: source_name.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        if task.task_id.is_empty() || task.entry_point.is_empty() {
            return Err(BenchmarkError::Line {
                source_name: source_name.to_string(),
                line: line_no,
                message: "task_id and entry_point must be non-empty".into(),
            });
        }
        if !ids.insert(task.task_id.clone()) {
            return Err(BenchmarkError::DuplicateTask {
                source_name: source_name.to_string(),
                line: line_no,
                task_id: task.task_id,
            });
        }
        tasks.push(task);
    }
    if tasks.is_empty() {
        log::warn!("{source_name}: benchmark is empty");
    }
    Ok(tasks)
}

pub fn load_benchmark(path: &Path) -> Result<Vec<EvalTask>, BenchmarkError> {
    let text = std::fs::read_to_string(path).map_err(|source| BenchmarkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_benchmark(&text, &path.display().to_string())
}

pub fn sample_benchmark() -> Vec<EvalTask> {
    parse_benchmark(SAMPLE_BENCHMARK, "sample_benchmark.jsonl").expect("shipped benchmark parses")
}

/// Runs every task's canonical solution against its own tests.
pub fn self_check(
    tasks: &[EvalTask],
    executor: &dyn Executor,
    limits: &ExecLimits,
) -> Result<(), BenchmarkError> {
    let failures: Vec<_> = tasks
        .iter()
        .filter_map(|task| {
            let verdict = executor.execute(&assemble_program(task, &task.canonical_solution), limits);
            (verdict.status != VerdictStatus::Pass).then(|| (task.task_id.clone(), verdict))
        })
        .collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(BenchmarkError::SelfCheck { failures })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_has_eight_tasks() {
        let tasks = sample_benchmark();
        assert_eq!(tasks.len(), 8);
        assert!(tasks.iter().all(|t| t.prompt.contains("\"\"\"")));
    }

    #[test]
    fn empty_input() {
        assert!(parse_benchmark("", "x").unwrap().is_empty());
        assert!(parse_benchmark("\n\n", "x").unwrap().is_empty());
    }

    #[test]
    fn missing_field_names_line() {
        let good = r#"{"task_id":"a","prompt":"p","canonical_solution":"s","test":"t","entry_point":"f"}"#;
        let bad = r#"{"task_id":"b","prompt":"p","canonical_solution":"s","test":"t"}"#;
        let err = parse_benchmark(&format!("{good}\n{bad}\n"), "bench.jsonl").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("bench.jsonl:2:"), "{msg}");
        assert!(msg.contains("entry_point"), "{msg}");
    }

    #[test]
    fn duplicate_and_malformed() {
        let good = r#"{"task_id":"a","prompt":"p","canonical_solution":"s","test":"t","entry_point":"f"}"#;
        assert!(matches!(
            parse_benchmark(&format!("{good}\n{good}"), "b"),
            Err(BenchmarkError::DuplicateTask { line: 2, .. })
        ));
        assert!(matches!(
            parse_benchmark("{not json", "b"),
            Err(BenchmarkError::Line { line: 1, .. })
        ));
    }
}
