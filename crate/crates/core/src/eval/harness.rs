use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::endpoint::{generate_completion, CompletionEndpoint, GenerationConfig};
use super::executor::{ExecLimits, Executor, VerdictStatus};
use super::program::{assemble_program, truncate_completion};
use super::report::{aggregate_report, InfraErrorPolicy, PassReport, ReportError, ReportMeta, TaskOutcome};
use super::task::EvalTask;

#[derive(Debug, Clone)]
pub struct HarnessConfig {
    pub generation: GenerationConfig,
    pub limits: ExecLimits,
    pub samples_per_task: u32,
    pub ks: Vec<u32>,
    pub gen_workers: usize,
    pub exec_workers: usize,
    pub infra_policy: InfraErrorPolicy,
    pub retry_budget: u32,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            generation: GenerationConfig::default(),
            limits: ExecLimits::default(),
            samples_per_task: 1,
            ks: vec![1],
            gen_workers: 4,
            exec_workers: 4,
            infra_policy: InfraErrorPolicy::default(),
            retry_budget: 2,
        }
    }
}

/// One generated and executed sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub task_id: String,
    pub sample: u32,
    pub completion: String,
    pub status: VerdictStatus,
    pub detail: String,
}

#[derive(Debug)]
pub struct BenchmarkRun {
    pub report: PassReport,
    /// Sorted by (task_id, sample).
    pub samples: Vec<SampleRecord>,
}

struct Generated {
    task: usize,
    sample: u32,
    completion: Result<String, String>,
}

/// Generates `samples_per_task` completions per task and executes each.
///
/// Generation and execution run on separate bounded pools joined by a
/// bounded channel. Results are keyed by (task, sample), so scheduling order
/// never reaches the report.
pub fn run_benchmark(
    tasks: &[EvalTask],
    client: &dyn CompletionEndpoint,
    executor: &dyn Executor,
    config: &HarnessConfig,
    meta: &ReportMeta,
) -> Result<BenchmarkRun, ReportError> {
    let n = config.samples_per_task.max(1);
    let jobs: Vec<(usize, u32)> = (0..tasks.len())
        .flat_map(|t| (0..n).map(move |s| (t, s)))
        .collect();
    let next_job = AtomicUsize::new(0);
    let gen_workers = config.gen_workers.max(1);
    let exec_workers = config.exec_workers.max(1);

    let (gen_tx, gen_rx) = mpsc::sync_channel::<Generated>(exec_workers * 2);
    let gen_rx = Mutex::new(gen_rx);
    let (done_tx, done_rx) = mpsc::channel::<SampleRecord>();

    std::thread::scope(|scope| {
        for _ in 0..gen_workers {
            let gen_tx = gen_tx.clone();
            let (jobs, next_job) = (&jobs, &next_job);
            scope.spawn(move || loop {
                let i = next_job.fetch_add(1, Ordering::SeqCst);
                let Some(&(task, sample)) = jobs.get(i) else { break };
                let mut generation = config.generation.clone();
                generation.seed = generation.seed.map(|s| s.wrapping_add(sample as u64));
                let completion =
                    generate_completion(client, &tasks[task].prompt, &generation, config.retry_budget)
                        .map(|raw| truncate_completion(&raw, &generation.stop_sequences))
                        .map_err(|e| e.to_string());
                if gen_tx
                    .send(Generated {
                        task,
                        sample,
                        completion,
                    })
                    .is_err()
                {
                    break;
                }
            });
        }
        drop(gen_tx);

        for _ in 0..exec_workers {
            let done_tx = done_tx.clone();
            let gen_rx = &gen_rx;
            scope.spawn(move || loop {
                let next = gen_rx.lock().expect("receiver lock").recv();
                let Ok(item) = next else { break };
                let task = &tasks[item.task];
                let record = match item.completion {
                    Ok(completion) => {
                        let verdict = executor.execute(&assemble_program(task, &completion), &config.limits);
                        SampleRecord {
                            task_id: task.task_id.clone(),
                            sample: item.sample,
                            completion,
                            status: verdict.status,
                            detail: verdict.detail,
                        }
                    }
                    Err(message) => SampleRecord {
                        task_id: task.task_id.clone(),
                        sample: item.sample,
                        completion: String::new(),
                        status: VerdictStatus::InfraError,
                        detail: format!("generation failed: {message}"),
                    },
                };
                if done_tx.send(record).is_err() {
                    break;
                }
            });
        }
        drop(done_tx);
    });

    let mut samples: Vec<SampleRecord> = done_rx.into_iter().collect();
    samples.sort_by(|a, b| (&a.task_id, a.sample).cmp(&(&b.task_id, b.sample)));

    let mut outcomes: Vec<TaskOutcome> = tasks
        .iter()
        .map(|t| TaskOutcome {
            task_id: t.task_id.clone(),
            statuses: Vec::with_capacity(n as usize),
        })
        .collect();
    let index: std::collections::HashMap<&str, usize> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (t.task_id.as_str(), i))
        .collect();
    for record in &samples {
        outcomes[index[record.task_id.as_str()]]
            .statuses
            .push(record.status);
    }
    let report = aggregate_report(&outcomes, &config.ks, config.infra_policy, meta)?;
    Ok(BenchmarkRun { report, samples })
}
