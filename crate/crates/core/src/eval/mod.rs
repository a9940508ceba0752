//! Execution-based benchmark harness.

mod endpoint;
mod executor;
mod harness;
mod passk;
mod program;
mod report;
pub mod stub;
mod task;

pub use endpoint::{
    generate_completion, CompletionEndpoint, EndpointError, GenerationConfig, GenerationRequest,
    GenerationResponse, HttpEndpoint,
};
pub use executor::{
    ExecLimits, ExecutionVerdict, Executor, LocalProcessExecutor, ShimExecutor, VerdictStatus, DETAIL_LIMIT,
    RUNNER_KILL_GRACE, RUNNER_STARTUP_ALLOWANCE,
};
pub use harness::{run_benchmark, BenchmarkRun, HarnessConfig, SampleRecord};
pub use passk::{pass_at_k, PassKError};
pub use program::{assemble_program, default_stops, truncate_completion, DEFAULT_STOPS};
pub use report::{
    aggregate_report, format_percent, render_table, InfraErrorPolicy, PassReport, ReportError, ReportMeta,
    TaskOutcome, TaskScore,
};
pub use task::{
    load_benchmark, parse_benchmark, sample_benchmark, self_check, BenchmarkError, EvalTask, SAMPLE_BENCHMARK,
};
