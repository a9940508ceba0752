use std::path::Path;
use std::time::Duration;

use anyhow::{anyhow, Context};
use qcorpus::eval::stub::{benchmark_handler, StubMode, StubServer};
use qcorpus::eval::{
    load_benchmark, render_table, run_benchmark, sample_benchmark, ExecLimits, Executor, GenerationConfig,
    HarnessConfig, HttpEndpoint, LocalProcessExecutor, PassReport, ReportError, ReportMeta, ShimExecutor,
};
use serde_json::json;

use crate::config::{ExecutorKind, PipelineConfig};
use crate::stage::{check_partial, require, Classify, Failure, Stage, StageResult};

/// Endpoint values of the form `stub:<mode>` select the in-process stub.
pub const STUB_PREFIX: &str = "stub:";

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";

fn executor(cfg: &PipelineConfig) -> StageResult<Box<dyn Executor>> {
    let e = &cfg.eval;
    Ok(match e.executor {
        ExecutorKind::Local => Box::new(LocalProcessExecutor::default()),
        ExecutorKind::Runner => {
            let needs_image = e.runner_command.iter().any(|a| a.contains("{image}"));
            if needs_image && e.sandbox_image.is_empty() {
                return Err(Failure::Validation(anyhow!(
                    "eval.runner_command uses {{image}} but no sandbox image is set (eval.sandbox_image or SANDBOX_IMAGE)"
                )));
            }
            let command = e
                .runner_command
                .iter()
                .map(|a| a.replace("{image}", &e.sandbox_image))
                .collect();
            Box::new(ShimExecutor::new(command))
        }
    })
}

pub fn eval(cfg: &PipelineConfig, out: &Path) -> StageResult {
    let e = &cfg.eval;
    let mut stage = Stage::begin(out.to_path_buf(), "eval")?;
    let (tasks, benchmark_name) = if e.benchmark == "sample" {
        (sample_benchmark(), "sample".to_string())
    } else {
        let path = Path::new(&e.benchmark);
        stage.input("benchmark", path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        (load_benchmark(path).validation()?, name)
    };

    let mut _stub = None;
    let url = if let Some(mode) = e.endpoint.strip_prefix(STUB_PREFIX) {
        let mode: StubMode = mode.parse().map_err(|_| {
            Failure::Validation(anyhow!(
                "unknown stub mode {mode:?}; use canonical, echo or empty"
            ))
        })?;
        let server = StubServer::start(benchmark_handler(&tasks, mode))
            .context("starting the stub endpoint")
            .infra()?;
        let url = server.url();
        _stub = Some(server);
        url
    } else if e.endpoint.is_empty() {
        return Err(Failure::Validation(anyhow!(
            "no generation endpoint: pass --endpoint, set GEN_ENDPOINT_URL, or use --stub"
        )));
    } else {
        e.endpoint.clone()
    };
    let client = HttpEndpoint::new(url, Duration::from_secs(300));
    let exec = executor(cfg)?;

    let harness = HarnessConfig {
        generation: GenerationConfig {
            temperature: e.temperature,
            max_new_tokens: e.max_new_tokens,
            seed: Some(cfg.run.seed),
            ..GenerationConfig::default()
        },
        limits: ExecLimits {
            timeout: Duration::from_secs_f64(e.timeout),
            memory_cap_bytes: e.memory_cap_bytes,
            ..ExecLimits::default()
        },
        samples_per_task: e.samples_per_task,
        ks: e.k.clone(),
        gen_workers: e.gen_workers.max(1),
        exec_workers: e.exec_workers.max(1),
        infra_policy: e.infra_policy,
        retry_budget: e.retry_budget,
    };
    let meta = ReportMeta {
        model: e.endpoint.clone(),
        benchmark: benchmark_name,
        config_hash: cfg.hash(),
    };
    let run = run_benchmark(&tasks, &client, exec.as_ref(), &harness, &meta).map_err(|err| match err {
        ReportError::InfraAbort { .. } => Failure::Infra(err.into()),
        other => Failure::Validation(other.into()),
    })?;

    stage.write_json(REPORT_JSON, &run.report)?;
    let table = render_table(&run.report);
    stage.write_output(REPORT_TABLE, &table)?;
    let mut samples = Vec::new();
    for s in &run.samples {
        serde_json::to_writer(&mut samples, s).expect("sample serializes");
        samples.push(b'\n');
    }
    stage.write_output("samples.jsonl", samples)?;

    let infra: u32 = run.report.per_task.iter().map(|t| t.infra_error).sum();
    let summary = json!({
        "tasks": tasks.len(),
        "samples": run.samples.len(),
        "k": run.report.k,
        "score": run.report.score,
        "infra_errors": infra,
    });
    stage.finish(cfg, summary)?;
    print!("{table}");
    check_partial(
        "samples (infrastructure errors)",
        infra as usize,
        run.samples.len(),
        cfg.run.partial_threshold,
    )
}

pub fn report(from: &Path, as_json: bool) -> StageResult {
    require(from, "eval")?;
    let path = from.join(REPORT_JSON);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))
        .validation()?;
    let report: PassReport = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .validation()?;
    if as_json {
        print!("{text}");
    } else {
        print!("{}", render_table(&report));
    }
    Ok(())
}
