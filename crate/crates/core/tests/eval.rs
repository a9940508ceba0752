use std::sync::Arc;
use std::time::Duration;

use qcorpus::eval::stub::{benchmark_handler, StubHandler, StubMode, StubReply, StubServer};
use qcorpus::eval::{
    assemble_program, generate_completion, run_benchmark, sample_benchmark, self_check, EndpointError,
    ExecLimits, Executor, GenerationConfig, GenerationRequest, HarnessConfig, HttpEndpoint, InfraErrorPolicy,
    LocalProcessExecutor, ReportMeta, ShimExecutor, VerdictStatus,
};

fn limits(timeout_secs: f64) -> ExecLimits {
    ExecLimits {
        timeout: Duration::from_secs_f64(timeout_secs),
        ..ExecLimits::default()
    }
}

fn local() -> LocalProcessExecutor {
    LocalProcessExecutor::default()
}

#[test]
fn sample_benchmark_passes_self_check() {
    let tasks = sample_benchmark();
    self_check(&tasks, &local(), &limits(30.0)).unwrap();
}

#[test]
fn empty_completion_fails_and_broken_completion_crashes() {
    for task in sample_benchmark() {
        let empty = local().execute(&assemble_program(&task, ""), &limits(30.0));
        assert_ne!(empty.status, VerdictStatus::Pass, "{}", task.task_id);
        assert_ne!(empty.status, VerdictStatus::InfraError, "{}", task.task_id);
    }
    let task = &sample_benchmark()[0];
    let broken = local().execute(&assemble_program(task, "    return (\n"), &limits(30.0));
    assert_eq!(broken.status, VerdictStatus::Crash, "{}", broken.detail);
    assert!(broken.detail.contains("SyntaxError"));
    assert!(
        !broken.detail.contains("/tmp/"),
        "temp paths are redacted: {}",
        broken.detail
    );
}

#[test]
fn verdict_classes() {
    let exec = local();
    let lim = limits(10.0);
    assert_eq!(
        exec.execute("assert 1 + 1 == 2\n", &lim).status,
        VerdictStatus::Pass
    );
    assert_eq!(
        exec.execute("assert 1 + 1 == 3\n", &lim).status,
        VerdictStatus::Fail
    );
    let in_check = "def check(c):\n    c()\n\ndef f():\n    return {}['k']\n\ncheck(f)\n";
    assert_eq!(exec.execute(in_check, &lim).status, VerdictStatus::Fail);
    assert_eq!(
        exec.execute("import not_a_real_module_xyz\n", &lim).status,
        VerdictStatus::Crash
    );
    assert_eq!(
        exec.execute("undefined_name\n", &lim).status,
        VerdictStatus::Crash
    );
}

#[test]
fn memory_cap_is_enforced() {
    let cap = ExecLimits {
        memory_cap_bytes: 256 << 20,
        ..limits(10.0)
    };
    let v = local().execute("x = bytearray(1 << 30)\nprint(len(x))\n", &cap);
    assert_eq!(v.status, VerdictStatus::Crash, "{}", v.detail);
}

#[test]
fn overrunning_program_times_out_within_grace() {
    let v = local().execute("import time\ntime.sleep(60)\n", &limits(10.0));
    assert_eq!(v.status, VerdictStatus::Timeout);
    assert!((10.0..=12.0).contains(&v.wall_time), "wall_time {}", v.wall_time);
}

#[test]
fn forked_children_are_killed_on_timeout() {
    let program = "import subprocess, sys, time\nsubprocess.Popen([sys.executable, '-c', 'import time; time.sleep(60)'])\ntime.sleep(60)\n";
    let v = local().execute(program, &limits(1.0));
    assert_eq!(v.status, VerdictStatus::Timeout);
    assert!(v.wall_time < 3.0);
}

#[test]
fn missing_interpreter_is_infra_error() {
    let exec = LocalProcessExecutor {
        interpreter: "/nonexistent/python".into(),
        scratch_root: None,
    };
    assert_eq!(
        exec.execute("pass\n", &limits(1.0)).status,
        VerdictStatus::InfraError
    );
}

/// Writes a fake runner script that obeys the runner CLI and behaves per `body`.
fn fake_runner(dir: &std::path::Path, body: &str) -> ShimExecutor {
    let script = dir.join("runner.py");
    let prelude = "import argparse, json, subprocess, sys, time\n\
        p = argparse.ArgumentParser()\n\
        p.add_argument('--program'); p.add_argument('--timeout', type=float); p.add_argument('--memory-cap', type=int)\n\
        a = p.parse_args()\n";
    std::fs::write(&script, format!("{prelude}{body}")).unwrap();
    let mut shim = ShimExecutor::new(vec!["python3".into(), script.display().to_string()]);
    shim.startup_allowance = Duration::from_secs(1);
    shim
}

#[test]
fn shim_runs_program_and_reports_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let shim = fake_runner(
        dir.path(),
        "t0 = time.time()\n\
         r = subprocess.run([sys.executable, a.program], capture_output=True, text=True)\n\
         status = 'pass' if r.returncode == 0 else 'fail'\n\
         print(json.dumps({'status': status, 'wall_time': time.time() - t0, 'detail': r.stderr[-200:]}))\n",
    );
    assert_eq!(
        shim.execute("assert True\n", &limits(5.0)).status,
        VerdictStatus::Pass
    );
    assert_eq!(
        shim.execute("assert False\n", &limits(5.0)).status,
        VerdictStatus::Fail
    );
}

#[test]
fn shim_protocol_violations_are_infra_errors() {
    let dir = tempfile::tempdir().unwrap();
    let garbage = fake_runner(dir.path(), "print('not json')\n");
    assert_eq!(
        garbage.execute("pass\n", &limits(1.0)).status,
        VerdictStatus::InfraError
    );

    let dir = tempfile::tempdir().unwrap();
    let exits = fake_runner(dir.path(), "sys.exit(3)\n");
    assert_eq!(
        exits.execute("pass\n", &limits(1.0)).status,
        VerdictStatus::InfraError
    );

    let dir = tempfile::tempdir().unwrap();
    let hangs = fake_runner(dir.path(), "time.sleep(60)\n");
    let started = std::time::Instant::now();
    assert_eq!(
        hangs.execute("pass\n", &limits(0.5)).status,
        VerdictStatus::InfraError
    );
    assert!(started.elapsed() < Duration::from_secs(10));

    let missing = ShimExecutor::new(vec!["/nonexistent/runner".into()]);
    assert_eq!(
        missing.execute("pass\n", &limits(1.0)).status,
        VerdictStatus::InfraError
    );
}

#[test]
fn http_endpoint_canonical_and_echo_modes() {
    let tasks = sample_benchmark();
    let cfg = GenerationConfig::default();
    for mode in [StubMode::Canonical, StubMode::Echo] {
        let server = StubServer::start(benchmark_handler(&tasks, mode)).unwrap();
        let client = HttpEndpoint::new(server.url(), Duration::from_secs(5));
        for task in &tasks {
            let got = generate_completion(&client, &task.prompt, &cfg, 0).unwrap();
            assert_eq!(got, task.canonical_solution, "{mode:?} {}", task.task_id);
        }
    }
}

#[test]
fn unreachable_endpoint_exhausts_retry_budget() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let client = HttpEndpoint::new(
        format!("http://127.0.0.1:{port}/generate"),
        Duration::from_secs(2),
    );
    let err = generate_completion(&client, "def f():\n", &GenerationConfig::default(), 2).unwrap_err();
    assert!(
        matches!(err, EndpointError::Exhausted { attempts: 3, .. }),
        "{err}"
    );
}

#[test]
fn server_errors_count_against_budget() {
    let handler: Arc<StubHandler> = Arc::new(|_: &GenerationRequest, _| StubReply::Status(500));
    let server = StubServer::start(handler).unwrap();
    let client = HttpEndpoint::new(server.url(), Duration::from_secs(2));
    assert!(generate_completion(&client, "p", &GenerationConfig::default(), 2).is_err());
    assert_eq!(server.request_count(), 3);
}

fn meta() -> ReportMeta {
    ReportMeta {
        model: "stub".into(),
        benchmark: "sample".into(),
        config_hash: "0".into(),
    }
}

#[test]
fn harness_with_flaky_endpoint_applies_infra_policy() {
    let tasks = sample_benchmark();
    let canonical = benchmark_handler(&tasks, StubMode::Canonical);
    let first = tasks[0].prompt.clone();
    let handler: Arc<StubHandler> = Arc::new(move |req: &GenerationRequest, i| {
        if req.prompt == first {
            StubReply::Status(503)
        } else {
            canonical(req, i)
        }
    });
    let server = StubServer::start(handler).unwrap();
    let client = HttpEndpoint::new(server.url(), Duration::from_secs(5));
    let mut config = HarnessConfig {
        retry_budget: 0,
        limits: limits(30.0),
        ..HarnessConfig::default()
    };
    let run = run_benchmark(&tasks, &client, &local(), &config, &meta()).unwrap();
    assert_eq!(run.report.score, vec![7.0 / 8.0]);
    assert_eq!(run.report.per_task[0].infra_error, 1);

    config.infra_policy = InfraErrorPolicy::Abort;
    assert!(run_benchmark(&tasks, &client, &local(), &config, &meta()).is_err());
}
