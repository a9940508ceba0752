//! Candidate execution. The orchestrator never runs candidate code in its own
//! process: [`ShimExecutor`] delegates to the sandbox runner protocol and
//! [`LocalProcessExecutor`] spawns a fresh interpreter on the host.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

/// Maximum bytes of captured output kept in a verdict.
pub const DETAIL_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Pass,
    Fail,
    Timeout,
    Crash,
    InfraError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionVerdict {
    pub status: VerdictStatus,
    /// Seconds.
    pub wall_time: f64,
    pub detail: String,
}

impl ExecutionVerdict {
    pub fn infra_error(detail: impl Into<String>) -> Self {
        Self {
            status: VerdictStatus::InfraError,
            wall_time: 0.0,
            detail: truncate_detail(&detail.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecLimits {
    pub timeout: Duration,
    pub memory_cap_bytes: u64,
    pub allow_network: bool,
}

impl Default for ExecLimits {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            memory_cap_bytes: 1 << 30,
            allow_network: false,
        }
    }
}

pub trait Executor: Send + Sync {
    /// Runs one assembled program. Infrastructure problems are reported as
    /// [`VerdictStatus::InfraError`], never as a candidate failure.
    fn execute(&self, program: &str, limits: &ExecLimits) -> ExecutionVerdict;
}

pub(crate) fn truncate_detail(text: &str) -> String {
    if text.len() <= DETAIL_LIMIT {
        return text.to_string();
    }
    let mut end = DETAIL_LIMIT;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    text[..end].to_string()
}

fn read_file_lossy(path: &Path) -> String {
    let mut bytes = Vec::new();
    if let Ok(mut f) = File::open(path) {
        let _ = f.read_to_end(&mut bytes);
    }
    String::from_utf8_lossy(&bytes).into_owned()
}

#[cfg(unix)]
fn kill_tree(child: &mut Child) {
    // The child leads its own process group; take down anything it forked.
    unsafe {
        libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
    }
    let _ = child.kill();
}

#[cfg(not(unix))]
fn kill_tree(child: &mut Child) {
    let _ = child.kill();
}

#[cfg(unix)]
fn isolate(command: &mut Command, memory_cap_bytes: Option<u64>) {
    use std::os::unix::process::CommandExt;
    command.process_group(0);
    if let Some(cap) = memory_cap_bytes {
        unsafe {
            command.pre_exec(move || {
                let limit = libc::rlimit {
                    rlim_cur: cap as libc::rlim_t,
                    rlim_max: cap as libc::rlim_t,
                };
                if libc::setrlimit(libc::RLIMIT_AS, &limit) != 0 {
                    return Err(std::io::Error::last_os_error());
                }
                Ok(())
            });
        }
    }
}

#[cfg(not(unix))]
fn isolate(_command: &mut Command, _memory_cap_bytes: Option<u64>) {}

struct Finished {
    exit_code: Option<i32>,
    stdout: String,
    stderr: String,
    wall_time: f64,
    timed_out: bool,
}

/// Spawns `command` with stdout/stderr captured to files and waits at most
/// `deadline`, killing the process group on expiry.
fn run_with_deadline(mut command: Command, scratch: &Path, deadline: Duration) -> std::io::Result<Finished> {
    let out_path = scratch.join("stdout");
    let err_path = scratch.join("stderr");
    command
        .stdin(Stdio::null())
        .stdout(File::create(&out_path)?)
        .stderr(File::create(&err_path)?);
    let started = Instant::now();
    let mut child = command.spawn()?;
    let status = child.wait_timeout(deadline)?;
    let timed_out = status.is_none();
    let status = match status {
        Some(status) => Some(status),
        None => {
            kill_tree(&mut child);
            child.wait().ok()
        }
    };
    let wall_time = started.elapsed().as_secs_f64();
    Ok(Finished {
        exit_code: if timed_out {
            None
        } else {
            status.and_then(|s| s.code())
        },
        stdout: read_file_lossy(&out_path),
        stderr: read_file_lossy(&err_path),
        wall_time,
        timed_out,
    })
}

/// Name of the exception on the last traceback line, if any.
fn final_exception(stderr: &str) -> Option<&str> {
    let last = stderr.lines().rev().find(|l| !l.trim().is_empty())?;
    let name = last.split(':').next()?.trim();
    let simple = name.rsplit('.').next()?;
    let looks_like_exception = !simple.is_empty()
        && simple.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && (simple.ends_with("Error")
            || simple.ends_with("Exception")
            || simple == "KeyboardInterrupt"
            || simple == "SystemExit"
            || simple == "StopIteration");
    looks_like_exception.then_some(simple)
}

const CRASH_EXCEPTIONS: [&str; 6] = [
    "SyntaxError",
    "IndentationError",
    "TabError",
    "ImportError",
    "ModuleNotFoundError",
    "MemoryError",
];

/// Classifies a non-zero interpreter exit. Assertion failures and exceptions
/// raised under the test routine are `fail`; errors before the tests run or
/// outside them are `crash`.
fn classify_failure(stderr: &str) -> VerdictStatus {
    match final_exception(stderr) {
        Some("AssertionError") => VerdictStatus::Fail,
        Some(name) if CRASH_EXCEPTIONS.contains(&name) => VerdictStatus::Crash,
        Some(_) if stderr.contains(", in check\n") => VerdictStatus::Fail,
        _ => VerdictStatus::Crash,
    }
}

/// Runs programs with a host interpreter in a fresh process per candidate,
/// under an address-space cap and a hard wall-clock kill. There is no network
/// isolation; use [`ShimExecutor`] with a container for untrusted code.
#[derive(Debug, Clone)]
pub struct LocalProcessExecutor {
    pub interpreter: String,
    pub scratch_root: Option<PathBuf>,
}

impl Default for LocalProcessExecutor {
    fn default() -> Self {
        Self {
            interpreter: "python3".into(),
            scratch_root: None,
        }
    }
}

fn scratch_dir(root: Option<&Path>) -> std::io::Result<tempfile::TempDir> {
    match root {
        Some(root) => {
            std::fs::create_dir_all(root)?;
            tempfile::Builder::new().prefix("cand-").tempdir_in(root)
        }
        None => tempfile::Builder::new().prefix("cand-").tempdir(),
    }
}

impl Executor for LocalProcessExecutor {
    fn execute(&self, program: &str, limits: &ExecLimits) -> ExecutionVerdict {
        let scratch = match scratch_dir(self.scratch_root.as_deref()) {
            Ok(dir) => dir,
            Err(e) => return ExecutionVerdict::infra_error(format!("scratch dir: {e}")),
        };
        let program_path = scratch.path().join("program.py");
        if let Err(e) = std::fs::write(&program_path, program) {
            return ExecutionVerdict::infra_error(format!("write program: {e}"));
        }
        let mut command = Command::new(&self.interpreter);
        command
            .arg("-I")
            .arg("-B")
            .arg(&program_path)
            .current_dir(scratch.path());
        isolate(&mut command, Some(limits.memory_cap_bytes));

        let finished = match run_with_deadline(command, scratch.path(), limits.timeout) {
            Ok(f) => f,
            Err(e) => return ExecutionVerdict::infra_error(format!("{}: {e}", self.interpreter)),
        };
        let path_text = program_path.display().to_string();
        let mut detail = finished.stderr.replace(&path_text, "<program>");
        if !finished.stdout.is_empty() {
            detail = format!("{}{}", finished.stdout, detail);
        }
        let status = if finished.timed_out {
            VerdictStatus::Timeout
        } else {
            match finished.exit_code {
                Some(0) => VerdictStatus::Pass,
                // Killed by a signal (for example the memory cap).
                None => VerdictStatus::Crash,
                Some(_) => classify_failure(&finished.stderr),
            }
        };
        ExecutionVerdict {
            status,
            wall_time: finished.wall_time,
            detail: truncate_detail(&detail),
        }
    }
}

/// Seconds granted to the runner beyond the candidate timeout before it is
/// treated as hung.
pub const RUNNER_KILL_GRACE: Duration = Duration::from_secs(2);
/// Default allowance for runner startup (container launch and the like).
pub const RUNNER_STARTUP_ALLOWANCE: Duration = Duration::from_secs(10);

#[derive(Deserialize)]
struct RunnerVerdict {
    status: VerdictStatus,
    wall_time: f64,
    #[serde(default)]
    detail: String,
}

/// Invokes the sandbox runner as
/// `<command…> --program PATH --timeout S --memory-cap BYTES` and reads its
/// single-line JSON verdict from stdout. A non-zero runner exit or anything
/// other than one well-formed verdict line is an infrastructure error.
#[derive(Debug, Clone)]
pub struct ShimExecutor {
    pub command: Vec<String>,
    /// Where program files are written; must be visible to the runner
    /// (for a container, bind-mount it at the same path).
    pub scratch_root: Option<PathBuf>,
    /// Allowance beyond timeout + grace before the runner counts as hung.
    pub startup_allowance: Duration,
}

impl ShimExecutor {
    pub fn new(command: Vec<String>) -> Self {
        Self {
            command,
            scratch_root: None,
            startup_allowance: RUNNER_STARTUP_ALLOWANCE,
        }
    }

    fn parse_verdict(stdout: &str) -> Result<ExecutionVerdict, String> {
        let lines: Vec<&str> = stdout.lines().filter(|l| !l.trim().is_empty()).collect();
        let [line] = lines.as_slice() else {
            return Err(format!("expected one verdict line, got {}", lines.len()));
        };
        let verdict: RunnerVerdict =
            serde_json::from_str(line).map_err(|e| format!("bad verdict JSON: {e}"))?;
        if verdict.status == VerdictStatus::InfraError {
            return Err("runner reported infra_error".into());
        }
        Ok(ExecutionVerdict {
            status: verdict.status,
            wall_time: verdict.wall_time,
            detail: truncate_detail(&verdict.detail),
        })
    }
}

impl Executor for ShimExecutor {
    fn execute(&self, program: &str, limits: &ExecLimits) -> ExecutionVerdict {
        let Some((runner, args)) = self.command.split_first() else {
            return ExecutionVerdict::infra_error("empty runner command");
        };
        let scratch = match scratch_dir(self.scratch_root.as_deref()) {
            Ok(dir) => dir,
            Err(e) => return ExecutionVerdict::infra_error(format!("scratch dir: {e}")),
        };
        let program_path = scratch.path().join("program.py");
        if let Err(e) = std::fs::write(&program_path, program) {
            return ExecutionVerdict::infra_error(format!("write program: {e}"));
        }
        let mut command = Command::new(runner);
        command
            .args(args)
            .arg("--program")
            .arg(&program_path)
            .arg("--timeout")
            .arg(format!("{}", limits.timeout.as_secs_f64()))
            .arg("--memory-cap")
            .arg(limits.memory_cap_bytes.to_string());
        isolate(&mut command, None);

        let deadline = limits.timeout + RUNNER_KILL_GRACE + self.startup_allowance;
        let finished = match run_with_deadline(command, scratch.path(), deadline) {
            Ok(f) => f,
            Err(e) => return ExecutionVerdict::infra_error(format!("{runner}: {e}")),
        };
        if finished.timed_out {
            return ExecutionVerdict::infra_error(format!(
                "runner did not exit within {:.1}s",
                deadline.as_secs_f64()
            ));
        }
        if finished.exit_code != Some(0) {
            return ExecutionVerdict::infra_error(format!(
                "runner exited with {:?}: {}",
                finished.exit_code, finished.stderr
            ));
        }
        Self::parse_verdict(&finished.stdout).unwrap_or_else(ExecutionVerdict::infra_error)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exception_names() {
        let tb = "Traceback (most recent call last):\n  File \"x\", line 3, in check\nAssertionError\n";
        assert_eq!(final_exception(tb), Some("AssertionError"));
        assert_eq!(classify_failure(tb), VerdictStatus::Fail);
        let syntax = "  File \"x\", line 1\n    def f(:\n          ^\nSyntaxError: invalid syntax\n";
        assert_eq!(classify_failure(syntax), VerdictStatus::Crash);
        let in_check =
            "Traceback:\n  File \"p\", line 9, in check\n  File \"p\", line 2, in f\nTypeError: bad\n";
        assert_eq!(classify_failure(in_check), VerdictStatus::Fail);
        let top = "Traceback:\n  File \"p\", line 1, in <module>\nNameError: name 'x' is not defined\n";
        assert_eq!(classify_failure(top), VerdictStatus::Crash);
        assert_eq!(
            final_exception("x\nmodule.sub.CustomError: boom"),
            Some("CustomError")
        );
        assert_eq!(classify_failure("Killed\n"), VerdictStatus::Crash);
    }

    #[test]
    fn shim_verdict_parsing() {
        let ok =
            ShimExecutor::parse_verdict("{\"status\":\"pass\",\"wall_time\":0.2,\"detail\":\"\"}\n").unwrap();
        assert_eq!(ok.status, VerdictStatus::Pass);
        assert!(ShimExecutor::parse_verdict("").is_err());
        assert!(ShimExecutor::parse_verdict("noise\n{\"status\":\"pass\",\"wall_time\":0}").is_err());
        assert!(ShimExecutor::parse_verdict("{\"status\":\"weird\",\"wall_time\":0}").is_err());
    }

    #[test]
    fn detail_truncation_respects_char_boundaries() {
        let s = "é".repeat(DETAIL_LIMIT);
        let t = truncate_detail(&s);
        assert!(t.len() <= DETAIL_LIMIT);
        assert!(t.chars().all(|c| c == 'é'));
    }
}
