mod commands;
mod config;
mod stage;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stage::{Failure, StageResult};

/// Builds a domain code corpus, plans its training mixture, assembles
/// instruction data, and scores completion endpoints on execution benchmarks.
#[derive(Debug, Parser)]
#[command(name = "qcorpus", version)]
struct Cli {
    /// TOML file layered over the bundled defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Directory holding one subdirectory per stage.
    #[arg(long, global = true, default_value = "run", value_name = "DIR")]
    workdir: PathBuf,

    /// Overrides one config key, e.g. `--set mix.context_length=4096`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Search the code host and download matching repository files.
    Crawl,
    /// Linearize, filter, deduplicate and count tokens of the crawl.
    Curate,
    /// Solve the subset mixture plan from corpus statistics.
    Mix {
        /// Statistics JSON to plan from instead of the curate stage output.
        #[arg(long, value_name = "PATH")]
        stats: Option<PathBuf>,
    },
    /// Materialize one mixture epoch and pack it into fixed-length sequences.
    Pack,
    /// Compute step counts and the learning-rate table.
    Schedule,
    /// Assemble the instruction-tuning mixture.
    Tunedata,
    /// Generate completions for a benchmark and execute them.
    Eval(EvalArgs),
    /// Print the table of a finished eval run.
    Report {
        /// Eval output directory; defaults to `<workdir>/eval`.
        #[arg(long, value_name = "DIR")]
        from: Option<PathBuf>,
        /// Print the JSON report instead of the table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// JSON Lines benchmark, or `sample` for the bundled one.
    #[arg(long, value_name = "PATH")]
    benchmark: Option<String>,
    /// Generation endpoint URL.
    #[arg(long, value_name = "URL", conflicts_with = "stub")]
    endpoint: Option<String>,
    /// pass@k values to report; comma-separated or repeated.
    #[arg(long, value_delimiter = ',')]
    k: Vec<u32>,
    #[arg(long, value_name = "N")]
    samples_per_task: Option<u32>,
    /// Per-program execution limit in seconds.
    #[arg(long, value_name = "SECONDS")]
    timeout: Option<f64>,
    /// Output directory; defaults to `<workdir>/eval`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Serve completions from an in-process stub instead of a model:
    /// `canonical`, `echo` or `empty`.
    #[arg(long, value_name = "MODE")]
    stub: Option<String>,
}

impl EvalArgs {
    /// Flag values expressed as config overrides so they enter the config hash.
    fn overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        let quote = |s: &str| serde_json::to_string(s).expect("string serializes");
        if let Some(b) = &self.benchmark {
            out.push(format!("eval.benchmark={}", quote(b)));
        }
        if let Some(e) = &self.endpoint {
            out.push(format!("eval.endpoint={}", quote(e)));
        }
        if let Some(mode) = &self.stub {
            out.push(format!(
                "eval.endpoint={}",
                quote(&format!("{}{mode}", commands::STUB_PREFIX))
            ));
        }
        if !self.k.is_empty() {
            out.push(format!("eval.k={:?}", self.k));
        }
        if let Some(n) = self.samples_per_task {
            out.push(format!("eval.samples_per_task={n}"));
        }
        if let Some(t) = self.timeout {
            out.push(format!("eval.timeout={t:?}"));
        }
        out
    }
}

fn run(cli: Cli) -> StageResult {
    let mut overrides = cli.overrides.clone();
    if let Command::Eval(args) = &cli.command {
        overrides.extend(args.overrides());
    }
    let mut cfg = config::load(cli.config.as_deref(), &overrides).map_err(Failure::Validation)?;
    config::apply_env(&mut cfg);
    let workdir = cli.workdir.as_path();
    match cli.command {
        Command::Crawl => commands::crawl(&cfg, workdir),
        Command::Curate => commands::curate(&cfg, workdir),
        Command::Mix { stats } => commands::mix(&cfg, workdir, stats.as_deref()),
        Command::Pack => commands::pack(&cfg, workdir),
        Command::Schedule => commands::schedule(&cfg, workdir),
        Command::Tunedata => commands::tunedata(&cfg, workdir),
        Command::Eval(args) => {
            let out = args.out.unwrap_or_else(|| workdir.join("eval"));
            commands::eval(&cfg, &out)
        }
        Command::Report { from, json } => {
            let from = from.unwrap_or_else(|| workdir.join("eval"));
            commands::report(&from, json)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{failure}");
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}
