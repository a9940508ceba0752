use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use chrono::Utc;
use qcorpus::curate::{corpus_report, curate as curate_files};
use qcorpus::ingest::github::{GitHubClient, RetryPolicy};
use qcorpus::ingest::manifest::{read_crawl, write_crawl, write_jsonl, Snapshot, FILES_FILE, REPOS_FILE};
use qcorpus::ingest::{fetch_all, filter_repositories, search_repositories};
use qcorpus::mixture::count_all;
use serde_json::json;

use super::tokenizer;
use crate::config::PipelineConfig;
use crate::stage::{check_partial, require, Classify, Failure, Stage, StageResult};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const DROPS_FILE: &str = "drops.json";

pub fn crawl(cfg: &PipelineConfig, workdir: &Path) -> StageResult {
    let mut stage = Stage::begin(workdir.join("crawl"), "crawl")?;
    let policy = cfg.crawl_policy();
    let client = GitHubClient::from_env(Some(&cfg.crawl.api_base)).with_retry(RetryPolicy {
        max_attempts: cfg.crawl.retry_attempts.max(1),
        base_delay: Duration::from_millis(cfg.crawl.retry_base_delay_ms),
        ..RetryPolicy::default()
    });

    let found = search_repositories(&client, &policy)
        .context("repository search")
        .infra()?;
    let searched = found.len();
    let mut kept = filter_repositories(found, &policy);
    kept.sort_by(|a, b| (&a.owner, &a.name).cmp(&(&b.owner, &b.name)));
    let records: Vec<_> = kept.into_iter().map(Arc::new).collect();
    let result = fetch_all(&records, &client, &policy, cfg.run.workers);
    for (repo, err) in &result.failures {
        log::warn!("{repo}: {err}");
    }
    if !records.is_empty() && result.failures.len() == records.len() {
        return Err(Failure::Infra(anyhow!(
            "every repository fetch failed; first error: {}",
            result.failures[0].1
        )));
    }

    let snapshot = Snapshot {
        crawled_at: Utc::now(),
        repositories: records.len(),
        files: result.files.len(),
        skipped_oversized: result.skipped_oversized,
        missing_branches: result.missing_branches.clone(),
        failed_repositories: result.failures.iter().map(|(r, _)| r.clone()).collect(),
    };
    write_crawl(&stage.dir, &records, &result.files, &snapshot).infra()?;
    // snapshot.json carries the crawl timestamp and is left out of the hashes.
    stage.output(REPOS_FILE)?;
    stage.output(FILES_FILE)?;
    let summary = json!({
        "searched": searched,
        "repositories": records.len(),
        "files": result.files.len(),
        "skipped_oversized": result.skipped_oversized,
        "missing_branches": result.missing_branches.len(),
        "failed_repositories": result.failures.len(),
    });
    stage.finish(cfg, summary.clone())?;
    println!("crawl: {summary}");
    check_partial(
        "repositories",
        result.failures.len(),
        records.len(),
        cfg.run.partial_threshold,
    )
}

pub fn curate(cfg: &PipelineConfig, workdir: &Path) -> StageResult {
    let crawl_dir = workdir.join("crawl");
    require(&crawl_dir, "crawl")?;
    let mut stage = Stage::begin(workdir.join("curate"), "curate")?;
    stage.input("crawl/manifest.json", &crawl_dir.join(crate::stage::MANIFEST))?;

    let files = read_crawl(&crawl_dir).validation()?;
    let (mut docs, log) = curate_files(&files, &cfg.curate_options());
    let tok = tokenizer(cfg)?;
    let failures = count_all(&mut docs, tok.tokenizer.as_ref(), cfg.run.workers);
    for (i, err) in &failures {
        let p = &docs[*i].provenance;
        log::warn!("{}/{}:{}: tokenizer failed: {err}", p.owner, p.name, p.path);
    }
    docs.retain(|d| d.token_count.is_some());
    let stats = corpus_report(&docs).expect("every kept document has a token count");

    write_jsonl(&stage.path(CORPUS_FILE), &docs)
        .context("writing corpus")
        .infra()?;
    stage.output(CORPUS_FILE)?;
    let drops = json!({
        "malformed_notebook": log.malformed_notebook,
        "non_utf8": log.non_utf8,
        "stale": log.stale,
        "duplicate": log.duplicate,
        "tokenizer_failed": failures.len(),
    });
    stage.write_json(DROPS_FILE, &drops)?;
    stage.write_json(STATS_FILE, &stats)?;
    let summary = json!({
        "input_files": files.len(),
        "documents": docs.len(),
        "tokens": stats.total.tokens,
        "dropped": drops,
    });
    stage.finish(cfg, summary.clone())?;
    println!("curate: {summary}");
    let lost = log.unreadable() + failures.len();
    check_partial(
        "files (unreadable or untokenizable)",
        lost,
        files.len(),
        cfg.run.partial_threshold,
    )
}
