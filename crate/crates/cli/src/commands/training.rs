use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Duration;

use anyhow::{anyhow, Context};
use qcorpus::curate::{CorpusStats, SourceDocument};
use qcorpus::eval::{ExecLimits, GenerationConfig, HttpEndpoint, LocalProcessExecutor};
use qcorpus::ingest::manifest::read_jsonl;
use qcorpus::mixture::packfile::{write_packed, PackHeader};
use qcorpus::mixture::{
    group_by_subset, materialize_epoch, pack_documents, solve_mix_plan, steps_for_samples, steps_for_tokens,
    MixPlan, SubsetSpec, TrainingSchedule, REFERENCE_PRETRAIN_STEPS,
};
use qcorpus::tunedata::{
    assemble_instruct_mixture, export_padded, generate_synthetic_pairs, read_instruct_records, validate_all,
    validated_samples, write_instruct_jsonl, InstructSource, PromptTemplate,
    SyntheticConfig as GenerationSettings, SyntheticVerdict, TunedataError,
};
use serde::Serialize;
use serde_json::json;

use super::corpus::{CORPUS_FILE, STATS_FILE};
use super::tokenizer;
use crate::config::PipelineConfig;
use crate::stage::{check_partial, require, Classify, Failure, Stage, StageResult, MANIFEST};

pub const PLAN_FILE: &str = "plan.json";
pub const PACK_FILE: &str = "train.bin";
pub const SIDECAR_FILE: &str = "sidecar.json";

pub fn mix(cfg: &PipelineConfig, workdir: &Path, stats_path: Option<&Path>) -> StageResult {
    let curate_dir = workdir.join("curate");
    let mut stage_inputs = Vec::new();
    let stats_path = match stats_path {
        Some(p) => p.to_path_buf(),
        None => {
            require(&curate_dir, "curate")?;
            stage_inputs.push(("curate/manifest.json".to_string(), curate_dir.join(MANIFEST)));
            curate_dir.join(STATS_FILE)
        }
    };
    let text = std::fs::read_to_string(&stats_path)
        .with_context(|| format!("reading {}", stats_path.display()))
        .validation()?;
    let stats: CorpusStats = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", stats_path.display()))
        .validation()?;

    let mut specs = Vec::new();
    for (name, &weight) in &cfg.mix.weights {
        let bucket = stats.buckets.get(name).ok_or_else(|| {
            Failure::Validation(anyhow!(
                "mix.weights.{name}: no such subset in {}",
                stats_path.display()
            ))
        })?;
        specs.push(SubsetSpec::new(name.clone(), weight, bucket.tokens));
    }
    let plan = solve_mix_plan(&specs)
        .context("solving the mix plan")
        .validation()?;

    let mut stage = Stage::begin(workdir.join("mix"), "mix")?;
    for (label, path) in stage_inputs {
        stage.input(label, &path)?;
    }
    stage.input("stats", &stats_path)?;
    stage.write_json(PLAN_FILE, &plan)?;
    let summary = json!({
        "total_effective_tokens": plan.total_effective_tokens,
        "subsets": plan.subsets.iter().map(|s| json!({
            "name": s.name,
            "oversample_factor": s.oversample_factor,
            "effective_tokens": s.effective_tokens,
        })).collect::<Vec<_>>(),
    });
    stage.finish(cfg, summary)?;
    for s in &plan.subsets {
        println!(
            "{:<14} weight {:.2}  factor {:>6.2}  raw {:>12}  effective {:>14.0}",
            s.name, s.weight, s.oversample_factor, s.raw_tokens, s.effective_tokens
        );
    }
    println!("total effective tokens {:.0}", plan.total_effective_tokens);
    Ok(())
}

fn load_plan(workdir: &Path) -> StageResult<(MixPlan, std::path::PathBuf)> {
    let dir = workdir.join("mix");
    require(&dir, "mix")?;
    let path = dir.join(PLAN_FILE);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))
        .validation()?;
    let plan = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .validation()?;
    Ok((plan, dir.join(MANIFEST)))
}

/// The pretraining schedule for `plan` under the configured parameters.
fn pretrain_schedule(cfg: &PipelineConfig, plan: &MixPlan) -> StageResult<(TrainingSchedule, u64)> {
    let s = &cfg.schedule;
    let derived = steps_for_tokens(
        plan.total_effective_tokens,
        s.epochs,
        s.batch_size,
        cfg.mix.context_length as u64,
    )
    .context("schedule")
    .validation()?;
    let schedule = TrainingSchedule {
        total_steps: if s.total_steps > 0 { s.total_steps } else { derived },
        warmup_steps: s.warmup_steps,
        peak_lr: s.peak_lr,
        min_lr: s.min_lr,
        batch_size: s.batch_size,
        context_length: cfg.mix.context_length as u64,
    };
    schedule.validate().context("schedule").validation()?;
    Ok((schedule, derived))
}

#[derive(Serialize)]
struct PackSidecar<'a> {
    plan: &'a MixPlan,
    schedule: TrainingSchedule,
    seed: u64,
    epoch_documents: usize,
    epoch_tokens: u64,
    sequences: usize,
    dropped_tokens: u64,
}

pub fn pack(cfg: &PipelineConfig, workdir: &Path) -> StageResult {
    let curate_dir = workdir.join("curate");
    require(&curate_dir, "curate")?;
    let (plan, plan_manifest) = load_plan(workdir)?;
    let mut stage = Stage::begin(workdir.join("pack"), "pack")?;
    stage.input("curate/manifest.json", &curate_dir.join(MANIFEST))?;
    stage.input("mix/manifest.json", &plan_manifest)?;

    let docs: Vec<SourceDocument> = read_jsonl(&curate_dir.join(CORPUS_FILE)).validation()?;
    let groups = group_by_subset(&docs);
    let epoch = materialize_epoch(&groups, &plan, cfg.run.seed)
        .context("materializing the mixture epoch")
        .validation()?;
    let tok = tokenizer(cfg)?;
    let packed = pack_documents(
        &epoch.order,
        tok.tokenizer.as_ref(),
        cfg.mix.context_length,
        tok.separator_id,
        cfg.mix.pack_mode,
    )
    .context("packing")
    .validation()?;

    let header = PackHeader {
        context_length: cfg.mix.context_length as u32,
        separator_id: tok.separator_id,
        pad_id: None,
        count: packed.sequences.len() as u64,
    };
    let rows: Vec<&[u32]> = packed.sequences.iter().map(|s| s.token_ids.as_slice()).collect();
    let file = File::create(stage.path(PACK_FILE))
        .context("creating pack file")
        .infra()?;
    write_packed(BufWriter::new(file), &header, &rows)
        .context("writing pack file")
        .infra()?;
    stage.output(PACK_FILE)?;

    let (schedule, _) = pretrain_schedule(cfg, &plan)?;
    let sidecar = PackSidecar {
        plan: &plan,
        schedule,
        seed: cfg.run.seed,
        epoch_documents: epoch.order.len(),
        epoch_tokens: epoch.realized_tokens,
        sequences: packed.sequences.len(),
        dropped_tokens: packed.dropped_tokens,
    };
    stage.write_json(SIDECAR_FILE, &sidecar)?;
    let summary = json!({
        "epoch_documents": sidecar.epoch_documents,
        "epoch_tokens": sidecar.epoch_tokens,
        "sequences": sidecar.sequences,
        "dropped_tokens": sidecar.dropped_tokens,
    });
    stage.finish(cfg, summary.clone())?;
    println!("pack: {summary}");
    Ok(())
}

pub fn schedule(cfg: &PipelineConfig, workdir: &Path) -> StageResult {
    let (plan, plan_manifest) = load_plan(workdir)?;
    let (pretrain, derived) = pretrain_schedule(cfg, &plan)?;
    let t = &cfg.tunedata;
    let instruct_samples: usize = t.targets.values().sum();
    let instruct_steps = steps_for_samples(instruct_samples as u64, t.epochs, t.batch_size)
        .context("instruct schedule")
        .validation()?;

    let mut stage = Stage::begin(workdir.join("schedule"), "schedule")?;
    stage.input("mix/manifest.json", &plan_manifest)?;
    let doc = json!({
        "pretrain": pretrain,
        "pretrain_derived_steps": derived,
        "reference_pretrain_steps": REFERENCE_PRETRAIN_STEPS,
        "instruct_samples": instruct_samples,
        "instruct_steps": instruct_steps,
    });
    stage.write_json("schedule.json", &doc)?;
    let mut csv = String::from("step,lr\n");
    for (step, lr) in pretrain.table().iter().enumerate() {
        csv.push_str(&format!("{step},{lr:e}\n"));
    }
    stage.write_output("lr.csv", csv)?;
    stage.finish(cfg, doc.clone())?;
    println!(
        "pretrain steps {} (derived {derived}, reference {REFERENCE_PRETRAIN_STEPS}); instruct steps {instruct_steps}",
        pretrain.total_steps
    );
    Ok(())
}

pub fn tunedata(cfg: &PipelineConfig, workdir: &Path) -> StageResult {
    let t = &cfg.tunedata;
    let mut stage = Stage::begin(workdir.join("tunedata"), "tunedata")?;
    let mut sources = BTreeMap::new();
    for source in InstructSource::ALL {
        let Some(path) = cfg.source_path(source) else {
            continue;
        };
        // A supplied synthetic-code file is taken to hold validated pairs.
        let validated = source == InstructSource::SyntheticCode;
        let samples = read_instruct_records(&path, source, validated)
            .with_context(|| format!("tunedata.sources.{source}"))
            .validation()?;
        stage.input(format!("sources.{source}"), &path)?;
        sources.insert(source, samples);
    }

    let mut synthetic_summary = serde_json::Value::Null;
    let mut partial = Ok(());
    if t.synthetic.generate > 0 {
        let s = &t.synthetic;
        let curate_dir = workdir.join("curate");
        require(&curate_dir, "curate")?;
        stage.input("curate/manifest.json", &curate_dir.join(MANIFEST))?;
        let seeds: Vec<SourceDocument> = read_jsonl(&curate_dir.join(CORPUS_FILE)).validation()?;
        if s.endpoint.is_empty() {
            return Err(Failure::Validation(anyhow!(
                "tunedata.synthetic.endpoint is empty; set it or GEN_ENDPOINT_URL"
            )));
        }
        let template = if s.template.is_empty() {
            PromptTemplate::builtin()
        } else {
            PromptTemplate::load(Path::new(&s.template)).validation()?
        };
        let endpoint = HttpEndpoint::new(s.endpoint.clone(), Duration::from_secs(120));
        let settings = GenerationSettings {
            generation: GenerationConfig {
                temperature: s.temperature,
                max_new_tokens: s.max_new_tokens,
                stop_sequences: Vec::new(),
                seed: Some(cfg.run.seed),
            },
            retry_budget: s.retry_budget,
            workers: cfg.run.workers,
        };
        let batch = generate_synthetic_pairs(&seeds, &endpoint, &template, s.generate, &settings).map_err(
            |e| match e {
                TunedataError::NoSeedDocuments => Failure::Validation(e.into()),
                other => Failure::Infra(other.into()),
            },
        )?;
        if batch.endpoint_errors == batch.requested {
            return Err(Failure::Infra(anyhow!(
                "all {} generation requests to {} failed",
                batch.requested,
                s.endpoint
            )));
        }
        let limits = ExecLimits {
            timeout: Duration::from_secs_f64(s.timeout),
            ..ExecLimits::default()
        };
        let checked = validate_all(
            &batch.pairs,
            &LocalProcessExecutor::default(),
            &limits,
            cfg.run.workers,
        )
        .infra()?;
        let mut out = Vec::new();
        for pair in &checked {
            serde_json::to_writer(&mut out, pair).expect("pair serializes");
            out.push(b'\n');
        }
        stage.write_output("synthetic.jsonl", out)?;
        let count = |v: SyntheticVerdict| checked.iter().filter(|p| p.verdict == v).count();
        synthetic_summary = json!({
            "requested": batch.requested,
            "dropped_malformed": batch.dropped_malformed,
            "endpoint_errors": batch.endpoint_errors,
            "pass": count(SyntheticVerdict::Pass),
            "fail": count(SyntheticVerdict::Fail),
            "timeout": count(SyntheticVerdict::Timeout),
            "error": count(SyntheticVerdict::Error),
        });
        sources
            .entry(InstructSource::SyntheticCode)
            .or_default()
            .extend(validated_samples(&checked));
        partial = check_partial(
            "synthetic generations",
            batch.dropped_malformed + batch.endpoint_errors,
            batch.requested,
            cfg.run.partial_threshold,
        );
    }

    let mixture = assemble_instruct_mixture(&sources, &t.targets, cfg.run.seed).validation()?;
    let mut jsonl = Vec::new();
    write_instruct_jsonl(&mut jsonl, &mixture).infra()?;
    stage.write_output("instruct.jsonl", jsonl)?;

    let tok = tokenizer(cfg)?;
    let file = File::create(stage.path("instruct.bin"))
        .context("creating instruct.bin")
        .infra()?;
    let export = export_padded(
        BufWriter::new(file),
        &mixture,
        tok.tokenizer.as_ref(),
        t.sequence_length,
        tok.separator_id,
        tok.pad_id,
    )
    .map_err(|e| match e {
        TunedataError::Io(_) => Failure::Infra(e.into()),
        other => Failure::Validation(other.into()),
    })?;
    stage.output("instruct.bin")?;
    stage.write_json("rejected.json", &export.rejected)?;

    let mut per_source = BTreeMap::new();
    for s in &mixture {
        *per_source.entry(s.source.as_str()).or_insert(0usize) += 1;
    }
    let summary = json!({
        "samples": mixture.len(),
        "per_source": per_source,
        "padded": export.written,
        "rejected_over_length": export.rejected.len(),
        "synthetic": synthetic_summary,
    });
    stage.finish(cfg, summary.clone())?;
    println!("tunedata: {summary}");
    partial
}
