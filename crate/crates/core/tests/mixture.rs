use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use qcorpus::curate::{Provenance, SourceDocument};
use qcorpus::ingest::{FileKind, Origin};
use qcorpus::mixture::packfile::{read_packed, write_packed, PackHeader};
use qcorpus::mixture::{
    count_all, group_by_subset, lr_at_step, materialize_epoch, pack_documents, pack_token_streams,
    solve_mix_plan, ByteTokenizer, MixError, PackMode, SubprocessTokenizer, SubsetSpec, Tokenizer,
    TokenizerError, TrainingSchedule,
};

fn arb_specs() -> impl Strategy<Value = Vec<SubsetSpec>> {
    proptest::collection::vec((1u32..1000, 1u64..10_000_000_000), 1..6).prop_map(|raw| {
        let total: u32 = raw.iter().map(|(w, _)| w).sum();
        raw.iter()
            .enumerate()
            .map(|(i, (w, tokens))| SubsetSpec::new(format!("s{i}"), *w as f64 / total as f64, *tokens))
            .collect()
    })
}

proptest! {
    #[test]
    fn solved_plan_reproduces_its_weights(specs in arb_specs()) {
        let plan = solve_mix_plan(&specs).unwrap();
        plan.check_invariants().unwrap();
        let min = plan.subsets.iter().map(|s| s.oversample_factor).fold(f64::INFINITY, f64::min);
        prop_assert!((min - 1.0).abs() < 1e-9);
        for (spec, sub) in specs.iter().zip(&plan.subsets) {
            let w = sub.effective_tokens / plan.total_effective_tokens;
            prop_assert!((w - spec.weight).abs() < 1e-9);
            prop_assert!((sub.effective_tokens - sub.oversample_factor * spec.raw_tokens as f64).abs() <= 1e-6 * sub.effective_tokens);
        }
    }

    #[test]
    fn drop_at_boundary_never_splits_a_document(lens in proptest::collection::vec(0usize..30, 0..40), ctx in 2usize..24) {
        let docs: Vec<Vec<u32>> = lens.iter().enumerate().map(|(d, &n)| vec![d as u32 + 1; n]).collect();
        let out = pack_token_streams(&docs, ctx, 0, PackMode::DropAtBoundary).unwrap();
        let mut seen_docs = std::collections::HashSet::new();
        for seq in &out.sequences {
            prop_assert_eq!(seq.token_ids.len(), ctx);
            for &b in &seq.doc_boundaries {
                prop_assert_eq!(seq.token_ids[b], 0);
            }
            // A document's tokens are never resumed in a later window.
            let here: std::collections::HashSet<u32> = seq.token_ids.iter().copied().filter(|&t| t != 0).collect();
            prop_assert!(here.is_disjoint(&seen_docs));
            seen_docs.extend(here);
        }
        let kept: usize = out.sequences.len() * ctx;
        let stream: usize = lens.iter().map(|n| n + 1).sum();
        prop_assert_eq!(kept as u64 + out.dropped_tokens, stream as u64);
    }

    #[test]
    fn schedule_is_continuous_and_non_increasing_after_warmup(total in 2u64..3000, warm_frac in 0.0f64..0.5, min_frac in 0.0f64..1.0) {
        let warmup = (total as f64 * warm_frac) as u64;
        let sched = TrainingSchedule { total_steps: total, warmup_steps: warmup, peak_lr: 1e-5, min_lr: 1e-5 * min_frac, batch_size: 64, context_length: 8192 };
        sched.validate().unwrap();
        let table = sched.table();
        prop_assert!((table[warmup as usize] - 1e-5).abs() < 1e-15);
        for pair in table[warmup as usize..].windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-18);
        }
        for pair in table[..=warmup as usize].windows(2) {
            prop_assert!(pair[1] >= pair[0]);
            prop_assert!(pair[1] - pair[0] <= 1e-5 / warmup.max(1) as f64 + 1e-18);
        }
        prop_assert!((table[total as usize] - sched.min_lr).abs() < 1e-15);
        prop_assert!(lr_at_step(total + 1, &sched).is_err());
    }
}

fn doc(origin: Origin, kind: FileKind, text: String) -> SourceDocument {
    SourceDocument::new(
        origin,
        kind,
        text,
        Provenance {
            owner: "o".into(),
            name: "n".into(),
            path: "p".into(),
        },
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
    )
}

#[test]
fn tokens_epoch_and_packfile_pipeline() {
    let mut docs: Vec<_> = (0..40)
        .map(|i| {
            let (origin, kind) = match i % 4 {
                0 => (Origin::Official, FileKind::Script),
                1 => (Origin::Community, FileKind::Script),
                2 => (Origin::Official, FileKind::Notebook),
                _ => (Origin::Community, FileKind::Notebook),
            };
            doc(origin, kind, format!("doc {i} ").repeat(1 + i % 7))
        })
        .collect();
    assert!(count_all(&mut docs, &ByteTokenizer, 4).is_empty());
    let groups = group_by_subset(&docs);
    let specs: Vec<_> = groups
        .iter()
        .zip([0.35, 0.30, 0.24, 0.11])
        .map(|((name, ds), w)| {
            SubsetSpec::new(name.clone(), w, ds.iter().map(|d| d.token_count.unwrap()).sum())
        })
        .collect();
    let plan = solve_mix_plan(&specs).unwrap();
    let epoch = materialize_epoch(&groups, &plan, 9).unwrap();
    let again = materialize_epoch(&groups, &plan, 9).unwrap();
    assert_eq!(
        epoch.order.iter().map(|d| &d.id).collect::<Vec<_>>(),
        again.order.iter().map(|d| &d.id).collect::<Vec<_>>()
    );

    let packed = pack_documents(
        &epoch.order,
        &ByteTokenizer,
        64,
        ByteTokenizer::SEPARATOR_ID,
        PackMode::Straddle,
    )
    .unwrap();
    let stream: u64 = epoch.order.iter().map(|d| d.token_count.unwrap() + 1).sum();
    assert_eq!(packed.sequences.len() as u64 * 64 + packed.dropped_tokens, stream);
    assert!(packed.dropped_tokens < 64);

    let rows: Vec<_> = packed.sequences.iter().map(|s| s.token_ids.clone()).collect();
    let header = PackHeader {
        context_length: 64,
        separator_id: ByteTokenizer::SEPARATOR_ID,
        pad_id: None,
        count: rows.len() as u64,
    };
    let mut bytes = Vec::new();
    write_packed(&mut bytes, &header, &rows).unwrap();
    let (h, back) = read_packed(bytes.as_slice()).unwrap();
    assert_eq!(h, header);
    assert_eq!(back, rows);

    let missing = [doc(Origin::Official, FileKind::Script, "x".into())];
    let groups = group_by_subset(&missing);
    let one = solve_mix_plan(&[SubsetSpec::new("qko-code", 1.0, 1)]).unwrap();
    assert!(matches!(
        materialize_epoch(&groups, &one, 0),
        Err(MixError::MissingTokenCount(_))
    ));
}

#[test]
fn separator_must_be_in_vocabulary() {
    let d = doc(Origin::Official, FileKind::Script, "abc".into());
    assert!(matches!(
        pack_documents(&[&d], &ByteTokenizer, 8, 999, PackMode::Straddle),
        Err(MixError::SeparatorOutOfVocabulary { .. })
    ));
}

const PLUGIN: &str = r#"
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    if "text" in req:
        if "FAIL" in req["text"]:
            out = {"error": "refused"}
        else:
            out = {"ids": list(req["text"].encode("utf-8"))}
    else:
        out = {"text": bytes(req["ids"]).decode("utf-8")}
    sys.stdout.write(json.dumps(out) + "\n")
    sys.stdout.flush()
"#;

#[test]
fn subprocess_tokenizer_plugin() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("plugin.py");
    std::fs::write(&script, PLUGIN).unwrap();
    let tok = SubprocessTokenizer::spawn(&["python3".into(), script.display().to_string()], 258).unwrap();
    let text = "qc.h(0)\nqc.cx(0, 1) ∣ψ⟩";
    let ids = tok.encode(text).unwrap();
    assert_eq!(ids, ByteTokenizer.encode(text).unwrap());
    assert_eq!(tok.decode(&ids).unwrap(), text);
    assert!(matches!(tok.encode("FAIL"), Err(TokenizerError::Protocol(_))));

    let mut docs = vec![
        doc(Origin::Official, FileKind::Script, "abc".into()),
        doc(Origin::Official, FileKind::Script, "FAIL here".into()),
    ];
    let failures = count_all(&mut docs, &tok, 2);
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0].0, 1);
    assert_eq!(docs[0].token_count, Some(3));
    assert_eq!(docs[1].token_count, None);

    let small = SubprocessTokenizer::spawn(&["python3".into(), script.display().to_string()], 100).unwrap();
    assert!(matches!(small.encode("z"), Err(TokenizerError::UnknownId(122))));
}
