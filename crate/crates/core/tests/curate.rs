use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};
use proptest::prelude::*;
use qcorpus::curate::{
    curate, dedup_exact, default_cutoff, filter_by_recency, linearize_notebook, parse_notebook, CellType,
    CurateOptions, ImageDetector, NotebookCell, Provenance, SentinelConfig, SourceDocument,
};
use qcorpus::ingest::{FileKind, Origin, RawFile, RepoRecord};
use serde_json::json;

fn doc(origin: Origin, owner: &str, path: &str, text: &str, at: DateTime<Utc>) -> SourceDocument {
    SourceDocument::new(
        origin,
        FileKind::Script,
        text.into(),
        Provenance {
            owner: owner.into(),
            name: "repo".into(),
            path: path.into(),
        },
        at,
    )
}

fn base_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap()
}

prop_compose! {
    fn arb_doc()(
        official in any::<bool>(),
        owner in "[a-c]",
        path in "[a-c]{1,2}\\.py",
        text in "[xy]{0,3}",
        days in -400i64..400,
    ) -> SourceDocument {
        let origin = if official { Origin::Official } else { Origin::Community };
        doc(origin, &owner, &path, &text, base_time() + Duration::days(days))
    }
}

proptest! {
    #[test]
    fn dedup_is_idempotent_and_keeps_every_distinct_text(docs in proptest::collection::vec(arb_doc(), 0..40)) {
        let once = dedup_exact(docs.clone());
        let twice = dedup_exact(once.clone());
        prop_assert_eq!(&once, &twice);
        let input: BTreeSet<_> = docs.iter().map(|d| d.id.clone()).collect();
        let output: Vec<_> = once.iter().map(|d| d.id.clone()).collect();
        prop_assert_eq!(output.len(), input.len());
        prop_assert_eq!(output.into_iter().collect::<BTreeSet<_>>(), input);
    }

    #[test]
    fn dedup_survivor_ignores_input_order(docs in proptest::collection::vec(arb_doc(), 0..30), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = docs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let key = |v: Vec<SourceDocument>| {
            let mut k: Vec<_> = v.into_iter().map(|d| (d.id, d.provenance)).collect();
            k.sort();
            k
        };
        prop_assert_eq!(key(dedup_exact(docs)), key(dedup_exact(shuffled)));
    }

    #[test]
    fn recency_filter_is_idempotent_and_exact(docs in proptest::collection::vec(arb_doc(), 0..40)) {
        let cutoff = default_cutoff();
        let once = filter_by_recency(docs.clone(), cutoff);
        prop_assert_eq!(&filter_by_recency(once.clone(), cutoff), &once);
        let expected: Vec<_> = docs.into_iter().filter(|d| d.last_modified_at >= cutoff).collect();
        prop_assert_eq!(once, expected);
    }
}

#[derive(Debug, Clone)]
struct CellSpec {
    kind: CellType,
    source: String,
    outputs: Vec<String>,
    image: bool,
}

prop_compose! {
    fn arb_cell()(
        kind in prop_oneof![Just(CellType::Markdown), Just(CellType::Code), Just(CellType::Raw)],
        source in "[a-z ]{0,12}",
        outputs in proptest::collection::vec("[0-9]{1,6}", 0..3),
        image in proptest::bool::weighted(0.2),
    ) -> CellSpec {
        CellSpec { kind, source, outputs, image }
    }
}

fn build(spec: &CellSpec, index: usize) -> NotebookCell {
    let mut cell = NotebookCell::new(spec.kind, spec.source.clone());
    if spec.image {
        cell.source
            .push_str("![plot](data:image/png;base64,iVBORw0KGgo=)");
    }
    if spec.kind == CellType::Code {
        cell.outputs = spec
            .outputs
            .iter()
            .map(|o| json!({"output_type": "stream", "text": format!("OUTMARK{index}x{o}")}))
            .collect();
    }
    cell
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn linearization_drops_outputs_and_preserves_order(specs in proptest::collection::vec(arb_cell(), 0..12)) {
        let cells: Vec<_> = specs.iter().enumerate().map(|(i, s)| build(s, i)).collect();
        let sentinels = SentinelConfig::default();
        let text = linearize_notebook(&cells, &sentinels, &ImageDetector::default());
        prop_assert!(!text.contains("OUTMARK"));
        prop_assert!(!text.contains("base64"));

        let mut expected = sentinels.start_token.clone();
        for (spec, cell) in specs.iter().zip(&cells) {
            if spec.image {
                continue;
            }
            match spec.kind {
                CellType::Markdown => expected.push_str(&sentinels.text_token),
                CellType::Code => expected.push_str(&sentinels.code_token),
                CellType::Raw => continue,
            }
            expected.push_str(&cell.source);
        }
        prop_assert_eq!(text, expected);
    }

    #[test]
    fn parser_never_panics_on_arbitrary_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = parse_notebook(&bytes);
    }

    #[test]
    fn parser_rejects_truncated_notebooks(cut in 1usize..60) {
        let full = serde_json::to_vec(&json!({
            "nbformat": 4, "nbformat_minor": 5, "metadata": {},
            "cells": [{"cell_type": "markdown", "source": ["# Title\n", "text"], "metadata": {}}]
        })).unwrap();
        let cut = cut.min(full.len() - 1);
        prop_assert!(parse_notebook(&full[..full.len() - cut]).is_err());
    }
}

fn repo(owner: &str, origin: Origin) -> Arc<RepoRecord> {
    Arc::new(RepoRecord {
        host_id: owner.into(),
        owner: owner.into(),
        name: "qiskit-demo".into(),
        description: String::new(),
        license_id: Some("MIT".into()),
        is_fork: false,
        default_branch: "main".into(),
        last_pushed_at: base_time(),
        origin,
    })
}

fn raw(repo: &Arc<RepoRecord>, path: &str, kind: FileKind, content: &[u8], at: DateTime<Utc>) -> RawFile {
    RawFile {
        repo: repo.clone(),
        path: path.into(),
        kind,
        content: content.to_vec(),
        last_modified_at: at,
    }
}

#[test]
fn curate_pipeline_counts_every_drop() {
    let official = repo("Qiskit", Origin::Official);
    let community = repo("alice", Origin::Community);
    let fresh = Utc.with_ymd_and_hms(2024, 2, 1, 0, 0, 0).unwrap();
    let stale = Utc.with_ymd_and_hms(2021, 5, 1, 0, 0, 0).unwrap();
    let notebook = serde_json::to_vec(&json!({
        "nbformat": 4, "nbformat_minor": 5, "metadata": {},
        "cells": [
            {"cell_type": "markdown", "source": "hello", "metadata": {}},
            {"cell_type": "code", "source": "x=1", "metadata": {}, "execution_count": 1,
             "outputs": [{"output_type": "display_data", "data": {"image/png": "iVBORw0KGgoAAAA"}}]}
        ]
    }))
    .unwrap();
    let files = vec![
        raw(&community, "dup.py", FileKind::Script, b"print(1)\n", fresh),
        raw(&official, "dup.py", FileKind::Script, b"print(1)   \r\n", fresh),
        raw(&official, "old.py", FileKind::Script, b"print(2)\n", stale),
        raw(
            &official,
            "edge.py",
            FileKind::Script,
            b"print(3)\n",
            default_cutoff(),
        ),
        raw(
            &official,
            "bad.ipynb",
            FileKind::Notebook,
            b"{\"cells\": [",
            fresh,
        ),
        raw(&official, "bin.py", FileKind::Script, &[0xff, 0xfe, 0x00], fresh),
        raw(&community, "nb.ipynb", FileKind::Notebook, &notebook, fresh),
    ];
    let (docs, log) = curate(&files, &CurateOptions::default());
    assert_eq!(
        (log.malformed_notebook, log.non_utf8, log.stale, log.duplicate),
        (1, 1, 1, 1)
    );
    let kept: Vec<_> = docs
        .iter()
        .map(|d| (d.provenance.owner.as_str(), d.provenance.path.as_str()))
        .collect();
    assert_eq!(
        kept,
        [("Qiskit", "dup.py"), ("Qiskit", "edge.py"), ("alice", "nb.ipynb")]
    );
    let nb = &docs[2];
    assert_eq!(nb.text, "<jupyter_start><jupyter_text>hello<jupyter_code>x=1");
    assert_eq!(nb.subset_name(), "qk-notebook");
}
