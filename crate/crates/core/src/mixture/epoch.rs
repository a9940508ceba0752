use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MixError, MixPlan};
use crate::curate::SourceDocument;

/// One mixture epoch: documents in training order, repeated per the plan.
#[derive(Debug, Clone)]
pub struct Epoch<'a> {
    pub order: Vec<&'a SourceDocument>,
    pub realized_tokens: u64,
}

fn tokens_of(doc: &SourceDocument) -> Result<u64, MixError> {
    doc.token_count
        .ok_or_else(|| MixError::MissingTokenCount(doc.id.clone()))
}

/// Picks documents for the fractional part of an oversample factor.
///
/// Documents are visited in a token-mass-weighted random order (without
/// replacement); each is taken while it brings the running total closer to
/// `target` than leaving it out would.
fn sample_remainder<'a>(
    docs: &[&'a SourceDocument],
    target: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<&'a SourceDocument>, MixError> {
    let mut keyed = Vec::with_capacity(docs.len());
    for &doc in docs {
        let weight = tokens_of(doc)? as f64;
        if weight == 0.0 {
            continue;
        }
        // Efraimidis–Spirakis key in log space: ln(u) / w, larger first.
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        keyed.push((u.ln() / weight, doc));
    }
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut taken = Vec::new();
    let mut acc = 0.0;
    for (_, doc) in keyed {
        if acc >= target {
            break;
        }
        let w = doc.token_count.unwrap_or(0) as f64;
        if acc + w <= target + w / 2.0 {
            acc += w;
            taken.push(doc);
        }
    }
    Ok(taken)
}

/// Realizes a plan over concrete documents grouped by subset name.
///
/// Each subset contributes `floor(factor)` full copies plus a token-mass
/// sample for the fractional remainder; the whole epoch is then shuffled.
/// The result depends only on `(groups, plan, seed)`.
pub fn materialize_epoch<'a>(
    groups: &BTreeMap<String, Vec<&'a SourceDocument>>,
    plan: &MixPlan,
    seed: u64,
) -> Result<Epoch<'a>, MixError> {
    if let Some(unknown) = groups.keys().find(|name| plan.subset(name).is_none()) {
        return Err(MixError::UnplannedSubset(unknown.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::new();
    for subset in &plan.subsets {
        let docs = groups.get(&subset.name).map(Vec::as_slice).unwrap_or(&[]);
        if docs.is_empty() {
            if subset.weight > 0.0 {
                return Err(MixError::EmptySubset(subset.name.clone()));
            }
            continue;
        }
        let subset_tokens: u64 = docs.iter().map(|d| tokens_of(d)).sum::<Result<_, _>>()?;
        let whole = subset.oversample_factor.floor();
        let fraction = subset.oversample_factor - whole;
        for _ in 0..whole as u64 {
            order.extend_from_slice(docs);
        }
        if fraction > 0.0 {
            let target = fraction * subset_tokens as f64;
            order.extend(sample_remainder(docs, target, &mut rng)?);
        }
    }
    order.shuffle(&mut rng);
    let realized_tokens = order.iter().map(|d| d.token_count.unwrap_or(0)).sum();
    Ok(Epoch {
        order,
        realized_tokens,
    })
}

/// Groups documents by their subset name (`qko-code`, ...), keeping input order.
pub fn group_by_subset(docs: &[SourceDocument]) -> BTreeMap<String, Vec<&SourceDocument>> {
    let mut groups: BTreeMap<String, Vec<&SourceDocument>> = BTreeMap::new();
    for doc in docs {
        groups.entry(doc.subset_name()).or_default().push(doc);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curate::Provenance;
    use crate::ingest::{FileKind, Origin};
    use crate::mixture::{solve_mix_plan, SubsetPlan, SubsetSpec};
    use chrono::Utc;
    use std::collections::HashMap;

    fn docs(prefix: &str, sizes: &[u64]) -> Vec<SourceDocument> {
        sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let mut d = SourceDocument::new(
                    Origin::Community,
                    FileKind::Script,
                    format!("{prefix}{i}"),
                    Provenance {
                        owner: prefix.into(),
                        name: "r".into(),
                        path: format!("{i}.py"),
                    },
                    Utc::now(),
                );
                d.token_count = Some(n);
                d
            })
            .collect()
    }

    fn single_plan(name: &str, factor: f64, raw: u64) -> MixPlan {
        MixPlan {
            subsets: vec![SubsetPlan {
                name: name.into(),
                weight: 1.0,
                raw_tokens: raw,
                oversample_factor: factor,
                effective_tokens: factor * raw as f64,
            }],
            total_effective_tokens: factor * raw as f64,
        }
    }

    fn multiplicity<'a>(epoch: &Epoch<'a>) -> HashMap<&'a str, usize> {
        let mut counts = HashMap::new();
        for d in &epoch.order {
            *counts.entry(d.text.as_str()).or_default() += 1;
        }
        counts
    }

    #[test]
    fn integer_factor_repeats_each_doc() {
        let corpus = docs("a", &[5, 7, 9]);
        let groups = BTreeMap::from([("s".to_string(), corpus.iter().collect())]);
        let epoch = materialize_epoch(&groups, &single_plan("s", 2.0, 21), 1).unwrap();
        assert_eq!(epoch.order.len(), 6);
        assert!(multiplicity(&epoch).values().all(|&c| c == 2));
        assert_eq!(epoch.realized_tokens, 42);
    }

    #[test]
    fn fractional_factor_on_equal_docs() {
        let corpus = docs("a", &[10; 8]);
        let groups = BTreeMap::from([("s".to_string(), corpus.iter().collect())]);
        let epoch = materialize_epoch(&groups, &single_plan("s", 1.5, 80), 3).unwrap();
        let counts = multiplicity(&epoch);
        assert_eq!(counts.len(), 8);
        assert_eq!(counts.values().filter(|&&c| c == 2).count(), 4);
        assert_eq!(counts.values().filter(|&&c| c == 1).count(), 4);
    }

    #[test]
    fn deterministic_per_seed() {
        let corpus = docs("a", &[3, 1, 4, 1, 5, 9, 2, 6]);
        let groups = BTreeMap::from([("s".to_string(), corpus.iter().collect())]);
        let plan = single_plan("s", 2.7, 31);
        let ids = |seed| {
            materialize_epoch(&groups, &plan, seed)
                .unwrap()
                .order
                .iter()
                .map(|d| d.text.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(7), ids(7));
        assert_ne!(ids(7), ids(8));
    }

    #[test]
    fn empty_subset_rejected() {
        let plan = solve_mix_plan(&[SubsetSpec::new("a", 0.5, 10), SubsetSpec::new("b", 0.5, 10)]).unwrap();
        let corpus = docs("a", &[10]);
        let groups = BTreeMap::from([("a".to_string(), corpus.iter().collect())]);
        assert!(matches!(
            materialize_epoch(&groups, &plan, 0),
            Err(MixError::EmptySubset(name)) if name == "b"
        ));
    }

    #[test]
    fn realized_tokens_track_plan_on_large_corpus() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let sizes_a: Vec<u64> = (0..3000).map(|_| rng.gen_range(50..800)).collect();
        let sizes_b: Vec<u64> = (0..9000).map(|_| rng.gen_range(50..800)).collect();
        let a = docs("a", &sizes_a);
        let b = docs("b", &sizes_b);
        let raw_a: u64 = sizes_a.iter().sum();
        let raw_b: u64 = sizes_b.iter().sum();
        assert!(raw_a + raw_b > 1_000_000);
        let plan =
            solve_mix_plan(&[SubsetSpec::new("a", 0.6, raw_a), SubsetSpec::new("b", 0.4, raw_b)]).unwrap();
        let groups = BTreeMap::from([
            ("a".to_string(), a.iter().collect()),
            ("b".to_string(), b.iter().collect()),
        ]);
        let epoch = materialize_epoch(&groups, &plan, 5).unwrap();
        let rel =
            (epoch.realized_tokens as f64 - plan.total_effective_tokens).abs() / plan.total_effective_tokens;
        assert!(rel < 0.005, "relative error {rel}");
    }
}
