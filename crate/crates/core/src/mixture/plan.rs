use serde::{Deserialize, Serialize};

use super::MixError;

/// Tolerance on weight sums and recomputed weights.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub name: String,
    /// Share of the mixture epoch, in (0, 1].
    pub weight: f64,
    pub raw_tokens: u64,
}

impl SubsetSpec {
    pub fn new(name: impl Into<String>, weight: f64, raw_tokens: u64) -> Self {
        Self {
            name: name.into(),
            weight,
            raw_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetPlan {
    pub name: String,
    pub weight: f64,
    pub raw_tokens: u64,
    /// Passes over the subset per mixture epoch.
    pub oversample_factor: f64,
    pub effective_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub subsets: Vec<SubsetPlan>,
    pub total_effective_tokens: f64,
}

impl MixPlan {
    pub fn subset(&self, name: &str) -> Option<&SubsetPlan> {
        self.subsets.iter().find(|s| s.name == name)
    }

    /// Checks the plan's internal consistency: effective = factor × raw,
    /// weights reproduced from effective tokens, smallest factor exactly one.
    pub fn check_invariants(&self) -> Result<(), String> {
        let total = self.total_effective_tokens;
        let mut min_factor = f64::INFINITY;
        for s in &self.subsets {
            let effective = s.oversample_factor * s.raw_tokens as f64;
            if (effective - s.effective_tokens).abs() > WEIGHT_TOLERANCE * total.max(1.0) {
                return Err(format!("{}: effective tokens != factor × raw", s.name));
            }
            if (s.effective_tokens / total - s.weight).abs() > WEIGHT_TOLERANCE {
                return Err(format!("{}: weight not reproduced", s.name));
            }
            min_factor = min_factor.min(s.oversample_factor);
        }
        if (min_factor - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(format!("smallest oversample factor is {min_factor}, not 1"));
        }
        Ok(())
    }
}

/// Sizes the mixture epoch so that no subset is undersampled: the total is
/// the largest `raw / weight`, and each subset is oversampled to hit its
/// weight of that total. The limiting subset gets factor 1.
pub fn solve_mix_plan(subsets: &[SubsetSpec]) -> Result<MixPlan, MixError> {
    if subsets.is_empty() {
        return Err(MixError::EmptyPlan);
    }
    for (i, s) in subsets.iter().enumerate() {
        if !(s.weight > 0.0 && s.weight <= 1.0) {
            return Err(MixError::InvalidWeight {
                name: s.name.clone(),
                weight: s.weight,
            });
        }
        if s.raw_tokens == 0 {
            return Err(MixError::ZeroRawTokens(s.name.clone()));
        }
        if subsets[..i].iter().any(|o| o.name == s.name) {
            return Err(MixError::DuplicateSubset(s.name.clone()));
        }
    }
    let weight_sum: f64 = subsets.iter().map(|s| s.weight).sum();
    if (weight_sum - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(MixError::WeightSum(weight_sum));
    }

    let total = subsets
        .iter()
        .map(|s| s.raw_tokens as f64 / s.weight)
        .fold(f64::NEG_INFINITY, f64::max);

    let plan = subsets
        .iter()
        .map(|s| {
            let raw = s.raw_tokens as f64;
            let factor = s.weight * total / raw;
            SubsetPlan {
                name: s.name.clone(),
                weight: s.weight,
                raw_tokens: s.raw_tokens,
                oversample_factor: factor,
                effective_tokens: factor * raw,
            }
        })
        .collect();
    Ok(MixPlan {
        subsets: plan,
        total_effective_tokens: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_pair() {
        let plan = solve_mix_plan(&[SubsetSpec::new("a", 0.5, 10), SubsetSpec::new("b", 0.5, 10)]).unwrap();
        assert_eq!(plan.total_effective_tokens, 20.0);
        for s in &plan.subsets {
            assert!((s.oversample_factor - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn max_rule_by_hand() {
        // total = max(8/0.8, 8/0.2) = max(10, 40) = 40
        let plan = solve_mix_plan(&[SubsetSpec::new("a", 0.8, 8), SubsetSpec::new("b", 0.2, 8)]).unwrap();
        assert!((plan.total_effective_tokens - 40.0).abs() < 1e-12);
        let factors: Vec<_> = plan.subsets.iter().map(|s| s.oversample_factor).collect();
        let effective: Vec<_> = plan.subsets.iter().map(|s| s.effective_tokens).collect();
        assert!((factors[0] - 4.0).abs() < 1e-12 && (factors[1] - 1.0).abs() < 1e-12);
        assert!((effective[0] - 32.0).abs() < 1e-9 && (effective[1] - 8.0).abs() < 1e-9);
        plan.check_invariants().unwrap();
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(solve_mix_plan(&[]), Err(MixError::EmptyPlan)));
        assert!(matches!(
            solve_mix_plan(&[SubsetSpec::new("a", 0.0, 1), SubsetSpec::new("b", 1.0, 1)]),
            Err(MixError::InvalidWeight { .. })
        ));
        assert!(matches!(
            solve_mix_plan(&[SubsetSpec::new("a", 1.0, 0)]),
            Err(MixError::ZeroRawTokens(_))
        ));
        assert!(matches!(
            solve_mix_plan(&[SubsetSpec::new("a", 0.5, 1), SubsetSpec::new("b", 0.4, 1)]),
            Err(MixError::WeightSum(_))
        ));
        assert!(matches!(
            solve_mix_plan(&[SubsetSpec::new("a", 0.5, 1), SubsetSpec::new("a", 0.5, 1)]),
            Err(MixError::DuplicateSubset(_))
        ));
    }
}
