//! Token sparsification: shrink a sample's active set before training.
//!
//! Strategies use the ground-truth assignments and noise magnitudes. Tokens,
//! assignments and the label are never touched; only `active_set` changes.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TokenClass, TokenizedSample};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SparsifyStrategy {
    KeepAll,
    /// Uniformly random `k`-subset.
    RandomK { k: usize },
    /// Label-relevant first, then confusion, then non-discriminative.
    DropIrrelevant { k: usize },
    /// The `k` least noisy tokens.
    DropNoisy { k: usize },
}

impl SparsifyStrategy {
    pub fn target_size(&self) -> Option<usize> {
        match *self {
            SparsifyStrategy::KeepAll => None,
            SparsifyStrategy::RandomK { k }
            | SparsifyStrategy::DropIrrelevant { k }
            | SparsifyStrategy::DropNoisy { k } => Some(k),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SparsifyStrategy::KeepAll => "keep_all",
            SparsifyStrategy::RandomK { .. } => "random_k",
            SparsifyStrategy::DropIrrelevant { .. } => "drop_irrelevant",
            SparsifyStrategy::DropNoisy { .. } => "drop_noisy",
        }
    }

    /// Same kind with a different target size (`keep_all` is unchanged).
    pub fn with_k(&self, k: usize) -> Self {
        match self {
            SparsifyStrategy::KeepAll => SparsifyStrategy::KeepAll,
            SparsifyStrategy::RandomK { .. } => SparsifyStrategy::RandomK { k },
            SparsifyStrategy::DropIrrelevant { .. } => SparsifyStrategy::DropIrrelevant { k },
            SparsifyStrategy::DropNoisy { .. } => SparsifyStrategy::DropNoisy { k },
        }
    }
}

fn class_rank(c: TokenClass) -> u8 {
    match c {
        TokenClass::LabelRelevant => 0,
        TokenClass::Confusion => 1,
        TokenClass::NonDiscriminative => 2,
    }
}

/// Copy of `sample` whose active set is restricted to `k` of its currently
/// active tokens, chosen by `strategy`.
pub fn sparsify(sample: &TokenizedSample, strategy: SparsifyStrategy, seed: u64) -> Result<TokenizedSample> {
    let Some(k) = strategy.target_size() else {
        return Ok(sample.clone());
    };
    let available = sample.active_set.len();
    if k == 0 || k > available {
        return Err(Error::InvalidConfig(format!(
            "sparsification target k = {k} must lie in 1..={available}"
        )));
    }
    let mut keep: Vec<usize> = match strategy {
        SparsifyStrategy::KeepAll => unreachable!(),
        SparsifyStrategy::RandomK { .. } => {
            let mut rng = rng::stream(seed, tag::SPARSIFY, 0);
            index::sample(&mut rng, available, k)
                .into_iter()
                .map(|i| sample.active_set[i])
                .collect()
        }
        SparsifyStrategy::DropIrrelevant { .. } => {
            let mut ranked = sample.active_set.clone();
            ranked.sort_by_key(|&l| (class_rank(sample.class_of(l)), l));
            ranked.truncate(k);
            ranked
        }
        SparsifyStrategy::DropNoisy { .. } => {
            let mut ranked = sample.active_set.clone();
            ranked.sort_by(|&a, &b| {
                sample.noise_magnitudes[a]
                    .total_cmp(&sample.noise_magnitudes[b])
                    .then(a.cmp(&b))
            });
            ranked.truncate(k);
            ranked
        }
    };
    keep.sort_unstable();
    let mut out = sample.clone();
    out.active_set = keep;
    Ok(out)
}

/// Applies `strategy` to every sample; sample `i` uses seed `(seed, i)`.
pub fn sparsify_dataset(ds: &Dataset, strategy: SparsifyStrategy, seed: u64) -> Result<Dataset> {
    let samples = ds
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| sparsify(s, strategy, rng::derive_seed(seed, tag::SPARSIFY, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        samples,
        ..ds.clone()
    })
}

/// Fractions (alpha_*, alpha_#, alpha_nd) of the active set.
pub fn effective_fractions(sample: &TokenizedSample) -> (f64, f64, f64) {
    let mut counts = [0usize; 3];
    for &l in &sample.active_set {
        counts[class_rank(sample.class_of(l)) as usize] += 1;
    }
    let n = sample.active_set.len().max(1) as f64;
    (counts[0] as f64 / n, counts[1] as f64 / n, counts[2] as f64 / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_patterns, sample_tokens, Label, PatternMode, SampleSpec};
    use proptest::prelude::*;

    fn sample(c0: f64, seed: u64) -> TokenizedSample {
        let p = make_patterns(10, 5, PatternMode::Canonical, 0).unwrap();
        let spec = SampleSpec::from_fractions(50, 5, 0.5, 0.05, Label::Positive).unwrap();
        sample_tokens(&spec, &p, c0, false, seed).unwrap()
    }

    #[test]
    fn keep_all_is_identity() {
        let s = sample(0.01, 1);
        assert_eq!(sparsify(&s, SparsifyStrategy::KeepAll, 0).unwrap(), s);
        let (a, b, c) = effective_fractions(&s);
        assert_eq!((a, b, c), (0.5, 0.06, 0.44));
    }

    #[test]
    fn drop_irrelevant_keeps_label_relevant_tokens() {
        let s = sample(0.01, 2);
        let out = sparsify(&s, SparsifyStrategy::DropIrrelevant { k: 30 }, 0).unwrap();
        let relevant = out.active_set.iter().filter(|&&l| s.is_label_relevant(l)).count();
        assert_eq!(relevant, 25);
        // 25 relevant plus the 3 confusion tokens, then the 2 lowest-index others.
        let conf = out
            .active_set
            .iter()
            .filter(|&&l| s.class_of(l) == TokenClass::Confusion)
            .count();
        assert_eq!(conf, 3);
        let (a, _, _) = effective_fractions(&out);
        assert_eq!(a, 25.0 / 30.0);
        let out = sparsify(&s, SparsifyStrategy::DropIrrelevant { k: 25 }, 0).unwrap();
        assert_eq!(effective_fractions(&out), (1.0, 0.0, 0.0));
    }

    #[test]
    fn drop_noisy_breaks_ties_by_index() {
        let s = sample(0.0, 3);
        let out = sparsify(&s, SparsifyStrategy::DropNoisy { k: 7 }, 0).unwrap();
        assert_eq!(out.active_set, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn random_k_with_full_size_is_keep_all() {
        let s = sample(0.01, 4);
        let out = sparsify(&s, SparsifyStrategy::RandomK { k: 50 }, 17).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn oversized_target_is_rejected() {
        let s = sample(0.01, 5);
        assert!(sparsify(&s, SparsifyStrategy::DropNoisy { k: 51 }, 0).is_err());
        assert!(sparsify(&s, SparsifyStrategy::RandomK { k: 0 }, 0).is_err());
    }

    #[test]
    fn random_k_preserves_fractions_in_expectation() {
        let s = sample(0.01, 6);
        let mut acc = (0.0, 0.0, 0.0);
        for seed in 0..1000 {
            let f = effective_fractions(&sparsify(&s, SparsifyStrategy::RandomK { k: 20 }, seed).unwrap());
            acc.0 += f.0;
            acc.1 += f.1;
            acc.2 += f.2;
        }
        let orig = effective_fractions(&s);
        assert!((acc.0 / 1000.0 - orig.0).abs() < 0.05);
        assert!((acc.1 / 1000.0 - orig.1).abs() < 0.05);
        assert!((acc.2 / 1000.0 - orig.2).abs() < 0.05);
    }

    #[test]
    fn strategy_json_shape() {
        let s: SparsifyStrategy = serde_json::from_str(r#"{"kind": "drop_noisy", "k": 50}"#).unwrap();
        assert_eq!(s, SparsifyStrategy::DropNoisy { k: 50 });
        let s: SparsifyStrategy = serde_json::from_str(r#"{"kind": "keep_all"}"#).unwrap();
        assert_eq!(s, SparsifyStrategy::KeepAll);
    }

    proptest! {
        #[test]
        fn sparsify_invariants(seed in 0u64..500, k in 1usize..=50, kind in 0u8..3) {
            let s = sample(0.05, seed);
            let strat = match kind {
                0 => SparsifyStrategy::RandomK { k },
                1 => SparsifyStrategy::DropIrrelevant { k },
                _ => SparsifyStrategy::DropNoisy { k },
            };
            let out = sparsify(&s, strat, seed).unwrap();
            prop_assert_eq!(out.active_set.len(), k);
            prop_assert!(out.active_set.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(&out.tokens, &s.tokens);
            prop_assert_eq!(&out.assignment, &s.assignment);
            prop_assert_eq!(out.label, s.label);
            match strat {
                SparsifyStrategy::DropIrrelevant { .. } => {
                    prop_assert!(effective_fractions(&out).0 >= effective_fractions(&s).0);
                    prop_assert_eq!(sparsify(&out, strat, seed).unwrap(), out.clone());
                }
                SparsifyStrategy::DropNoisy { .. } => {
                    let max_of = |t: &TokenizedSample| t.active_set.iter()
                        .map(|&l| t.noise_magnitudes[l]).fold(0.0, f64::max);
                    prop_assert!(max_of(&out) <= max_of(&s));
                    prop_assert_eq!(sparsify(&out, strat, seed).unwrap(), out.clone());
                }
                _ => {}
            }
        }
    }
}
