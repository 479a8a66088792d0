//! Read-only probes of a model's state: attention concentration on
//! label-relevant tokens, lucky-neuron counts, key-feature growth, and token
//! similarity extrema.

use serde::Serialize;
use twofloat::TwoFloat;

use crate::data::{Dataset, PatternDictionary, TokenizedSample};
use crate::error::{Error, Result};
use crate::init::OracleBases;
use crate::linalg::{self, Matrix};
use crate::model::ModelParams;

#[derive(Clone, Debug)]
pub struct ProbeContext {
    pub patterns: PatternDictionary,
    pub oracle_bases: Option<OracleBases>,
    /// Angle bound sigma + tau for lucky neurons.
    pub sigma_tau_threshold: f64,
}

impl ProbeContext {
    pub fn new(patterns: PatternDictionary, oracle_bases: Option<OracleBases>, threshold: f64) -> Result<Self> {
        if !(threshold >= 0.0) {
            return Err(Error::InvalidConfig(format!("lucky-neuron threshold {threshold} must be >= 0")));
        }
        Ok(Self {
            patterns,
            oracle_bases,
            sigma_tau_threshold: threshold,
        })
    }

    /// Context whose threshold is `sigma + tau`, tau being the largest
    /// token noise magnitude in `data`.
    pub fn for_dataset(data: &Dataset, bases: Option<OracleBases>, sigma: f64) -> Result<Self> {
        Self::new(data.patterns.clone(), bases, sigma + data.max_noise())
    }

    fn bases(&self) -> Result<&OracleBases> {
        self.oracle_bases
            .as_ref()
            .ok_or_else(|| Error::UnsupportedProbe("probe needs oracle bases".into()))
    }
}

/// Per-query attention mass on label-relevant tokens, given an attention
/// map over the active set (rows: queries). Each row's mass is its relevant
/// sum over its total, accumulated in double-double: under uniform weights
/// the rounding of 1/|S| cancels and the result is exactly fl(k/|S|).
pub fn relevant_mass_per_query(map: &Matrix, sample: &TokenizedSample) -> Vec<f64> {
    let relevant: Vec<bool> = sample
        .active_set
        .iter()
        .map(|&l| sample.is_label_relevant(l))
        .collect();
    (0..map.rows())
        .map(|l| {
            let (mut num, mut den) = (TwoFloat::from(0.0), TwoFloat::from(0.0));
            for (&w, &rel) in map.row(l).iter().zip(&relevant) {
                den += w;
                if rel {
                    num += w;
                }
            }
            (num / den).hi()
        })
        .collect()
}

/// Mean of per-query masses, exact for equal entries.
pub fn mean_mass(rows: &[f64]) -> f64 {
    let total = rows.iter().fold(TwoFloat::from(0.0), |acc, &x| acc + x);
    (total / rows.len() as f64).hi()
}

/// Attention mass on label-relevant tokens, averaged over all queries.
pub fn attention_concentration(params: &ModelParams, sample: &TokenizedSample) -> Result<f64> {
    let map = params.attention_map(sample)?;
    Ok(mean_mass(&relevant_mass_per_query(&map, sample)))
}

/// The smallest per-query label-relevant mass.
pub fn attention_concentration_min(params: &ModelParams, sample: &TokenizedSample) -> Result<f64> {
    let map = params.attention_map(sample)?;
    Ok(relevant_mass_per_query(&map, sample)
        .into_iter()
        .fold(f64::INFINITY, f64::min))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LuckyCounts {
    /// Rows of W_O within the threshold angle of p_1.
    pub count_w: usize,
    /// Rows of W_O within the threshold angle of p_2.
    pub count_u: usize,
}

pub fn lucky_neuron_count(params: &ModelParams, ctx: &ProbeContext) -> Result<LuckyCounts> {
    let bases = ctx.bases()?;
    let (p1, p2) = (&bases.p[0], &bases.p[1]);
    let mut counts = LuckyCounts { count_w: 0, count_u: 0 };
    for i in 0..params.w_o.rows() {
        let row = params.w_o.row(i);
        if linalg::angle(row, p1).is_some_and(|a| a <= ctx.sigma_tau_threshold) {
            counts.count_w += 1;
        }
        if linalg::angle(row, p2).is_some_and(|a| a <= ctx.sigma_tau_threshold) {
            counts.count_u += 1;
        }
    }
    Ok(counts)
}

/// `<W_K mu_1, q_1>`: the key feature's magnitude along its initial direction.
pub fn qk_growth(params: &ModelParams, ctx: &ProbeContext) -> Result<f64> {
    let bases = ctx.bases()?;
    let key = params.w_k.matvec(ctx.patterns.pattern(0));
    Ok(linalg::dot(&key, &bases.q[0]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SimilarityStats {
    /// Smallest inner product between distinct tokens of the same pattern.
    pub min_same_pattern_ip: Option<f64>,
    /// Largest inner product between tokens of different patterns (lambda).
    pub max_cross_pattern_ip: Option<f64>,
}

/// Extrema over pairs of distinct active tokens within each sample.
pub fn token_similarity_stats(data: &Dataset) -> SimilarityStats {
    let mut min_same: Option<f64> = None;
    let mut max_cross: Option<f64> = None;
    for s in &data.samples {
        for (ii, &i) in s.active_set.iter().enumerate() {
            for &j in &s.active_set[ii + 1..] {
                let ip = linalg::dot(s.token(i), s.token(j));
                if s.assignment[i] == s.assignment[j] {
                    min_same = Some(min_same.map_or(ip, |v| v.min(ip)));
                } else {
                    max_cross = Some(max_cross.map_or(ip, |v| v.max(ip)));
                }
            }
        }
    }
    SimilarityStats {
        min_same_pattern_ip: min_same,
        max_cross_pattern_ip: max_cross,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_dataset, make_patterns, Label, PatternMode, SampleSpec};
    use crate::init::{init_oracle, InitConfig, InitScheme, Xi};
    use crate::model::{ModelDims, Param};

    fn oracle(sigma: f64, delta: f64, tokens: usize) -> (ModelParams, OracleBases, PatternDictionary) {
        let pats = make_patterns(10, 5, PatternMode::Canonical, 0).unwrap();
        let cfg = InitConfig {
            scheme: InitScheme::Oracle,
            sigma,
            delta,
            xi: Xi::Fixed(0.01),
            c0: 0.01,
            literal: false,
            seed: 9,
        };
        let dims = ModelDims { d: 10, m_a: 10, m_b: 10, m: 200, tokens };
        let (p, b) = init_oracle(dims, &cfg, &pats).unwrap();
        (p, b, pats)
    }

    /// 4 tokens: two of pattern 1 (label-relevant), one of pattern 2, one of pattern 3.
    fn four_token_sample(pats: &PatternDictionary) -> TokenizedSample {
        let rows: Vec<Vec<f64>> = [0, 1, 0, 2].iter().map(|&j| pats.pattern(j).to_vec()).collect();
        let tokens = Matrix::from_columns(&rows).unwrap().transpose();
        TokenizedSample::from_parts(tokens, vec![0, 1, 0, 2], vec![0, 1, 2, 3], pats).unwrap()
    }

    #[test]
    fn oracle_attention_on_pattern_one_query() {
        let (params, _, pats) = oracle(0.0, 0.0, 4);
        let s = four_token_sample(&pats);
        assert_eq!(s.label, Label::Positive);
        let w = params.attention_weights(&s, 0).unwrap();
        let e = std::f64::consts::E;
        let want = e / (2.0 * e + 2.0);
        assert!((w[0] - want).abs() < 1e-12 && (w[2] - want).abs() < 1e-12);
        assert!((w[0] - 0.36552).abs() < 1e-5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_concentration_matches_closed_form_rows() {
        let (params, bases, pats) = oracle(0.0, 0.0, 4);
        let s = four_token_sample(&pats);
        let e = std::f64::consts::E;
        // Each row's relevant mass is 2 exp(s1) / (2 exp(s1) + exp(s2) + exp(s3)) where
        // s_j = q_j . r_query; q_1 = r_1 gives 1 on the diagonal pattern.
        let score = |key: usize, query: usize| linalg::dot(&bases.q[key], &bases.r[query]);
        let row = |qp: usize| {
            let e1 = score(0, qp).exp();
            2.0 * e1 / (2.0 * e1 + score(1, qp).exp() + score(2, qp).exp())
        };
        let want = (2.0 * row(0) + row(1) + row(2)) / 4.0;
        let got = attention_concentration(&params, &s).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((row(0) - 2.0 * e / (2.0 * e + 2.0)).abs() < 1e-12);
        assert!((row(0) - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn uniform_attention_concentration_is_alpha_star() {
        let (mut params, _, pats) = oracle(0.0, 0.0, 4);
        params.w_q = Matrix::zeros(10, 10);
        let s = four_token_sample(&pats);
        assert_eq!(attention_concentration(&params, &s).unwrap(), 0.5);
    }

    #[test]
    fn lucky_counts_extremes() {
        let (mut params, bases, pats) = oracle(0.0, 0.0, 4);
        for i in 0..params.w_o.rows() {
            params.w_o.row_mut(i).copy_from_slice(&bases.p[0]);
        }
        let ctx = ProbeContext::new(pats.clone(), Some(bases.clone()), 0.5).unwrap();
        assert_eq!(lucky_neuron_count(&params, &ctx).unwrap(), LuckyCounts { count_w: 200, count_u: 0 });
        let ctx = ProbeContext::new(pats.clone(), Some(bases), std::f64::consts::PI).unwrap();
        assert_eq!(lucky_neuron_count(&params, &ctx).unwrap(), LuckyCounts { count_w: 200, count_u: 200 });
        let ctx = ProbeContext::new(pats, None, 0.5).unwrap();
        assert!(matches!(lucky_neuron_count(&params, &ctx), Err(Error::UnsupportedProbe(_))));
    }

    #[test]
    fn lucky_count_matches_monte_carlo_angle_probability() {
        // Gaussian rows in R^10, threshold 0.2 rad: estimate P(angle <= 0.2) from fresh draws.
        use rand::SeedableRng;
        let (_, bases, pats) = oracle(0.0, 0.0, 4);
        let threshold = 0.2;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let draws = 2_000_000;
        let mut hits = 0usize;
        for _ in 0..draws {
            let v = linalg::gaussian_vector(10, &mut rng);
            if linalg::angle(&v, &bases.p[0]).unwrap() <= threshold {
                hits += 1;
            }
        }
        let prob = hits as f64 / draws as f64;
        // Average over many W_O draws of m = 1000 rows.
        let mut total = 0usize;
        let reps = 200;
        for rep in 0..reps {
            let w_o = Matrix::gaussian(1000, 10, 0.01, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1000 + rep));
            let (mut params, _, _) = oracle(0.0, 0.0, 4);
            params.w_o = w_o;
            let ctx = ProbeContext::new(pats.clone(), Some(bases.clone()), threshold).unwrap();
            total += lucky_neuron_count(&params, &ctx).unwrap().count_w;
        }
        let mean = total as f64 / reps as f64;
        let expect = prob * 1000.0;
        let sd = (1000.0 * prob * (1.0 - prob) / reps as f64).sqrt();
        assert!((mean - expect).abs() <= 3.0 * sd + 1e-3, "mean {mean}, expect {expect}, sd {sd}");
    }

    #[test]
    fn qk_growth_baselines() {
        let (mut params, bases, pats) = oracle(0.0, 0.0, 4);
        let ctx = ProbeContext::new(pats, Some(bases), 0.1).unwrap();
        assert!((qk_growth(&params, &ctx).unwrap() - 1.0).abs() < 1e-12);
        params.w_k = Matrix::zeros(10, 10);
        assert_eq!(qk_growth(&params, &ctx).unwrap(), 0.0);
    }

    #[test]
    fn probes_do_not_mutate() {
        let (params, bases, pats) = oracle(0.1, 0.2, 4);
        let before: Vec<String> = [Param::Query, Param::Key, Param::Value, Param::Output, Param::Readout]
            .iter()
            .map(|&p| params.fingerprint(p))
            .collect();
        let ctx = ProbeContext::new(pats.clone(), Some(bases), 0.3).unwrap();
        let s = four_token_sample(&pats);
        attention_concentration(&params, &s).unwrap();
        lucky_neuron_count(&params, &ctx).unwrap();
        qk_growth(&params, &ctx).unwrap();
        let after: Vec<String> = [Param::Query, Param::Key, Param::Value, Param::Output, Param::Readout]
            .iter()
            .map(|&p| params.fingerprint(p))
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn similarity_of_noiseless_canonical_tokens() {
        let pats = make_patterns(10, 5, PatternMode::Canonical, 0).unwrap();
        let pos = SampleSpec::new(vec![3, 1, 1, 1, 0]).unwrap();
        let neg = SampleSpec::new(vec![1, 3, 1, 1, 0]).unwrap();
        let ds = make_dataset(6, &pos, &neg, &pats, 0.0, false, 1).unwrap();
        let st = token_similarity_stats(&ds);
        assert_eq!(st.min_same_pattern_ip, Some(1.0));
        assert_eq!(st.max_cross_pattern_ip, Some(0.0));

        let mut single = ds.clone();
        for s in &mut single.samples {
            s.active_set = vec![0];
        }
        let st = token_similarity_stats(&single);
        assert_eq!(st.min_same_pattern_ip, None);
        assert_eq!(st.max_cross_pattern_ip, None);
    }

    #[test]
    fn noisy_tokens_stay_separable() {
        let pats = make_patterns(10, 5, PatternMode::Canonical, 0).unwrap();
        let pos = SampleSpec::from_fractions(50, 5, 0.5, 0.05, Label::Positive).unwrap();
        let neg = SampleSpec::from_fractions(50, 5, 0.5, 0.05, Label::Negative).unwrap();
        let mut separable = 0;
        for seed in 0..100 {
            let ds = make_dataset(4, &pos, &neg, &pats, 0.01, false, seed).unwrap();
            let st = token_similarity_stats(&ds);
            if st.max_cross_pattern_ip.unwrap() < st.min_same_pattern_ip.unwrap() {
                separable += 1;
            }
            // tau < kappa / 4
            assert!(ds.max_noise() < pats.kappa() / 4.0);
        }
        assert!(separable >= 99);
    }
}
