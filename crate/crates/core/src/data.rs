//! Structured synthetic data: orthonormal patterns, tokens that are noisy
//! copies of them, and labels fixed by a majority vote between the two
//! discriminative patterns.
//!
//! Pattern indices are zero-based here: patterns 0 and 1 are the
//! discriminative pair, 2.. are non-discriminative.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonfmt;
use crate::linalg::{self, Matrix};
use crate::rng::{self, tag};

/// Index of the pattern whose majority gives `y = +1`.
pub const POSITIVE_PATTERN: usize = 0;
/// Index of the pattern whose majority gives `y = -1`.
pub const NEGATIVE_PATTERN: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    /// The discriminative pattern that is label-relevant for this label.
    pub fn relevant_pattern(self) -> usize {
        match self {
            Label::Positive => POSITIVE_PATTERN,
            Label::Negative => NEGATIVE_PATTERN,
        }
    }

    pub fn confusion_pattern(self) -> usize {
        match self {
            Label::Positive => NEGATIVE_PATTERN,
            Label::Negative => POSITIVE_PATTERN,
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        match l {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = String;
    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            other => Err(format!("label must be +1 or -1, got {other}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenClass {
    LabelRelevant,
    Confusion,
    NonDiscriminative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternMode {
    Canonical,
    RandomOrthonormal,
}

/// `M` orthonormal patterns in `R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternDictionary {
    dim: usize,
    patterns: Vec<Vec<f64>>,
}

impl PatternDictionary {
    /// Wraps externally supplied patterns after checking orthonormality.
    pub fn new(patterns: Vec<Vec<f64>>) -> Result<Self> {
        let count = patterns.len();
        let dim = patterns.first().map_or(0, Vec::len);
        if count <= 2 || count > dim {
            return Err(Error::InvalidConfig(format!(
                "need 2 < M <= d, got M={count}, d={dim}"
            )));
        }
        let gram = Matrix::from_columns(&patterns)?.gram();
        for i in 0..count {
            for j in 0..count {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (gram[(i, j)] - expect).abs() > 1e-10 {
                    return Err(Error::InvalidConfig(format!(
                        "patterns are not orthonormal: <mu_{i}, mu_{j}> = {}",
                        gram[(i, j)]
                    )));
                }
            }
        }
        Ok(Self { dim, patterns })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.patterns.len()
    }

    pub fn pattern(&self, j: usize) -> &[f64] {
        &self.patterns[j]
    }

    pub fn patterns(&self) -> &[Vec<f64>] {
        &self.patterns
    }

    /// Minimum pairwise distance between patterns (sqrt(2) when orthonormal).
    pub fn kappa(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.count() {
            for j in (i + 1)..self.count() {
                best = best.min(linalg::norm(&linalg::sub(&self.patterns[i], &self.patterns[j])));
            }
        }
        best
    }

    /// Gram matrix of the patterns.
    pub fn gram(&self) -> Matrix {
        Matrix::from_columns(&self.patterns)
            .expect("patterns share one dimension")
            .gram()
    }
}

pub fn make_patterns(d: usize, m: usize, mode: PatternMode, seed: u64) -> Result<PatternDictionary> {
    if m <= 2 || m > d {
        return Err(Error::InvalidConfig(format!("need 2 < M <= d, got M={m}, d={d}")));
    }
    let patterns = match mode {
        PatternMode::Canonical => (0..m)
            .map(|j| {
                let mut e = vec![0.0; d];
                e[j] = 1.0;
                e
            })
            .collect(),
        PatternMode::RandomOrthonormal => {
            let mut rng = rng::stream(seed, tag::PATTERNS, 0);
            linalg::random_orthonormal_set(d, m, &[], &mut rng)?
        }
    };
    Ok(PatternDictionary { dim: d, patterns })
}

/// +1 when pattern 0 outnumbers pattern 1, -1 when pattern 1 does.
pub fn majority_label(counts: &[usize]) -> Result<Label> {
    if counts.len() < 2 {
        return Err(Error::InvalidConfig(
            "counts must cover both discriminative patterns".into(),
        ));
    }
    match counts[POSITIVE_PATTERN].cmp(&counts[NEGATIVE_PATTERN]) {
        std::cmp::Ordering::Greater => Ok(Label::Positive),
        std::cmp::Ordering::Less => Ok(Label::Negative),
        std::cmp::Ordering::Equal => Err(Error::Tie(counts[0])),
    }
}

/// Tokens per pattern for one sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleSpec {
    counts: Vec<usize>,
}

impl SampleSpec {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        majority_label(&counts)?;
        if counts.iter().sum::<usize>() == 0 {
            return Err(Error::InvalidConfig("a sample needs at least one token".into()));
        }
        Ok(Self { counts })
    }

    /// Composition with about `alpha_star * L` label-relevant and
    /// `alpha_confusion * L` confusion tokens; the remainder is spread evenly
    /// over the non-discriminative patterns, lower indices first.
    ///
    /// Exact halves round up for the positive class and down for the
    /// negative class, so a balanced dataset averages to the requested
    /// fractions (e.g. alpha_# = 0.05 at L = 50 gives 3 and 2 tokens).
    pub fn from_fractions(
        tokens: usize,
        patterns: usize,
        alpha_star: f64,
        alpha_confusion: f64,
        label: Label,
    ) -> Result<Self> {
        if patterns <= 2 {
            return Err(Error::InvalidConfig(format!("need M > 2, got {patterns}")));
        }
        if !(0.0..=1.0).contains(&alpha_star)
            || !(0.0..=1.0).contains(&alpha_confusion)
            || alpha_star + alpha_confusion > 1.0 + 1e-12
        {
            return Err(Error::InvalidConfig(format!(
                "fractions alpha_*={alpha_star}, alpha_#={alpha_confusion} are not a valid split"
            )));
        }
        let round = |x: f64| match label {
            Label::Positive => (x + 0.5 + 1e-9).floor().max(0.0) as usize,
            Label::Negative => (x - 0.5 - 1e-9).ceil().max(0.0) as usize,
        };
        let relevant = round(alpha_star * tokens as f64);
        let confusion = round(alpha_confusion * tokens as f64);
        if relevant <= confusion {
            return Err(Error::InvalidConfig(format!(
                "{relevant} label-relevant tokens do not outnumber {confusion} confusion tokens"
            )));
        }
        if relevant + confusion > tokens {
            return Err(Error::InvalidConfig(format!(
                "{relevant} + {confusion} discriminative tokens exceed L = {tokens}"
            )));
        }
        let rest = tokens - relevant - confusion;
        let nd = patterns - 2;
        let mut counts = vec![0; patterns];
        counts[label.relevant_pattern()] = relevant;
        counts[label.confusion_pattern()] = confusion;
        for k in 0..nd {
            counts[2 + k] = rest / nd + usize::from(k < rest % nd);
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Total token count L.
    pub fn len(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self) -> Label {
        majority_label(&self.counts).expect("validated at construction")
    }

    /// (alpha_*, alpha_#, alpha_nd) of this composition.
    pub fn fractions(&self) -> (f64, f64, f64) {
        let l = self.len() as f64;
        let label = self.label();
        let rel = self.counts[label.relevant_pattern()] as f64;
        let conf = self.counts[label.confusion_pattern()] as f64;
        (rel / l, conf / l, (l - rel - conf) / l)
    }
}

/// One data point. Row `l` of `tokens` is token `x_l` (so `tokens` is X^T).
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizedSample {
    pub tokens: Matrix,
    pub label: Label,
    pub assignment: Vec<usize>,
    pub active_set: Vec<usize>,
    pub noise_magnitudes: Vec<f64>,
}

impl TokenizedSample {
    /// Assembles a sample, recomputing the label and noise magnitudes.
    pub fn from_parts(
        tokens: Matrix,
        assignment: Vec<usize>,
        active_set: Vec<usize>,
        patterns: &PatternDictionary,
    ) -> Result<Self> {
        if tokens.rows() != assignment.len() || tokens.cols() != patterns.dim() {
            return Err(Error::DimensionMismatch(format!(
                "tokens are {}x{}, expected {}x{}",
                tokens.rows(),
                tokens.cols(),
                assignment.len(),
                patterns.dim()
            )));
        }
        if let Some(&bad) = assignment.iter().find(|&&j| j >= patterns.count()) {
            return Err(Error::Index(format!("pattern index {bad} out of range")));
        }
        validate_active_set(&active_set, assignment.len())?;
        let mut counts = vec![0; patterns.count()];
        assignment.iter().for_each(|&j| counts[j] += 1);
        let label = majority_label(&counts)?;
        let noise_magnitudes = (0..assignment.len())
            .map(|l| linalg::norm(&linalg::sub(tokens.row(l), patterns.pattern(assignment[l]))))
            .collect();
        Ok(Self {
            tokens,
            label,
            assignment,
            active_set,
            noise_magnitudes,
        })
    }

    /// Total token count L (active or not).
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn token(&self, l: usize) -> &[f64] {
        self.tokens.row(l)
    }

    pub fn class_of(&self, l: usize) -> TokenClass {
        let j = self.assignment[l];
        if j == self.label.relevant_pattern() {
            TokenClass::LabelRelevant
        } else if j == self.label.confusion_pattern() {
            TokenClass::Confusion
        } else {
            TokenClass::NonDiscriminative
        }
    }

    pub fn is_label_relevant(&self, l: usize) -> bool {
        self.class_of(l) == TokenClass::LabelRelevant
    }

    /// Per-pattern token counts over all L tokens.
    pub fn counts(&self, patterns: usize) -> Vec<usize> {
        let mut counts = vec![0; patterns];
        self.assignment.iter().for_each(|&j| counts[j] += 1);
        counts
    }
}

pub(crate) fn validate_active_set(active: &[usize], len: usize) -> Result<()> {
    if active.is_empty() {
        return Err(Error::InvalidConfig("active set is empty".into()));
    }
    if active.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("active set must be sorted and duplicate-free".into()));
    }
    if *active.last().unwrap() >= len {
        return Err(Error::Index(format!("active set exceeds L = {len}")));
    }
    Ok(())
}

/// Draws one sample: each token is its pattern plus N(0, c0^2 I) noise,
/// optionally renormalized, in a seeded random order.
pub fn sample_tokens(
    spec: &SampleSpec,
    patterns: &PatternDictionary,
    c0: f64,
    normalize: bool,
    seed: u64,
) -> Result<TokenizedSample> {
    if spec.counts().len() != patterns.count() {
        return Err(Error::InvalidConfig(format!(
            "composition has {} entries for {} patterns",
            spec.counts().len(),
            patterns.count()
        )));
    }
    if !(c0 >= 0.0 && c0.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise scale c0 = {c0} must be >= 0")));
    }
    let mut rng = rng::stream(seed, tag::SAMPLE, 0);
    let mut assignment: Vec<usize> = spec
        .counts()
        .iter()
        .enumerate()
        .flat_map(|(j, &n)| std::iter::repeat_n(j, n))
        .collect();
    assignment.shuffle(&mut rng);

    let d = patterns.dim();
    let mut tokens = Matrix::zeros(assignment.len(), d);
    for (l, &j) in assignment.iter().enumerate() {
        let row = tokens.row_mut(l);
        row.copy_from_slice(patterns.pattern(j));
        if c0 > 0.0 {
            for v in row.iter_mut() {
                *v += c0 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        if normalize {
            let n = linalg::norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
    }
    let active = (0..assignment.len()).collect();
    TokenizedSample::from_parts(tokens, assignment, active, patterns)
}

/// A balanced labeled dataset sharing one composition per class.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub patterns: PatternDictionary,
    pub samples: Vec<TokenizedSample>,
    pub positive: SampleSpec,
    pub negative: SampleSpec,
    pub noise_scale: f64,
    pub normalize: bool,
}

/// ceil(N/2) positive and floor(N/2) negative samples, shuffled. Sample `i`
/// (before shuffling) is seeded from `(seed, i)`.
pub fn make_dataset(
    n: usize,
    positive: &SampleSpec,
    negative: &SampleSpec,
    patterns: &PatternDictionary,
    c0: f64,
    normalize: bool,
    seed: u64,
) -> Result<Dataset> {
    if positive.label() != Label::Positive {
        return Err(Error::InvalidConfig("positive composition yields label -1".into()));
    }
    if negative.label() != Label::Negative {
        return Err(Error::InvalidConfig("negative composition yields label +1".into()));
    }
    if positive.len() != negative.len() {
        return Err(Error::InvalidConfig(format!(
            "class compositions have different L ({} vs {})",
            positive.len(),
            negative.len()
        )));
    }
    let n_pos = n.div_ceil(2);
    let mut samples = (0..n)
        .map(|i| {
            let spec = if i < n_pos { positive } else { negative };
            sample_tokens(spec, patterns, c0, normalize, rng::derive_seed(seed, tag::SAMPLE, i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    samples.shuffle(&mut rng::stream(seed, tag::DATASET_ORDER, 0));
    Ok(Dataset {
        patterns: patterns.clone(),
        samples,
        positive: positive.clone(),
        negative: negative.clone(),
        noise_scale: c0,
        normalize,
    })
}

/// Extra corruption on a random subset of every sample's tokens: tokens
/// that carry significant noise, which `drop_noisy` can target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierNoise {
    /// Fraction of each sample's L tokens hit, rounded to the nearest count.
    pub fraction: f64,
    /// Standard deviation of the added N(0, scale^2 I) noise.
    pub scale: f64,
}

impl OutlierNoise {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) || !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "outlier noise needs fraction in [0, 1] and scale >= 0, got {} and {}",
                self.fraction, self.scale
            )));
        }
        Ok(())
    }
}

/// Adds `noise` to `round(fraction * L)` seeded random tokens per sample.
/// Assignments and labels are unchanged; noise magnitudes are recomputed.
pub fn add_outlier_noise(ds: &Dataset, noise: OutlierNoise, seed: u64) -> Result<Dataset> {
    noise.validate()?;
    let mut out = ds.clone();
    for (i, s) in out.samples.iter_mut().enumerate() {
        let l = s.len();
        let hit = ((noise.fraction * l as f64).round() as usize).min(l);
        let mut rng = rng::stream(seed, tag::OUTLIERS, i as u64);
        let chosen = rand::seq::index::sample(&mut rng, l, hit);
        let mut tokens = s.tokens.clone();
        for t in chosen {
            let row = tokens.row_mut(t);
            for v in row.iter_mut() {
                *v += noise.scale * rng.sample::<f64, _>(StandardNormal);
            }
            if ds.normalize {
                let n = linalg::norm(row);
                if n > 0.0 {
                    row.iter_mut().for_each(|v| *v /= n);
                }
            }
        }
        *s = TokenizedSample::from_parts(tokens, s.assignment.clone(), s.active_set.clone(), &ds.patterns)?;
    }
    Ok(out)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Common token count L.
    pub fn tokens_per_sample(&self) -> usize {
        self.positive.len()
    }

    /// Pooled (alpha_*, alpha_#, alpha_nd): class counts over every active
    /// token in the dataset divided once by the total, so a fixed composition
    /// reproduces its configured fractions exactly.
    pub fn fractions(&self) -> (f64, f64, f64) {
        let (mut rel, mut conf, mut total) = (0usize, 0usize, 0usize);
        for s in &self.samples {
            for &l in &s.active_set {
                match s.class_of(l) {
                    TokenClass::LabelRelevant => rel += 1,
                    TokenClass::Confusion => conf += 1,
                    TokenClass::NonDiscriminative => {}
                }
            }
            total += s.active_set.len();
        }
        let n = total.max(1) as f64;
        (rel as f64 / n, conf as f64 / n, (total - rel - conf) as f64 / n)
    }

    /// Largest token noise magnitude (tau) over all tokens.
    pub fn max_noise(&self) -> f64 {
        self.samples
            .iter()
            .flat_map(|s| s.noise_magnitudes.iter().copied())
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        jsonfmt::to_string(&DatasetFile::from(self))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    d: usize,
    #[serde(rename = "M")]
    m: usize,
    c0: f64,
    normalize: bool,
    positive_counts: SampleSpec,
    negative_counts: SampleSpec,
    patterns: Vec<Vec<f64>>,
    samples: Vec<SampleRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    y: Label,
    assignment: Vec<usize>,
    active_set: Vec<usize>,
    /// X (d x L), row-major.
    tokens: Vec<f64>,
}

impl From<&Dataset> for DatasetFile {
    fn from(ds: &Dataset) -> Self {
        let samples = ds
            .samples
            .iter()
            .map(|s| SampleRecord {
                y: s.label,
                assignment: s.assignment.clone(),
                active_set: s.active_set.clone(),
                tokens: s.tokens.transpose().as_slice().to_vec(),
            })
            .collect();
        DatasetFile {
            d: ds.patterns.dim(),
            m: ds.patterns.count(),
            c0: ds.noise_scale,
            normalize: ds.normalize,
            positive_counts: ds.positive.clone(),
            negative_counts: ds.negative.clone(),
            patterns: ds.patterns.patterns().to_vec(),
            samples,
        }
    }
}

impl TryFrom<DatasetFile> for Dataset {
    type Error = Error;

    fn try_from(f: DatasetFile) -> Result<Self> {
        let patterns = PatternDictionary::new(f.patterns)?;
        if patterns.dim() != f.d || patterns.count() != f.m {
            return Err(Error::DimensionMismatch(format!(
                "header says d={}, M={} but patterns are {}x{}",
                f.d,
                f.m,
                patterns.count(),
                patterns.dim()
            )));
        }
        let positive = SampleSpec::new(f.positive_counts.counts)?;
        let negative = SampleSpec::new(f.negative_counts.counts)?;
        let samples = f
            .samples
            .into_iter()
            .enumerate()
            .map(|(i, rec)| {
                let x = Matrix::from_vec(f.d, rec.assignment.len(), rec.tokens)?;
                let s = TokenizedSample::from_parts(x.transpose(), rec.assignment, rec.active_set, &patterns)?;
                if s.label != rec.y {
                    return Err(Error::InvalidConfig(format!(
                        "sample {i}: stored label disagrees with its majority vote"
                    )));
                }
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            patterns,
            samples,
            positive,
            negative,
            noise_scale: f.c0,
            normalize: f.normalize,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outliers_hit_the_requested_count_only() {
        let p = canonical(10, 5);
        let pos = SampleSpec::new(vec![6, 2, 1, 1, 0]).unwrap();
        let neg = SampleSpec::new(vec![2, 6, 1, 1, 0]).unwrap();
        let ds = make_dataset(6, &pos, &neg, &p, 0.0, false, 2).unwrap();
        let noise = OutlierNoise { fraction: 0.3, scale: 0.5 };
        let noisy = add_outlier_noise(&ds, noise, 4).unwrap();
        for (a, b) in ds.samples.iter().zip(&noisy.samples) {
            assert_eq!(a.assignment, b.assignment);
            assert_eq!(a.label, b.label);
            assert_eq!(b.noise_magnitudes.iter().filter(|&&m| m > 0.0).count(), 3);
        }
        assert_eq!(add_outlier_noise(&ds, noise, 4).unwrap(), noisy);
        let back = Dataset::from_json(&noisy.to_json().unwrap()).unwrap();
        assert_eq!(back, noisy);
        assert!(add_outlier_noise(&ds, OutlierNoise { fraction: 1.5, scale: 0.1 }, 0).is_err());
    }

    fn canonical(d: usize, m: usize) -> PatternDictionary {
        make_patterns(d, m, PatternMode::Canonical, 0).unwrap()
    }

    #[test]
    fn canonical_patterns_are_standard_basis() {
        let p = canonical(5, 3);
        assert_eq!(p.pattern(0), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.pattern(2), &[0.0, 0.0, 1.0, 0.0, 0.0]);
        let g = p.gram();
        assert_eq!(g, Matrix::identity(3));
        assert!((p.kappa() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn random_patterns_have_identity_gram() {
        let p = make_patterns(10, 5, PatternMode::RandomOrthonormal, 1).unwrap();
        let g = p.gram();
        for i in 0..5 {
            for j in 0..5 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pattern_count_bounds() {
        assert!(make_patterns(5, 2, PatternMode::Canonical, 0).is_err());
        assert!(make_patterns(5, 6, PatternMode::Canonical, 0).is_err());
        assert!(make_patterns(5, 5, PatternMode::Canonical, 0).is_ok());
    }

    #[test]
    fn majority_vote() {
        assert_eq!(majority_label(&[5, 3, 0, 0, 0]).unwrap(), Label::Positive);
        assert_eq!(majority_label(&[1, 2, 7, 0, 0]).unwrap(), Label::Negative);
        assert!(matches!(majority_label(&[2, 2, 1, 0, 0]), Err(Error::Tie(2))));
    }

    #[test]
    fn noiseless_tokens_equal_patterns() {
        let p = canonical(5, 3);
        let s = sample_tokens(&SampleSpec::new(vec![3, 1, 1]).unwrap(), &p, 0.0, false, 9).unwrap();
        assert_eq!(s.label, Label::Positive);
        assert_eq!(s.active_set, vec![0, 1, 2, 3, 4]);
        for l in 0..s.len() {
            assert_eq!(s.token(l), p.pattern(s.assignment[l]));
            assert_eq!(s.noise_magnitudes[l], 0.0);
        }
        let s = sample_tokens(&SampleSpec::new(vec![1, 2, 0]).unwrap(), &p, 0.0, false, 9).unwrap();
        assert_eq!(s.label, Label::Negative);
    }

    #[test]
    fn normalized_tokens_have_unit_norm() {
        let p = canonical(10, 5);
        let spec = SampleSpec::new(vec![4, 2, 1, 1, 2]).unwrap();
        let s = sample_tokens(&spec, &p, 0.3, true, 4).unwrap();
        for l in 0..s.len() {
            assert!((linalg::norm(s.token(l)) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn mean_noise_magnitude_tracks_chi_mean() {
        // E||N(0, c0^2 I_d)|| = c0 * sqrt(2) * Gamma((d+1)/2) / Gamma(d/2) ~ c0 sqrt(d).
        let p = canonical(10, 3);
        let spec = SampleSpec::new(vec![50, 5, 45]).unwrap();
        let c0 = 0.01;
        let mut total = 0.0;
        let mut count = 0usize;
        for seed in 0..100 {
            let s = sample_tokens(&spec, &p, c0, false, seed).unwrap();
            total += s.noise_magnitudes.iter().sum::<f64>();
            count += s.len();
        }
        let mean = total / count as f64;
        let expect = c0 * 10f64.sqrt();
        assert!((mean - expect).abs() < 0.2 * expect, "mean {mean} vs {expect}");
    }

    #[test]
    fn dataset_is_balanced() {
        let p = canonical(10, 5);
        let pos = SampleSpec::new(vec![3, 1, 1, 0, 0]).unwrap();
        let neg = SampleSpec::new(vec![1, 3, 1, 0, 0]).unwrap();
        for (n, want) in [(4, 2), (5, 3)] {
            let ds = make_dataset(n, &pos, &neg, &p, 0.0, false, 1).unwrap();
            let positives = ds.samples.iter().filter(|s| s.label == Label::Positive).count();
            assert_eq!(positives, want);
        }
        assert!(make_dataset(4, &neg, &pos, &p, 0.0, false, 1).is_err());
    }

    #[test]
    fn from_fractions_matches_attention_trace_composition() {
        let pos = SampleSpec::from_fractions(50, 5, 0.5, 0.05, Label::Positive).unwrap();
        assert_eq!(pos.counts(), &[25, 3, 8, 7, 7]);
        let neg = SampleSpec::from_fractions(50, 5, 0.5, 0.05, Label::Negative).unwrap();
        assert_eq!(neg.counts(), &[2, 25, 8, 8, 7]);
        let p = make_patterns(10, 5, PatternMode::Canonical, 0).unwrap();
        let ds = make_dataset(200, &pos, &neg, &p, 0.01, false, 3).unwrap();
        for s in &ds.samples {
            assert_eq!(s.len(), 50);
            assert_eq!((0..50).filter(|&l| s.is_label_relevant(l)).count(), 25);
        }
        let (a_star, a_conf, a_nd) = ds.fractions();
        assert!((a_star - 0.5).abs() < 1e-12);
        assert!((a_conf - 0.05).abs() < 1e-12);
        assert!((a_nd - 0.45).abs() < 1e-12);
        assert!(SampleSpec::from_fractions(10, 5, 0.1, 0.1, Label::Positive).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_identical() {
        let p = make_patterns(6, 4, PatternMode::RandomOrthonormal, 2).unwrap();
        let pos = SampleSpec::new(vec![3, 1, 1, 1]).unwrap();
        let neg = SampleSpec::new(vec![1, 3, 1, 1]).unwrap();
        let ds = make_dataset(5, &pos, &neg, &p, 0.05, false, 8).unwrap();
        let text = ds.to_json().unwrap();
        let back = Dataset::from_json(&text).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_json().unwrap(), text);
    }
}
