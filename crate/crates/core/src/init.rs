//! Initial parameters.
//!
//! Two schemes:
//!
//! * `experiment`: identity-shaped attention and a random orthonormal value
//!   map, perturbed by delta- and sigma-scaled Gaussian noise. With
//!   `literal = true` the raw `(delta^2 / c0^2) I` and `(sigma^2 / c0^2) U`
//!   scalings are used instead (these overflow the softmax at the usual
//!   settings and are kept only for comparison).
//! * `oracle`: value/key/query maps built from three orthonormal bases
//!   `P, Q, R` (with `q_1 = r_1`, `q_2 = r_2`) so that
//!   `||W_V mu_j - p_j|| = sigma`, `||W_K mu_j - q_j|| = delta` and
//!   `||W_Q mu_j - r_j|| = delta` hold with equality.
//!
//! The readout `A` and the hidden layer `W_O` depend only on the seed, never
//! on the scheme.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::PatternDictionary;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::{ModelDims, ModelParams, TrainableMask};
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    Experiment,
    Oracle,
}

/// Standard deviation of the `W_O` entries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Xi {
    Fixed(f64),
    Rule(XiRule),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiRule {
    /// xi = 1 / sqrt(M).
    InvSqrtM,
}

impl Xi {
    pub fn value(&self, patterns: usize) -> f64 {
        match *self {
            Xi::Fixed(v) => v,
            Xi::Rule(XiRule::InvSqrtM) => 1.0 / (patterns as f64).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub scheme: InitScheme,
    pub sigma: f64,
    pub delta: f64,
    #[serde(default = "default_xi")]
    pub xi: Xi,
    #[serde(default = "default_c0")]
    pub c0: f64,
    #[serde(default)]
    pub literal: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_xi() -> Xi {
    Xi::Fixed(0.01)
}

fn default_c0() -> f64 {
    0.01
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        let xi_ok = match self.xi {
            Xi::Fixed(v) => v >= 0.0 && v.is_finite(),
            Xi::Rule(_) => true,
        };
        if !(self.sigma >= 0.0 && self.delta >= 0.0 && xi_ok) {
            return Err(Error::InvalidConfig(format!(
                "sigma, delta, xi must be >= 0 (got {}, {}, {:?})",
                self.sigma, self.delta, self.xi
            )));
        }
        if self.scheme == InitScheme::Oracle && (self.sigma > 2.0 || self.delta > 2.0) {
            return Err(Error::InvalidConfig(
                "oracle perturbation radii above 2 cannot keep unit-norm features".into(),
            ));
        }
        if self.literal && self.c0 <= 0.0 {
            return Err(Error::InvalidConfig("literal scaling divides by c0, which must be > 0".into()));
        }
        Ok(())
    }

    /// Soft conditions worth reporting but not enforcing.
    pub fn warnings(&self, patterns: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.sigma > 1.0 / patterns as f64 {
            out.push(format!(
                "sigma = {} exceeds 1/M = {:.3}; value features may not separate",
                self.sigma,
                1.0 / patterns as f64
            ));
        }
        if self.delta >= 0.5 {
            out.push(format!("delta = {} is not below 1/2", self.delta));
        }
        out
    }
}

/// The three orthonormal feature sets the initial maps are measured against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleBases {
    /// Value features p_j in R^{m_a}.
    pub p: Vec<Vec<f64>>,
    /// Key features q_j in R^{m_b}.
    pub q: Vec<Vec<f64>>,
    /// Query features r_j in R^{m_b}.
    pub r: Vec<Vec<f64>>,
    /// True when the bases are a best fit rather than the construction's own.
    pub advisory: bool,
}

fn readout_and_hidden(dims: &ModelDims, cfg: &InitConfig, patterns: usize) -> (Matrix, Matrix) {
    let mut rng = rng::stream(cfg.seed, tag::INIT_OUTPUT, 0);
    let mag = 1.0 / (dims.m as f64).sqrt();
    let mut a = Matrix::zeros(dims.tokens, dims.m);
    // Drawn column by column of A (m x L), stored as rows of A^T.
    for l in 0..dims.tokens {
        for v in a.row_mut(l) {
            *v = if rng.random::<bool>() { mag } else { -mag };
        }
    }
    let mut rng = rng::stream(cfg.seed, tag::INIT_HIDDEN, 0);
    let w_o = Matrix::gaussian(dims.m, dims.m_a, cfg.xi.value(patterns), &mut rng);
    (a, w_o)
}

fn check_dims(dims: &ModelDims, patterns: &PatternDictionary) -> Result<()> {
    if dims.d != patterns.dim() {
        return Err(Error::DimensionMismatch(format!(
            "model token dimension {} differs from pattern dimension {}",
            dims.d,
            patterns.dim()
        )));
    }
    if dims.m == 0 || dims.tokens == 0 {
        return Err(Error::InvalidConfig("m and L must be positive".into()));
    }
    Ok(())
}

fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Result<Matrix> {
    let cols = linalg::random_orthonormal_set(n, n, &[], rng)?;
    Matrix::from_columns(&cols)
}

pub fn init_experiment(dims: ModelDims, cfg: &InitConfig, patterns: &PatternDictionary) -> Result<ModelParams> {
    cfg.validate()?;
    check_dims(&dims, patterns)?;
    if dims.m_a != dims.d || dims.m_b != dims.d {
        return Err(Error::InvalidConfig(format!(
            "experiment init needs m_a = m_b = d, got m_a={}, m_b={}, d={}",
            dims.m_a, dims.m_b, dims.d
        )));
    }
    let (a, w_o) = readout_and_hidden(&dims, cfg, patterns.count());
    let d = dims.d;
    let u = random_orthogonal(d, &mut rng::stream(cfg.seed, tag::INIT_VALUE, 0))?;
    let (w_q, w_k, w_v) = if cfg.literal {
        let qk = cfg.delta * cfg.delta / (cfg.c0 * cfg.c0);
        let v = cfg.sigma * cfg.sigma / (cfg.c0 * cfg.c0);
        (Matrix::identity(d).scaled(qk), Matrix::identity(d).scaled(qk), u.scaled(v))
    } else {
        // Entries N(0, 1/d) so that ||E mu|| is about 1 for a unit pattern.
        let noise_std = 1.0 / (d as f64).sqrt();
        let mut w_q = Matrix::identity(d);
        w_q.add_scaled(
            cfg.delta,
            &Matrix::gaussian(d, d, noise_std, &mut rng::stream(cfg.seed, tag::INIT_QUERY, 1)),
        );
        let mut w_k = Matrix::identity(d);
        w_k.add_scaled(
            cfg.delta,
            &Matrix::gaussian(d, d, noise_std, &mut rng::stream(cfg.seed, tag::INIT_KEY, 1)),
        );
        let mut w_v = u;
        w_v.add_scaled(
            cfg.sigma,
            &Matrix::gaussian(d, d, noise_std, &mut rng::stream(cfg.seed, tag::INIT_VALUE, 1)),
        );
        (w_q, w_k, w_v)
    };
    Ok(ModelParams {
        w_q,
        w_k,
        w_v,
        w_o,
        a,
        mask: TrainableMask::ALL,
    })
}

/// The unperturbed features of the experiment scheme: `p_j = U mu_j` and
/// `q_j = r_j = mu_j` (times the literal scale when that is in force).
pub fn experiment_reference_bases(cfg: &InitConfig, patterns: &PatternDictionary) -> Result<OracleBases> {
    let d = patterns.dim();
    let u = random_orthogonal(d, &mut rng::stream(cfg.seed, tag::INIT_VALUE, 0))?;
    let (sv, sqk) = if cfg.literal {
        let c2 = cfg.c0 * cfg.c0;
        (cfg.sigma * cfg.sigma / c2, cfg.delta * cfg.delta / c2)
    } else {
        (1.0, 1.0)
    };
    let p = patterns
        .patterns()
        .iter()
        .map(|mu| u.matvec(mu).into_iter().map(|v| v * sv).collect())
        .collect();
    let q: Vec<Vec<f64>> = patterns
        .patterns()
        .iter()
        .map(|mu| mu.iter().map(|v| v * sqk).collect())
        .collect();
    Ok(OracleBases {
        p,
        r: q.clone(),
        q,
        advisory: true,
    })
}

/// Unit vectors `b'_j` with `||b'_j - b_j|| = radius` exactly. When the
/// ambient space has room for a second orthonormal set `w_j` orthogonal to
/// the basis, `b'_j = cos(t) b_j + sin(t) w_j` keeps the set orthonormal;
/// otherwise each `b_j` is displaced along a uniformly random direction.
fn perturb_basis(basis: &[Vec<f64>], radius: f64, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    if radius == 0.0 {
        return Ok(basis.to_vec());
    }
    let dim = basis[0].len();
    if dim >= 2 * basis.len() {
        let w = linalg::random_orthonormal_set(dim, basis.len(), basis, rng)?;
        let cos = 1.0 - radius * radius / 2.0;
        let sin = (1.0 - cos * cos).max(0.0).sqrt();
        Ok(basis
            .iter()
            .zip(&w)
            .map(|(b, w)| b.iter().zip(w).map(|(bi, wi)| cos * bi + sin * wi).collect())
            .collect())
    } else {
        Ok(basis
            .iter()
            .map(|b| {
                let dir = linalg::gaussian_vector(dim, rng);
                let n = linalg::norm(&dir);
                b.iter().zip(&dir).map(|(bi, di)| bi + radius * di / n).collect()
            })
            .collect())
    }
}

/// `sum_j f_j mu_j^T`, rescaled to operator norm 1 if it exceeds it.
fn feature_map(features: &[Vec<f64>], patterns: &PatternDictionary) -> Result<Matrix> {
    let rows = features[0].len();
    let mut w = Matrix::zeros(rows, patterns.dim());
    for (f, mu) in features.iter().zip(patterns.patterns()) {
        w.add_outer(1.0, f, mu);
    }
    let norm = w.operator_norm();
    if norm > 1.0 + 1e-12 {
        w.scale(1.0 / norm);
    }
    Ok(w)
}

pub fn init_oracle(
    dims: ModelDims,
    cfg: &InitConfig,
    patterns: &PatternDictionary,
) -> Result<(ModelParams, OracleBases)> {
    cfg.validate()?;
    check_dims(&dims, patterns)?;
    let m = patterns.count();
    if m > dims.m_a.min(dims.m_b) {
        return Err(Error::InvalidConfig(format!(
            "oracle init needs M <= min(m_a, m_b), got M={m}, m_a={}, m_b={}",
            dims.m_a, dims.m_b
        )));
    }
    let (a, w_o) = readout_and_hidden(&dims, cfg, m);

    let mut rng_v = rng::stream(cfg.seed, tag::INIT_VALUE, 0);
    let mut rng_k = rng::stream(cfg.seed, tag::INIT_KEY, 0);
    let mut rng_q = rng::stream(cfg.seed, tag::INIT_QUERY, 0);
    let p = linalg::random_orthonormal_set(dims.m_a, m, &[], &mut rng_v)?;
    let q = linalg::random_orthonormal_set(dims.m_b, m, &[], &mut rng_k)?;
    let mut r = q[..2].to_vec();
    r.extend(linalg::random_orthonormal_set(dims.m_b, m - 2, &q[..2], &mut rng_q)?);

    let w_v = feature_map(&perturb_basis(&p, cfg.sigma, &mut rng_v)?, patterns)?;
    let w_k = feature_map(&perturb_basis(&q, cfg.delta, &mut rng_k)?, patterns)?;
    let w_q = feature_map(&perturb_basis(&r, cfg.delta, &mut rng_q)?, patterns)?;
    let params = ModelParams {
        w_q,
        w_k,
        w_v,
        w_o,
        a,
        mask: TrainableMask::ALL,
    };
    Ok((
        params,
        OracleBases {
            p,
            q,
            r,
            advisory: false,
        },
    ))
}

/// Builds parameters for either scheme, along with the bases the probes
/// measure against.
pub fn initialize(
    dims: ModelDims,
    cfg: &InitConfig,
    patterns: &PatternDictionary,
) -> Result<(ModelParams, OracleBases)> {
    match cfg.scheme {
        InitScheme::Oracle => init_oracle(dims, cfg, patterns),
        InitScheme::Experiment => Ok((
            init_experiment(dims, cfg, patterns)?,
            experiment_reference_bases(cfg, patterns)?,
        )),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub max_v_residual: f64,
    pub max_k_residual: f64,
    pub max_q_residual: f64,
    /// Operator norms of (W_V, W_K, W_Q).
    pub op_norms: [f64; 3],
    pub advisory: bool,
}

pub fn assumption_residuals(
    params: &ModelParams,
    patterns: &PatternDictionary,
    bases: &OracleBases,
) -> Result<AssumptionReport> {
    let max_residual = |w: &Matrix, feats: &[Vec<f64>]| -> Result<f64> {
        if feats.len() != patterns.count() {
            return Err(Error::DimensionMismatch("bases and patterns differ in count".into()));
        }
        Ok(patterns
            .patterns()
            .iter()
            .zip(feats)
            .map(|(mu, f)| linalg::norm(&linalg::sub(&w.matvec(mu), f)))
            .fold(0.0, f64::max))
    };
    Ok(AssumptionReport {
        max_v_residual: max_residual(&params.w_v, &bases.p)?,
        max_k_residual: max_residual(&params.w_k, &bases.q)?,
        max_q_residual: max_residual(&params.w_q, &bases.r)?,
        op_norms: [
            params.w_v.operator_norm(),
            params.w_k.operator_norm(),
            params.w_q.operator_norm(),
        ],
        advisory: bases.advisory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_patterns, PatternMode};
    use crate::model::Param;

    fn dims() -> ModelDims {
        ModelDims {
            d: 10,
            m_a: 10,
            m_b: 10,
            m: 50,
            tokens: 8,
        }
    }

    fn cfg(scheme: InitScheme, sigma: f64, delta: f64) -> InitConfig {
        InitConfig {
            scheme,
            sigma,
            delta,
            xi: Xi::Fixed(0.01),
            c0: 0.01,
            literal: false,
            seed: 42,
        }
    }

    fn patterns() -> PatternDictionary {
        make_patterns(10, 5, PatternMode::RandomOrthonormal, 3).unwrap()
    }

    #[test]
    fn readout_entries_are_signed_inverse_sqrt_m() {
        let p = init_experiment(dims(), &cfg(InitScheme::Experiment, 0.1, 0.2), &patterns()).unwrap();
        let mag = 1.0 / 50f64.sqrt();
        assert!(p.a.as_slice().iter().all(|&v| v == mag || v == -mag));
    }

    #[test]
    fn literal_attention_init_is_scaled_identity() {
        let mut c = cfg(InitScheme::Experiment, 0.1, 0.2);
        c.literal = true;
        let p = init_experiment(dims(), &c, &patterns()).unwrap();
        assert_eq!(p.w_q, p.w_k);
        for i in 0..10 {
            for j in 0..10 {
                let want = if i == j { 400.0 } else { 0.0 };
                assert!((p.w_q[(i, j)] - want).abs() < 1e-9);
            }
        }
        // W_V = 100 U with U orthogonal.
        let g = p.w_v.scaled(0.01).gram();
        for i in 0..10 {
            for j in 0..10 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_delta_gives_identity_attention() {
        let p = init_experiment(dims(), &cfg(InitScheme::Experiment, 0.0, 0.0), &patterns()).unwrap();
        assert_eq!(p.w_q, Matrix::identity(10));
        assert_eq!(p.w_k, Matrix::identity(10));
    }

    #[test]
    fn experiment_init_rejects_non_square_attention() {
        let d = ModelDims { m_a: 12, ..dims() };
        assert!(init_experiment(d, &cfg(InitScheme::Experiment, 0.1, 0.2), &patterns()).is_err());
    }

    #[test]
    fn oracle_residuals_hit_the_bounds_exactly() {
        for (sigma, delta) in [(0.0, 0.0), (0.1, 0.2), (0.3, 0.5)] {
            let (params, bases) = init_oracle(dims(), &cfg(InitScheme::Oracle, sigma, delta), &patterns()).unwrap();
            let rep = assumption_residuals(&params, &patterns(), &bases).unwrap();
            assert!((rep.max_v_residual - sigma).abs() < 1e-12, "{rep:?}");
            assert!((rep.max_k_residual - delta).abs() < 1e-12, "{rep:?}");
            assert!((rep.max_q_residual - delta).abs() < 1e-12, "{rep:?}");
            assert!(rep.op_norms.iter().all(|&n| n <= 1.0 + 1e-12));
            assert_eq!(bases.q[0], bases.r[0]);
            assert_eq!(bases.q[1], bases.r[1]);
            for set in [&bases.p, &bases.q, &bases.r] {
                let g = Matrix::from_columns(set).unwrap().gram();
                for i in 0..5 {
                    for j in 0..5 {
                        let want = if i == j { 1.0 } else { 0.0 };
                        assert!((g[(i, j)] - want).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn noiseless_oracle_maps_patterns_to_features() {
        let pats = patterns();
        let (params, bases) = init_oracle(dims(), &cfg(InitScheme::Oracle, 0.0, 0.0), &pats).unwrap();
        for j in 0..5 {
            let v = params.w_v.matvec(pats.pattern(j));
            for (a, b) in v.iter().zip(&bases.p[j]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let mu1 = pats.pattern(0);
        let score = linalg::dot(&params.w_k.matvec(mu1), &params.w_q.matvec(mu1));
        assert!((score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn readout_is_shared_across_schemes() {
        let pats = patterns();
        let e = init_experiment(dims(), &cfg(InitScheme::Experiment, 0.1, 0.2), &pats).unwrap();
        let (o, _) = init_oracle(dims(), &cfg(InitScheme::Oracle, 0.1, 0.2), &pats).unwrap();
        assert_eq!(e.fingerprint(Param::Readout), o.fingerprint(Param::Readout));
        assert_eq!(e.w_o, o.w_o);
    }

    #[test]
    fn experiment_residuals_are_advisory() {
        let pats = patterns();
        let c = cfg(InitScheme::Experiment, 0.1, 0.2);
        let (params, bases) = initialize(dims(), &c, &pats).unwrap();
        let rep = assumption_residuals(&params, &pats, &bases).unwrap();
        assert!(rep.advisory);
        assert!(rep.max_v_residual > 0.0 && rep.max_v_residual < 0.3);
        let zero = cfg(InitScheme::Experiment, 0.0, 0.0);
        let (params, bases) = initialize(dims(), &zero, &pats).unwrap();
        let rep = assumption_residuals(&params, &pats, &bases).unwrap();
        assert!(rep.max_v_residual < 1e-12 && rep.max_k_residual < 1e-12);
    }

    #[test]
    fn oracle_rejects_too_many_patterns() {
        let d = ModelDims { m_a: 4, ..dims() };
        assert!(init_oracle(d, &cfg(InitScheme::Oracle, 0.1, 0.1), &patterns()).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let pats = patterns();
        let c = cfg(InitScheme::Oracle, 0.1, 0.2);
        assert_eq!(init_oracle(dims(), &c, &pats).unwrap(), init_oracle(dims(), &c, &pats).unwrap());
    }
}
