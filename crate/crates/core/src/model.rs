//! The shallow ViT:
//!
//! ```text
//! F(X) = 1/|S| * sum_{l in S} a_l . ReLU(W_O W_V X_S softmax(X_S^T W_K^T W_Q x_l))
//! ```
//!
//! Keys and values range over the active set `S` only (inactive tokens are
//! treated as zeroed out of the sequence). `a_l` is indexed by the token's
//! original position, so sparsified samples keep their readout weights.
//! There is no temperature inside the softmax.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::TokenizedSample;
use crate::error::{Error, Result};
use crate::jsonfmt;
use crate::linalg::{self, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Token dimension d.
    pub d: usize,
    /// Value dimension m_a.
    pub m_a: usize,
    /// Query/key dimension m_b.
    pub m_b: usize,
    /// Hidden neurons m.
    pub m: usize,
    /// Token positions L (columns of A).
    pub tokens: usize,
}

/// Which of the four weight matrices SGD may change. `A` is always frozen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainableMask {
    pub query: bool,
    pub key: bool,
    pub value: bool,
    pub output: bool,
}

impl TrainableMask {
    pub const ALL: Self = Self {
        query: true,
        key: true,
        value: true,
        output: true,
    };

    /// Attention frozen at initialization.
    pub const CNN: Self = Self {
        query: false,
        key: false,
        value: true,
        output: true,
    };

    fn attention(&self) -> bool {
        self.query || self.key
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Param {
    Query,
    Key,
    Value,
    Output,
    Readout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// m_b x d.
    pub w_q: Matrix,
    /// m_b x d.
    pub w_k: Matrix,
    /// m_a x d.
    pub w_v: Matrix,
    /// m x m_a.
    pub w_o: Matrix,
    /// Fixed readout weights stored as A^T (L x m): row `l` is `a_l`.
    pub a: Matrix,
    pub mask: TrainableMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
}

impl Gradients {
    pub fn zeros(dims: &ModelDims) -> Self {
        Self {
            w_q: Matrix::zeros(dims.m_b, dims.d),
            w_k: Matrix::zeros(dims.m_b, dims.d),
            w_v: Matrix::zeros(dims.m_a, dims.d),
            w_o: Matrix::zeros(dims.m, dims.m_a),
        }
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &Gradients) {
        self.w_q.add_scaled(alpha, &other.w_q);
        self.w_k.add_scaled(alpha, &other.w_k);
        self.w_v.add_scaled(alpha, &other.w_v);
        self.w_o.add_scaled(alpha, &other.w_o);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.w_q.scale(alpha);
        self.w_k.scale(alpha);
        self.w_v.scale(alpha);
        self.w_o.scale(alpha);
    }

    pub fn get(&self, p: Param) -> Option<&Matrix> {
        match p {
            Param::Query => Some(&self.w_q),
            Param::Key => Some(&self.w_k),
            Param::Value => Some(&self.w_v),
            Param::Output => Some(&self.w_o),
            Param::Readout => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.w_q.is_zero() && self.w_k.is_zero() && self.w_v.is_zero() && self.w_o.is_zero()
    }
}

/// NaN in, NaN out: `f64::max` would otherwise report a NaN output as zero loss.
pub fn hinge_loss(f: f64, y: f64) -> f64 {
    let margin = 1.0 - y * f;
    if margin.is_nan() {
        margin
    } else {
        margin.max(0.0)
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    if x.is_nan() {
        x
    } else {
        x.max(0.0)
    }
}

/// Softmax in place with max subtraction.
fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    v.iter_mut().for_each(|x| *x /= total);
}

/// Intermediate quantities of one forward pass, indexed by position within
/// the active set.
pub struct ForwardTrace {
    pub active: Vec<usize>,
    /// s x m_b, row r = W_K x_r.
    keys: Matrix,
    /// s x m_b, row l = W_Q x_l.
    queries: Matrix,
    /// s x m_a, row r = W_V x_r.
    values: Matrix,
    /// s x s, row l = attention of query l over keys r.
    pub attention: Matrix,
    /// s x m_a, row l = sum_r attn[l][r] V_r.
    mixed: Matrix,
    /// s x m, row l = W_O mixed_l (pre-activation).
    hidden: Matrix,
    pub output: f64,
}

impl ForwardTrace {
    /// Smallest |pre-activation| over all hidden units and queries.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.hidden.as_slice().iter().fold(f64::INFINITY, |m, h| m.min(h.abs()))
    }
}

impl ModelParams {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d: self.w_q.cols(),
            m_a: self.w_v.rows(),
            m_b: self.w_q.rows(),
            m: self.w_o.rows(),
            tokens: self.a.rows(),
        }
    }

    /// Checks that the five matrices agree with one another.
    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        let checks = [
            ("W_K", self.w_k.shape(), (d.m_b, d.d)),
            ("W_V", self.w_v.shape(), (d.m_a, d.d)),
            ("W_O", self.w_o.shape(), (d.m, d.m_a)),
            ("A^T", self.a.shape(), (d.tokens, d.m)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )));
            }
        }
        Ok(())
    }

    pub fn matrix(&self, p: Param) -> &Matrix {
        match p {
            Param::Query => &self.w_q,
            Param::Key => &self.w_k,
            Param::Value => &self.w_v,
            Param::Output => &self.w_o,
            Param::Readout => &self.a,
        }
    }

    pub fn matrix_mut(&mut self, p: Param) -> &mut Matrix {
        match p {
            Param::Query => &mut self.w_q,
            Param::Key => &mut self.w_k,
            Param::Value => &mut self.w_v,
            Param::Output => &mut self.w_o,
            Param::Readout => &mut self.a,
        }
    }

    pub fn is_trainable(&self, p: Param) -> bool {
        match p {
            Param::Query => self.mask.query,
            Param::Key => self.mask.key,
            Param::Value => self.mask.value,
            Param::Output => self.mask.output,
            Param::Readout => false,
        }
    }

    /// `a_l`, the readout weights of token position `l`.
    pub fn readout(&self, l: usize) -> &[f64] {
        self.a.row(l)
    }

    fn check_sample(&self, sample: &TokenizedSample) -> Result<()> {
        let dims = self.dims();
        if sample.len() != dims.tokens || sample.tokens.cols() != dims.d {
            return Err(Error::DimensionMismatch(format!(
                "sample has L={} tokens of dimension {}, model expects L={} and d={}",
                sample.len(),
                sample.tokens.cols(),
                dims.tokens,
                dims.d
            )));
        }
        if sample.active_set.is_empty() {
            return Err(Error::InvalidArgument("sample has an empty active set".into()));
        }
        Ok(())
    }

    /// Pre-softmax attention scores `x_r^T W_K^T W_Q x_l` (rows: queries,
    /// columns: keys) over the active set.
    pub fn attention_logits(&self, sample: &TokenizedSample) -> Result<Matrix> {
        self.check_sample(sample)?;
        let (keys, queries) = self.keys_queries(sample);
        let s = sample.active_set.len();
        let mut logits = Matrix::zeros(s, s);
        for l in 0..s {
            for r in 0..s {
                logits[(l, r)] = linalg::dot(keys.row(r), queries.row(l));
            }
        }
        Ok(logits)
    }

    fn keys_queries(&self, sample: &TokenizedSample) -> (Matrix, Matrix) {
        let dims = self.dims();
        let s = sample.active_set.len();
        let mut keys = Matrix::zeros(s, dims.m_b);
        let mut queries = Matrix::zeros(s, dims.m_b);
        for (i, &l) in sample.active_set.iter().enumerate() {
            let x = sample.token(l);
            self.w_k.matvec_into(x, keys.row_mut(i));
            self.w_q.matvec_into(x, queries.row_mut(i));
        }
        (keys, queries)
    }

    /// Masked-softmax attention of query token `l` (an original position in
    /// the active set) over the active set, in active-set order.
    pub fn attention_weights(&self, sample: &TokenizedSample, l: usize) -> Result<Vec<f64>> {
        self.check_sample(sample)?;
        let Ok(qi) = sample.active_set.binary_search(&l) else {
            return Err(Error::Index(format!("token {l} is not in the active set")));
        };
        let q = self.w_q.matvec(sample.token(l));
        let mut w: Vec<f64> = sample
            .active_set
            .iter()
            .map(|&r| linalg::dot(&self.w_k.matvec(sample.token(r)), &q))
            .collect();
        debug_assert!(qi < w.len());
        softmax_in_place(&mut w);
        Ok(w)
    }

    /// Full attention map over the active set (rows: queries).
    pub fn attention_map(&self, sample: &TokenizedSample) -> Result<Matrix> {
        let mut logits = self.attention_logits(sample)?;
        for l in 0..logits.rows() {
            softmax_in_place(logits.row_mut(l));
        }
        Ok(logits)
    }

    pub fn forward_trace(&self, sample: &TokenizedSample) -> Result<ForwardTrace> {
        self.check_sample(sample)?;
        let dims = self.dims();
        let s = sample.active_set.len();
        let (keys, queries) = self.keys_queries(sample);
        let mut values = Matrix::zeros(s, dims.m_a);
        for (i, &l) in sample.active_set.iter().enumerate() {
            self.w_v.matvec_into(sample.token(l), values.row_mut(i));
        }
        let mut attention = Matrix::zeros(s, s);
        let mut mixed = Matrix::zeros(s, dims.m_a);
        let mut hidden = Matrix::zeros(s, dims.m);
        let mut total = 0.0;
        for l in 0..s {
            let row = attention.row_mut(l);
            for (r, w) in row.iter_mut().enumerate() {
                *w = linalg::dot(keys.row(r), queries.row(l));
            }
            softmax_in_place(row);
            let mix = mixed.row_mut(l);
            for r in 0..s {
                linalg::axpy(attention[(l, r)], values.row(r), mix);
            }
            self.w_o.matvec_into(mixed.row(l), hidden.row_mut(l));
            let a = self.readout(sample.active_set[l]);
            total += hidden.row(l).iter().zip(a).map(|(h, a)| a * relu(*h)).sum::<f64>();
        }
        Ok(ForwardTrace {
            active: sample.active_set.clone(),
            keys,
            queries,
            values,
            attention,
            mixed,
            hidden,
            output: total / s as f64,
        })
    }

    pub fn forward(&self, sample: &TokenizedSample) -> Result<f64> {
        Ok(self.forward_trace(sample)?.output)
    }

    pub fn loss(&self, sample: &TokenizedSample) -> Result<f64> {
        Ok(hinge_loss(self.forward(sample)?, sample.label.sign()))
    }

    /// Gradient of the single-sample hinge loss. Uses ReLU'(0) = 1 and treats
    /// the hinge as active only when `1 - yF > 0`. Frozen matrices get zeros.
    pub fn backward(&self, sample: &TokenizedSample) -> Result<Gradients> {
        let trace = self.forward_trace(sample)?;
        let mut grads = Gradients::zeros(&self.dims());
        let y = sample.label.sign();
        if 1.0 - y * trace.output <= 0.0 {
            return Ok(grads);
        }
        self.accumulate_backward(sample, &trace, -y, &mut grads);
        Ok(grads)
    }

    /// Adds `dLoss/dF = coef` back-propagated through `trace` into `grads`.
    fn accumulate_backward(&self, sample: &TokenizedSample, trace: &ForwardTrace, coef: f64, grads: &mut Gradients) {
        let dims = self.dims();
        let s = trace.active.len();
        let scale = coef / s as f64;
        let mut g_hidden = vec![0.0; dims.m];
        // d loss / d mixed_l, one row per query.
        let mut g_mixed = Matrix::zeros(s, dims.m_a);
        for l in 0..s {
            let a = self.readout(trace.active[l]);
            for ((g, &h), &al) in g_hidden.iter_mut().zip(trace.hidden.row(l)).zip(a) {
                *g = if h >= 0.0 { scale * al } else { 0.0 };
            }
            if self.mask.output {
                grads.w_o.add_outer(1.0, &g_hidden, trace.mixed.row(l));
            }
            self.w_o.matvec_t_into(&g_hidden, g_mixed.row_mut(l));
        }

        if self.mask.value {
            let mut g_val = vec![0.0; dims.m_a];
            for r in 0..s {
                g_val.iter_mut().for_each(|v| *v = 0.0);
                for l in 0..s {
                    linalg::axpy(trace.attention[(l, r)], g_mixed.row(l), &mut g_val);
                }
                grads.w_v.add_outer(1.0, &g_val, sample.token(trace.active[r]));
            }
        }

        if self.mask.attention() {
            // d loss / d logit[l][r] through the softmax Jacobian.
            let mut g_logit = Matrix::zeros(s, s);
            for l in 0..s {
                let attn = trace.attention.row(l);
                let row = g_logit.row_mut(l);
                let mut mean = 0.0;
                for r in 0..s {
                    row[r] = linalg::dot(trace.values.row(r), g_mixed.row(l));
                    mean += attn[r] * row[r];
                }
                for r in 0..s {
                    row[r] = attn[r] * (row[r] - mean);
                }
            }
            let mut acc = vec![0.0; dims.m_b];
            if self.mask.key {
                for r in 0..s {
                    acc.iter_mut().for_each(|v| *v = 0.0);
                    for l in 0..s {
                        linalg::axpy(g_logit[(l, r)], trace.queries.row(l), &mut acc);
                    }
                    grads.w_k.add_outer(1.0, &acc, sample.token(trace.active[r]));
                }
            }
            if self.mask.query {
                for l in 0..s {
                    acc.iter_mut().for_each(|v| *v = 0.0);
                    for r in 0..s {
                        linalg::axpy(g_logit[(l, r)], trace.keys.row(r), &mut acc);
                    }
                    grads.w_q.add_outer(1.0, &acc, sample.token(trace.active[l]));
                }
            }
        }
    }

    /// Mean of per-sample gradients, summed in slice order.
    pub fn batch_gradient(&self, batch: &[&TokenizedSample]) -> Result<Gradients> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut total = Gradients::zeros(&self.dims());
        for sample in batch {
            let trace = self.forward_trace(sample)?;
            if !trace.output.is_finite() {
                return Err(Error::Diverged { iter: 0, what: "output".into() });
            }
            let y = sample.label.sign();
            if 1.0 - y * trace.output > 0.0 {
                self.accumulate_backward(sample, &trace, -y, &mut total);
            }
        }
        total.scale(1.0 / batch.len() as f64);
        Ok(total)
    }

    /// `W <- W - eta * g` for each trainable matrix.
    pub fn apply_gradients(&mut self, grads: &Gradients, eta: f64) {
        for p in [Param::Query, Param::Key, Param::Value, Param::Output] {
            if self.is_trainable(p) {
                let g = grads.get(p).expect("weight parameter");
                self.matrix_mut(p).add_scaled(-eta, g);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w_q.is_finite() && self.w_k.is_finite() && self.w_v.is_finite() && self.w_o.is_finite()
    }

    /// SHA-256 of one matrix's shape and exact bit pattern.
    pub fn fingerprint(&self, p: Param) -> String {
        matrix_digest(self.matrix(p))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let dims = self.dims();
        Checkpoint {
            dims,
            w_q: self.w_q.as_slice().to_vec(),
            w_k: self.w_k.as_slice().to_vec(),
            w_v: self.w_v.as_slice().to_vec(),
            w_o: self.w_o.as_slice().to_vec(),
            a: self.a.transpose().as_slice().to_vec(),
            trainable: self.mask,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        jsonfmt::to_string(&self.to_checkpoint())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ck.try_into()
    }
}

pub fn matrix_digest(m: &Matrix) -> String {
    let mut h = Sha256::new();
    h.update((m.rows() as u64).to_le_bytes());
    h.update((m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Parameter checkpoint file: row-major matrices (A as m x L) plus the mask.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub dims: ModelDims,
    pub w_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub w_v: Vec<f64>,
    pub w_o: Vec<f64>,
    pub a: Vec<f64>,
    pub trainable: TrainableMask,
}

impl TryFrom<Checkpoint> for ModelParams {
    type Error = Error;

    fn try_from(ck: Checkpoint) -> Result<Self> {
        let d = ck.dims;
        let params = ModelParams {
            w_q: Matrix::from_vec(d.m_b, d.d, ck.w_q)?,
            w_k: Matrix::from_vec(d.m_b, d.d, ck.w_k)?,
            w_v: Matrix::from_vec(d.m_a, d.d, ck.w_v)?,
            w_o: Matrix::from_vec(d.m, d.m_a, ck.w_o)?,
            a: Matrix::from_vec(d.m, d.tokens, ck.a)?.transpose(),
            mask: ck.trainable,
        };
        params.validate()?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_patterns, sample_tokens, Label, PatternMode, SampleSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(dims: ModelDims, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sign = 1.0 / (dims.m as f64).sqrt();
        let mut a = Matrix::zeros(dims.tokens, dims.m);
        a.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = if rng.random::<bool>() { sign } else { -sign });
        ModelParams {
            w_q: Matrix::gaussian(dims.m_b, dims.d, 0.7, &mut rng),
            w_k: Matrix::gaussian(dims.m_b, dims.d, 0.7, &mut rng),
            w_v: Matrix::gaussian(dims.m_a, dims.d, 0.7, &mut rng),
            w_o: Matrix::gaussian(dims.m, dims.m_a, 0.7, &mut rng),
            a,
            mask: TrainableMask::ALL,
        }
    }

    fn small_sample(seed: u64) -> TokenizedSample {
        let p = make_patterns(4, 3, PatternMode::RandomOrthonormal, seed).unwrap();
        let spec = SampleSpec::new(vec![2, 1, 2]).unwrap();
        sample_tokens(&spec, &p, 0.3, false, seed).unwrap()
    }

    const DIMS: ModelDims = ModelDims {
        d: 4,
        m_a: 3,
        m_b: 3,
        m: 6,
        tokens: 5,
    };

    #[test]
    fn hinge_values() {
        assert_eq!(hinge_loss(0.0, 1.0), 1.0);
        assert_eq!(hinge_loss(2.0, 1.0), 0.0);
        assert_eq!(hinge_loss(-0.5, 1.0), 1.5);
    }

    #[test]
    fn zero_attention_logits_give_uniform_weights() {
        let mut p = random_params(DIMS, 1);
        p.w_q = Matrix::zeros(3, 4);
        let s = small_sample(1);
        let w = p.attention_weights(&s, 2).unwrap();
        for v in w {
            assert!((v - 0.2).abs() < 1e-15);
        }
        let mut sub = s.clone();
        sub.active_set = vec![0, 1, 4];
        assert!(p.attention_weights(&sub, 2).is_err());
        assert_eq!(p.attention_weights(&sub, 4).unwrap().len(), 3);
    }

    #[test]
    fn zero_value_or_output_weights_give_zero_output() {
        let s = small_sample(2);
        let mut p = random_params(DIMS, 2);
        p.w_v = Matrix::zeros(3, 4);
        assert_eq!(p.forward(&s).unwrap(), 0.0);
        let mut p = random_params(DIMS, 2);
        p.w_o = Matrix::zeros(6, 3);
        assert_eq!(p.forward(&s).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = random_params(ModelDims { tokens: 6, ..DIMS }, 3);
        assert!(matches!(p.forward(&small_sample(3)), Err(Error::DimensionMismatch(_))));
    }

    /// Scalar-by-scalar evaluation of the model on a 2-token instance.
    #[test]
    fn forward_matches_scalar_evaluation() {
        let w_q = Matrix::from_vec(2, 2, vec![0.5, -0.25, 0.75, 1.0]).unwrap();
        let w_k = Matrix::from_vec(2, 2, vec![1.0, 0.5, -0.5, 0.25]).unwrap();
        let w_v = Matrix::from_vec(2, 2, vec![0.8, 0.1, -0.3, 0.6]).unwrap();
        let w_o = Matrix::from_vec(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        // a_1 = (r, -r), a_2 = (r, r)
        let a = Matrix::from_vec(2, 2, vec![r, -r, r, r]).unwrap();
        let params = ModelParams { w_q, w_k, w_v, w_o, a, mask: TrainableMask::ALL };
        let x = [[0.9, 0.2], [-0.1, 1.1]];
        let tokens = Matrix::from_vec(2, 2, vec![0.9, 0.2, -0.1, 1.1]).unwrap();
        let sample = TokenizedSample {
            tokens,
            label: Label::Positive,
            assignment: vec![0, 0],
            active_set: vec![0, 1],
            noise_magnitudes: vec![0.0, 0.0],
        };

        let mv = |m: [[f64; 2]; 2], v: [f64; 2]| [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]];
        let qm = [[0.5, -0.25], [0.75, 1.0]];
        let km = [[1.0, 0.5], [-0.5, 0.25]];
        let vm = [[0.8, 0.1], [-0.3, 0.6]];
        let om = [[1.0, -1.0], [0.5, 2.0]];
        let av = [[r, -r], [r, r]];
        let mut f = 0.0;
        for l in 0..2 {
            let q = mv(qm, x[l]);
            let s0 = { let k = mv(km, x[0]); k[0] * q[0] + k[1] * q[1] };
            let s1 = { let k = mv(km, x[1]); k[0] * q[0] + k[1] * q[1] };
            let e0 = s0.exp();
            let e1 = s1.exp();
            let (w0, w1) = (e0 / (e0 + e1), e1 / (e0 + e1));
            let v0 = mv(vm, x[0]);
            let v1 = mv(vm, x[1]);
            let u = [w0 * v0[0] + w1 * v1[0], w0 * v0[1] + w1 * v1[1]];
            let h = mv(om, u);
            f += av[l][0] * h[0].max(0.0) + av[l][1] * h[1].max(0.0);
        }
        f /= 2.0;
        let got = params.forward(&sample).unwrap();
        assert!((got - f).abs() < 1e-14, "{got} vs {f}");
    }

    #[test]
    fn satisfied_margin_gives_zero_gradient() {
        let mut p = random_params(DIMS, 4);
        let s = small_sample(4);
        let f = p.forward(&s).unwrap();
        // Scale W_O so that yF >= 1.
        let y = s.label.sign();
        if f * y > 0.0 {
            p.w_o.scale(2.0 / (f * y));
        } else {
            p.w_o.scale(-2.0 / (f * y).abs());
        }
        assert!(y * p.forward(&s).unwrap() >= 1.0);
        assert!(p.backward(&s).unwrap().is_zero());
    }

    #[test]
    fn frozen_matrices_have_zero_gradients() {
        let mut p = random_params(DIMS, 5);
        p.mask = TrainableMask::CNN;
        p.w_o.scale(0.01);
        let g = p.backward(&small_sample(5)).unwrap();
        assert!(g.w_q.is_zero() && g.w_k.is_zero());
        assert!(!g.w_v.is_zero() || !g.w_o.is_zero());
    }

    #[test]
    fn batch_gradient_means() {
        let mut p = random_params(DIMS, 6);
        p.w_o.scale(0.01);
        let s = small_sample(6);
        let single = p.backward(&s).unwrap();
        assert_eq!(p.batch_gradient(&[&s]).unwrap(), single);
        let pair = p.batch_gradient(&[&s, &s]).unwrap();
        for prm in [Param::Query, Param::Key, Param::Value, Param::Output] {
            let (a, b) = (pair.get(prm).unwrap(), single.get(prm).unwrap());
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
            }
        }
        assert!(p.batch_gradient(&[]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = random_params(DIMS, 7);
        let back = ModelParams::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.fingerprint(Param::Readout), p.fingerprint(Param::Readout));
    }

    #[test]
    fn forward_is_permutation_invariant_with_shared_readout() {
        let mut p = random_params(DIMS, 8);
        let col = p.a.row(0).to_vec();
        for l in 0..DIMS.tokens {
            p.a.row_mut(l).copy_from_slice(&col);
        }
        let s = small_sample(8);
        let perm = [3, 0, 4, 1, 2];
        let mut t = s.clone();
        for (new, &old) in perm.iter().enumerate() {
            t.tokens.row_mut(new).copy_from_slice(s.token(old));
            t.assignment[new] = s.assignment[old];
            t.noise_magnitudes[new] = s.noise_magnitudes[old];
        }
        let f1 = p.forward(&s).unwrap();
        let f2 = p.forward(&t).unwrap();
        assert!((f1 - f2).abs() < 1e-13);
    }
}
