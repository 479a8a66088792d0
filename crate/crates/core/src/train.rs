//! Mini-batch SGD on the hinge loss, with periodic evaluation and probe
//! recording, plus a finite-difference gradient check.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::data::{Dataset, TokenizedSample};
use crate::error::{Error, Result};
use crate::metrics::{self, ProbeContext};
use crate::model::{hinge_loss, ModelDims, ModelParams, Param};
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Vit,
    /// W_K and W_Q frozen at initialization.
    Cnn,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSampling {
    /// Shuffle once per epoch, then take consecutive slices.
    #[default]
    EpochShuffle,
    /// Each batch drawn i.i.d. uniformly with replacement.
    WithReplacement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub eta: f64,
    pub batch_size: usize,
    pub max_iters: usize,
    #[serde(default)]
    pub mode: TrainMode,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Stop once test hinge drops below this; 0 disables.
    #[serde(default)]
    pub stop_loss: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampling: BatchSampling,
    /// Record train hinge and attention concentration at each eval.
    #[serde(default = "default_true")]
    pub eval_train: bool,
}

fn default_eval_every() -> usize {
    10
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("train.eta = {} must be finite and >= 0", self.eta)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("train.batch_size must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("train.eval_every must be >= 1".into()));
        }
        if !(self.stop_loss >= 0.0) {
            return Err(Error::InvalidConfig("train.stop_loss must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub mean_hinge: f64,
    pub accuracy: f64,
}

/// Mean hinge loss and accuracy; `F = 0` is a miss for either label.
pub fn evaluate(params: &ModelParams, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    let mut hinge = 0.0;
    let mut correct = 0usize;
    for s in &data.samples {
        let f = params.forward(s)?;
        let y = s.label.sign();
        hinge += hinge_loss(f, y);
        if y * f > 0.0 {
            correct += 1;
        }
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        mean_hinge: hinge / n,
        accuracy: correct as f64 / n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRecord {
    pub iter: usize,
    pub train_hinge: Option<f64>,
    pub test_hinge: f64,
    pub test_accuracy: f64,
    pub attention_concentration: Option<f64>,
    pub lucky_w: Option<usize>,
    pub lucky_u: Option<usize>,
    pub qk_growth: Option<f64>,
}

impl EvalRecord {
    fn is_finite(&self) -> bool {
        self.test_hinge.is_finite()
            && self.test_accuracy.is_finite()
            && self.train_hinge.is_none_or(f64::is_finite)
            && self.attention_concentration.is_none_or(f64::is_finite)
            && self.qk_growth.is_none_or(f64::is_finite)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub records: Vec<EvalRecord>,
    /// SGD steps actually taken.
    pub iters_run: usize,
    pub stopped_early: bool,
}

pub const TRAJECTORY_HEADER: &str = "iter,train_hinge,test_hinge,test_acc,attn_conc,lucky_W,lucky_U,qk_growth";

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Trajectory {
    pub fn last(&self) -> &EvalRecord {
        self.records.last().expect("trajectory always holds the t = 0 record")
    }

    pub fn first(&self) -> &EvalRecord {
        &self.records[0]
    }

    /// First recorded iteration whose test hinge is below `threshold`.
    pub fn first_iter_below(&self, threshold: f64) -> Option<usize> {
        self.records.iter().find(|r| r.test_hinge < threshold).map(|r| r.iter)
    }

    /// CSV with [`TRAJECTORY_HEADER`]; absent probes are empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAJECTORY_HEADER);
        out.push('\n');
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.iter,
                opt(r.train_hinge),
                r.test_hinge,
                r.test_accuracy,
                opt(r.attention_concentration),
                opt(r.lucky_w),
                opt(r.lucky_u),
                opt(r.qk_growth)
            )
            .expect("writing to a String");
        }
        out
    }
}

fn record(
    iter: usize,
    params: &ModelParams,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    probes: Option<&ProbeContext>,
) -> Result<EvalRecord> {
    let eval = evaluate(params, test)?;
    let (train_hinge, conc) = if cfg.eval_train {
        let mut hinge = 0.0;
        let mut conc = 0.0;
        for s in &train.samples {
            let trace = params.forward_trace(s)?;
            hinge += hinge_loss(trace.output, s.label.sign());
            let rows = metrics::relevant_mass_per_query(&trace.attention, s);
            conc += metrics::mean_mass(&rows);
        }
        let n = train.len() as f64;
        (Some(hinge / n), Some(conc / n))
    } else {
        (None, None)
    };
    let (lucky, qk) = match probes.filter(|c| c.oracle_bases.is_some()) {
        Some(ctx) => (
            Some(metrics::lucky_neuron_count(params, ctx)?),
            Some(metrics::qk_growth(params, ctx)?),
        ),
        None => (None, None),
    };
    Ok(EvalRecord {
        iter,
        train_hinge,
        test_hinge: eval.mean_hinge,
        test_accuracy: eval.accuracy,
        attention_concentration: conc,
        lucky_w: lucky.map(|c| c.count_w),
        lucky_u: lucky.map(|c| c.count_u),
        qk_growth: qk,
    })
}

/// Yields batches of sample indices, deterministic in the seed.
struct BatchSampler {
    n: usize,
    b: usize,
    seed: u64,
    sampling: BatchSampling,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    rng: rand_chacha::ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, b: usize, seed: u64, sampling: BatchSampling) -> Self {
        Self {
            n,
            b: b.min(n),
            seed,
            sampling,
            order: (0..n).collect(),
            cursor: n,
            epoch: 0,
            rng: rng::stream(seed, tag::BATCHES, u64::MAX),
        }
    }

    fn next_batch(&mut self, out: &mut Vec<usize>) {
        out.clear();
        match self.sampling {
            BatchSampling::WithReplacement => {
                for _ in 0..self.b {
                    out.push(self.rng.random_range(0..self.n));
                }
            }
            BatchSampling::EpochShuffle => {
                // A batch straddling an epoch boundary takes the tail of one
                // permutation and the head of the next.
                while out.len() < self.b {
                    if self.cursor == self.n {
                        let mut rng = rng::stream(self.seed, tag::BATCHES, self.epoch);
                        self.order.sort_unstable();
                        self.order.shuffle(&mut rng);
                        self.epoch += 1;
                        self.cursor = 0;
                    }
                    let take = (self.b - out.len()).min(self.n - self.cursor);
                    out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
                    self.cursor += take;
                }
            }
        }
    }
}

/// Runs SGD in place on `params`. In cnn mode W_K and W_Q are frozen; the
/// readout A is never updated.
pub fn sgd_train(
    train: &Dataset,
    test: &Dataset,
    params: &mut ModelParams,
    cfg: &TrainConfig,
    probes: Option<&ProbeContext>,
) -> Result<Trajectory> {
    cfg.validate()?;
    params.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument("training and test sets must be non-empty".into()));
    }
    let dims = params.dims();
    for ds in [train, test] {
        if ds.patterns.dim() != dims.d || ds.tokens_per_sample() != dims.tokens {
            return Err(Error::DimensionMismatch(format!(
                "dataset (d = {}, L = {}) does not match model (d = {}, L = {})",
                ds.patterns.dim(),
                ds.tokens_per_sample(),
                dims.d,
                dims.tokens
            )));
        }
    }
    if cfg.mode == TrainMode::Cnn {
        params.mask.query = false;
        params.mask.key = false;
    }

    let stop = |r: &EvalRecord| cfg.stop_loss > 0.0 && r.test_hinge < cfg.stop_loss;
    let first = record(0, params, train, test, cfg, probes)?;
    if !first.is_finite() {
        return Err(Error::Diverged { iter: 0, what: "initial metrics".into() });
    }
    let mut traj = Trajectory {
        stopped_early: stop(&first),
        records: vec![first],
        iters_run: 0,
    };
    if traj.stopped_early {
        return Ok(traj);
    }

    let mut sampler = BatchSampler::new(train.len(), cfg.batch_size, cfg.seed, cfg.sampling);
    let mut idx = Vec::with_capacity(cfg.batch_size);
    let mut batch: Vec<&TokenizedSample> = Vec::with_capacity(cfg.batch_size);
    for t in 1..=cfg.max_iters {
        sampler.next_batch(&mut idx);
        batch.clear();
        batch.extend(idx.iter().map(|&i| &train.samples[i]));
        let grads = match params.batch_gradient(&batch) {
            Err(Error::Diverged { what, .. }) => return Err(Error::Diverged { iter: t, what }),
            other => other?,
        };
        params.apply_gradients(&grads, cfg.eta);
        traj.iters_run = t;
        if !params.is_finite() {
            return Err(Error::Diverged { iter: t, what: "parameters".into() });
        }
        if t % cfg.eval_every == 0 || t == cfg.max_iters {
            let r = record(t, params, train, test, cfg, probes)?;
            if !r.is_finite() {
                return Err(Error::Diverged { iter: t, what: "loss".into() });
            }
            let done = stop(&r);
            traj.records.push(r);
            if done {
                traj.stopped_early = true;
                break;
            }
        }
    }
    Ok(traj)
}

#[derive(Clone, Debug, PartialEq)]
pub enum GradCheck {
    Checked { max_rel_error: f64, entries: usize },
    /// The sample sits within the kink margin of a ReLU or the hinge.
    Skipped(String),
}

pub const KINK_MARGIN: f64 = 1e-3;

/// Weight matrices in double-double precision, row-major.
struct WideParams {
    mats: [Vec<TwoFloat>; 4],
    dims: ModelDims,
}

const WEIGHTS: [Param; 4] = [Param::Query, Param::Key, Param::Value, Param::Output];

impl WideParams {
    fn new(params: &ModelParams) -> Self {
        let widen = |p| params.matrix(p).as_slice().iter().map(|&x| TwoFloat::from(x)).collect();
        Self {
            mats: WEIGHTS.map(widen),
            dims: params.dims(),
        }
    }

    fn matvec(&self, which: usize, rows: usize, x: &[f64]) -> Vec<TwoFloat> {
        let m = &self.mats[which];
        let cols = x.len();
        (0..rows)
            .map(|i| (0..cols).fold(TwoFloat::from(0.0), |acc, j| acc + m[i * cols + j] * x[j]))
            .collect()
    }

    /// Hinge loss of one sample, evaluated independently of the f64 forward
    /// pass so finite differences are not swamped by roundoff.
    fn loss(&self, params: &ModelParams, sample: &TokenizedSample) -> TwoFloat {
        let ModelDims { m_a, m_b, m, .. } = self.dims;
        let zero = TwoFloat::from(0.0);
        let dot = |a: &[TwoFloat], b: &[TwoFloat]| a.iter().zip(b).fold(zero, |acc, (&x, &y)| acc + x * y);
        let active = &sample.active_set;
        let keys: Vec<_> = active.iter().map(|&r| self.matvec(1, m_b, sample.token(r))).collect();
        let values: Vec<_> = active.iter().map(|&r| self.matvec(2, m_a, sample.token(r))).collect();
        let mut f = zero;
        for &l in active {
            let query = self.matvec(0, m_b, sample.token(l));
            let logits: Vec<TwoFloat> = keys.iter().map(|k| dot(k, &query)).collect();
            let max = logits.iter().fold(logits[0], |a, &b| if b > a { b } else { a });
            let weights: Vec<TwoFloat> = logits.iter().map(|&z| (z - max).exp()).collect();
            let total = weights.iter().fold(zero, |a, &w| a + w);
            let mut mixed = vec![zero; m_a];
            for (w, v) in weights.iter().zip(&values) {
                let w = *w / total;
                for (acc, &x) in mixed.iter_mut().zip(v) {
                    *acc += w * x;
                }
            }
            let a_l = params.readout(l);
            for (i, &a) in a_l.iter().enumerate().take(m) {
                let h = dot(&self.mats[3][i * m_a..(i + 1) * m_a], &mixed);
                if h > zero {
                    f += h * a;
                }
            }
        }
        let f = f / active.len() as f64;
        let margin = 1.0 - f * sample.label.sign();
        if margin > zero {
            margin
        } else {
            zero
        }
    }
}

/// Compares analytic gradients of the per-sample loss against central
/// differences over every trainable entry.
pub fn grad_check(params: &ModelParams, sample: &TokenizedSample, step: f64) -> Result<GradCheck> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {step} must be > 0")));
    }
    let trace = params.forward_trace(sample)?;
    let y = sample.label.sign();
    if (1.0 - y * trace.output).abs() <= KINK_MARGIN {
        return Ok(GradCheck::Skipped(format!("hinge margin 1 - yF = {}", 1.0 - y * trace.output)));
    }
    let h_min = trace.min_abs_preactivation();
    if h_min <= KINK_MARGIN {
        return Ok(GradCheck::Skipped(format!("ReLU pre-activation {h_min}")));
    }
    let analytic = params.backward(sample)?;
    let mut wide = WideParams::new(params);
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for (which, p) in WEIGHTS.into_iter().enumerate() {
        if !params.is_trainable(p) {
            continue;
        }
        let g = analytic.get(p).expect("weight parameter");
        for (i, &a) in g.as_slice().iter().enumerate() {
            let orig = wide.mats[which][i];
            wide.mats[which][i] = orig + step;
            let up = wide.loss(params, sample);
            wide.mats[which][i] = orig - step;
            let down = wide.loss(params, sample);
            wide.mats[which][i] = orig;
            let numeric = f64::from((up - down) / (2.0 * step));
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            entries += 1;
        }
    }
    Ok(GradCheck::Checked { max_rel_error: worst, entries })
}
