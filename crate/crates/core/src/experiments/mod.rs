//! Seeded sweeps over the data/init/train pipeline: phase diagrams,
//! scaling fits, attention traces, sparsification and mode comparisons.

mod fit;
mod grid;
pub mod plot;
mod studies;

pub use fit::{fit_boundary, fit_scaling, FitSpec, Response, ScalingFit, Transform};
pub use studies::{
    convergence_to_csv, curves_to_csv, run_attention_trace, run_cnn_compare, run_convergence_sweep,
    run_phase_diagram, run_sigma_sweep, run_sparsify_compare, AttentionTrace, ConvergencePoint, Curve,
    SparsifyComparison, StrategyOutcome, CONVERGENCE_HEADER, CURVE_HEADER,
};
pub use grid::{extract_boundary, run_grid, CellResult, GridAxis, GridSpec, PhaseGrid, GRID_HEADER};

use serde::{Deserialize, Serialize};

use crate::data::{
    add_outlier_noise, make_dataset, make_patterns, Dataset, Label, OutlierNoise, PatternDictionary, PatternMode,
    SampleSpec,
};
use crate::error::{Error, Result};
use crate::init::{initialize, InitConfig};
use crate::metrics::ProbeContext;
use crate::model::{ModelDims, ModelParams};
use crate::rng::{self, tag};
use crate::sparsify::{sparsify_dataset, SparsifyStrategy};
use crate::train::{sgd_train, TrainConfig, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub d: usize,
    /// Number of patterns M.
    pub patterns: usize,
    #[serde(default = "default_pattern_mode")]
    pub pattern_mode: PatternMode,
    /// Tokens per sample L, before sparsification.
    pub tokens: usize,
    pub alpha_star: f64,
    pub alpha_confusion: f64,
    pub c0: f64,
    #[serde(default)]
    pub normalize: bool,
    pub n_train: usize,
    pub n_test: usize,
    /// Off unless set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outliers: Option<OutlierNoise>,
}

fn default_pattern_mode() -> PatternMode {
    PatternMode::Canonical
}

impl DataConfig {
    pub fn compositions(&self) -> Result<(SampleSpec, SampleSpec)> {
        let pos = SampleSpec::from_fractions(self.tokens, self.patterns, self.alpha_star, self.alpha_confusion, Label::Positive)?;
        let neg = SampleSpec::from_fractions(self.tokens, self.patterns, self.alpha_star, self.alpha_confusion, Label::Negative)?;
        Ok((pos, neg))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::InvalidConfig("data.n_train and data.n_test must be >= 1".into()));
        }
        if !(self.c0 >= 0.0) {
            return Err(Error::InvalidConfig("data.c0 must be >= 0".into()));
        }
        if let Some(o) = &self.outliers {
            o.validate()?;
        }
        self.compositions().map(|_| ())
    }

    /// Pattern dictionary; the seed only matters in random mode.
    pub fn pattern_dictionary(&self, seed: u64) -> Result<PatternDictionary> {
        make_patterns(self.d, self.patterns, self.pattern_mode, rng::derive_seed(seed, tag::PATTERNS, 0))
    }

    pub fn generate(&self, patterns: &PatternDictionary, n: usize, seed: u64) -> Result<Dataset> {
        let (pos, neg) = self.compositions()?;
        let ds = make_dataset(n, &pos, &neg, patterns, self.c0, self.normalize, seed)?;
        match self.outliers {
            Some(o) => add_outlier_noise(&ds, o, rng::derive_seed(seed, tag::OUTLIERS, 0)),
            None => Ok(ds),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden width of W_O.
    pub m: usize,
    /// Value width; defaults to d.
    #[serde(default)]
    pub m_a: Option<usize>,
    /// Query/key width; defaults to d.
    #[serde(default)]
    pub m_b: Option<usize>,
}

impl ModelConfig {
    pub fn dims(&self, data: &DataConfig) -> ModelDims {
        ModelDims {
            d: data.d,
            m_a: self.m_a.unwrap_or(data.d),
            m_b: self.m_b.unwrap_or(data.d),
            m: self.m,
            tokens: data.tokens,
        }
    }
}

/// Everything one trial needs; `master_seed` and the trial index supply
/// the randomness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pipeline {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub init: InitConfig,
    pub train: TrainConfig,
    #[serde(default = "default_sparsify")]
    pub sparsify: SparsifyStrategy,
}

fn default_sparsify() -> SparsifyStrategy {
    SparsifyStrategy::KeepAll
}

impl Pipeline {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.init.validate()?;
        self.train.validate()?;
        if self.model.m == 0 {
            return Err(Error::InvalidConfig("model.m must be >= 1".into()));
        }
        if let Some(k) = self.sparsify.target_size() {
            if k == 0 || k > self.data.tokens {
                return Err(Error::InvalidConfig(format!(
                    "sparsify.k = {k} must lie in 1..={}",
                    self.data.tokens
                )));
            }
        }
        Ok(())
    }
}

/// Independent seeds of one trial, all derived from its trial seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrialSeeds {
    pub trial: u64,
    pub train_data: u64,
    pub test_data: u64,
    pub init: u64,
    pub batches: u64,
    pub sparsify: u64,
}

impl TrialSeeds {
    pub fn new(trial: u64) -> Self {
        Self {
            trial,
            train_data: rng::derive_seed(trial, tag::TRAIN_DATA, 0),
            test_data: rng::derive_seed(trial, tag::TEST_DATA, 0),
            init: rng::derive_seed(trial, tag::INIT, 0),
            batches: rng::derive_seed(trial, tag::BATCHES, 0),
            sparsify: rng::derive_seed(trial, tag::SPARSIFY, 0),
        }
    }
}

/// Seed of trial `trial` in a sweep. It ignores the cell, so every cell and
/// every compared arm sees the same sequence of trial seeds.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    rng::derive_seed(master, tag::TRIAL, trial as u64)
}

/// Datasets, initial parameters and probe context of one trial.
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub params: ModelParams,
    pub probes: ProbeContext,
    pub train_config: TrainConfig,
}

pub fn prepare_trial(p: &Pipeline, master_seed: u64, seeds: TrialSeeds) -> Result<Prepared> {
    p.validate()?;
    let patterns = p.data.pattern_dictionary(master_seed)?;
    let train = p.data.generate(&patterns, p.data.n_train, seeds.train_data)?;
    let test = p.data.generate(&patterns, p.data.n_test, seeds.test_data)?;
    let train = sparsify_dataset(&train, p.sparsify, seeds.sparsify)?;
    let test = sparsify_dataset(&test, p.sparsify, rng::derive_seed(seeds.sparsify, tag::TEST_DATA, 0))?;
    let init_cfg = InitConfig {
        seed: seeds.init,
        ..p.init.clone()
    };
    let (params, bases) = initialize(p.model.dims(&p.data), &init_cfg, &patterns)?;
    let probes = ProbeContext::for_dataset(&train, Some(bases), init_cfg.sigma)?;
    let train_config = TrainConfig {
        seed: seeds.batches,
        ..p.train.clone()
    };
    Ok(Prepared {
        train,
        test,
        params,
        probes,
        train_config,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub seed: u64,
    /// `None` when training diverged.
    pub trajectory: Option<Trajectory>,
    pub params: ModelParams,
    pub initial: ModelParams,
}

impl TrialOutcome {
    pub fn final_test_hinge(&self) -> f64 {
        self.trajectory.as_ref().map_or(f64::INFINITY, |t| t.last().test_hinge)
    }

    pub fn iters_run(&self) -> usize {
        self.trajectory.as_ref().map_or(0, |t| t.iters_run)
    }
}

/// data -> sparsify -> init -> train. Divergence is a failed outcome, not an error.
pub fn run_trial(p: &Pipeline, master_seed: u64, trial: u64, with_probes: bool) -> Result<TrialOutcome> {
    let seeds = TrialSeeds::new(trial);
    let prep = prepare_trial(p, master_seed, seeds)?;
    let initial = prep.params.clone();
    let mut params = prep.params;
    let probes = with_probes.then_some(&prep.probes);
    let trajectory = match sgd_train(&prep.train, &prep.test, &mut params, &prep.train_config, probes) {
        Ok(t) => Some(t),
        Err(Error::Diverged { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(TrialOutcome {
        seed: trial,
        trajectory,
        params,
        initial,
    })
}

/// Runs `f` over `0..n` on a pool of `jobs` threads, returning results in
/// index order regardless of scheduling.
pub fn parallel_map<T, F>(n: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{InitScheme, Xi};
    use crate::model::Param;
    use crate::train::TrainMode;

    pub(crate) fn small_pipeline() -> Pipeline {
        Pipeline {
            data: DataConfig {
                d: 10,
                patterns: 5,
                pattern_mode: PatternMode::Canonical,
                tokens: 20,
                alpha_star: 0.5,
                alpha_confusion: 0.1,
                c0: 0.01,
                normalize: false,
                n_train: 16,
                n_test: 16,
                outliers: None,
            },
            model: ModelConfig { m: 20, m_a: None, m_b: None },
            init: InitConfig {
                scheme: InitScheme::Experiment,
                sigma: 0.1,
                delta: 0.2,
                xi: Xi::Fixed(0.01),
                c0: 0.01,
                literal: false,
                seed: 0,
            },
            train: TrainConfig {
                eta: 0.5,
                batch_size: 4,
                max_iters: 40,
                mode: TrainMode::Vit,
                eval_every: 10,
                stop_loss: 0.0,
                seed: 0,
                sampling: Default::default(),
                eval_train: true,
            },
            sparsify: SparsifyStrategy::KeepAll,
        }
    }

    #[test]
    fn trial_is_deterministic_and_keeps_readout() {
        let p = small_pipeline();
        let a = run_trial(&p, 1, 5, true).unwrap();
        let b = run_trial(&p, 1, 5, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.params.fingerprint(Param::Readout), a.initial.fingerprint(Param::Readout));
        let t = a.trajectory.unwrap();
        assert!(t.records.iter().all(|r| r.lucky_w.is_some() && r.qk_growth.is_some()));
    }

    #[test]
    fn parallel_map_preserves_order() {
        let v = parallel_map(50, 3, |i| Ok(i * i)).unwrap();
        assert_eq!(v, (0..50).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn literal_init_divergence_is_an_outcome() {
        let mut p = small_pipeline();
        p.init.literal = true;
        p.init.delta = 0.2;
        let out = run_trial(&p, 0, 0, false).unwrap();
        // Either training diverges or the huge logits saturate; both are outcomes.
        assert!(out.trajectory.is_none() || out.final_test_hinge().is_finite());
    }
}
