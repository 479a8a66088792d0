use std::fmt::Write as _;

use serde::Serialize;

use super::grid::{run_grid, GridAxis, GridSpec, PhaseGrid};
use super::{parallel_map, run_trial, trial_seed, Pipeline};
use crate::error::{Error, Result};
use crate::sparsify::SparsifyStrategy;
use crate::train::TrainMode;

pub const CURVE_HEADER: &str = "series,iter,value";

/// A per-iteration series averaged over trials.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Curve {
    pub series: String,
    pub points: Vec<(usize, f64)>,
}

/// Curves as CSV with [`CURVE_HEADER`], series in the given order.
pub fn curves_to_csv(curves: &[Curve]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for c in curves {
        for &(iter, v) in &c.points {
            writeln!(out, "{},{iter},{v}", c.series).expect("writing to a String");
        }
    }
    out
}

pub fn run_phase_diagram(spec: &GridSpec) -> Result<PhaseGrid> {
    run_grid(spec)
}

/// The same grid in vit and cnn mode. Only the mode differs: data, init and
/// batch seeds coincide cell by cell.
pub fn run_cnn_compare(spec: &GridSpec) -> Result<(PhaseGrid, PhaseGrid)> {
    let mut vit = spec.pipeline.clone();
    vit.train.mode = TrainMode::Vit;
    let mut cnn = spec.pipeline.clone();
    cnn.train.mode = TrainMode::Cnn;
    let a = run_grid(&GridSpec { pipeline: &vit, ..*spec })?;
    let b = run_grid(&GridSpec { pipeline: &cnn, ..*spec })?;
    Ok((a, b))
}

/// Phase grid over sigma instead of alpha_*.
pub fn run_sigma_sweep(spec: &GridSpec) -> Result<PhaseGrid> {
    if spec.axis != GridAxis::Sigma {
        return Err(Error::InvalidConfig("sigma sweep needs axis kind \"sigma\"".into()));
    }
    run_grid(spec)
}

/// Mean over trials of `f(trial)` at every recorded iteration. All trials
/// must share one evaluation schedule.
fn mean_curve(name: &str, per_trial: &[Vec<(usize, f64)>]) -> Result<Curve> {
    let first = &per_trial[0];
    if per_trial.iter().any(|t| t.len() != first.len()) {
        return Err(Error::InvalidConfig(
            "trials stopped at different iterations; disable early stopping to average curves".into(),
        ));
    }
    let n = per_trial.len() as f64;
    let points = (0..first.len())
        .map(|k| (first[k].0, per_trial.iter().map(|t| t[k].1).sum::<f64>() / n))
        .collect();
    Ok(Curve {
        series: name.to_string(),
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionTrace {
    /// `label_relevant` and `complement`, summing to 1 at every iteration.
    pub curves: Vec<Curve>,
    pub initial: Vec<f64>,
    pub final_values: Vec<f64>,
    /// Trials that diverged; they are left out of the curves.
    pub diverged: usize,
}

impl AttentionTrace {
    pub fn mean_initial(&self) -> f64 {
        self.initial.iter().sum::<f64>() / self.initial.len() as f64
    }

    pub fn mean_final(&self) -> f64 {
        self.final_values.iter().sum::<f64>() / self.final_values.len() as f64
    }

    /// Trials whose final concentration exceeds the initial one.
    pub fn risen(&self) -> usize {
        self.initial.iter().zip(&self.final_values).filter(|(a, b)| b > a).count()
    }
}

/// Label-relevant attention mass on the training set, averaged over trials.
pub fn run_attention_trace(p: &Pipeline, trials: usize, master_seed: u64, jobs: usize) -> Result<AttentionTrace> {
    if trials == 0 {
        return Err(Error::InvalidConfig("attention trace needs trials >= 1".into()));
    }
    let mut p = p.clone();
    p.train.eval_train = true;
    p.train.stop_loss = 0.0;
    let runs = parallel_map(trials, jobs, |t| {
        let out = run_trial(&p, master_seed, trial_seed(master_seed, t), false)?;
        Ok(out.trajectory.map(|tr| {
            tr.records
                .iter()
                .map(|r| (r.iter, r.attention_concentration.expect("eval_train is on")))
                .collect::<Vec<_>>()
        }))
    })?;
    let ok: Vec<Vec<(usize, f64)>> = runs.iter().flatten().cloned().collect();
    if ok.is_empty() {
        return Err(Error::Diverged {
            iter: 0,
            what: "every attention-trace trial".into(),
        });
    }
    let relevant = mean_curve("label_relevant", &ok)?;
    let complement = Curve {
        series: "complement".into(),
        points: relevant.points.iter().map(|&(i, v)| (i, 1.0 - v)).collect(),
    };
    Ok(AttentionTrace {
        curves: vec![relevant, complement],
        initial: ok.iter().map(|t| t[0].1).collect(),
        final_values: ok.iter().map(|t| t[t.len() - 1].1).collect(),
        diverged: trials - ok.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategyOutcome {
    pub strategy: SparsifyStrategy,
    /// Final test hinge per trial; infinite when the trial diverged.
    pub finals: Vec<f64>,
}

impl StrategyOutcome {
    pub fn mean_final(&self) -> f64 {
        self.finals.iter().sum::<f64>() / self.finals.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparsifyComparison {
    /// Mean test hinge per strategy, over non-diverged trials.
    pub curves: Vec<Curve>,
    pub outcomes: Vec<StrategyOutcome>,
}

fn series_name(s: &SparsifyStrategy) -> String {
    match s.target_size() {
        Some(k) => format!("{}:{k}", s.name()),
        None => s.name().to_string(),
    }
}

/// Trains every strategy on the same trial seeds, so strategy `a` and `b`
/// see the same raw data, init and batch order in trial `t`.
pub fn run_sparsify_compare(
    p: &Pipeline,
    strategies: &[SparsifyStrategy],
    trials: usize,
    master_seed: u64,
    jobs: usize,
) -> Result<SparsifyComparison> {
    if strategies.len() < 2 || trials == 0 {
        return Err(Error::InvalidConfig("sparsify comparison needs >= 2 strategies and trials >= 1".into()));
    }
    let mut base = p.clone();
    base.train.eval_train = false;
    base.train.stop_loss = 0.0;
    for &s in strategies {
        Pipeline { sparsify: s, ..base.clone() }.validate()?;
    }
    let ns = strategies.len();
    let runs = parallel_map(ns * trials, jobs, |job| {
        let (i, t) = (job / trials, job % trials);
        let q = Pipeline {
            sparsify: strategies[i],
            ..base.clone()
        };
        let out = run_trial(&q, master_seed, trial_seed(master_seed, t), false)?;
        let curve = out
            .trajectory
            .as_ref()
            .map(|tr| tr.records.iter().map(|r| (r.iter, r.test_hinge)).collect::<Vec<_>>());
        Ok((out.final_test_hinge(), curve))
    })?;
    let mut curves = Vec::with_capacity(ns);
    let mut outcomes = Vec::with_capacity(ns);
    for (i, s) in strategies.iter().enumerate() {
        let chunk = &runs[i * trials..(i + 1) * trials];
        let ok: Vec<Vec<(usize, f64)>> = chunk.iter().filter_map(|(_, c)| c.clone()).collect();
        if !ok.is_empty() {
            curves.push(mean_curve(&series_name(s), &ok)?);
        }
        outcomes.push(StrategyOutcome {
            strategy: *s,
            finals: chunk.iter().map(|(f, _)| *f).collect(),
        });
    }
    Ok(SparsifyComparison { curves, outcomes })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergencePoint {
    pub alpha_star: f64,
    pub trials: usize,
    pub successes: usize,
    /// Median first evaluation iteration below the threshold, counting
    /// failed trials as infinitely late. `None` (censored) when the median
    /// is not finite.
    pub median_iters: Option<f64>,
}

pub const CONVERGENCE_HEADER: &str = "alpha_star,trials,successes,median_iters";

pub fn convergence_to_csv(points: &[ConvergencePoint]) -> String {
    let mut out = String::from(CONVERGENCE_HEADER);
    out.push('\n');
    for c in points {
        let m = c.median_iters.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{m}", c.alpha_star, c.trials, c.successes).expect("writing to a String");
    }
    out
}

fn median_with_censoring(mut v: Vec<f64>) -> Option<f64> {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    m.is_finite().then_some(m)
}

/// Iterations to success as alpha_* varies at fixed N = `p.data.n_train`.
pub fn run_convergence_sweep(
    p: &Pipeline,
    alpha_nd: f64,
    alphas: &[f64],
    trials: usize,
    threshold: f64,
    master_seed: u64,
    jobs: usize,
) -> Result<Vec<ConvergencePoint>> {
    if alphas.is_empty() || trials == 0 {
        return Err(Error::InvalidConfig("convergence sweep needs alpha values and trials >= 1".into()));
    }
    let axis = GridAxis::AlphaStar { alpha_nd };
    let mut base = p.clone();
    base.train.eval_train = false;
    base.train.stop_loss = threshold;
    let n = base.data.n_train;
    for &a in alphas {
        axis.apply(&base, a, n).validate()?;
    }
    let iters = parallel_map(alphas.len() * trials, jobs, |job| {
        let (i, t) = (job / trials, job % trials);
        let q = axis.apply(&base, alphas[i], n);
        let out = run_trial(&q, master_seed, trial_seed(master_seed, t), false)?;
        Ok(out
            .trajectory
            .and_then(|tr| tr.first_iter_below(threshold))
            .map_or(f64::INFINITY, |it| it as f64))
    })?;
    Ok(alphas
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let cell = iters[i * trials..(i + 1) * trials].to_vec();
            ConvergencePoint {
                alpha_star: a,
                trials,
                successes: cell.iter().filter(|v| v.is_finite()).count(),
                median_iters: median_with_censoring(cell),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::tests::small_pipeline;

    #[test]
    fn attention_curves_are_complementary() {
        let p = small_pipeline();
        let tr = run_attention_trace(&p, 2, 4, 2).unwrap();
        let (a, b) = (&tr.curves[0], &tr.curves[1]);
        assert_eq!(a.points.len(), b.points.len());
        for (x, y) in a.points.iter().zip(&b.points) {
            assert_eq!(x.0, y.0);
            assert!((x.1 + y.1 - 1.0).abs() < 1e-12);
        }
        assert_eq!(tr.initial.len(), 2);
        let csv = curves_to_csv(&tr.curves);
        assert!(csv.starts_with(CURVE_HEADER));
        assert!(csv.lines().skip(1).all(|l| l.starts_with("label_relevant,") || l.starts_with("complement,")));
    }

    #[test]
    fn duplicated_strategy_gives_identical_curves() {
        let p = small_pipeline();
        let s = [SparsifyStrategy::KeepAll, SparsifyStrategy::KeepAll];
        let c = run_sparsify_compare(&p, &s, 2, 1, 2).unwrap();
        assert_eq!(c.curves[0], c.curves[1]);
        assert_eq!(c.outcomes[0].finals, c.outcomes[1].finals);
    }

    #[test]
    fn random_k_at_full_size_is_keep_all() {
        let p = small_pipeline();
        let l = p.data.tokens;
        let s = [SparsifyStrategy::KeepAll, SparsifyStrategy::RandomK { k: l }];
        let c = run_sparsify_compare(&p, &s, 2, 9, 1).unwrap();
        assert_eq!(c.curves[0].points, c.curves[1].points);
        let bits = |o: &StrategyOutcome| o.finals.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&c.outcomes[0]), bits(&c.outcomes[1]));
    }

    #[test]
    fn sparsify_needs_two_strategies() {
        let p = small_pipeline();
        assert!(run_sparsify_compare(&p, &[SparsifyStrategy::KeepAll], 1, 0, 1).is_err());
    }

    #[test]
    fn repeated_alpha_gives_identical_medians() {
        let mut p = small_pipeline();
        p.train.max_iters = 60;
        let pts = run_convergence_sweep(&p, 0.4, &[0.5, 0.5], 3, 1e-3, 2, 2).unwrap();
        assert_eq!(pts[0], pts[1]);
    }

    #[test]
    fn never_succeeding_cell_is_censored() {
        let mut p = small_pipeline();
        p.train.eta = 0.0;
        p.train.max_iters = 5;
        let pts = run_convergence_sweep(&p, 0.4, &[0.5], 2, 1e-3, 2, 1).unwrap();
        assert_eq!(pts[0].successes, 0);
        assert_eq!(pts[0].median_iters, None);
        assert!(convergence_to_csv(&pts).ends_with("0.5,2,0,\n"));
    }

    #[test]
    fn censored_median_rule() {
        assert_eq!(median_with_censoring(vec![3.0, f64::INFINITY, 1.0]), Some(3.0));
        assert_eq!(median_with_censoring(vec![1.0, f64::INFINITY]), None);
        assert_eq!(median_with_censoring(vec![2.0, 4.0]), Some(3.0));
    }

    #[test]
    fn cnn_compare_freezes_query_key_only_in_cnn_arm() {
        let p = small_pipeline();
        let spec = GridSpec {
            pipeline: &p,
            axis: GridAxis::AlphaStar { alpha_nd: 0.4 },
            axis1: &[0.5],
            axis2: &[8],
            trials: 2,
            success_threshold: 1e-3,
            master_seed: 5,
            jobs: 1,
        };
        let (vit, cnn) = run_cnn_compare(&spec).unwrap();
        let seeds = |g: &PhaseGrid| g.records.iter().map(|r| r.seed).collect::<Vec<_>>();
        assert_eq!(seeds(&vit), seeds(&cnn));
        let mut q = p.clone();
        q.train.mode = TrainMode::Vit;
        let again = run_grid(&GridSpec { pipeline: &q, ..spec }).unwrap();
        assert_eq!(again, vit);
    }
}
