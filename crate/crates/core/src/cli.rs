//! The `vitlab` command line: `generate`, `train` and `experiment`.
//!
//! Every command reads one JSON [`RunConfig`], applies flag overrides, writes
//! the resolved config next to its outputs and touches nothing outside the
//! output directory. Exit codes: 0 success, 2 config error, 3 divergence,
//! 4 I/O error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experiments::plot::{heatmap_svg, line_chart_svg, Series};
use crate::experiments::{
    convergence_to_csv, curves_to_csv, extract_boundary, fit_boundary, prepare_trial, run_attention_trace,
    run_cnn_compare, run_convergence_sweep, run_phase_diagram, run_sigma_sweep, run_sparsify_compare, trial_seed,
    ConvergencePoint, Curve, FitSpec, GridAxis, GridSpec, PhaseGrid, Response, ScalingFit, Transform, TrialSeeds,
};
use crate::model::Param;
use crate::train::{sgd_train, TrainMode};

#[derive(Debug, Parser)]
#[command(name = "vitlab", version, about = "Shallow Vision Transformer lab on structured synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Master seed; overrides `master_seed`.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Dotted override applied before parsing, e.g. `train.eta=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VAL")]
    pub set: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Vit,
    Cnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    Phase,
    Attention,
    Sparsify,
    CnnCompare,
    Convergence,
    SigmaSweep,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the (sparsified) training and test sets of trial 0 as JSON.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model; writes the trajectory CSV and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides `train.mode`.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Overrides `train.max_iters`.
        #[arg(long, value_name = "N")]
        iters: Option<usize>,
        /// Use the literal (delta^2/c0^2, sigma^2/c0^2) experiment scaling.
        #[arg(long)]
        init_literal: bool,
    },
    /// Run a seeded sweep; writes CSV, SVG and a JSON summary.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: ExperimentKind,
        /// Worker threads; results do not depend on it.
        #[arg(long, value_name = "N")]
        jobs: Option<usize>,
        /// Use the literal (delta^2/c0^2, sigma^2/c0^2) experiment scaling.
        #[arg(long)]
        init_literal: bool,
    },
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged { .. } => 3,
        Error::Io(_) => 4,
        _ => 2,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config, &common.set)?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

fn prepare_output(cfg: &RunConfig) -> Result<&Path> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write(&cfg.output_dir, "config.json", &serde_json::to_string_pretty(cfg)?)?;
    for w in cfg.init.warnings(cfg.data.patterns) {
        eprintln!("warning: {w}");
    }
    Ok(&cfg.output_dir)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common } => cmd_generate(&load(&common)?),
        Command::Train {
            common,
            mode,
            iters,
            init_literal,
        } => {
            let mut cfg = load(&common)?;
            if let Some(m) = mode {
                cfg.train.mode = match m {
                    ModeArg::Vit => TrainMode::Vit,
                    ModeArg::Cnn => TrainMode::Cnn,
                };
            }
            if let Some(t) = iters {
                cfg.train.max_iters = t;
            }
            cfg.init.literal |= init_literal;
            cmd_train(&cfg)
        }
        Command::Experiment {
            common,
            kind,
            jobs,
            init_literal,
        } => {
            let mut cfg = load(&common)?;
            cfg.init.literal |= init_literal;
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            cmd_experiment(&cfg, kind, jobs)
        }
    }
}

/// Writes `train.json` and `test.json`: the datasets trial 0 of this config trains on.
pub fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    let dir = prepare_output(cfg)?;
    let seeds = TrialSeeds::new(trial_seed(cfg.master_seed, 0));
    let prep = prepare_trial(&cfg.pipeline(), cfg.master_seed, seeds)?;
    prep.train.save(&dir.join("train.json"))?;
    prep.test.save(&dir.join("test.json"))?;
    println!(
        "wrote {} training and {} test samples of {} tokens to {}",
        prep.train.len(),
        prep.test.len(),
        prep.train.tokens_per_sample(),
        dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    iters_run: usize,
    stopped_early: bool,
    final_test_hinge: f64,
    final_test_accuracy: f64,
    initial_fingerprints: BTreeMap<String, String>,
    final_fingerprints: BTreeMap<String, String>,
}

fn fingerprints(p: &crate::model::ModelParams) -> BTreeMap<String, String> {
    [
        ("w_q", Param::Query),
        ("w_k", Param::Key),
        ("w_v", Param::Value),
        ("w_o", Param::Output),
        ("a", Param::Readout),
    ]
    .iter()
    .map(|&(name, k)| (name.to_string(), p.fingerprint(k)))
    .collect()
}

/// Trains trial 0 with probes; writes `trajectory.csv`, `init.json`,
/// `checkpoint.json` and `summary.json`.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let dir = prepare_output(cfg)?;
    let seeds = TrialSeeds::new(trial_seed(cfg.master_seed, 0));
    let prep = prepare_trial(&cfg.pipeline(), cfg.master_seed, seeds)?;
    let mut params = prep.params.clone();
    write(dir, "init.json", &prep.params.to_json()?)?;
    let traj = sgd_train(&prep.train, &prep.test, &mut params, &prep.train_config, Some(&prep.probes))?;
    write(dir, "trajectory.csv", &traj.to_csv())?;
    write(dir, "checkpoint.json", &params.to_json()?)?;
    let last = traj.last();
    let summary = TrainSummary {
        iters_run: traj.iters_run,
        stopped_early: traj.stopped_early,
        final_test_hinge: last.test_hinge,
        final_test_accuracy: last.test_accuracy,
        initial_fingerprints: fingerprints(&prep.params),
        final_fingerprints: fingerprints(&params),
    };
    write(dir, "summary.json", &serde_json::to_string_pretty(&summary)?)?;
    println!(
        "trained {} iterations: test hinge {:.3e}, accuracy {:.3}",
        traj.iters_run, last.test_hinge, last.test_accuracy
    );
    Ok(())
}

#[derive(Serialize)]
pub struct GridSummary {
    pub rates: Vec<Vec<f64>>,
    pub boundary: Option<Vec<(f64, usize)>>,
    pub fit: Option<ScalingFit>,
    /// For an offset transform, the c with response = slope * (c - x).
    pub fitted_offset: Option<f64>,
    /// Why the boundary or fit is absent.
    pub note: Option<String>,
}

pub fn grid_summary(grid: &PhaseGrid, rate_threshold: f64, fit: Option<FitSpec>) -> GridSummary {
    let mut s = GridSummary {
        rates: grid.rates(),
        boundary: None,
        fit: None,
        fitted_offset: None,
        note: None,
    };
    match extract_boundary(grid, rate_threshold) {
        Ok(b) => {
            if let Some(spec) = fit {
                match fit_boundary(&b, spec) {
                    Ok(f) => {
                        if let Transform::Offset { c } = spec.transform {
                            s.fitted_offset = (f.slope != 0.0).then(|| c + f.intercept / f.slope);
                        }
                        s.fit = Some(f);
                    }
                    Err(e) => s.note = Some(e.to_string()),
                }
            }
            s.boundary = Some(b);
        }
        Err(e) => s.note = Some(e.to_string()),
    }
    s
}

fn curve_series(curves: &[Curve]) -> Vec<Series> {
    curves
        .iter()
        .map(|c| Series {
            name: c.series.clone(),
            points: c.points.iter().map(|&(i, v)| (i as f64, v)).collect(),
        })
        .collect()
}

#[derive(Serialize)]
struct CnnSummary {
    vit: GridSummary,
    cnn: GridSummary,
}

#[derive(Serialize)]
struct AttentionSummary {
    trials: usize,
    diverged: usize,
    mean_initial: f64,
    mean_final: f64,
    risen: usize,
    initial: Vec<f64>,
    final_values: Vec<f64>,
}

#[derive(Serialize)]
struct StrategySummary {
    series: String,
    mean_final_test_hinge: f64,
    finals: Vec<f64>,
}

#[derive(Serialize)]
struct ConvergenceSummary {
    points: Vec<ConvergencePoint>,
    fit: Option<ScalingFit>,
    note: Option<String>,
}

fn grid_spec<'a>(cfg: &'a RunConfig, p: &'a crate::experiments::Pipeline, jobs: usize) -> Result<GridSpec<'a>> {
    let e = cfg.experiment()?;
    let axis = e
        .axis
        .ok_or_else(|| Error::InvalidConfig("missing field `experiment.axis`".into()))?;
    Ok(GridSpec {
        pipeline: p,
        axis,
        axis1: &e.axis1,
        axis2: &e.axis2,
        trials: e.trials,
        success_threshold: e.success_threshold,
        master_seed: cfg.master_seed,
        jobs,
    })
}

pub fn cmd_experiment(cfg: &RunConfig, kind: ExperimentKind, jobs: usize) -> Result<()> {
    let e = cfg.experiment()?.clone();
    let dir = prepare_output(cfg)?;
    let p = cfg.pipeline();
    match kind {
        ExperimentKind::Phase | ExperimentKind::SigmaSweep => {
            let spec = grid_spec(cfg, &p, jobs)?;
            let (grid, default_fit, title) = if kind == ExperimentKind::Phase {
                let fit = FitSpec {
                    transform: Transform::InversePower { p: 2.0 },
                    response: Response::N,
                };
                (run_phase_diagram(&spec)?, fit, "Success rate over (alpha_*, N)")
            } else {
                let fit = FitSpec {
                    transform: Transform::Offset { c: 0.0 },
                    response: Response::InvSqrtN,
                };
                (run_sigma_sweep(&spec)?, fit, "Success rate over (sigma, N)")
            };
            write(dir, "grid.csv", &grid.to_csv())?;
            write(dir, "grid.svg", &heatmap_svg(&grid, title))?;
            let s = grid_summary(&grid, e.rate_threshold, Some(e.fit.unwrap_or(default_fit)));
            write(dir, "summary.json", &serde_json::to_string_pretty(&s)?)?;
            println!("boundary {:?}", s.boundary);
            if let Some(f) = &s.fit {
                println!("fit slope {:.4} R^2 {:.3}", f.slope, f.r_squared);
            }
        }
        ExperimentKind::CnnCompare => {
            let spec = grid_spec(cfg, &p, jobs)?;
            let (vit, cnn) = run_cnn_compare(&spec)?;
            write(dir, "grid_vit.csv", &vit.to_csv())?;
            write(dir, "grid_cnn.csv", &cnn.to_csv())?;
            write(dir, "grid_vit.svg", &heatmap_svg(&vit, "vit: success rate over (alpha_*, N)"))?;
            write(dir, "grid_cnn.svg", &heatmap_svg(&cnn, "cnn: success rate over (alpha_*, N)"))?;
            let vit_fit = e.fit.unwrap_or(FitSpec {
                transform: Transform::InversePower { p: 2.0 },
                response: Response::N,
            });
            let cnn_fit = e.cnn_fit.unwrap_or(FitSpec {
                transform: Transform::InversePower { p: 4.0 },
                response: Response::N,
            });
            let s = CnnSummary {
                vit: grid_summary(&vit, e.rate_threshold, Some(vit_fit)),
                cnn: grid_summary(&cnn, e.rate_threshold, Some(cnn_fit)),
            };
            write(dir, "summary.json", &serde_json::to_string_pretty(&s)?)?;
            println!("vit boundary {:?}\ncnn boundary {:?}", s.vit.boundary, s.cnn.boundary);
        }
        ExperimentKind::Attention => {
            let tr = run_attention_trace(&p, e.trials, cfg.master_seed, jobs)?;
            write(dir, "curves.csv", &curves_to_csv(&tr.curves))?;
            write(
                dir,
                "curves.svg",
                &line_chart_svg(&curve_series(&tr.curves), "Attention on label-relevant tokens", "iteration", "attention mass"),
            )?;
            let s = AttentionSummary {
                trials: e.trials,
                diverged: tr.diverged,
                mean_initial: tr.mean_initial(),
                mean_final: tr.mean_final(),
                risen: tr.risen(),
                initial: tr.initial.clone(),
                final_values: tr.final_values.clone(),
            };
            write(dir, "summary.json", &serde_json::to_string_pretty(&s)?)?;
            println!("concentration {:.4} -> {:.4}, risen in {}/{}", s.mean_initial, s.mean_final, s.risen, s.trials);
        }
        ExperimentKind::Sparsify => {
            let c = run_sparsify_compare(&p, &e.strategies, e.trials, cfg.master_seed, jobs)?;
            write(dir, "curves.csv", &curves_to_csv(&c.curves))?;
            write(
                dir,
                "curves.svg",
                &line_chart_svg(&curve_series(&c.curves), "Mean test hinge by sparsification", "iteration", "test hinge"),
            )?;
            let s: Vec<StrategySummary> = c
                .outcomes
                .iter()
                .map(|o| StrategySummary {
                    series: match o.strategy.target_size() {
                        Some(k) => format!("{}:{k}", o.strategy.name()),
                        None => o.strategy.name().to_string(),
                    },
                    mean_final_test_hinge: o.mean_final(),
                    finals: o.finals.clone(),
                })
                .collect();
            write(dir, "summary.json", &serde_json::to_string_pretty(&s)?)?;
            for x in &s {
                println!("{}: mean final test hinge {:.4e}", x.series, x.mean_final_test_hinge);
            }
        }
        ExperimentKind::Convergence => {
            let Some(GridAxis::AlphaStar { alpha_nd }) = e.axis else {
                return Err(Error::InvalidConfig("convergence needs experiment.axis of kind alpha_star".into()));
            };
            let pts = run_convergence_sweep(&p, alpha_nd, &e.axis1, e.trials, e.success_threshold, cfg.master_seed, jobs)?;
            write(dir, "convergence.csv", &convergence_to_csv(&pts))?;
            let series = Series {
                name: "median iterations".into(),
                points: pts
                    .iter()
                    .map(|c| (1.0 / c.alpha_star, c.median_iters.unwrap_or(f64::NAN)))
                    .collect(),
            };
            write(
                dir,
                "convergence.svg",
                &line_chart_svg(&[series], "Iterations to success", "1 / alpha_*", "median iterations"),
            )?;
            let kept: Vec<(f64, f64)> = pts
                .iter()
                .filter_map(|c| c.median_iters.map(|m| (c.alpha_star, m)))
                .collect();
            let censored = pts.len() - kept.len();
            if censored > 0 {
                eprintln!("warning: {censored} censored alpha_* values excluded from the fit");
            }
            let transform = e.fit.map_or(Transform::InversePower { p: 1.0 }, |f| f.transform);
            let (fit, note) = match crate::experiments::fit_scaling(&kept, transform) {
                Ok(f) => (Some(f), None),
                Err(err) => (None, Some(err.to_string())),
            };
            if let Some(f) = &fit {
                println!("fit slope {:.4} R^2 {:.3}", f.slope, f.r_squared);
            }
            let s = ConvergenceSummary { points: pts, fit, note };
            write(dir, "summary.json", &serde_json::to_string_pretty(&s)?)?;
        }
    }
    Ok(())
}
