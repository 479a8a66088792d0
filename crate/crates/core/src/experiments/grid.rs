use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{parallel_map, run_trial, trial_seed, Pipeline};
use crate::error::{Error, Result};

/// What the first grid axis varies. The second axis is always N.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridAxis {
    /// alpha_* at fixed alpha_nd, so alpha_# = 1 - alpha_nd - alpha_*.
    AlphaStar { alpha_nd: f64 },
    /// Value-feature initialization error sigma.
    Sigma,
}

impl GridAxis {
    pub fn name(&self) -> &'static str {
        match self {
            GridAxis::AlphaStar { .. } => "alpha_star",
            GridAxis::Sigma => "sigma",
        }
    }

    /// Copy of `p` at axis value `v` and `n` training samples.
    pub fn apply(&self, p: &Pipeline, v: f64, n: usize) -> Pipeline {
        let mut out = p.clone();
        match *self {
            GridAxis::AlphaStar { alpha_nd } => {
                out.data.alpha_star = v;
                out.data.alpha_confusion = 1.0 - alpha_nd - v;
            }
            GridAxis::Sigma => out.init.sigma = v,
        }
        out.data.n_train = n;
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub axis1: f64,
    pub axis2: usize,
    pub trial: usize,
    pub seed: u64,
    /// Infinite when the trial diverged.
    pub final_test_hinge: f64,
    pub success: bool,
    pub iters_run: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseGrid {
    pub axis: GridAxis,
    pub axis1: Vec<f64>,
    pub axis2: Vec<usize>,
    pub trials: usize,
    /// Ordered by (axis1 index, axis2 index, trial).
    pub records: Vec<CellResult>,
}

pub const GRID_HEADER: &str = "axis1,axis2,trial,seed,final_test_hinge,success,iters_run";

impl PhaseGrid {
    fn cell(&self, i1: usize, i2: usize) -> &[CellResult] {
        let start = (i1 * self.axis2.len() + i2) * self.trials;
        &self.records[start..start + self.trials]
    }

    /// Fraction of successful trials in cell (i1, i2).
    pub fn rate(&self, i1: usize, i2: usize) -> f64 {
        let cell = self.cell(i1, i2);
        cell.iter().filter(|r| r.success).count() as f64 / cell.len() as f64
    }

    /// `rates()[i1][i2]`.
    pub fn rates(&self) -> Vec<Vec<f64>> {
        (0..self.axis1.len())
            .map(|i1| (0..self.axis2.len()).map(|i2| self.rate(i1, i2)).collect())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(GRID_HEADER);
        out.push('\n');
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.axis1,
                r.axis2,
                r.trial,
                r.seed,
                r.final_test_hinge,
                u8::from(r.success),
                r.iters_run
            )
            .expect("writing to a String");
        }
        out
    }
}

pub struct GridSpec<'a> {
    pub pipeline: &'a Pipeline,
    pub axis: GridAxis,
    pub axis1: &'a [f64],
    pub axis2: &'a [usize],
    pub trials: usize,
    pub success_threshold: f64,
    pub master_seed: u64,
    pub jobs: usize,
}

/// Runs every (cell, trial) and records success as final test hinge below
/// the threshold. Trial `t` uses the same seed in every cell.
pub fn run_grid(spec: &GridSpec) -> Result<PhaseGrid> {
    if spec.axis1.is_empty() || spec.axis2.is_empty() || spec.trials == 0 {
        return Err(Error::InvalidConfig("grid needs non-empty axes and trials >= 1".into()));
    }
    if spec.axis2.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("grid N values must be strictly increasing".into()));
    }
    let mut base = spec.pipeline.clone();
    base.train.eval_train = false;
    base.train.stop_loss = spec.success_threshold;
    let (n1, n2, t) = (spec.axis1.len(), spec.axis2.len(), spec.trials);
    for &v in spec.axis1 {
        spec.axis.apply(&base, v, spec.axis2[0]).validate()?;
    }
    let records = parallel_map(n1 * n2 * t, spec.jobs, |job| {
        let (i1, rest) = (job / (n2 * t), job % (n2 * t));
        let (i2, trial) = (rest / t, rest % t);
        let (v, n) = (spec.axis1[i1], spec.axis2[i2]);
        let p = spec.axis.apply(&base, v, n);
        let seed = trial_seed(spec.master_seed, trial);
        let out = run_trial(&p, spec.master_seed, seed, false)?;
        let hinge = out.final_test_hinge();
        Ok(CellResult {
            axis1: v,
            axis2: n,
            trial,
            seed,
            final_test_hinge: hinge,
            success: hinge < spec.success_threshold,
            iters_run: out.iters_run(),
        })
    })?;
    Ok(PhaseGrid {
        axis: spec.axis,
        axis1: spec.axis1.to_vec(),
        axis2: spec.axis2.to_vec(),
        trials: t,
        records,
    })
}

/// For each axis1 value, the smallest N whose rate and every larger N's
/// rate reach `rate_threshold`. Columns that never reach it are omitted.
pub fn extract_boundary(grid: &PhaseGrid, rate_threshold: f64) -> Result<Vec<(f64, usize)>> {
    let mut out = Vec::new();
    for (i1, &v) in grid.axis1.iter().enumerate() {
        let mut boundary = None;
        for i2 in (0..grid.axis2.len()).rev() {
            if grid.rate(i1, i2) >= rate_threshold {
                boundary = Some(grid.axis2[i2]);
            } else {
                break;
            }
        }
        if let Some(n) = boundary {
            out.push((v, n));
        }
    }
    if out.is_empty() {
        return Err(Error::NoBoundary(format!("no column reaches success rate {rate_threshold}")));
    }
    Ok(out)
}
