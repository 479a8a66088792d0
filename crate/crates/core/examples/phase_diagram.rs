// A small success-rate grid over (alpha_*, N), its boundary and the
// alpha_*^-2 regression, written as CSV and SVG.
//
// cargo run --release --example phase_diagram [OUT_DIR]

use std::path::{Path, PathBuf};

use vitlab::experiments::plot::heatmap_svg;
use vitlab::experiments::{
    extract_boundary, fit_boundary, run_phase_diagram, FitSpec, GridAxis, GridSpec, Pipeline, Response, Transform,
};

pub fn run(out: &Path) -> vitlab::Result<()> {
    let pipeline: Pipeline = serde_json::from_value(serde_json::json!({
        "data": {"d": 10, "patterns": 5, "tokens": 20, "alpha_star": 0.5, "alpha_confusion": 0.2,
                 "c0": 0.01, "n_train": 8, "n_test": 30},
        "model": {"m": 20},
        "init": {"scheme": "experiment", "sigma": 0.1, "delta": 0.2},
        "train": {"eta": 1.0, "batch_size": 4, "max_iters": 300, "eval_every": 20, "eval_train": false},
        "sparsify": {"kind": "keep_all"}
    }))?;
    let spec = GridSpec {
        pipeline: &pipeline,
        axis: GridAxis::AlphaStar { alpha_nd: 0.3 },
        axis1: &[0.4, 0.5, 0.6],
        axis2: &[4, 8, 16, 32, 64],
        trials: 4,
        success_threshold: 1e-3,
        master_seed: 6,
        jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let grid = run_phase_diagram(&spec)?;
    for (i, row) in grid.rates().iter().enumerate() {
        println!("alpha_* = {:.2}: {row:?}", grid.axis1[i]);
    }
    match extract_boundary(&grid, 0.5) {
        Ok(boundary) => {
            println!("boundary: {boundary:?}");
            let spec = FitSpec {
                transform: Transform::InversePower { p: 2.0 },
                response: Response::N,
            };
            match fit_boundary(&boundary, spec) {
                Ok(f) => println!("N* ~ {:.2} alpha^-2 + {:.2}, R^2 = {:.3}", f.slope, f.intercept, f.r_squared),
                Err(e) => println!("no fit: {e}"),
            }
        }
        Err(e) => println!("{e}"),
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("grid.csv"), grid.to_csv())?;
    std::fs::write(out.join("grid.svg"), heatmap_svg(&grid, "success rate"))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> vitlab::Result<()> {
    let out = std::env::args_os()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("vitlab-phase"), PathBuf::from);
    run(&out)
}
