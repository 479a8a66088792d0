// Median iterations until the test hinge falls below a threshold, per
// alpha_*, regressed on 1/alpha_*.
//
// cargo run --release --example convergence_sweep [OUT_DIR]

use std::path::{Path, PathBuf};

use vitlab::experiments::{convergence_to_csv, fit_scaling, run_convergence_sweep, Pipeline, Transform};

pub fn run(out: &Path) -> vitlab::Result<()> {
    let pipeline: Pipeline = serde_json::from_value(serde_json::json!({
        "data": {"d": 10, "patterns": 5, "tokens": 20, "alpha_star": 0.5, "alpha_confusion": 0.2,
                 "c0": 0.01, "n_train": 64, "n_test": 30},
        "model": {"m": 20},
        "init": {"scheme": "experiment", "sigma": 0.1, "delta": 0.4},
        "train": {"eta": 1.0, "batch_size": 4, "max_iters": 600, "eval_every": 10},
        "sparsify": {"kind": "keep_all"}
    }))?;
    let alphas = [0.4, 0.5, 0.6];
    let points = run_convergence_sweep(&pipeline, 0.3, &alphas, 4, 1e-3, 5, 1)?;
    for p in &points {
        println!(
            "alpha_* = {:.2}: {}/{} converged, median {:?} iterations",
            p.alpha_star, p.successes, p.trials, p.median_iters
        );
    }
    let data: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.median_iters.map(|m| (p.alpha_star, m)))
        .collect();
    match fit_scaling(&data, Transform::InversePower { p: 1.0 }) {
        Ok(f) => println!("T ~ {:.1} / alpha_* + {:.1}, R^2 = {:.3}", f.slope, f.intercept, f.r_squared),
        Err(e) => println!("no fit: {e}"),
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("convergence.csv"), convergence_to_csv(&points))?;
    Ok(())
}

fn main() -> vitlab::Result<()> {
    let out = std::env::args_os()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("vitlab-convergence"), PathBuf::from);
    run(&out)
}
