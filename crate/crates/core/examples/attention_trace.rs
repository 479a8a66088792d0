// Tracks how much attention lands on label-relevant tokens during training,
// averaged over seeds.
//
// cargo run --release --example attention_trace [OUT_DIR]

use std::path::{Path, PathBuf};

use vitlab::experiments::plot::{line_chart_svg, Series};
use vitlab::experiments::{curves_to_csv, run_attention_trace, Pipeline};

pub fn run(out: &Path) -> vitlab::Result<()> {
    let pipeline: Pipeline = serde_json::from_value(serde_json::json!({
        "data": {"d": 10, "patterns": 5, "tokens": 30, "alpha_star": 0.5, "alpha_confusion": 0.05,
                 "c0": 0.01, "n_train": 40, "n_test": 20},
        "model": {"m": 100},
        "init": {"scheme": "oracle", "sigma": 0.1, "delta": 0.2},
        "train": {"eta": 1.0, "batch_size": 10, "max_iters": 100, "eval_every": 10},
        "sparsify": {"kind": "keep_all"}
    }))?;
    let trace = run_attention_trace(&pipeline, 4, 3, 1)?;
    println!(
        "concentration {:.4} -> {:.4}, rose in {}/{} seeds",
        trace.mean_initial(),
        trace.mean_final(),
        trace.risen(),
        trace.initial.len()
    );
    let series: Vec<Series> = trace
        .curves
        .iter()
        .map(|c| Series {
            name: c.series.clone(),
            points: c.points.iter().map(|&(i, v)| (i as f64, v)).collect(),
        })
        .collect();
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("curves.csv"), curves_to_csv(&trace.curves))?;
    std::fs::write(
        out.join("curves.svg"),
        line_chart_svg(&series, "attention on label-relevant tokens", "iteration", "attention mass"),
    )?;
    Ok(())
}

fn main() -> vitlab::Result<()> {
    let out = std::env::args_os()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("vitlab-attention"), PathBuf::from);
    run(&out)
}
