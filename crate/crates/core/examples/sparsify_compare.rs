// Trains paired seeds under several sparsification strategies and compares
// their test hinge, on data where a share of tokens carries large noise.
//
// cargo run --release --example sparsify_compare [OUT_DIR]

use std::path::{Path, PathBuf};

use vitlab::experiments::{curves_to_csv, run_sparsify_compare, Pipeline};
use vitlab::sparsify::SparsifyStrategy;

pub fn run(out: &Path) -> vitlab::Result<()> {
    let pipeline: Pipeline = serde_json::from_value(serde_json::json!({
        "data": {"d": 10, "patterns": 5, "tokens": 30, "alpha_star": 0.6, "alpha_confusion": 0.05,
                 "c0": 0.01, "n_train": 40, "n_test": 40, "outliers": {"fraction": 0.4, "scale": 0.5}},
        "model": {"m": 30},
        "init": {"scheme": "experiment", "sigma": 0.1, "delta": 0.5},
        "train": {"eta": 1.0, "batch_size": 4, "max_iters": 200, "eval_every": 20, "eval_train": false},
        "sparsify": {"kind": "keep_all"}
    }))?;
    let strategies = [
        SparsifyStrategy::KeepAll,
        SparsifyStrategy::RandomK { k: 18 },
        SparsifyStrategy::DropIrrelevant { k: 18 },
        SparsifyStrategy::DropNoisy { k: 18 },
    ];
    let cmp = run_sparsify_compare(&pipeline, &strategies, 4, 4, 1)?;
    for o in &cmp.outcomes {
        println!("{:<16} mean final test hinge {:.5}", o.strategy.name(), o.mean_final());
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("curves.csv"), curves_to_csv(&cmp.curves))?;
    Ok(())
}

fn main() -> vitlab::Result<()> {
    let out = std::env::args_os()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("vitlab-sparsify"), PathBuf::from);
    run(&out)
}
