// Trains the same trial with all weights trainable and with attention
// frozen, and prints the feature-learning probes along the way.
//
// cargo run --release --example train_vit [OUT_DIR]

use std::path::{Path, PathBuf};

use vitlab::experiments::{prepare_trial, trial_seed, Pipeline, TrialSeeds};
use vitlab::model::Param;
use vitlab::train::{sgd_train, TrainMode};

pub fn run(out: &Path) -> vitlab::Result<()> {
    let mut pipeline: Pipeline = serde_json::from_value(serde_json::json!({
        "data": {"d": 10, "patterns": 5, "tokens": 30, "alpha_star": 0.4, "alpha_confusion": 0.1,
                 "c0": 0.01, "n_train": 48, "n_test": 48},
        "model": {"m": 40},
        "init": {"scheme": "oracle", "sigma": 0.1, "delta": 0.2},
        "train": {"eta": 1.0, "batch_size": 4, "max_iters": 200, "eval_every": 40},
        "sparsify": {"kind": "keep_all"}
    }))?;
    std::fs::create_dir_all(out)?;
    for mode in [TrainMode::Vit, TrainMode::Cnn] {
        pipeline.train.mode = mode;
        let prep = prepare_trial(&pipeline, 0, TrialSeeds::new(trial_seed(0, 0)))?;
        let mut params = prep.params.clone();
        let traj = sgd_train(&prep.train, &prep.test, &mut params, &prep.train_config, Some(&prep.probes))?;
        println!("{mode:?}:");
        println!("  iter  test_hinge  attn_conc  lucky(W,U)  qk_growth");
        for r in &traj.records {
            println!(
                "  {:>4}  {:>10.5}  {:>9.4}  {:>4},{:<5}  {:>9.4}",
                r.iter,
                r.test_hinge,
                r.attention_concentration.unwrap_or(f64::NAN),
                r.lucky_w.unwrap_or(0),
                r.lucky_u.unwrap_or(0),
                r.qk_growth.unwrap_or(f64::NAN)
            );
        }
        let frozen = [Param::Query, Param::Key]
            .iter()
            .all(|&p| params.fingerprint(p) == prep.params.fingerprint(p));
        println!("  W_Q and W_K unchanged: {frozen}");
        std::fs::write(out.join(format!("trajectory_{mode:?}.csv").to_lowercase()), traj.to_csv())?;
    }
    Ok(())
}

fn main() -> vitlab::Result<()> {
    let out = std::env::args_os()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("vitlab-train"), PathBuf::from);
    run(&out)
}
