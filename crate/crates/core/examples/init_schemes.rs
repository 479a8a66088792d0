// Compares the two initialization schemes by how closely each satisfies the
// feature-alignment assumptions.
//
// cargo run --example init_schemes

use std::path::Path;

use vitlab::experiments::{DataConfig, ModelConfig};
use vitlab::init::{assumption_residuals, initialize, InitConfig};

pub fn run(_out: &Path) -> vitlab::Result<()> {
    let data: DataConfig = serde_json::from_value(serde_json::json!({
        "d": 12, "patterns": 6, "tokens": 20, "alpha_star": 0.5, "alpha_confusion": 0.1,
        "c0": 0.01, "n_train": 8, "n_test": 8
    }))?;
    let patterns = data.pattern_dictionary(0)?;
    let dims = ModelConfig { m: 30, m_a: None, m_b: None }.dims(&data);
    for scheme in ["oracle", "experiment"] {
        for (sigma, delta) in [(0.0, 0.0), (0.1, 0.2), (0.3, 0.4)] {
            let cfg: InitConfig = serde_json::from_value(serde_json::json!({
                "scheme": scheme, "sigma": sigma, "delta": delta, "seed": 5
            }))?;
            for w in cfg.warnings(patterns.count()) {
                println!("warning: {w}");
            }
            let (params, bases) = initialize(dims, &cfg, &patterns)?;
            let r = assumption_residuals(&params, &patterns, &bases)?;
            println!(
                "{scheme:<10} sigma={sigma:.1} delta={delta:.1}: residual V {:.3} K {:.3} Q {:.3}, |W_V| {:.3} |W_K| {:.3} |W_Q| {:.3}",
                r.max_v_residual, r.max_k_residual, r.max_q_residual, r.op_norms[0], r.op_norms[1], r.op_norms[2]
            );
        }
    }
    Ok(())
}

fn main() -> vitlab::Result<()> {
    run(Path::new("."))
}
