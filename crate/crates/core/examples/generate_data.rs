// Draws a structured dataset, reports its composition and token geometry,
// and round-trips it through the JSON format.
//
// cargo run --example generate_data [OUT_DIR]

use std::path::{Path, PathBuf};

use vitlab::data::Dataset;
use vitlab::experiments::DataConfig;
use vitlab::metrics::token_similarity_stats;

pub fn run(out: &Path) -> vitlab::Result<()> {
    let cfg: DataConfig = serde_json::from_value(serde_json::json!({
        "d": 16, "patterns": 8, "tokens": 40, "alpha_star": 0.4, "alpha_confusion": 0.15,
        "c0": 0.01, "n_train": 32, "n_test": 32
    }))?;
    let patterns = cfg.pattern_dictionary(0)?;
    let ds = cfg.generate(&patterns, cfg.n_train, 1)?;

    let (star, confusion, rest) = ds.fractions();
    println!("{} samples of {} tokens in R^{}", ds.len(), ds.tokens_per_sample(), patterns.dim());
    println!("fractions: label-relevant {star:.3}, confusion {confusion:.3}, other {rest:.3}");
    let positives = ds.samples.iter().filter(|s| s.label.sign() > 0.0).count();
    println!("labels: {positives} positive, {} negative", ds.len() - positives);
    let sim = token_similarity_stats(&ds);
    println!(
        "same-pattern inner product >= {:.4}, cross-pattern <= {:.4}, max noise {:.4}",
        sim.min_same_pattern_ip.unwrap_or(f64::NAN),
        sim.max_cross_pattern_ip.unwrap_or(f64::NAN),
        ds.max_noise()
    );

    std::fs::create_dir_all(out)?;
    let path = out.join("train.json");
    ds.save(&path)?;
    assert_eq!(Dataset::load(&path)?, ds);
    println!("wrote {}", path.display());
    Ok(())
}

fn out_dir(name: &str) -> PathBuf {
    std::env::args_os()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join(name), PathBuf::from)
}

fn main() -> vitlab::Result<()> {
    run(&out_dir("vitlab-generate-data"))
}
