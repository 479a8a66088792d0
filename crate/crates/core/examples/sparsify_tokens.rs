// Applies each sparsification strategy to one sample and shows how the
// active set changes.
//
// cargo run --example sparsify_tokens

use std::path::Path;

use vitlab::experiments::DataConfig;
use vitlab::sparsify::{effective_fractions, sparsify, SparsifyStrategy};

pub fn run(_out: &Path) -> vitlab::Result<()> {
    let cfg: DataConfig = serde_json::from_value(serde_json::json!({
        "d": 10, "patterns": 5, "tokens": 50, "alpha_star": 0.3, "alpha_confusion": 0.1,
        "c0": 0.05, "n_train": 1, "n_test": 1
    }))?;
    let patterns = cfg.pattern_dictionary(0)?;
    let sample = cfg.generate(&patterns, 1, 3)?.samples.remove(0);

    println!("{:<20} {:>4} {:>8} {:>10} {:>8}", "strategy", "|S|", "alpha_*", "confusion", "other");
    for strategy in [
        SparsifyStrategy::KeepAll,
        SparsifyStrategy::RandomK { k: 20 },
        SparsifyStrategy::DropIrrelevant { k: 20 },
        SparsifyStrategy::DropNoisy { k: 20 },
    ] {
        let s = sparsify(&sample, strategy, 7)?;
        let (a, c, o) = effective_fractions(&s);
        let label = match strategy.target_size() {
            Some(k) => format!("{}:{k}", strategy.name()),
            None => strategy.name().to_string(),
        };
        println!("{label:<20} {:>4} {a:>8.3} {c:>10.3} {o:>8.3}", s.active_set.len());
    }
    Ok(())
}

fn main() -> vitlab::Result<()> {
    run(Path::new("."))
}
