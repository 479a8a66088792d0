// Drives the command-line entry point from a committed config with dotted
// overrides, the same way `vitlab experiment` does.
//
// cargo run --release --example run_config [OUT_DIR]

use std::path::{Path, PathBuf};

use vitlab::config::RunConfig;

pub fn run(out: &Path) -> vitlab::Result<()> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json");
    let overrides = ["experiment.trials=2".to_string(), "train.max_iters=100".to_string()];
    let cfg = RunConfig::load(&config, &overrides)?;
    println!(
        "{} x {} grid, {} trials, eta {}",
        cfg.experiment()?.axis1.len(),
        cfg.experiment()?.axis2.len(),
        cfg.experiment()?.trials,
        cfg.train.eta
    );
    let mut args: Vec<std::ffi::OsString> = ["vitlab", "experiment", "--kind", "phase", "--config"]
        .map(Into::into)
        .to_vec();
    args.push(config.into());
    args.push("--out".into());
    args.push(out.into());
    for o in &overrides {
        args.push("--set".into());
        args.push(o.into());
    }
    let code = vitlab::cli::run_from_args(args);
    println!("exit code {code}");
    assert_eq!(code, 0);
    for entry in std::fs::read_dir(out)? {
        println!("  {}", entry?.file_name().to_string_lossy());
    }
    Ok(())
}

fn main() -> vitlab::Result<()> {
    let out = std::env::args_os()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("vitlab-run-config"), PathBuf::from);
    run(&out)
}
