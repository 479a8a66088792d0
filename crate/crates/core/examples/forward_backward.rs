// One forward and backward pass on a random instance, checked against
// central finite differences in double-double precision.
//
// cargo run --example forward_backward

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vitlab::data::{make_patterns, PatternMode, TokenizedSample};
use vitlab::linalg::Matrix;
use vitlab::model::{ModelParams, Param, TrainableMask};
use vitlab::train::{grad_check, GradCheck};

pub fn run(_out: &Path) -> vitlab::Result<()> {
    let patterns = make_patterns(6, 4, PatternMode::Canonical, 0)?;
    let mut seed = 0;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams {
            w_q: Matrix::gaussian(4, 6, 1.0, &mut rng),
            w_k: Matrix::gaussian(4, 6, 1.0, &mut rng),
            w_v: Matrix::gaussian(4, 6, 1.0, &mut rng),
            w_o: Matrix::gaussian(8, 4, 1.0, &mut rng),
            a: Matrix::gaussian(6, 8, 1.0, &mut rng),
            mask: TrainableMask::ALL,
        };
        let tokens = Matrix::gaussian(6, 6, 1.0, &mut rng);
        let sample = TokenizedSample::from_parts(tokens, vec![0, 0, 0, 1, 2, 3], (0..6).collect(), &patterns)?;

        let f = params.forward(&sample)?;
        println!("seed {seed}: F(X) = {f:.6}, hinge = {:.6}", params.loss(&sample)?);
        let grads = params.backward(&sample)?;
        for (p, name) in [(Param::Query, "W_Q"), (Param::Key, "W_K"), (Param::Value, "W_V"), (Param::Output, "W_O")] {
            let g = grads.get(p).expect("all weights are trainable");
            let norm = g.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
            println!("  |grad {name}| = {norm:.6}");
        }
        match grad_check(&params, &sample, 1e-5)? {
            GradCheck::Checked { max_rel_error, entries } => {
                println!("  {entries} entries, max relative error {max_rel_error:.2e}");
                return Ok(());
            }
            GradCheck::Skipped(why) => println!("  skipped: {why}"),
        }
        seed += 1;
    }
}

fn main() -> vitlab::Result<()> {
    run(Path::new("."))
}
