//! The piecewise multimodal toy function: draws, exact density and the
//! best achievable test NLL (the conditional entropy).
//!
//! `cargo run --release --example toy_function`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stochweave::envs::{toy_dataset, toy_log_density, ToySpec};

fn main() -> stochweave::Result<()> {
    let spec = ToySpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for x in [-0.8, -0.2, 0.25, 0.7] {
        let comps = spec.components(x)?;
        let desc: Vec<String> = comps.iter().map(|(w, m)| format!("{w:.1} at {m:+.3}")).collect();
        println!("x = {x:+.2}: {}", desc.join(", "));
    }
    let data = toy_dataset(&spec, 100_000, &mut rng)?;
    let mut nll = 0.0;
    for (x, y) in &data {
        nll -= toy_log_density(&spec, *x, *y)?;
    }
    println!("NLL of the true density on 1e5 draws: {:.4}", nll / data.len() as f64);
    let left: Vec<f64> = data.iter().filter(|(x, _)| *x < -0.3).map(|p| p.1).collect();
    let mean = left.iter().sum::<f64>() / left.len() as f64;
    println!("deterministic branch (x < -0.3): mean {mean:.4} over {} draws", left.len());
    Ok(())
}
