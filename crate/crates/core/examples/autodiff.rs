//! Fits a small MLP to `sin(3x)` with the tape and Adam, and checks one
//! gradient against central differences.
//!
//! `cargo run --release --example autodiff`

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stochweave::diffcore::{
    adam_step, grad_check, value_and_grad, AdamConfig, Head, Mlp, MlpSpec, ParameterStore,
};

fn main() -> stochweave::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParameterStore::new();
    let net = Mlp::new(MlpSpec::new(1, &[32, 32], 1, Head::Linear), "f", &mut store, &mut rng)?;
    let x = Array2::from_shape_fn((64, 1), |(i, _)| -1.0 + 2.0 * i as f64 / 63.0);
    let y = x.mapv(|v| (3.0 * v).sin());
    let loss = |tape: &stochweave::diffcore::Tape, p: &stochweave::diffcore::Bound| {
        let out = net.forward_t(tape, p, tape.constant(x.clone()));
        Ok(tape.mean_all(tape.square(tape.sub(out, tape.constant(y.clone())))))
    };
    println!("max |analytic - numeric| gradient: {:.2e}", grad_check(&store, loss, 1e-5)?);
    for step in 0..=2000 {
        let (value, grads) = value_and_grad(&store, loss)?;
        adam_step(&mut store, &grads, 3e-3, AdamConfig::default())?;
        if step % 500 == 0 {
            println!("step {step:>4}  mse {value:.5}");
        }
    }
    Ok(())
}
