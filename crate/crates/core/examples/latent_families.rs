//! The three reparametrized latent families: Gaussian location-scale,
//! Gumbel-Softmax relaxations of a categorical, and an affine coupling flow.
//!
//! `cargo run --release --example latent_families`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stochweave::diffcore::ParameterStore;
use stochweave::latents::{
    gaussian_reparam, gumbel_argmax, gumbel_sample, gumbel_softmax, Flow, LatentSpec,
};

fn main() -> stochweave::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let eps: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
    let z = gaussian_reparam(&[0.0, 1.0, -2.0], &[1.0, 0.1, 0.5], &eps)?;
    println!("gaussian z = mu + sigma * eps: {z:.3?}");

    let log_w = [0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()];
    let mut counts = [0usize; 3];
    for _ in 0..100_000 {
        let g: Vec<f64> = (0..3).map(|_| gumbel_sample(rng.gen_range(1e-300..1.0)).unwrap()).collect();
        counts[gumbel_argmax(&log_w, &g)?] += 1;
    }
    println!("gumbel-max frequencies for (0.5, 0.3, 0.2): {:?}", counts.map(|c| c as f64 / 1e5));
    let g: Vec<f64> = (0..3).map(|_| gumbel_sample(rng.gen_range(1e-300..1.0)).unwrap()).collect();
    for tau in [2.0, 0.5, 0.01] {
        println!("gumbel-softmax at tau = {tau:<4}: {:.3?}", gumbel_softmax(&log_w, &g, tau)?);
    }

    let spec = LatentSpec::flow(4, 6);
    let mut store = ParameterStore::new();
    let flow = Flow::new(&spec, "flow", &mut store, &mut rng)?;
    let z0 = ndarray::Array2::from_shape_fn((5, 4), |_| rng.sample(StandardNormal));
    let (z_l, log_dets) = flow.forward_batch(&store, &z0)?;
    let back = flow.inverse_batch(&store, &z_l)?;
    let err = (&back - &z0).mapv(f64::abs).fold(0.0f64, |m, v| m.max(*v));
    println!("flow with {} layers: round-trip error {err:.1e}, log|det| of first draw {:.4}",
        spec.n_flow, log_dets.row(0).sum());
    Ok(())
}
