//! Trains one toy CVAE (or loads a checkpoint) and inspects its samples:
//! the deterministic left branch and the two-mode weights at x = +-0.25.
//!
//! `cargo run --release --example train_toy_cvae -- [variant] [steps] [checkpoint]`

use stochweave::cvae::TransitionModel;
use stochweave::envs::ToySpec;
use stochweave::harness::{
    mean_std, run_seed, stream_rng, toy_samples, two_means, weights_near, ExperimentConfig, Stream, Variant,
};

fn main() -> stochweave::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant = Variant::parse(args.first().map_or("vae-discrete", String::as_str))?;
    let steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let model = match args.get(2) {
        Some(path) => TransitionModel::load(std::path::Path::new(path))?.0,
        None => {
            let cfg = ExperimentConfig::toy().with_variant(variant).with_steps(steps).with_seeds([0]);
            let out = run_seed(&cfg, 0)?;
            let r = &out.report;
            println!(
                "{} after {steps} steps: test NLL {:?}, VR bound {:?}, best step {}",
                variant.name(),
                r.test_nll.value,
                r.vlb.value,
                r.best_step
            );
            out.model.expect("VAE variants return a model")
        }
    };
    let spec = ToySpec::default();
    let mut rng = stream_rng(0, Stream::Eval);
    for i in 0..5 {
        let x = -0.95 + 0.15 * i as f64;
        let (mean, std) = mean_std(&toy_samples(&model, x, 2000, &mut rng)?);
        let truth = spec.components(x)?[0].1;
        println!("x = {x:+.2}: sample mean {mean:.3} (true {truth:.3}), std {std:.3}");
    }
    for x in [-0.25, 0.25] {
        let comps = spec.components(x)?;
        let clusters = two_means(&toy_samples(&model, x, 5000, &mut rng)?)?;
        let w = weights_near(&clusters, [comps[0].1, comps[1].1]);
        println!(
            "x = {x:+.2}: weights {:.3} / {:.3} near {:+.2} / {:+.2} (true {:.1} / {:.1})",
            w[0], w[1], comps[0].1, comps[1].1, comps[0].0, comps[1].0
        );
    }
    Ok(())
}
