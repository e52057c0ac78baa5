//! The two feed-forward baselines on the toy function: a squared-error
//! regressor (predicts the conditional mean) and a network fed with input
//! noise and trained on its Gaussian likelihood.
//!
//! `cargo run --release --example mlp_baselines -- [steps]`

use stochweave::harness::{build_datasets, stream_rng, train_mlp_baselines, ExperimentConfig, Stream};

fn main() -> stochweave::Result<()> {
    let steps: u64 = std::env::args().nth(1).map_or(10_000, |s| s.parse().expect("steps"));
    let cfg = ExperimentConfig::toy().with_steps(steps);
    let data = build_datasets(&cfg, 0)?;
    let mut rng = stream_rng(0, Stream::Eval);
    for (net, report) in train_mlp_baselines(&cfg, &data, 0)? {
        println!(
            "{}: test MSE {:?}, test NLL {:?} ({:.1}s)",
            report.variant.name(),
            report.mse.value,
            report.test_nll.value,
            report.wall_clock_s
        );
        for x in [-0.6, 0.25, 0.75] {
            let ys = if net.is_stochastic() { net.sample(x, 5, &mut rng)? } else { net.predict(&[x])? };
            let shown: Vec<String> = ys.iter().map(|y| format!("{y:+.2}")).collect();
            println!("  x = {x:+.2}: {}", shown.join(" "));
        }
    }
    Ok(())
}
