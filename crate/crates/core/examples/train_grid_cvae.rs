//! Trains a grid transition model on uncorrelated transitions, scores it
//! against the exact next-state distribution on the probe set and writes a
//! few SVG renders of its predictions.
//!
//! `cargo run --release --example train_grid_cvae -- [variant] [steps] [out-dir]`

use std::path::PathBuf;

use stochweave::harness::{
    probe_set, render_grid_predictions, run_seed, stream_rng, ExperimentConfig, Stream, Variant,
};

fn main() -> stochweave::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant = Variant::parse(args.first().map_or("vae-gauss", String::as_str))?;
    let steps: u64 = args.get(1).map_or(5000, |s| s.parse().expect("steps"));
    let out = PathBuf::from(args.get(2).map_or("grid-renders", String::as_str));
    let mut cfg = ExperimentConfig::grid().with_variant(variant).with_steps(steps).with_seeds([0]);
    cfg.probe.samples = 2000;
    let run = run_seed(&cfg, 0)?;
    let r = &run.report;
    println!("{} after {steps} steps ({:.0}s)", variant.name(), r.wall_clock_s);
    for (name, m) in r.metrics() {
        if let Some(v) = m.value {
            println!("  {name:<18} {v:.4}");
        }
    }
    let worst = run
        .probes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.hellinger.total_cmp(&b.1.hellinger))
        .map(|(i, p)| (i, p.hellinger));
    if let Some((i, h)) = worst {
        println!("  worst probe #{i}: Hellinger {h:.3}");
    }
    let model = run.model.expect("VAE variants return a model");
    let pairs = probe_set(&cfg.layout, 4, cfg.probe.seed);
    let files = render_grid_predictions(&model, &cfg.layout, &pairs, 5000, &out, &mut stream_rng(0, Stream::Probe))?;
    println!("wrote {} renders to {}", files.len(), out.display());
    Ok(())
}
