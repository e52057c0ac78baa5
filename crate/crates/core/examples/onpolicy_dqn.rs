//! Trains the DQN on the default gridworld and reports greedy success.
//!
//! `cargo run --release --example onpolicy_dqn -- [steps] [seed]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stochweave::agent::{evaluate, run_onpolicy, DqnConfig, NoModel};
use stochweave::envs::GridLayout;

fn main() -> stochweave::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map_or(50_000, |s| s.parse().expect("steps"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let layout = GridLayout::default();
    let cfg = DqnConfig::with_steps(steps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = std::time::Instant::now();
    let run = run_onpolicy(&layout, &cfg, &mut NoModel, &mut rng)?;
    println!(
        "trained {steps} steps in {:.1}s: {} episodes, {} reached the goal",
        t.elapsed().as_secs_f64(),
        run.episodes,
        run.goals
    );
    let eval = evaluate(&run.dqn, &layout, 100, cfg.eval_epsilon, &mut rng)?;
    println!(
        "evaluation (eps = {}): {}/{} successes, mean episode length {:.1}",
        cfg.eval_epsilon, eval.successes, eval.episodes, eval.mean_steps
    );
    Ok(())
}
