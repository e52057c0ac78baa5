//! Exact next-state distributions of the stochastic gridworld, checked
//! against simulated steps.
//!
//! `cargo run --release --example gridworld_oracle`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stochweave::envs::{grid_step, grid_true_next_dist, Action, GridLayout};
use stochweave::metrics::{empirical_dist, hellinger};

fn main() -> stochweave::Result<()> {
    let layout = GridLayout::default();
    let s = layout.start_state();
    let truth = grid_true_next_dist(&layout, &s, Action::Right)?;
    println!("from the start state, action right: {} outcomes", truth.len());
    for (next, p) in truth.iter() {
        println!("  agent {:?} ghost1 {:?} ghost2 {:?}  p = {p:.4}", next.agent, next.ghost1, next.ghost2);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let draws: Vec<_> = (0..100_000)
        .map(|_| grid_step(&layout, &s, Action::Right, &mut rng).map(|o| o.0))
        .collect::<stochweave::Result<_>>()?;
    let emp = empirical_dist(&draws)?;
    println!("Hellinger(oracle, 1e5 simulated steps) = {:.4}", hellinger(&truth, &emp));
    println!("layout hash {}", layout.hash());
    Ok(())
}
