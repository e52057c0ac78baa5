//! Learns the DQN and the transition model together from the agent's own
//! correlated experience, then rolls the policy forward inside the model.
//!
//! `cargo run --release --example onpolicy_rollout -- [steps] [out-dir]`

use std::path::PathBuf;

use stochweave::harness::{run_seed, stream_rng, write_rollout, ExperimentConfig, Stream};

fn main() -> stochweave::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: u64 = args.first().map_or(50_000, |s| s.parse().expect("steps"));
    let out = PathBuf::from(args.get(1).map_or("rollout", String::as_str));
    let mut cfg = ExperimentConfig::grid_onpolicy().with_steps(steps).with_seeds([0]);
    cfg.probe.samples = 2000;
    cfg.rollout.episodes = 20;
    let run = run_seed(&cfg, 0)?;
    let r = &run.report;
    println!(
        "{steps} steps in {:.0}s: greedy success {:?}, agent determinism {:?}, wall violations {:?}",
        r.wall_clock_s, r.policy_success.value, r.agent_determinism.value, r.wall_violations.value
    );
    let model = run.model.expect("on-policy runs return a model");
    let Some(traj) = run.rollouts.first() else {
        return Ok(());
    };
    for s in &traj.steps {
        println!(
            "t={:2} {:<5} agent {:?} -> {:?}  ghosts {:?} {:?}{}",
            s.t,
            s.action.name(),
            s.state.agent,
            s.next.agent,
            s.next.ghost1,
            s.next.ghost2,
            if s.retries > 0 { format!("  ({} re-draws)", s.retries) } else { String::new() }
        );
    }
    let files = write_rollout(&model, &cfg.layout, traj, 5000, &out, &mut stream_rng(0, Stream::Rollout))?;
    println!("wrote trajectory.json and {} renders to {}", files.len(), out.display());
    Ok(())
}
