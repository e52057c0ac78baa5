use std::path::{Path, PathBuf};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::render::{predict_samples, render_svg, Marginals};
use crate::agent::Dqn;
use crate::cvae::TransitionModel;
use crate::envs::{Action, GridLayout, GridState};
use crate::error::Result;

/// Chooses actions during a rollout.
pub trait Policy {
    fn act(&self, state: &GridState, rng: &mut dyn RngCore) -> Result<Action>;
}

/// Epsilon-greedy over a trained Q-network.
pub struct EpsilonGreedy<'a> {
    pub dqn: &'a Dqn,
    pub epsilon: f64,
}

impl Policy for EpsilonGreedy<'_> {
    fn act(&self, state: &GridState, rng: &mut dyn RngCore) -> Result<Action> {
        self.dqn.act(state, self.epsilon, rng)
    }
}

/// Always the same action.
pub struct FixedAction(pub Action);

impl Policy for FixedAction {
    fn act(&self, _state: &GridState, _rng: &mut dyn RngCore) -> Result<Action> {
        Ok(self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub t: usize,
    pub state: GridState,
    pub action: Action,
    pub next: GridState,
    /// Re-samples needed before a valid next state was drawn.
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: GridState,
    pub steps: Vec<RolloutStep>,
    /// Model draws that put an entity on a wall.
    pub violations: usize,
    /// All model draws, valid or not.
    pub draws: usize,
    /// Stopped because a step exhausted its retries.
    pub aborted: bool,
    /// The agent reached the goal inside the model.
    pub reached_goal: bool,
}

impl Trajectory {
    pub fn violation_rate(&self) -> f64 {
        self.violations as f64 / self.draws.max(1) as f64
    }
}

fn valid(layout: &GridLayout, s: &GridState) -> bool {
    layout.check_state(s).is_ok()
}

/// Rolls the policy forward inside the model only: each next state is one
/// model draw conditioned on the previous draw. Invalid draws are counted
/// and re-sampled up to `max_retries` times, after which the rollout stops.
pub fn rollout_in_model<R: Rng>(
    model: &TransitionModel,
    layout: &GridLayout,
    policy: &dyn Policy,
    start: GridState,
    steps: usize,
    max_retries: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    layout.check_state(&start)?;
    let mut traj = Trajectory {
        start,
        steps: Vec::with_capacity(steps),
        violations: 0,
        draws: 0,
        aborted: false,
        reached_goal: false,
    };
    let mut state = start;
    for t in 0..steps {
        let action = policy.act(&state, rng)?;
        let mut next = None;
        for retry in 0..=max_retries {
            let y = predict_samples(model, &state, action, 1, rng)?;
            let r = y.row(0);
            let cand = GridState::from_array(std::array::from_fn(|i| r[i] as u8));
            traj.draws += 1;
            if valid(layout, &cand) {
                next = Some((cand, retry));
                break;
            }
            traj.violations += 1;
        }
        let Some((cand, retries)) = next else {
            traj.aborted = true;
            break;
        };
        traj.steps.push(RolloutStep {
            t,
            state,
            action,
            next: cand,
            retries,
        });
        state = cand;
        if state.agent == layout.goal {
            traj.reached_goal = true;
            break;
        }
    }
    Ok(traj)
}

/// Writes `trajectory.json` and one SVG per step (the state the action was
/// taken in, with the model's predicted marginals for that step).
pub fn write_rollout<R: Rng + ?Sized>(
    model: &TransitionModel,
    layout: &GridLayout,
    traj: &Trajectory,
    samples: usize,
    dir: &Path,
    rng: &mut R,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("trajectory.json"), serde_json::to_string_pretty(traj)?)?;
    let mut out = Vec::with_capacity(traj.steps.len());
    for step in &traj.steps {
        let draws = predict_samples(model, &step.state, step.action, samples, rng)?;
        let svg = render_svg(layout, &step.state, Some(step.action), &Marginals::from_samples(&draws));
        let path = dir.join(format!("step-{:02}.svg", step.t));
        std::fs::write(&path, svg)?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvae::ModelConfig;
    use crate::latents::LatentSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> TransitionModel {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cfg = ModelConfig::grid(LatentSpec::gaussian(2));
        cfg.decoder_hidden = vec![16];
        cfg.prior_hidden = vec![8];
        cfg.inference_hidden = vec![8];
        TransitionModel::new(cfg, &mut rng).unwrap()
    }

    #[test]
    fn untrained_model_rollout_is_reproducible_and_counted() {
        let m = model();
        let layout = GridLayout::default();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rollout_in_model(&m, &layout, &FixedAction(Action::Right), layout.start_state(), 12, 10, &mut rng)
                .unwrap()
        };
        let (a, b) = (run(4), run(4));
        assert_eq!(a, b);
        let retries: usize = a.steps.iter().map(|s| s.retries).sum();
        let aborted = usize::from(a.aborted) * 11;
        assert_eq!(a.violations, retries + aborted);
        assert_eq!(a.draws, a.steps.len() + a.violations);
        for s in &a.steps {
            assert!(layout.check_state(&s.next).is_ok());
        }
    }

    #[test]
    fn rollout_writes_one_render_per_step() {
        let m = model();
        let layout = GridLayout::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let traj = Trajectory {
            start: layout.start_state(),
            steps: (0..3)
                .map(|t| RolloutStep {
                    t,
                    state: layout.start_state(),
                    action: Action::Up,
                    next: layout.start_state(),
                    retries: 0,
                })
                .collect(),
            violations: 0,
            draws: 3,
            aborted: false,
            reached_goal: false,
        };
        let dir = tempfile::tempdir().unwrap();
        let files = write_rollout(&m, &layout, &traj, 50, dir.path(), &mut rng).unwrap();
        assert_eq!(files.len(), 3);
        let back: Trajectory =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("trajectory.json")).unwrap()).unwrap();
        assert_eq!(back, traj);
    }
}
