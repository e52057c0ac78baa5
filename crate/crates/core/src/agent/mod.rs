//! Model-free DQN that generates correlated on-policy data: online and
//! target Q-networks, epsilon-greedy behaviour and the one-step Q-learning
//! loss. No replay buffer; each update uses the latest rollout fragment.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cvae::{one_hot, GRID_CLASSES};
use crate::diffcore::{
    adam_step, AdamConfig, Bound, Head, Mlp, MlpSpec, ParameterStore, Schedule, Tape, Var,
};
use crate::envs::{Action, GridEnv, GridLayout, GridState, Transition};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub gamma: f64,
    /// Environment steps between target-network copies.
    pub target_sync: u64,
    pub epsilon: Schedule,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub total_steps: u64,
    /// Size of the most recent rollout fragment used per update.
    pub batch: usize,
    /// Environment steps between Q-network updates; equal to `batch` the
    /// updates use disjoint fragments, each transition exactly once.
    #[serde(default = "default_update_every")]
    pub update_every: u64,

    /// Exploration rate while scoring a trained policy.
    pub eval_epsilon: f64,
}

fn default_update_every() -> u64 {
    32
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self::with_steps(50_000)
    }
}

impl DqnConfig {
    /// Epsilon decays 1.0 to 0.10 over the first 60% of `total_steps`.
    pub fn with_steps(total_steps: u64) -> Self {
        Self {
            gamma: 0.99,
            target_sync: 500,
            epsilon: Schedule::new(1.0, 0.10, 0.6, total_steps),
            hidden: vec![50, 50, 50],
            lr: 1e-3,
            total_steps,
            batch: 32,
            update_every: default_update_every(),
            eval_epsilon: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.target_sync == 0 || self.batch == 0 || self.update_every == 0 {
            return Err(Error::Config("sync interval, batch and update interval must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eval_epsilon) {
            return Err(Error::Config("evaluation epsilon must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Six coordinates one-hot over seven classes.
pub fn encode_state(s: &GridState) -> Vec<f64> {
    s.to_array()
        .iter()
        .flat_map(|&c| one_hot(c as f64, GRID_CLASSES).expect("grid coordinate below 7"))
        .collect()
}

fn encode_states<'a>(states: impl Iterator<Item = &'a GridState>) -> Array2<f64> {
    let rows: Vec<Vec<f64>> = states.map(encode_state).collect();
    let n = rows.len();
    Array2::from_shape_vec((n, 6 * GRID_CLASSES), rows.concat()).expect("state rows")
}

/// Lowest index among the maxima.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

/// Uniform action with probability `eps`, otherwise the greedy one.
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &[f64], eps: f64, rng: &mut R) -> Result<Action> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Domain(format!("epsilon must lie in [0, 1], got {eps}")));
    }
    if q.len() != 4 {
        return Err(Error::Config(format!("expected 4 action values, got {}", q.len())));
    }
    if rng.gen::<f64>() < eps {
        Action::from_index(rng.gen_range(0..4))
    } else {
        Action::from_index(argmax(q))
    }
}

/// One environment transition with its reward and termination flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experience {
    pub state: GridState,
    pub action: Action,
    pub reward: f64,
    pub next: GridState,
    /// Goal reached; bootstrapping is masked.
    pub terminal: bool,
}

/// Records `mean((target - Q(s, a))^2)` with the target built from a
/// detached target-network pass.
pub fn q_learning_loss_t(
    tape: &Tape,
    net: &Mlp,
    online: &Bound,
    target: &Bound,
    batch: &[Experience],
    gamma: f64,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Domain("empty Q-learning batch".into()));
    }
    let s = tape.constant(encode_states(batch.iter().map(|e| &e.state)));
    let s2 = tape.constant(encode_states(batch.iter().map(|e| &e.next)));
    let q = net.forward_t(tape, online, s);
    let next_q = tape.detach(net.forward_t(tape, target, s2));
    let next_vals = tape.value(next_q);
    if next_vals.iter().any(|v| !v.is_finite()) || tape.with_value(q, |v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::numerical("Q-values"));
    }
    let mut mask = Array2::zeros((batch.len(), 4));
    let mut targets = Array2::zeros((batch.len(), 1));
    for (i, e) in batch.iter().enumerate() {
        mask[[i, e.action.index()]] = 1.0;
        let row = next_vals.row(i);
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        targets[[i, 0]] = if e.terminal { e.reward } else { e.reward + gamma * best };
    }
    let q_sa = tape.sum_cols(tape.mul(q, tape.constant(mask)));
    let err = tape.sub(tape.constant(targets), q_sa);
    Ok(tape.mean_all(tape.square(err)))
}

/// Online and target Q-networks sharing one layout.
#[derive(Debug, Clone)]
pub struct Dqn {
    net: Mlp,
    online: ParameterStore,
    target: ParameterStore,
    adam: AdamConfig,
}

impl Dqn {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> Result<Self> {
        let spec = MlpSpec::new(6 * GRID_CLASSES, hidden, 4, Head::Linear);
        let mut online = ParameterStore::new();
        let net = Mlp::new(spec, "q", &mut online, rng)?;
        let target = online.clone();
        Ok(Self {
            net,
            online,
            target,
            adam: AdamConfig::default(),
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn online(&self) -> &ParameterStore {
        &self.online
    }

    pub fn target(&self) -> &ParameterStore {
        &self.target
    }

    pub fn q_values(&self, s: &GridState) -> Result<Vec<f64>> {
        self.net.forward(&self.online, &encode_state(s))
    }

    pub fn act<R: Rng + ?Sized>(&self, s: &GridState, eps: f64, rng: &mut R) -> Result<Action> {
        epsilon_greedy(&self.q_values(s)?, eps, rng)
    }

    /// Writes the online network; the target is restored as a copy on load.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.online
            .write_checkpoint(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path, hidden: &[usize]) -> Result<Self> {
        let spec = MlpSpec::new(6 * GRID_CLASSES, hidden, 4, Head::Linear);
        let online =
            ParameterStore::read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))?;
        let net = Mlp::attach(spec, "q", &online)?;
        Ok(Self {
            net,
            target: online.clone(),
            online,
            adam: AdamConfig::default(),
        })
    }

    /// Copies the online parameters into the target network.
    pub fn sync_target(&mut self) -> Result<()> {
        self.target.copy_values_from(&self.online)
    }

    /// One Adam step on the Q-learning loss; returns the loss before the
    /// step.
    pub fn update(&mut self, batch: &[Experience], gamma: f64, lr: f64) -> Result<f64> {
        let tape = Tape::new();
        let online = self.online.bind(&tape);
        let target = self.target.bind_constant(&tape);
        let loss = q_learning_loss_t(&tape, &self.net, &online, &target, batch, gamma)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::numerical("q loss"));
        }
        let grads = online.collect(&tape, &tape.backward(loss));
        adam_step(&mut self.online, &grads, lr, self.adam)?;
        Ok(value)
    }
}

/// Receives each on-policy minibatch; returns the model loss if it trained.
pub trait TransitionHook {
    fn update(&mut self, step: u64, batch: &[Transition]) -> Result<Option<f64>>;
}

/// Hook that ignores every batch.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoModel;

impl TransitionHook for NoModel {
    fn update(&mut self, _step: u64, _batch: &[Transition]) -> Result<Option<f64>> {
        Ok(None)
    }
}

/// One line of the on-policy log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub episode: u64,
    pub state: [u8; 6],
    pub action: Action,
    pub reward: f64,
    pub epsilon: f64,
    pub q_loss: Option<f64>,
    pub vae_loss: Option<f64>,
}

/// Result of [`run_onpolicy`].
#[derive(Debug, Clone)]
pub struct OnPolicyRun {
    pub dqn: Dqn,
    pub log: Vec<StepRecord>,
    pub episodes: u64,
    pub goals: u64,
    /// Every transition seen, in order.
    pub transitions: Vec<Transition>,
}

/// Trains the DQN online. After every environment step the latest
/// `cfg.batch` transitions update the hook; every `cfg.update_every` steps
/// they also update the Q-network.
pub fn run_onpolicy<R: Rng + ?Sized>(
    layout: &GridLayout,
    cfg: &DqnConfig,
    hook: &mut dyn TransitionHook,
    rng: &mut R,
) -> Result<OnPolicyRun> {
    cfg.validate()?;
    let mut env = GridEnv::new(layout.clone())?;
    let mut dqn = Dqn::new(&cfg.hidden, rng)?;
    let eps_schedule = cfg.epsilon.with_total(cfg.total_steps);
    let mut recent: Vec<Experience> = Vec::with_capacity(cfg.total_steps as usize);
    let mut transitions = Vec::with_capacity(cfg.total_steps as usize);
    let mut log = Vec::with_capacity(cfg.total_steps as usize);
    let (mut episode, mut goals) = (0u64, 0u64);
    let mut state = env.reset();
    for step in 0..cfg.total_steps {
        let eps = eps_schedule.value(step);
        let action = dqn.act(&state, eps, rng)?;
        let out = env.step(action, rng)?;
        recent.push(Experience {
            state,
            action,
            reward: out.reward,
            next: out.state,
            terminal: out.terminal,
        });
        transitions.push(Transition {
            state,
            action,
            next: out.state,
        });
        let (mut q_loss, mut vae_loss) = (None, None);
        if recent.len() >= cfg.batch {
            if (step + 1) % cfg.update_every == 0 {
                let window = &recent[recent.len() - cfg.batch..];
                q_loss = Some(dqn.update(window, cfg.gamma, cfg.lr).map_err(|e| at_step(e, step))?);
            }
            vae_loss = hook
                .update(step, &transitions[transitions.len() - cfg.batch..])
                .map_err(|e| at_step(e, step))?;
        }
        if (step + 1) % cfg.target_sync == 0 {
            dqn.sync_target()?;
        }
        log.push(StepRecord {
            step,
            episode,
            state: state.to_array(),
            action,
            reward: out.reward,
            epsilon: eps,
            q_loss,
            vae_loss,
        });
        if out.terminal {
            goals += 1;
        }
        if out.done() {
            episode += 1;
            state = env.reset();
        } else {
            state = out.state;
        }
        if recent.len() > 4 * cfg.batch {
            recent.drain(..recent.len() - cfg.batch);
        }
    }
    Ok(OnPolicyRun {
        dqn,
        log,
        episodes: episode,
        goals,
        transitions,
    })
}

fn at_step(e: Error, step: u64) -> Error {
    match e {
        Error::Numerical { term } => Error::Numerical {
            term: format!("{term} at step {step}"),
        },
        other => other,
    }
}

/// Evaluation summary over independent episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub successes: usize,
    pub mean_steps: f64,
}

impl EvalSummary {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.episodes as f64
    }
}

/// Runs `episodes` capped episodes with exploration rate `eps`.
pub fn evaluate<R: Rng + ?Sized>(
    dqn: &Dqn,
    layout: &GridLayout,
    episodes: usize,
    eps: f64,
    rng: &mut R,
) -> Result<EvalSummary> {
    let mut env = GridEnv::new(layout.clone())?;
    let (mut successes, mut steps) = (0, 0u64);
    for _ in 0..episodes {
        let mut s = env.reset();
        loop {
            let out = env.step(dqn.act(&s, eps, rng)?, rng)?;
            s = out.state;
            if out.done() {
                successes += usize::from(out.terminal);
                steps += env.steps() as u64;
                break;
            }
        }
    }
    Ok(EvalSummary {
        episodes,
        successes,
        mean_steps: steps as f64 / episodes.max(1) as f64,
    })
}

/// Writes one JSON object per line.
pub fn write_log(path: &Path, log: &[StepRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in log {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_tie_breaks_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(epsilon_greedy(&[1.0, 3.0, 3.0, 0.0], 0.0, &mut rng).unwrap(), Action::Down);
        assert!(epsilon_greedy(&[0.0; 4], 1.5, &mut rng).is_err());
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[epsilon_greedy(&[0.0, 9.0, 0.0, 0.0], 1.0, &mut rng).unwrap().index()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn epsilon_schedule_endpoints() {
        let cfg = DqnConfig::with_steps(10_000);
        assert_eq!(cfg.epsilon.value(0), 1.0);
        assert!((cfg.epsilon.value(6_000) - 0.10).abs() < 1e-15);
        assert!((cfg.epsilon.value(9_999) - 0.10).abs() < 1e-15);
    }

    /// Q-net whose last layer reads a fixed value for every action.
    fn constant_q(value: f64) -> Dqn {
        let mut dqn = Dqn::new(&[3], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for store in [&mut dqn.online, &mut dqn.target] {
            let w = store.id("q.l1.w").unwrap();
            store.get_mut(w).fill(0.0);
            let b = store.id("q.l1.b").unwrap();
            store.get_mut(b).fill(value);
        }
        dqn
    }

    fn loss_of(dqn: &Dqn, e: Experience, gamma: f64) -> f64 {
        let tape = Tape::new();
        let on = dqn.online.bind(&tape);
        let tg = dqn.target.bind(&tape);
        tape.scalar(q_learning_loss_t(&tape, &dqn.net, &on, &tg, &[e], gamma).unwrap())
    }

    fn exp(reward: f64, terminal: bool) -> Experience {
        let s = GridLayout::default().start_state();
        Experience {
            state: s,
            action: Action::Right,
            reward,
            next: s,
            terminal,
        }
    }

    #[test]
    fn loss_arithmetic() {
        assert!((loss_of(&constant_q(8.0), exp(10.0, true), 0.99) - 4.0).abs() < 1e-12);
        // online Q = 4.95, target max Q' = 5
        let mut dqn = constant_q(5.0);
        let b = dqn.online.id("q.l1.b").unwrap();
        dqn.online.get_mut(b).fill(4.95);
        assert!(loss_of(&dqn, exp(0.0, false), 0.99).abs() < 1e-20);
    }

    #[test]
    fn target_network_receives_no_gradient() {
        let dqn = Dqn::new(&[8, 8], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let tape = Tape::new();
        let on = dqn.online.bind(&tape);
        let tg = dqn.target.bind(&tape);
        let e = exp(1.0, false);
        let loss = q_learning_loss_t(&tape, &dqn.net, &on, &tg, &[e, e], 0.9).unwrap();
        let grads = tape.backward(loss);
        let tgrads = tg.collect(&tape, &grads);
        assert_eq!(tgrads.max_abs(), 0.0);
        assert!(on.collect(&tape, &grads).max_abs() > 0.0);
    }

    #[test]
    fn target_changes_only_at_sync() {
        let mut dqn = Dqn::new(&[8], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let before = dqn.target.clone();
        let batch: Vec<Experience> = (0..4).map(|i| exp(i as f64, i % 2 == 0)).collect();
        for _ in 0..3 {
            dqn.update(&batch, 0.99, 1e-2).unwrap();
        }
        for id in before.ids() {
            assert_eq!(before.get(id), dqn.target.get(id));
            assert_ne!(dqn.online.get(id), dqn.target.get(id));
        }
        dqn.sync_target().unwrap();
        for id in before.ids() {
            assert_eq!(dqn.online.get(id), dqn.target.get(id));
        }
    }

    #[test]
    fn zero_discount_learns_one_step_reward() {
        let layout = GridLayout {
            width: 3,
            height: 3,
            walls: vec![],
            goal: [2, 2],
            agent_start: [0, 0],
            ghost1_start: [0, 2],
            ghost2_start: [2, 0],
            goal_reward: 10.0,
            step_reward: 0.0,
            episode_cap: 20,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut dqn = Dqn::new(&[32, 32], &mut rng).unwrap();
        let mut env = GridEnv::new(layout.clone()).unwrap();
        let mut s = env.reset();
        let mut seen = Vec::new();
        for _ in 0..20_000 {
            let a = Action::ALL[rng.gen_range(0..4)];
            let out = env.step(a, &mut rng).unwrap();
            let e = Experience {
                state: s,
                action: a,
                reward: out.reward,
                next: out.state,
                terminal: out.terminal,
            };
            seen.push(e);
            let lo = seen.len().saturating_sub(32);
            dqn.update(&seen[lo..], 0.0, 1e-3).unwrap();
            s = if out.done() { env.reset() } else { out.state };
        }
        // agent cells next to the goal, moving into it
        for (agent, a) in [([1u8, 2u8], Action::Right), ([2, 1], Action::Up)] {
            let st = GridState {
                agent,
                ghost1: [0, 0],
                ghost2: [1, 1],
            };
            let q = dqn.q_values(&st).unwrap();
            assert!((q[a.index()] - 10.0).abs() < 1.5, "{q:?}");
        }
        let st = GridState {
            agent: [0, 0],
            ghost1: [1, 0],
            ghost2: [0, 1],
        };
        for v in dqn.q_values(&st).unwrap() {
            assert!(v.abs() < 1.5, "{v}");
        }
    }

    #[test]
    fn onpolicy_log_is_complete() {
        let cfg = DqnConfig {
            target_sync: 50,
            ..DqnConfig::with_steps(300)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let run = run_onpolicy(&GridLayout::default(), &cfg, &mut NoModel, &mut rng).unwrap();
        assert_eq!(run.log.len(), 300);
        assert!(run.log[..31].iter().all(|r| r.q_loss.is_none()));
        for r in &run.log[31..] {
            assert_eq!(r.q_loss.is_some(), (r.step + 1) % 32 == 0, "step {}", r.step);
        }
        assert_eq!(run.log[0].epsilon, 1.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        write_log(&path, &run.log).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 300);
        let first: StepRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first, run.log[0]);
    }

    #[test]
    fn checkpoint_restores_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dqn = Dqn::new(&[8, 8], &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dqn.bin");
        dqn.save(&p).unwrap();
        let back = Dqn::load(&p, &[8, 8]).unwrap();
        let s = GridLayout::default().start_state();
        assert_eq!(dqn.q_values(&s).unwrap(), back.q_values(&s).unwrap());
        assert!(Dqn::load(&p, &[8]).is_err());
    }
}
