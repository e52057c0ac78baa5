use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::DistTable;

/// A cell `[x, y]` with `y = 0` the bottom row.
pub type Cell = [u8; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Domain(format!("action index {i} out of range")))
    }

    fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, 1),
            Action::Down => (0, -1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
        }
    }
}

/// Positions of the agent and both ghosts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridState {
    pub agent: Cell,
    pub ghost1: Cell,
    pub ghost2: Cell,
}

impl GridState {
    pub fn to_array(&self) -> [u8; 6] {
        [
            self.agent[0],
            self.agent[1],
            self.ghost1[0],
            self.ghost1[1],
            self.ghost2[0],
            self.ghost2[1],
        ]
    }

    pub fn from_array(a: [u8; 6]) -> Self {
        Self {
            agent: [a[0], a[1]],
            ghost1: [a[2], a[3]],
            ghost2: [a[4], a[5]],
        }
    }

    pub fn to_f64(&self) -> [f64; 6] {
        self.to_array().map(f64::from)
    }

    /// Raw model input: six coordinates followed by the action index.
    pub fn with_action(&self, action: Action) -> [f64; 7] {
        let s = self.to_f64();
        [s[0], s[1], s[2], s[3], s[4], s[5], action.index() as f64]
    }
}

/// Walls, special cells and rewards of a gridworld.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub width: u8,
    pub height: u8,
    pub walls: Vec<Cell>,
    pub goal: Cell,
    pub agent_start: Cell,
    pub ghost1_start: Cell,
    pub ghost2_start: Cell,
    pub goal_reward: f64,
    pub step_reward: f64,
    pub episode_cap: u32,
}

impl Default for GridLayout {
    /// 7x7 with a bottom corridor and a central vertical corridor leading to
    /// the open upper rows.
    ///
    /// ```text
    /// y=6  . . . . . . G
    /// y=5  . 1 . . . . .
    /// y=4  . . # . # . .
    /// y=3  . . # . # 2 .
    /// y=2  . . # . # . .
    /// y=1  # # # . # # #
    /// y=0  A . . . . . .
    /// ```
    fn default() -> Self {
        let mut walls = vec![[0, 1], [1, 1], [2, 1], [4, 1], [5, 1], [6, 1]];
        for y in 2..=4 {
            walls.push([2, y]);
            walls.push([4, y]);
        }
        Self {
            width: 7,
            height: 7,
            walls,
            goal: [6, 6],
            agent_start: [0, 0],
            ghost1_start: [1, 5],
            ghost2_start: [5, 3],
            goal_reward: 10.0,
            step_reward: 0.0,
            episode_cap: 100,
        }
    }
}

impl GridLayout {
    pub fn in_grid(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && x < self.width as i32 && y < self.height as i32
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        self.walls.contains(&c)
    }

    /// In-grid and not a wall.
    pub fn is_open(&self, c: Cell) -> bool {
        self.in_grid(c[0] as i32, c[1] as i32) && !self.is_wall(c)
    }

    /// Every open cell in row-major order from the bottom row.
    pub fn open_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.is_wall([x, y]) {
                    out.push([x, y]);
                }
            }
        }
        out
    }

    /// Destination of a move, `None` when blocked.
    pub fn neighbour(&self, c: Cell, a: Action) -> Option<Cell> {
        let (dx, dy) = a.delta();
        let (x, y) = (c[0] as i32 + dx, c[1] as i32 + dy);
        if !self.in_grid(x, y) {
            return None;
        }
        let n = [x as u8, y as u8];
        (!self.is_wall(n)).then_some(n)
    }

    /// Shortest open path length, if any.
    pub fn distance(&self, from: Cell, to: Cell) -> Option<usize> {
        let mut seen = vec![false; self.width as usize * self.height as usize];
        let idx = |c: Cell| c[1] as usize * self.width as usize + c[0] as usize;
        let mut queue = VecDeque::from([(from, 0usize)]);
        seen[idx(from)] = true;
        while let Some((c, d)) = queue.pop_front() {
            if c == to {
                return Some(d);
            }
            for a in Action::ALL {
                if let Some(n) = self.neighbour(c, a) {
                    if !seen[idx(n)] {
                        seen[idx(n)] = true;
                        queue.push_back((n, d + 1));
                    }
                }
            }
        }
        None
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width > 7 || self.height > 7 {
            return Err(Error::Config("grid sides must lie in 1..=7".into()));
        }
        for (name, c) in [
            ("goal", self.goal),
            ("agent start", self.agent_start),
            ("ghost 1 start", self.ghost1_start),
            ("ghost 2 start", self.ghost2_start),
        ] {
            if !self.is_open(c) {
                return Err(Error::Config(format!("{name} {c:?} is not an open cell")));
            }
        }
        if self.walls.iter().any(|w| !self.in_grid(w[0] as i32, w[1] as i32)) {
            return Err(Error::Config("wall outside the grid".into()));
        }
        if self.distance(self.agent_start, self.goal).is_none() {
            return Err(Error::Config("goal is unreachable from the agent start".into()));
        }
        Ok(())
    }

    pub fn start_state(&self) -> GridState {
        GridState {
            agent: self.agent_start,
            ghost1: self.ghost1_start,
            ghost2: self.ghost2_start,
        }
    }

    pub fn check_state(&self, s: &GridState) -> Result<()> {
        for c in [s.agent, s.ghost1, s.ghost2] {
            if !self.is_open(c) {
                return Err(Error::Domain(format!("entity on invalid cell {c:?}")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the compact JSON encoding, hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("layout serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Every valid state, in lexicographic order.
    pub fn all_states(&self) -> Vec<GridState> {
        let open = self.open_cells();
        let mut out = Vec::with_capacity(open.len().pow(3));
        for &agent in &open {
            for &ghost1 in &open {
                for &ghost2 in &open {
                    out.push(GridState {
                        agent,
                        ghost1,
                        ghost2,
                    });
                }
            }
        }
        out
    }
}

/// Which ghost's movement rule applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ghost {
    /// Uniform over available directions.
    Uniform,
    /// Left/right 0.4 each, up/down 0.05 each, renormalized.
    Horizontal,
}

fn ghost_weight(g: Ghost, a: Action) -> f64 {
    match (g, a) {
        (Ghost::Uniform, _) => 1.0,
        (Ghost::Horizontal, Action::Left | Action::Right) => 0.4,
        (Ghost::Horizontal, Action::Up | Action::Down) => 0.05,
    }
}

/// Next-cell distribution of a ghost as `(cell, probability)` in action
/// order; a ghost with no open neighbour stays with probability one.
pub fn ghost_moves(layout: &GridLayout, at: Cell, ghost: Ghost) -> Vec<(Cell, f64)> {
    let opts: Vec<(Cell, f64)> = Action::ALL
        .iter()
        .filter_map(|&a| layout.neighbour(at, a).map(|c| (c, ghost_weight(ghost, a))))
        .collect();
    if opts.is_empty() {
        return vec![(at, 1.0)];
    }
    let total: f64 = opts.iter().map(|(_, w)| w).sum();
    opts.into_iter().map(|(c, w)| (c, w / total)).collect()
}

fn sample_move<R: Rng + ?Sized>(opts: &[(Cell, f64)], rng: &mut R) -> Cell {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (c, p) in opts {
        acc += p;
        if u < acc {
            return *c;
        }
    }
    opts[opts.len() - 1].0
}

/// Agent destination: blocked moves leave it in place.
pub fn agent_move(layout: &GridLayout, at: Cell, action: Action) -> Cell {
    layout.neighbour(at, action).unwrap_or(at)
}

/// One environment transition; `done` is set when the agent reaches the
/// goal. The episode cap is enforced by [`GridEnv`].
pub fn grid_step<R: Rng + ?Sized>(
    layout: &GridLayout,
    state: &GridState,
    action: Action,
    rng: &mut R,
) -> Result<(GridState, f64, bool)> {
    layout.check_state(state)?;
    let agent = agent_move(layout, state.agent, action);
    let ghost1 = sample_move(&ghost_moves(layout, state.ghost1, Ghost::Uniform), rng);
    let ghost2 = sample_move(&ghost_moves(layout, state.ghost2, Ghost::Horizontal), rng);
    let next = GridState {
        agent,
        ghost1,
        ghost2,
    };
    let done = agent == layout.goal;
    let reward = if done {
        layout.goal_reward
    } else {
        layout.step_reward
    };
    Ok((next, reward, done))
}

/// Exact next-state distribution by enumeration (at most 16 outcomes).
pub fn grid_true_next_dist(
    layout: &GridLayout,
    state: &GridState,
    action: Action,
) -> Result<DistTable<GridState>> {
    layout.check_state(state)?;
    let agent = agent_move(layout, state.agent, action);
    let g1 = ghost_moves(layout, state.ghost1, Ghost::Uniform);
    let g2 = ghost_moves(layout, state.ghost2, Ghost::Horizontal);
    let mut pairs = Vec::with_capacity(g1.len() * g2.len());
    for &(c1, p1) in &g1 {
        for &(c2, p2) in &g2 {
            pairs.push((
                GridState {
                    agent,
                    ghost1: c1,
                    ghost2: c2,
                },
                p1 * p2,
            ));
        }
    }
    DistTable::from_weights(pairs)
}

/// Uniform state and action over valid placements, followed by one step.
pub fn sample_uncorrelated_transition<R: Rng + ?Sized>(
    layout: &GridLayout,
    rng: &mut R,
) -> (GridState, Action, GridState) {
    let open = layout.open_cells();
    let pick = |rng: &mut R| open[rng.gen_range(0..open.len())];
    let state = GridState {
        agent: pick(rng),
        ghost1: pick(rng),
        ghost2: pick(rng),
    };
    let action = Action::ALL[rng.gen_range(0..4)];
    let (next, _, _) = grid_step(layout, &state, action, rng).expect("sampled state is valid");
    (state, action, next)
}

/// Outcome of [`GridEnv::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: GridState,
    pub reward: f64,
    /// Goal reached.
    pub terminal: bool,
    /// Episode cap reached without reaching the goal.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// Episodic wrapper enforcing the step cap.
#[derive(Debug, Clone)]
pub struct GridEnv {
    layout: GridLayout,
    state: GridState,
    t: u32,
}

impl GridEnv {
    pub fn new(layout: GridLayout) -> Result<Self> {
        layout.validate()?;
        let state = layout.start_state();
        Ok(Self { layout, state, t: 0 })
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn state(&self) -> GridState {
        self.state
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn reset(&mut self) -> GridState {
        self.state = self.layout.start_state();
        self.t = 0;
        self.state
    }

    pub fn step<R: Rng + ?Sized>(&mut self, action: Action, rng: &mut R) -> Result<StepOutcome> {
        let (next, reward, terminal) = grid_step(&self.layout, &self.state, action, rng)?;
        self.state = next;
        self.t += 1;
        Ok(StepOutcome {
            state: next,
            reward,
            terminal,
            truncated: !terminal && self.t >= self.layout.episode_cap,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::empirical_dist;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn open_layout() -> GridLayout {
        GridLayout {
            walls: vec![],
            ..GridLayout::default()
        }
    }

    #[test]
    fn default_layout_is_valid_and_solvable() {
        let l = GridLayout::default();
        l.validate().unwrap();
        assert_eq!(l.distance(l.agent_start, l.goal), Some(12));
        assert_eq!(l.open_cells().len(), 37);
    }

    #[test]
    fn layout_json_round_trip() {
        let l = GridLayout::default();
        let s = serde_json::to_string(&l).unwrap();
        assert!(s.contains("\"goal\":[6,6]"));
        assert!(s.contains("\"agent_start\":[0,0]"));
        let back: GridLayout = serde_json::from_str(&s).unwrap();
        assert_eq!(back, l);
        assert_eq!(back.hash(), l.hash());
        assert_eq!(l.hash().len(), 64);
    }

    #[test]
    fn ghost_probabilities_in_open_cell() {
        let l = open_layout();
        let g1 = ghost_moves(&l, [3, 3], Ghost::Uniform);
        assert_eq!(g1.len(), 4);
        assert!(g1.iter().all(|(_, p)| (*p - 0.25).abs() < 1e-12));
        // weights 0.4/0.4/0.05/0.05 renormalized over the four open moves
        let g2 = ghost_moves(&l, [3, 3], Ghost::Horizontal);
        let by = |c: Cell| g2.iter().find(|(d, _)| *d == c).unwrap().1;
        assert!((by([2, 3]) - 4.0 / 9.0).abs() < 1e-12);
        assert!((by([4, 3]) - 4.0 / 9.0).abs() < 1e-12);
        assert!((by([3, 4]) - 1.0 / 18.0).abs() < 1e-12);
        assert!((by([3, 2]) - 1.0 / 18.0).abs() < 1e-12);
        assert!((by([2, 3]) / by([3, 4]) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn reaching_goal_rewards_and_terminates() {
        let l = GridLayout::default();
        let s = GridState {
            agent: [5, 6],
            ghost1: [0, 5],
            ghost2: [5, 3],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (next, r, done) = grid_step(&l, &s, Action::Right, &mut rng).unwrap();
        assert_eq!(next.agent, [6, 6]);
        assert_eq!(r, 10.0);
        assert!(done);
        let (_, r, done) = grid_step(&l, &s, Action::Left, &mut rng).unwrap();
        assert_eq!((r, done), (0.0, false));
    }

    #[test]
    fn walls_and_edges_block_agent() {
        let l = GridLayout::default();
        assert_eq!(agent_move(&l, [0, 0], Action::Up), [0, 0]);
        assert_eq!(agent_move(&l, [0, 0], Action::Left), [0, 0]);
        assert_eq!(agent_move(&l, [3, 0], Action::Up), [3, 1]);
    }

    #[test]
    fn invalid_state_is_domain_error() {
        let l = GridLayout::default();
        let s = GridState {
            agent: [0, 1],
            ghost1: [0, 5],
            ghost2: [5, 3],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(grid_step(&l, &s, Action::Up, &mut rng), Err(Error::Domain(_))));
        assert!(grid_true_next_dist(&l, &s, Action::Up).is_err());
    }

    #[test]
    fn boxed_in_ghosts_give_point_mass() {
        // each ghost sits in a dead end with one exit
        let l = GridLayout {
            walls: vec![[1, 0], [0, 2], [6, 5], [5, 6]],
            goal: [3, 3],
            ..GridLayout::default()
        };
        let s = GridState {
            agent: [3, 3],
            ghost1: [0, 0],
            ghost2: [6, 6],
        };
        let d = grid_true_next_dist(&l, &s, Action::Up).unwrap();
        // ghost1 can only go up to (0,1); ghost2 has no move at all
        let l2 = GridLayout {
            walls: vec![[1, 0], [0, 2], [6, 5], [5, 6], [0, 1]],
            ..l.clone()
        };
        assert_eq!(d.len(), 1);
        assert_eq!(d.probs(), &[1.0]);
        assert_eq!(d.support()[0].ghost1, [0, 1]);
        let d2 = grid_true_next_dist(&l2, &s, Action::Up).unwrap();
        assert_eq!(d2.support()[0].ghost1, [0, 0]);
        assert_eq!(d2.support()[0].ghost2, [6, 6]);
    }

    #[test]
    fn two_by_two_renormalized_outcomes() {
        // ghost1 in a vertical corridor (2 options), ghost2 in a horizontal
        // corridor (left/right only)
        let l = GridLayout::default();
        let s = GridState {
            agent: [0, 0],
            ghost1: [3, 2],
            ghost2: [3, 0],
        };
        let d = grid_true_next_dist(&l, &s, Action::Right).unwrap();
        // ghost2 at (3,0) can also move up into the corridor
        assert_eq!(d.len(), 6);
        let s = GridState {
            ghost2: [1, 0],
            ..s
        };
        let d = grid_true_next_dist(&l, &s, Action::Right).unwrap();
        assert_eq!(d.len(), 4);
        assert!(d.probs().iter().all(|p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn exhaustive_sweep_sums_to_one_with_deterministic_agent() {
        let l = GridLayout::default();
        for s in l.all_states() {
            for a in Action::ALL {
                let d = grid_true_next_dist(&l, &s, a).unwrap();
                let total: f64 = d.probs().iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
                assert!(d.len() <= 16);
                let agent = agent_move(&l, s.agent, a);
                assert!(d.support().iter().all(|n| n.agent == agent));
            }
        }
    }

    #[test]
    fn monte_carlo_matches_enumeration() {
        let l = GridLayout::default();
        let s = GridState {
            agent: [3, 2],
            ghost1: [1, 3],
            ghost2: [5, 5],
        };
        let exact = grid_true_next_dist(&l, &s, Action::Up).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws: Vec<GridState> = (0..1_000_000)
            .map(|_| grid_step(&l, &s, Action::Up, &mut rng).unwrap().0)
            .collect();
        let emp = empirical_dist(&draws).unwrap();
        let tv: f64 = 0.5
            * exact
                .iter()
                .map(|(k, p)| (p - emp.prob(k)).abs())
                .sum::<f64>()
            + 0.5
                * emp
                    .iter()
                    .filter(|(k, _)| exact.prob(k) == 0.0)
                    .map(|(_, p)| p)
                    .sum::<f64>();
        assert!(tv < 0.005, "{tv}");
    }

    #[test]
    fn uncorrelated_agent_marginal_is_uniform() {
        let l = GridLayout::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let cells: Vec<Cell> = (0..n)
            .map(|_| {
                let (s, _, next) = sample_uncorrelated_transition(&l, &mut rng);
                l.check_state(&s).unwrap();
                l.check_state(&next).unwrap();
                s.agent
            })
            .collect();
        let emp = empirical_dist(&cells).unwrap();
        let open = l.open_cells();
        assert_eq!(emp.len(), open.len());
        for (_, p) in emp.iter() {
            assert!((p - 1.0 / open.len() as f64).abs() < 0.01);
        }
    }

    #[test]
    fn env_enforces_cap() {
        let l = GridLayout {
            episode_cap: 3,
            ..GridLayout::default()
        };
        let mut env = GridEnv::new(l).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o1 = env.step(Action::Left, &mut rng).unwrap();
        assert!(!o1.done());
        env.step(Action::Left, &mut rng).unwrap();
        let o3 = env.step(Action::Left, &mut rng).unwrap();
        assert!(o3.truncated && !o3.terminal);
        env.reset();
        assert_eq!(env.steps(), 0);
    }
}
