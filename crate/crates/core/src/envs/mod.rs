//! Domains with exact ground truth: a piecewise conditional-mixture function
//! and a 7x7 gridworld with two stochastic ghosts.

mod dataset;
mod grid;
mod toy;

pub use dataset::{
    decode_transitions, encode_transitions, read_dataset, uncorrelated_dataset, write_dataset,
    DatasetHeader, Transition,
};
pub use grid::{
    agent_move, ghost_moves, grid_step, grid_true_next_dist, sample_uncorrelated_transition,
    Action, Cell, Ghost, GridEnv, GridLayout, GridState, StepOutcome,
};
pub use toy::{component_peak, toy_dataset, toy_density, toy_log_density, toy_sample, ToySpec};
