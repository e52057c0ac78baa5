//! Differentiable-computation substrate: parameter storage, ReLU networks,
//! reverse-mode gradients, Adam and linear schedules.

mod grad;
mod mlp;
mod params;
mod schedule;
pub mod tape;

pub use grad::{
    adam_step, grad, grad_check, loss_value, relu_margin, value_and_grad, AdamConfig, LossFn,
};
pub use mlp::{Activation, Head, Mlp, MlpSpec};
pub use params::{Bound, Gradients, ParamId, ParameterStore};
pub use schedule::{schedule_value, Schedule};
pub use tape::{logsumexp, Grads, Tape, Var};
