//! Learning multimodal transition distributions `p(y | x)` with conditional
//! variational inference.
//!
//! The crate covers the whole loop: a small reverse-mode differentiation
//! core ([`diffcore`]), reparametrized latent families ([`latents`]), exact
//! divergences ([`metrics`]), the conditional VAE and its objectives
//! ([`cvae`]), two environments with exact oracles ([`envs`]), a DQN used to
//! produce on-policy data ([`agent`]) and experiment orchestration
//! ([`harness`]).
//!
//! Runnable walkthroughs live in `examples/`; `cargo run --example <name>`.

pub mod diffcore;
pub mod error;
pub mod latents;
pub mod metrics;
pub mod cvae;
pub mod envs;
pub mod agent;
pub mod harness;

pub use error::{Error, Result};
