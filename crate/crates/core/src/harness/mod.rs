//! Experiment orchestration: presets and config files, the toy MLP
//! baselines, training loops, probe-set evaluation against the exact grid
//! oracle, JSON/CSV reports and static SVG renders.

mod baselines;
mod config;
mod data;
mod experiment;
mod render;
mod report;
mod rollout;
mod toy_checks;
mod train;

pub use baselines::{train_baseline, train_mlp_baselines, MlpBaseline, BASELINE_HIDDEN};
pub use config::{Domain, ExperimentConfig, ProbeConfig, RolloutConfig, Variant, PRESETS};
pub use data::{
    build_datasets, grid_batch, grid_input, probe_set, stream_rng, toy_batch, BatchSource, Datasets,
    Stream,
};
pub use experiment::{
    evaluate_likelihood, probe_metrics, record_probe_metrics, run_experiment, run_seed,
    worker_threads, write_artifacts, Artifacts, ProbeResult, RunOutput,
};
pub use render::{predict_samples, render_grid_predictions, render_svg, Marginals};
pub use report::{aggregate, Aggregate, Metric, Probe, Report, RunReport};
pub use rollout::{
    rollout_in_model, write_rollout, EpsilonGreedy, FixedAction, Policy, RolloutStep, Trajectory,
};
pub use toy_checks::{mean_std, toy_samples, two_means, weights_near};
pub use train::{train_vae, TrainOutcome, TrainPoint, VaeHook, VaeTrainer};
