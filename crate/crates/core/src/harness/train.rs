use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::data::BatchSource;
use crate::agent::TransitionHook;
use crate::cvae::{sample_noise, test_nll, train_step, Batch, ObjectiveConfig, StepReport, TransitionModel};
use crate::diffcore::{AdamConfig, ParameterStore, Schedule};
use crate::envs::Transition;
use crate::error::{Error, Result};

/// Adam on the training objective with annealed learning rate and
/// Gumbel-Softmax temperature.
#[derive(Debug, Clone)]
pub struct VaeTrainer {
    pub model: TransitionModel,
    pub objective: ObjectiveConfig,
    pub lr: Schedule,
    pub temperature: Schedule,
    pub adam: AdamConfig,
    step: u64,
}

impl VaeTrainer {
    pub fn new(model: TransitionModel, cfg: &ExperimentConfig) -> Result<Self> {
        cfg.objective.validate(model.latent())?;
        Ok(Self {
            temperature: model.latent().temperature,
            model,
            objective: cfg.objective,
            lr: cfg.lr,
            adam: AdamConfig::default(),
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One optimizer step on `batch` with fresh noise.
    pub fn step<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<StepReport> {
        let noise = sample_noise(self.model.latent(), batch.len() * self.objective.k, rng);
        let (tau, lr) = (self.temperature.value(self.step), self.lr.value(self.step));
        let report = train_step(&mut self.model, batch, &noise, &self.objective, tau, lr, self.adam)?;
        if !report.loss.is_finite() {
            return Err(Error::numerical("training loss"));
        }
        self.step += 1;
        Ok(report)
    }
}

/// One logged point of a training run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainPoint {
    pub step: u64,
    /// Mean training loss since the previous point.
    pub loss: f64,
    pub val_nll: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation NLL seen.
    pub model: TransitionModel,
    pub best_step: u64,
    pub history: Vec<TrainPoint>,
    /// Set when training stopped on a numerical failure.
    pub failure: Option<String>,
    pub seconds: f64,
}

/// Trains for `cfg.steps` minibatches, checking validation NLL
/// `cfg.val_checks` times and keeping the best parameters.
pub fn train_vae<R: Rng + ?Sized>(
    model: TransitionModel,
    cfg: &ExperimentConfig,
    source: &BatchSource,
    val: &Batch,
    rng: &mut R,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let mut trainer = VaeTrainer::new(model, cfg)?;
    let every = (cfg.steps / cfg.val_checks.max(1)).max(1);
    let mut best: Option<(f64, u64, ParameterStore)> = None;
    let mut history = Vec::new();
    let (mut acc, mut count) = (0.0, 0u64);
    let mut failure = None;
    for step in 0..cfg.steps {
        let batch = source.next(cfg.batch_size, rng)?;
        match trainer.step(&batch, rng) {
            Ok(r) => {
                acc += r.loss;
                count += 1;
            }
            Err(Error::Numerical { term }) => {
                failure = Some(format!("numerical failure in `{term}` at step {step}"));
                break;
            }
            Err(e) => return Err(e),
        }
        if (step + 1) % every == 0 || step + 1 == cfg.steps {
            let v = match test_nll(&trainer.model, val, cfg.val_samples, rng) {
                Ok(v) => v,
                Err(Error::Numerical { term }) => {
                    failure = Some(format!("numerical failure in `{term}` at step {step}"));
                    break;
                }
                Err(e) => return Err(e),
            };
            history.push(TrainPoint {
                step: step + 1,
                loss: acc / count.max(1) as f64,
                val_nll: v,
            });
            (acc, count) = (0.0, 0);
            if best.as_ref().map_or(true, |b| v < b.0) {
                best = Some((v, step + 1, trainer.model.store().clone()));
            }
        }
    }
    let mut model = trainer.model;
    let mut best_step = cfg.steps;
    if let Some((_, s, store)) = best {
        model.store_mut().copy_values_from(&store)?;
        best_step = s;
    }
    Ok(TrainOutcome {
        model,
        best_step,
        history,
        failure,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trains a transition model on the DQN's latest rollout fragment at every
/// environment step.
pub struct VaeHook<R> {
    pub trainer: VaeTrainer,
    pub rng: R,
    pub model_config: crate::cvae::ModelConfig,
}

impl<R: Rng> TransitionHook for VaeHook<R> {
    fn update(&mut self, _step: u64, batch: &[Transition]) -> Result<Option<f64>> {
        let b = super::data::grid_batch(&self.model_config, batch)?;
        Ok(Some(self.trainer.step(&b, &mut self.rng)?.loss))
    }
}
