use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{sample_noise, Batch, Pass, Sampling, TransitionModel};
use crate::diffcore::{adam_step, logsumexp, value_and_grad, AdamConfig, Bound, Tape, Var};
use crate::error::{Error, Result};
use crate::latents::{LatentFamily, LatentSpec};

/// How the prior/inference divergence is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DivergenceMode {
    /// Closed-form KL (Gaussian and categorical latents).
    Analytic,
    /// Sampled `log q(z) - log p(z)` (flow latents).
    MonteCarlo,
}

impl DivergenceMode {
    pub fn for_latent(spec: &LatentSpec) -> Self {
        match spec.family {
            LatentFamily::GaussianFlow => DivergenceMode::MonteCarlo,
            _ => DivergenceMode::Analytic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    /// Importance samples per datapoint during training.
    pub k: usize,
    /// Renyi order of the importance-weighted bound.
    pub alpha: f64,
    /// Free-bits floor per latent dimension, in nats.
    pub free_bits: f64,
    pub divergence: DivergenceMode,
}

impl ObjectiveConfig {
    /// `k = 3`, `alpha = 0.5`, `free_bits = 0.07`.
    pub fn for_latent(spec: &LatentSpec) -> Self {
        Self {
            k: 3,
            alpha: 0.5,
            free_bits: 0.07,
            divergence: DivergenceMode::for_latent(spec),
        }
    }

    pub fn validate(&self, spec: &LatentSpec) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.free_bits >= 0.0) {
            return Err(Error::Config("free-bits floor must be nonnegative".into()));
        }
        if self.divergence != DivergenceMode::for_latent(spec) {
            return Err(Error::Config(format!(
                "{:?} divergence is not available for {:?} latents",
                self.divergence, spec.family
            )));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn finite(term: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numerical(term))
    }
}

/// Batch-mean `log p(y|z,x) - D(q || p)` with one draw per datapoint.
pub fn elbo_t(pass: &Pass, tape: &Tape) -> Var {
    let rec = tape.mean_all(pass.log_lik);
    let div = tape.scale(tape.sum_all(pass.divergence), 1.0 / pass.batch as f64);
    tape.sub(rec, div)
}

/// Evidence lower bound with exact (hard) latent draws; `noise` has one row
/// per datapoint.
pub fn elbo(model: &TransitionModel, batch: &Batch, noise: &Array2<f64>) -> Result<f64> {
    let tape = Tape::new();
    let params = model.store().bind_constant(&tape);
    let pass = model.pass(&tape, &params, batch, noise, 1, Sampling::Hard)?;
    let rec = tape.value(pass.log_lik);
    let div = tape.value(pass.divergence);
    finite("log-likelihood", rec.sum())?;
    finite("divergence", div.sum())?;
    finite("elbo", tape.scalar(elbo_t(&pass, &tape)))
}

/// `log w = log p(y|z,x) + log p(z|x) - log q(z|x,y)`, reshaped `batch x m`.
fn log_weights_t(pass: &Pass, tape: &Tape) -> Var {
    let joint = tape.add(pass.log_lik, pass.log_prior);
    let w = tape.sub(joint, pass.log_q);
    tape.reshape(w, pass.batch, pass.m)
}

/// Renyi bound averaged over the batch: per datapoint
/// `1/(1-alpha) * log mean_m w_m^(1-alpha)`.
pub fn vr_bound_t(pass: &Pass, tape: &Tape, alpha: f64) -> Var {
    let w = log_weights_t(pass, tape);
    let lse = tape.logsumexp_cols(tape.scale(w, 1.0 - alpha));
    let per = tape.add_scalar(lse, -(pass.m as f64).ln());
    tape.scale(tape.mean_all(per), 1.0 / (1.0 - alpha))
}

/// Renyi bound with exact latent draws; `noise` has `batch.len() * m` rows.
pub fn vr_bound(
    model: &TransitionModel,
    batch: &Batch,
    noise: &Array2<f64>,
    m: usize,
    alpha: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    if m == 0 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    let tape = Tape::new();
    let params = model.store().bind_constant(&tape);
    let pass = model.pass(&tape, &params, batch, noise, m, Sampling::Hard)?;
    let w = tape.value(log_weights_t(&pass, &tape));
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("importance weights"));
    }
    finite("vr bound", tape.scalar(vr_bound_t(&pass, &tape, alpha)))
}

/// `reconstruction - sum_j max(lambda, divergence_j)`.
pub fn free_bits_objective(reconstruction: f64, divergences: &[f64], lambda: f64) -> f64 {
    reconstruction - divergences.iter().map(|d| d.max(0.0).max(lambda)).sum::<f64>()
}

/// Tape pieces of the training objective.
#[derive(Debug, Clone, Copy)]
pub struct TrainingTerms {
    /// Loss to minimize (negated objective), `1 x 1`.
    pub loss: Var,
    /// Importance-weighted reconstruction term, `1 x 1`.
    pub reconstruction: Var,
    /// Batch-mean divergence per latent dimension, `1 x n`.
    pub divergences: Var,
}

/// Renyi-style reconstruction over the `k` draws minus the free-bits
/// penalty on the per-dimension divergence.
pub fn training_terms_t(pass: &Pass, tape: &Tape, cfg: &ObjectiveConfig) -> TrainingTerms {
    let a = 1.0 - cfg.alpha;
    let ll = tape.reshape(pass.log_lik, pass.batch, pass.m);
    let lse = tape.logsumexp_cols(tape.scale(ll, a));
    let per = tape.add_scalar(lse, -(pass.m as f64).ln());
    let reconstruction = tape.scale(tape.mean_all(per), 1.0 / a);
    let divergences = tape.mean_rows(pass.divergence);
    let floored = tape.max_scalar(tape.max_scalar(divergences, 0.0), cfg.free_bits);
    let objective = tape.sub(reconstruction, tape.sum_all(floored));
    TrainingTerms {
        loss: tape.neg(objective),
        reconstruction,
        divergences,
    }
}

/// Builds the training loss for `cfg.k` draws per datapoint.
pub fn training_loss_t(
    model: &TransitionModel,
    tape: &Tape,
    params: &Bound,
    batch: &Batch,
    noise: &Array2<f64>,
    cfg: &ObjectiveConfig,
    sampling: Sampling,
) -> Result<TrainingTerms> {
    cfg.validate(model.latent())?;
    let pass = model.pass(tape, params, batch, noise, cfg.k, sampling)?;
    Ok(training_terms_t(&pass, tape, cfg))
}

/// Summary of one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub loss: f64,
    pub reconstruction: f64,
    /// Batch-mean divergence per latent dimension.
    pub divergences: Vec<f64>,
    /// `max(free_bits, divergence)` per dimension, as charged in the loss.
    pub penalties: Vec<f64>,
}

/// One Adam step on the training loss with the given noise and temperature.
pub fn train_step(
    model: &mut TransitionModel,
    batch: &Batch,
    noise: &Array2<f64>,
    cfg: &ObjectiveConfig,
    tau: f64,
    lr: f64,
    adam: AdamConfig,
) -> Result<StepReport> {
    let mut recon = 0.0;
    let mut divs = Vec::new();
    let (loss, grads) = value_and_grad(model.store(), |tape, params| {
        let terms = training_loss_t(
            model,
            tape,
            params,
            batch,
            noise,
            cfg,
            Sampling::Relaxed { tau },
        )?;
        recon = tape.scalar(terms.reconstruction);
        divs = tape.value(terms.divergences).row(0).to_vec();
        Ok(terms.loss)
    })?;
    adam_step(model.store_mut(), &grads, lr, adam)?;
    let penalties = divs.iter().map(|d| d.max(0.0).max(cfg.free_bits)).collect();
    Ok(StepReport {
        loss,
        reconstruction: recon,
        divergences: divs,
        penalties,
    })
}

/// Rows of latent draws processed per evaluation chunk.
const EVAL_ROWS: usize = 4096;

/// Importance-sampled negative log-likelihood with explicit noise
/// (`batch.len() * m` rows, draw `j` of datapoint `i` at row `i*m + j`).
pub fn test_nll_with_noise(
    model: &TransitionModel,
    batch: &Batch,
    noise: &Array2<f64>,
    m: usize,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::Domain("need at least one importance sample".into()));
    }
    let n = batch.len();
    if noise.nrows() != n * m {
        return Err(Error::Config(format!("noise must have {} rows", n * m)));
    }
    let per_chunk = (EVAL_ROWS / m).max(1);
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + per_chunk).min(n);
        let sub = batch.slice(start, end);
        let sub_noise = noise.slice(s![start * m..end * m, ..]).to_owned();
        total += chunk_log_marginals(model, &sub, &sub_noise, m)?.iter().sum::<f64>();
        start = end;
    }
    finite("test nll", -total / n as f64)
}

/// Per-datapoint `log (1/m) sum_j w_j`.
fn chunk_log_marginals(
    model: &TransitionModel,
    batch: &Batch,
    noise: &Array2<f64>,
    m: usize,
) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let params = model.store().bind_constant(&tape);
    let pass = model.pass(&tape, &params, batch, noise, m, Sampling::Hard)?;
    let w = tape.value(log_weights_t(&pass, &tape));
    if w.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::numerical("importance weights"));
    }
    Ok(w.rows()
        .into_iter()
        .map(|r| logsumexp(r.iter().copied()) - (m as f64).ln())
        .collect())
}

/// Per-datapoint importance-sampled `log p(y | x)` estimates.
pub fn log_marginals<R: Rng + ?Sized>(
    model: &TransitionModel,
    batch: &Batch,
    m: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let per_chunk = (EVAL_ROWS / m.max(1)).max(1);
    let mut out = Vec::with_capacity(batch.len());
    let mut start = 0;
    while start < batch.len() {
        let end = (start + per_chunk).min(batch.len());
        let noise = sample_noise(model.latent(), (end - start) * m, rng);
        out.extend(chunk_log_marginals(model, &batch.slice(start, end), &noise, m)?);
        start = end;
    }
    Ok(out)
}

/// Importance-sampled negative log-likelihood with `m` draws per datapoint.
pub fn test_nll<R: Rng + ?Sized>(
    model: &TransitionModel,
    batch: &Batch,
    m: usize,
    rng: &mut R,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::Domain("need at least one importance sample".into()));
    }
    let lm = log_marginals(model, batch, m, rng)?;
    finite("test nll", -lm.iter().sum::<f64>() / lm.len() as f64)
}
