use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::baselines::train_baseline;
use super::config::{Domain, ExperimentConfig};
use super::data::{build_datasets, probe_set, stream_rng, Datasets, Stream};
use super::render::{predict_samples, render_grid_predictions};
use super::report::{Metric, Probe, Report, RunReport};
use super::rollout::{rollout_in_model, write_rollout, EpsilonGreedy, Trajectory};
use super::train::{train_vae, TrainPoint, VaeHook, VaeTrainer};
use crate::agent::{evaluate, run_onpolicy, Dqn};
use crate::cvae::{elbo, sample_noise, test_nll, vr_bound, Batch, ObjectiveConfig, TransitionModel};
use crate::envs::{grid_true_next_dist, Action, GridLayout, GridState};
use crate::error::{Error, Result};
use crate::metrics::{empirical_dist, hellinger, kl_categorical};

/// Worker threads for independent runs: `STOCHWEAVE_THREADS` if set to a
/// positive integer, else the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("STOCHWEAVE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Distribution metrics of one probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeResult {
    /// `D_KL(p || p_model)`; `+inf` when a true outcome was never sampled.
    pub kl_true_model: f64,
    /// `D_KL(p_model || p)`; `+inf` when the model sampled an impossible
    /// outcome.
    pub kl_model_true: f64,
    pub hellinger: f64,
    /// Model mass on the true next agent cell.
    pub agent_mass: f64,
}

/// Compares `samples` model draws per probe against the exact next-state
/// distribution.
pub fn probe_metrics<R: Rng + ?Sized>(
    model: &TransitionModel,
    layout: &GridLayout,
    probes: &[(GridState, Action)],
    samples: usize,
    rng: &mut R,
) -> Result<Vec<ProbeResult>> {
    probes
        .iter()
        .map(|(state, action)| {
            let truth = grid_true_next_dist(layout, state, *action)?;
            let draws = predict_samples(model, state, *action, samples, rng)?;
            let keys: Vec<GridState> = draws
                .rows()
                .into_iter()
                .map(|r| GridState::from_array(std::array::from_fn(|i| r[i] as u8)))
                .collect();
            let agent = truth.support()[0].agent;
            let hits = keys.iter().filter(|k| k.agent == agent).count();
            let model_dist = empirical_dist(&keys)?;
            Ok(ProbeResult {
                kl_true_model: kl_categorical(&truth, &model_dist),
                kl_model_true: kl_categorical(&model_dist, &truth),
                hellinger: hellinger(&truth, &model_dist),
                agent_mass: hits as f64 / samples as f64,
            })
        })
        .collect()
}

/// Fills the probe-set metrics of `report`.
pub fn record_probe_metrics(report: &mut RunReport, results: &[ProbeResult], samples: usize) {
    let col = |f: fn(&ProbeResult) -> f64| results.iter().map(f).collect::<Vec<f64>>();
    report.kl_true_model = Metric::mean_of(&col(|r| r.kl_true_model), samples);
    report.kl_model_true = Metric::mean_of(&col(|r| r.kl_model_true), samples);
    report.hellinger = Metric::mean_of(&col(|r| r.hellinger), samples);
    let det = col(|r| if r.agent_mass >= 0.9 { 1.0 } else { 0.0 });
    report.agent_determinism = Metric::mean_of(&det, samples);
}

/// Test-set bounds and importance-sampled NLL: the Renyi bound at the
/// training `k` and `alpha`, the single-draw ELBO and the NLL with `m`
/// draws per datapoint.
pub fn evaluate_likelihood<R: Rng + ?Sized>(
    model: &TransitionModel,
    objective: &ObjectiveConfig,
    test: &Batch,
    m: usize,
    report: &mut RunReport,
    rng: &mut R,
) -> Result<()> {
    let k = objective.k;
    let noise = sample_noise(model.latent(), test.len() * k, rng);
    report.vlb = Metric::of(vr_bound(model, test, &noise, k, objective.alpha)?, test.len(), k);
    let noise = sample_noise(model.latent(), test.len(), rng);
    report.elbo = Metric::of(elbo(model, test, &noise)?, test.len(), 1);
    report.test_nll = Metric::of(test_nll(model, test, m, rng)?, test.len(), m);
    Ok(())
}

/// Everything one seed produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub model: Option<TransitionModel>,
    pub history: Vec<TrainPoint>,
    pub dqn: Option<Dqn>,
    pub probes: Vec<ProbeResult>,
    pub rollouts: Vec<Trajectory>,
}

fn failed(report: &mut RunReport, e: Error) -> Result<()> {
    match e {
        Error::Numerical { term } => {
            report.failure = Some(format!("numerical failure in `{term}`"));
            Ok(())
        }
        e => Err(e),
    }
}

/// Trains and evaluates one seed. Numerical failures end the run early with
/// `failure` set; other errors propagate.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let data = build_datasets(cfg, seed)?;
    let mut out = if cfg.variant.is_vae() {
        match cfg.domain {
            Domain::GridOnpolicy => run_onpolicy_seed(cfg, &data, seed)?,
            _ => run_offline_seed(cfg, &data, seed)?,
        }
    } else {
        let (_, report) = train_baseline(cfg.variant, cfg, &data, seed)?;
        RunOutput {
            report,
            model: None,
            history: Vec::new(),
            dqn: None,
            probes: Vec::new(),
            rollouts: Vec::new(),
        }
    };
    out.report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(out)
}

fn evaluate_model(
    cfg: &ExperimentConfig,
    model: &TransitionModel,
    data: &Datasets,
    seed: u64,
    report: &mut RunReport,
) -> Result<Vec<ProbeResult>> {
    let mut eval = stream_rng(seed, Stream::Eval);
    if let Err(e) = evaluate_likelihood(model, &cfg.objective, &data.test, cfg.eval_samples, report, &mut eval) {
        failed(report, e)?;
        return Ok(Vec::new());
    }
    if !cfg.domain.is_grid() {
        return Ok(Vec::new());
    }
    let probes = probe_set(&cfg.layout, cfg.probe.states, cfg.probe.seed);
    let results = probe_metrics(model, &cfg.layout, &probes, cfg.probe.samples, &mut eval)?;
    record_probe_metrics(report, &results, cfg.probe.samples);
    Ok(results)
}

fn run_offline_seed(cfg: &ExperimentConfig, data: &Datasets, seed: u64) -> Result<RunOutput> {
    let mut init = stream_rng(seed, Stream::Init);
    let model = TransitionModel::new(cfg.model_config(), &mut init)?;
    let mut rng = stream_rng(seed, Stream::Noise);
    let trained = train_vae(model, cfg, &data.train, &data.val, &mut rng)?;
    let mut report = RunReport::new(cfg.domain, cfg.variant, seed);
    report.steps = trained.history.last().map_or(0, |p| p.step);
    report.best_step = trained.best_step;
    report.failure = trained.failure.clone();
    let probes = evaluate_model(cfg, &trained.model, data, seed, &mut report)?;
    Ok(RunOutput {
        report,
        model: Some(trained.model),
        history: trained.history,
        dqn: None,
        probes,
        rollouts: Vec::new(),
    })
}

fn run_onpolicy_seed(cfg: &ExperimentConfig, data: &Datasets, seed: u64) -> Result<RunOutput> {
    let mut init = stream_rng(seed, Stream::Init);
    let model = TransitionModel::new(cfg.model_config(), &mut init)?;
    let mut hook = VaeHook {
        trainer: VaeTrainer::new(model, cfg)?,
        rng: stream_rng(seed, Stream::Noise),
        model_config: cfg.model_config(),
    };
    let mut report = RunReport::new(cfg.domain, cfg.variant, seed);
    let mut agent_rng = stream_rng(seed, Stream::Agent);
    let run = match run_onpolicy(&cfg.layout, &cfg.dqn, &mut hook, &mut agent_rng) {
        Ok(run) => run,
        Err(e) => {
            failed(&mut report, e)?;
            report.steps = hook.trainer.steps_taken();
            return Ok(RunOutput {
                report,
                model: Some(hook.trainer.model),
                history: Vec::new(),
                dqn: None,
                probes: Vec::new(),
                rollouts: Vec::new(),
            });
        }
    };
    report.steps = hook.trainer.steps_taken();
    report.best_step = report.steps;
    let model = hook.trainer.model;
    let summary = evaluate(&run.dqn, &cfg.layout, 100, cfg.dqn.eval_epsilon, &mut agent_rng)?;
    report.policy_success = Metric::of(summary.success_rate(), summary.episodes, 1);
    let probes = evaluate_model(cfg, &model, data, seed, &mut report)?;
    let mut roll_rng = stream_rng(seed, Stream::Rollout);
    let policy = EpsilonGreedy {
        dqn: &run.dqn,
        epsilon: cfg.rollout.epsilon,
    };
    let mut rollouts = Vec::with_capacity(cfg.rollout.episodes);
    for _ in 0..cfg.rollout.episodes {
        rollouts.push(rollout_in_model(
            &model,
            &cfg.layout,
            &policy,
            cfg.layout.start_state(),
            cfg.rollout.steps,
            cfg.rollout.max_retries,
            &mut roll_rng,
        )?);
    }
    let (v, d) = rollouts.iter().fold((0, 0), |(v, d), t| (v + t.violations, d + t.draws));
    report.wall_violations = Metric::of(v as f64 / d.max(1) as f64, rollouts.len(), cfg.rollout.steps);
    let recent: Vec<f64> = run.log.iter().rev().take(1000).filter_map(|r| r.vae_loss).collect();
    let history = vec![TrainPoint {
        step: report.steps,
        loss: recent.iter().sum::<f64>() / recent.len().max(1) as f64,
        val_nll: test_nll(&model, &data.val, cfg.val_samples, &mut roll_rng)?,
    }];
    Ok(RunOutput {
        report,
        model: Some(model),
        history,
        dqn: Some(run.dqn),
        probes,
        rollouts,
    })
}

/// Paths of the artifacts written for one seed.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub checkpoint: Option<PathBuf>,
    pub renders: Vec<PathBuf>,
}

/// Saves the checkpoint, history and renders of one seed under `dir`.
pub fn write_artifacts(cfg: &ExperimentConfig, out: &RunOutput, dir: &Path) -> Result<Artifacts> {
    std::fs::create_dir_all(dir)?;
    let mut art = Artifacts::default();
    std::fs::write(dir.join("history.json"), serde_json::to_string_pretty(&out.history)?)?;
    let Some(model) = &out.model else {
        return Ok(art);
    };
    let ckpt = dir.join("model.bin");
    model.save(&ckpt, &cfg.objective)?;
    art.checkpoint = Some(ckpt);
    if cfg.domain.is_grid() {
        let mut rng = stream_rng(out.report.seed, Stream::Probe);
        let pairs: Vec<(GridState, Action)> = probe_set(&cfg.layout, cfg.probe.states.min(6), cfg.probe.seed);
        art.renders = render_grid_predictions(model, &cfg.layout, &pairs, cfg.probe.samples, &dir.join("renders"), &mut rng)?;
        if let Some(t) = out.rollouts.first() {
            art.renders.extend(write_rollout(model, &cfg.layout, t, cfg.probe.samples, &dir.join("rollout"), &mut rng)?);
        }
    }
    if let Some(dqn) = &out.dqn {
        dqn.save(&dir.join("dqn.bin"))?;
    }
    Ok(art)
}

/// Runs every seed (in parallel, capped by [`worker_threads`]), writes
/// per-seed artifacts under `out/seed-<n>/` and the report into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Report> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads().min(cfg.seeds.len()))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let runs: Vec<RunReport> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let o = run_seed(cfg, seed)?;
                if let Some(dir) = out {
                    write_artifacts(cfg, &o, &dir.join(format!("seed-{seed}")))?;
                }
                Ok(o.report)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let probes = if cfg.domain.is_grid() {
        probe_set(&cfg.layout, cfg.probe.states, cfg.probe.seed)
            .into_iter()
            .map(|(state, action)| Probe { state, action })
            .collect()
    } else {
        Vec::new()
    };
    let report = Report::new(cfg.clone(), probes, runs);
    if let Some(dir) = out {
        report.write(dir)?;
    }
    Ok(report)
}
