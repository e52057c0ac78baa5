use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Variant};
use super::data::{stream_rng, Datasets, Stream};
use super::report::{Metric, RunReport};
use crate::cvae::sidecar_path;
use crate::diffcore::{
    adam_step, logsumexp, value_and_grad, AdamConfig, Head, Mlp, MlpSpec, ParameterStore,
};
use crate::error::{Error, Result};
use crate::latents::{normal_log_density, normal_log_density_t};

/// Hidden widths shared by both baselines (the decoder's 3x50).
pub const BASELINE_HIDDEN: [usize; 3] = [50, 50, 50];

/// A feed-forward regressor `y = f(x)` or, with `noise_width > 0`, a
/// Gaussian `y ~ N(mu(x, e), sigma(x, e))` driven by input noise `e`.
#[derive(Debug, Clone)]
pub struct MlpBaseline {
    pub net: Mlp,
    pub store: ParameterStore,
    pub noise_width: usize,
}

#[derive(Serialize, Deserialize)]
struct BaselineSidecar {
    spec: MlpSpec,
    noise_width: usize,
}

impl MlpBaseline {
    pub fn deterministic<R: Rng + ?Sized>(rng: &mut R) -> Result<Self> {
        let mut store = ParameterStore::new();
        let spec = MlpSpec::new(1, &BASELINE_HIDDEN, 1, Head::Linear);
        let net = Mlp::new(spec, "mlp", &mut store, rng)?;
        Ok(Self {
            net,
            store,
            noise_width: 0,
        })
    }

    pub fn with_noise<R: Rng + ?Sized>(noise_width: usize, rng: &mut R) -> Result<Self> {
        let mut store = ParameterStore::new();
        let spec = MlpSpec::new(1 + noise_width, &BASELINE_HIDDEN, 2, Head::mean_log_std());
        let net = Mlp::new(spec, "mlp", &mut store, rng)?;
        Ok(Self {
            net,
            store,
            noise_width,
        })
    }

    pub fn is_stochastic(&self) -> bool {
        self.noise_width > 0
    }

    /// Input rows `(x, e)` with `draws` fresh noise vectors per `x`, draw
    /// `j` of `x_i` at row `i * draws + j`.
    fn inputs<R: Rng + ?Sized>(&self, xs: &[f64], draws: usize, rng: &mut R) -> Array2<f64> {
        let w = 1 + self.noise_width;
        let mut a = Array2::zeros((xs.len() * draws, w));
        for (i, &x) in xs.iter().enumerate() {
            for j in 0..draws {
                let mut row = a.row_mut(i * draws + j);
                row[0] = x;
                for c in 1..w {
                    row[c] = rng.sample(StandardNormal);
                }
            }
        }
        a
    }

    /// Deterministic prediction (or `mu` at zero noise).
    pub fn predict(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let a = Array2::from_shape_fn((xs.len(), 1 + self.noise_width), |(i, j)| {
            if j == 0 { xs[i] } else { 0.0 }
        });
        Ok(self.net.forward_batch(&self.store, &a)?.column(0).to_vec())
    }

    /// Draws `n` outcomes at `x`; deterministic baselines repeat the
    /// prediction.
    pub fn sample<R: Rng + ?Sized>(&self, x: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        let out = self.net.forward_batch(&self.store, &self.inputs(&[x], n, rng))?;
        Ok(out
            .rows()
            .into_iter()
            .map(|r| {
                if self.is_stochastic() {
                    let e: f64 = rng.sample(StandardNormal);
                    r[0] + r[1].exp() * e
                } else {
                    r[0]
                }
            })
            .collect())
    }

    /// One Adam step: squared error, or Gaussian NLL of the output head
    /// with one noise draw per example.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        xs: &[f64],
        ys: &[f64],
        lr: f64,
        adam: AdamConfig,
        rng: &mut R,
    ) -> Result<f64> {
        let input = self.inputs(xs, 1, rng);
        let target = Array2::from_shape_fn((ys.len(), 1), |(i, _)| ys[i]);
        let net = &self.net;
        let stochastic = self.is_stochastic();
        let (loss, grads) = value_and_grad(&self.store, |tape, params| {
            let out = net.forward_t(tape, params, tape.constant(input.clone()));
            let y = tape.constant(target.clone());
            if stochastic {
                let mu = tape.slice_cols(out, 0, 1);
                let log_std = tape.slice_cols(out, 1, 2);
                let ll = normal_log_density_t(tape, y, mu, log_std);
                Ok(tape.neg(tape.mean_all(ll)))
            } else {
                Ok(tape.mean_all(tape.square(tape.sub(out, y))))
            }
        })?;
        if !loss.is_finite() {
            return Err(Error::numerical("baseline loss"));
        }
        adam_step(&mut self.store, &grads, lr, adam)?;
        Ok(loss)
    }

    pub fn mse(&self, pairs: &[(f64, f64)]) -> Result<f64> {
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let pred = self.predict(&xs)?;
        let se: f64 = pred.iter().zip(pairs).map(|(p, (_, y))| (p - y).powi(2)).sum();
        Ok(se / pairs.len() as f64)
    }

    /// Monte-Carlo `-mean_i log (1/m) sum_j N(y_i | mu(x_i, e_j), sigma(x_i, e_j))`.
    pub fn test_nll<R: Rng + ?Sized>(&self, pairs: &[(f64, f64)], m: usize, rng: &mut R) -> Result<f64> {
        if !self.is_stochastic() {
            return Err(Error::Domain("a deterministic network has no likelihood".into()));
        }
        if m == 0 || pairs.is_empty() {
            return Err(Error::Domain("need data and at least one noise draw".into()));
        }
        let per_chunk = (4096 / m).max(1);
        let mut total = 0.0;
        for chunk in pairs.chunks(per_chunk) {
            let xs: Vec<f64> = chunk.iter().map(|p| p.0).collect();
            let out = self.net.forward_batch(&self.store, &self.inputs(&xs, m, rng))?;
            for (i, (_, y)) in chunk.iter().enumerate() {
                let rows = out.slice(s![i * m..(i + 1) * m, ..]);
                let lp = rows
                    .rows()
                    .into_iter()
                    .map(|r| normal_log_density(*y, r[0], r[1]));
                total += logsumexp(lp) - (m as f64).ln();
            }
        }
        let nll = -total / pairs.len() as f64;
        if nll.is_finite() { Ok(nll) } else { Err(Error::numerical("baseline test nll")) }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.write_checkpoint(BufWriter::new(File::create(path)?))?;
        let side = BaselineSidecar {
            spec: self.net.spec().clone(),
            noise_width: self.noise_width,
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(sidecar_path(path))?), &side)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side: BaselineSidecar =
            serde_json::from_reader(BufReader::new(File::open(sidecar_path(path))?))?;
        let store = ParameterStore::read_checkpoint(BufReader::new(File::open(path)?))?;
        let net = Mlp::attach(side.spec, "mlp", &store)?;
        Ok(Self {
            net,
            store,
            noise_width: side.noise_width,
        })
    }
}

/// Trains one baseline with the config's batch size, step budget and
/// learning-rate schedule.
pub fn train_baseline(
    variant: Variant,
    cfg: &ExperimentConfig,
    data: &Datasets,
    seed: u64,
) -> Result<(MlpBaseline, RunReport)> {
    let start = Instant::now();
    let mut init = stream_rng(seed, Stream::Init);
    let mut net = match variant {
        Variant::MlpDet => MlpBaseline::deterministic(&mut init)?,
        Variant::MlpNoise => MlpBaseline::with_noise(cfg.noise_width, &mut init)?,
        _ => return Err(Error::Config(format!("{} is not an MLP baseline", variant.name()))),
    };
    let train = &data.toy_train;
    if train.is_empty() {
        return Err(Error::Config("MLP baselines need the toy training set".into()));
    }
    let mut rng = stream_rng(seed, Stream::Noise);
    let adam = AdamConfig::default();
    let mut report = RunReport::new(cfg.domain, variant, seed);
    for step in 0..cfg.steps {
        let rows: Vec<(f64, f64)> =
            (0..cfg.batch_size).map(|_| train[rng.gen_range(0..train.len())]).collect();
        let (xs, ys): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
        if let Err(e) = net.train_step(&xs, &ys, cfg.lr.value(step), adam, &mut rng) {
            match e {
                Error::Numerical { term } => {
                    report.failure = Some(format!("numerical failure in `{term}` at step {step}"));
                    break;
                }
                e => return Err(e),
            }
        }
        report.steps = step + 1;
    }
    report.best_step = report.steps;
    let test = &data.toy_test;
    let mut eval = stream_rng(seed, Stream::Eval);
    report.mse = Metric::of(net.mse(test)?, test.len(), 1);
    if net.is_stochastic() && report.failure.is_none() {
        match net.test_nll(test, cfg.eval_samples, &mut eval) {
            Ok(v) => report.test_nll = Metric::of(v, test.len(), cfg.eval_samples),
            Err(Error::Numerical { term }) => report.failure = Some(format!("numerical failure in `{term}`")),
            Err(e) => return Err(e),
        }
    }
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok((net, report))
}

/// Both toy baselines: the squared-error regressor and the noise-input
/// network trained on its Gaussian likelihood. VLB is NA for both and NLL
/// is NA for the deterministic one.
pub fn train_mlp_baselines(
    cfg: &ExperimentConfig,
    data: &Datasets,
    seed: u64,
) -> Result<Vec<(MlpBaseline, RunReport)>> {
    if cfg.domain.is_grid() {
        return Err(Error::Config("MLP baselines are only defined on the toy domain".into()));
    }
    [Variant::MlpDet, Variant::MlpNoise]
        .into_iter()
        .map(|v| train_baseline(v, cfg, data, seed))
        .collect()
}
