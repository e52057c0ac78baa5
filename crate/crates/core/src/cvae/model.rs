use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use super::encoding::{encode_inputs, encode_rows, one_hot, InputEncoding};
use super::objectives::ObjectiveConfig;
use crate::diffcore::{Bound, Head, Mlp, MlpSpec, ParameterStore, Tape, Var};
use crate::error::{Error, Result};
use crate::latents::{
    gaussian_reparam_t, gumbel_argmax, gumbel_sample, gumbel_softmax_t, normal_log_density_t,
    Flow, LatentFamily, LatentSpec,
};

/// Output distribution of the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DecoderFamily {
    /// Scalar Gaussian with learned mean and standard deviation.
    Gaussian1d,
    /// `dims` independent categoricals over `classes` values each.
    FactoredCategorical { dims: usize, classes: usize },
}

impl DecoderFamily {
    pub fn grid() -> Self {
        DecoderFamily::FactoredCategorical {
            dims: 6,
            classes: 7,
        }
    }

    /// Width of a raw outcome row.
    pub fn outcome_width(&self) -> usize {
        match self {
            DecoderFamily::Gaussian1d => 1,
            DecoderFamily::FactoredCategorical { dims, .. } => *dims,
        }
    }

    /// Width of an encoded outcome row, which is also the inference-net
    /// input contribution.
    pub fn encoded_width(&self) -> usize {
        match self {
            DecoderFamily::Gaussian1d => 1,
            DecoderFamily::FactoredCategorical { dims, classes } => dims * classes,
        }
    }

    fn output_width(&self) -> usize {
        match self {
            DecoderFamily::Gaussian1d => 2,
            DecoderFamily::FactoredCategorical { dims, classes } => dims * classes,
        }
    }

    fn head(&self) -> Head {
        match self {
            DecoderFamily::Gaussian1d => Head::mean_log_std(),
            DecoderFamily::FactoredCategorical { classes, .. } => {
                Head::SoftmaxLogits { block: *classes }
            }
        }
    }

    pub fn encode_outcome(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.outcome_width() {
            return Err(Error::Config(format!(
                "outcome has {} values, expected {}",
                raw.len(),
                self.outcome_width()
            )));
        }
        match self {
            DecoderFamily::Gaussian1d => Ok(raw.to_vec()),
            DecoderFamily::FactoredCategorical { classes, .. } => {
                let mut out = Vec::with_capacity(self.encoded_width());
                for &v in raw {
                    out.extend(one_hot(v, *classes)?);
                }
                Ok(out)
            }
        }
    }

    pub fn encode_outcomes(&self, raw: &Array2<f64>) -> Result<Array2<f64>> {
        encode_rows(raw, self.encoded_width(), |r| self.encode_outcome(r))
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent: LatentSpec,
    pub decoder: DecoderFamily,
    pub input: InputEncoding,
    pub prior_hidden: Vec<usize>,
    pub inference_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
}

impl ModelConfig {
    /// Scalar-input, scalar-output model: decoder 3x50, prior and inference
    /// 2x30.
    pub fn toy(latent: LatentSpec) -> Self {
        Self {
            latent,
            decoder: DecoderFamily::Gaussian1d,
            input: InputEncoding::Passthrough { width: 1 },
            prior_hidden: vec![30, 30],
            inference_hidden: vec![30, 30],
            decoder_hidden: vec![50, 50, 50],
        }
    }

    /// Gridworld model: decoder 3x250, prior and inference 2x100.
    pub fn grid(latent: LatentSpec) -> Self {
        Self {
            latent,
            decoder: DecoderFamily::grid(),
            input: InputEncoding::GridStateAction,
            prior_hidden: vec![100, 100],
            inference_hidden: vec![100, 100],
            decoder_hidden: vec![250, 250, 250],
        }
    }

    fn latent_head(&self) -> Head {
        match self.latent.family {
            LatentFamily::Discrete => Head::SoftmaxLogits {
                block: self.latent.k,
            },
            _ => Head::MeanLogStd {
                min_log_std: LATENT_LOG_STD.0,
                max_log_std: LATENT_LOG_STD.1,
            },
        }
    }

    fn specs(&self) -> (MlpSpec, MlpSpec, MlpSpec) {
        let x = self.input.width();
        let p = self.latent.param_width();
        let prior = MlpSpec::new(x, &self.prior_hidden, p, self.latent_head());
        let inference = MlpSpec::new(
            x + self.decoder.encoded_width(),
            &self.inference_hidden,
            p,
            self.latent_head(),
        );
        let decoder = MlpSpec::new(
            self.latent.sample_width() + x,
            &self.decoder_hidden,
            self.decoder.output_width(),
            self.decoder.head(),
        );
        (prior, inference, decoder)
    }
}

/// Latent standard deviations are confined to `[e^-7, e^3]`.
const LATENT_LOG_STD: (f64, f64) = (-7.0, 3.0);

/// Encoded conditioning inputs with their encoded outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

impl Batch {
    pub fn new(x: Array2<f64>, y: Array2<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::Config("inputs and outcomes differ in row count".into()));
        }
        Ok(Self { x, y })
    }

    /// Encodes raw inputs and outcomes for `config`.
    pub fn encode(config: &ModelConfig, raw_x: &Array2<f64>, raw_y: &Array2<f64>) -> Result<Self> {
        Self::new(
            encode_inputs(&config.input, raw_x)?,
            config.decoder.encode_outcomes(raw_y)?,
        )
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(ndarray::Axis(0), rows),
            y: self.y.select(ndarray::Axis(0), rows),
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            x: self.x.slice(s![start..end, ..]).to_owned(),
            y: self.y.slice(s![start..end, ..]).to_owned(),
        }
    }
}

/// How latent draws are produced from their noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    /// Gumbel-Softmax relaxation at temperature `tau` for discrete latents.
    Relaxed { tau: f64 },
    /// Exact draws (hard Gumbel-Max for discrete latents).
    Hard,
}

/// Standard normal noise for continuous latents, Gumbel noise for discrete
/// ones; `rows x sample_width`.
pub fn sample_noise<R: Rng + ?Sized>(spec: &LatentSpec, rows: usize, rng: &mut R) -> Array2<f64> {
    let w = spec.sample_width();
    match spec.family {
        LatentFamily::Discrete => Array2::from_shape_fn((rows, w), |_| {
            let u: f64 = Open01.sample(rng);
            gumbel_sample(u).expect("open interval draw")
        }),
        _ => Array2::from_shape_fn((rows, w), |_| StandardNormal.sample(rng)),
    }
}

/// Tape quantities of one pass over a batch with `m` latent draws per row.
///
/// Row `b * m + j` holds draw `j` of datapoint `b`.
#[derive(Debug, Clone, Copy)]
pub struct Pass {
    pub batch: usize,
    pub m: usize,
    /// `log p(y | z, x)`, `(batch*m) x 1`.
    pub log_lik: Var,
    /// `log q(z | x, y)` of the draw, `(batch*m) x 1`.
    pub log_q: Var,
    /// `log p(z | x)` of the draw, `(batch*m) x 1`.
    pub log_prior: Var,
    /// Divergence between inference and prior split per latent dimension,
    /// `batch x n`.
    pub divergence: Var,
}

/// Conditional VAE with learned prior, inference network and decoder.
#[derive(Debug, Clone)]
pub struct TransitionModel {
    config: ModelConfig,
    store: ParameterStore,
    prior: Mlp,
    inference: Mlp,
    decoder: Mlp,
    flow: Option<Flow>,
}

impl TransitionModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.latent.validate()?;
        let (ps, is, ds) = config.specs();
        let mut store = ParameterStore::new();
        let prior = Mlp::new(ps, "prior", &mut store, rng)?;
        let inference = Mlp::new(is, "inference", &mut store, rng)?;
        let decoder = Mlp::new(ds, "decoder", &mut store, rng)?;
        let flow = match config.latent.family {
            LatentFamily::GaussianFlow => Some(Flow::new(&config.latent, "flow", &mut store, rng)?),
            _ => None,
        };
        Ok(Self {
            config,
            store,
            prior,
            inference,
            decoder,
            flow,
        })
    }

    /// Rebuilds a model around an existing parameter store.
    pub fn from_store(config: ModelConfig, store: ParameterStore) -> Result<Self> {
        config.latent.validate()?;
        let (ps, is, ds) = config.specs();
        let prior = Mlp::attach(ps, "prior", &store)?;
        let inference = Mlp::attach(is, "inference", &store)?;
        let decoder = Mlp::attach(ds, "decoder", &store)?;
        let flow = match config.latent.family {
            LatentFamily::GaussianFlow => Some(Flow::attach(&config.latent, "flow", &store)?),
            _ => None,
        };
        Ok(Self {
            config,
            store,
            prior,
            inference,
            decoder,
            flow,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn latent(&self) -> &LatentSpec {
        &self.config.latent
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    pub fn prior_net(&self) -> &Mlp {
        &self.prior
    }

    pub fn inference_net(&self) -> &Mlp {
        &self.inference
    }

    pub fn decoder_net(&self) -> &Mlp {
        &self.decoder
    }

    pub fn flow(&self) -> Option<&Flow> {
        self.flow.as_ref()
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.x.ncols() != self.config.input.width()
            || batch.y.ncols() != self.config.decoder.encoded_width()
        {
            return Err(Error::Config(format!(
                "batch widths ({}, {}) do not match model ({}, {})",
                batch.x.ncols(),
                batch.y.ncols(),
                self.config.input.width(),
                self.config.decoder.encoded_width()
            )));
        }
        if batch.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        Ok(())
    }

    /// Records prior, inference, latent draw and decoder on the tape.
    ///
    /// `noise` has `batch.len() * m` rows laid out like [`Pass`].
    pub fn pass(
        &self,
        tape: &Tape,
        params: &Bound,
        batch: &Batch,
        noise: &Array2<f64>,
        m: usize,
        sampling: Sampling,
    ) -> Result<Pass> {
        self.check_batch(batch)?;
        let spec = &self.config.latent;
        let b = batch.len();
        let rows = b * m;
        if m == 0 || noise.dim() != (rows, spec.sample_width()) {
            return Err(Error::Config(format!(
                "noise must be {rows}x{}, got {:?}",
                spec.sample_width(),
                noise.dim()
            )));
        }
        if let Sampling::Relaxed { tau } = sampling {
            if !(tau > 0.0) {
                return Err(Error::Domain(format!("temperature must be positive, got {tau}")));
            }
        }
        let n = spec.n;
        let x = tape.constant(batch.x.clone());
        let y = tape.constant(batch.y.clone());
        let prior_out = self.prior.forward_t(tape, params, x);
        let xy = tape.concat_cols(&[x, y]);
        let q_out = self.inference.forward_t(tape, params, xy);
        let xr = tape.repeat_rows(x, m);
        let yr = tape.repeat_rows(y, m);
        let pr = tape.repeat_rows(prior_out, m);
        let qr = tape.repeat_rows(q_out, m);
        let eps = tape.constant(noise.clone());

        let (z, log_q, log_prior, divergence) = match spec.family {
            LatentFamily::Gaussian => {
                let (mq, lq) = (tape.slice_cols(qr, 0, n), tape.slice_cols(qr, n, 2 * n));
                let (mp, lp) = (tape.slice_cols(pr, 0, n), tape.slice_cols(pr, n, 2 * n));
                let z = gaussian_reparam_t(tape, mq, lq, eps);
                let log_q = tape.sum_cols(normal_log_density_t(tape, z, mq, lq));
                let log_prior = tape.sum_cols(normal_log_density_t(tape, z, mp, lp));
                let div = gaussian_kl_t(tape, q_out, prior_out, n);
                (z, log_q, log_prior, div)
            }
            LatentFamily::GaussianFlow => {
                let flow = self.flow.as_ref().expect("flow model has coupling layers");
                let (mq, lq) = (tape.slice_cols(qr, 0, n), tape.slice_cols(qr, n, 2 * n));
                let (mp, lp) = (tape.slice_cols(pr, 0, n), tape.slice_cols(pr, n, 2 * n));
                let z0 = gaussian_reparam_t(tape, mq, lq, eps);
                let fp = flow.forward_t(tape, params, z0);
                let base = normal_log_density_t(tape, z0, mq, lq);
                let lq_dim = tape.sub(base, fp.log_det_per_dim);
                let lp_dim = normal_log_density_t(tape, fp.z, mp, lp);
                let log_q = tape.sum_cols(lq_dim);
                let log_prior = tape.sum_cols(lp_dim);
                let ratio = tape.reshape(tape.sub(lq_dim, lp_dim), b, m * n);
                let mut acc = tape.slice_cols(ratio, 0, n);
                for j in 1..m {
                    acc = tape.add(acc, tape.slice_cols(ratio, j * n, (j + 1) * n));
                }
                let div = tape.scale(acc, 1.0 / m as f64);
                (fp.z, log_q, log_prior, div)
            }
            LatentFamily::Discrete => {
                let k = spec.k;
                let z = match sampling {
                    Sampling::Relaxed { tau } => gumbel_softmax_t(tape, qr, eps, k, tau),
                    Sampling::Hard => {
                        let logits = tape.value(qr);
                        tape.constant(hard_samples(&logits, noise, k)?)
                    }
                };
                let log_q = tape.sum_cols(tape.mul(z, qr));
                let log_prior = tape.sum_cols(tape.mul(z, pr));
                let wq = tape.exp(q_out);
                let gap = tape.sub(q_out, prior_out);
                let div = tape.sum_blocks(tape.mul(wq, gap), k);
                (z, log_q, log_prior, div)
            }
        };

        let dec_in = tape.concat_cols(&[z, xr]);
        let out = self.decoder.forward_t(tape, params, dec_in);
        let log_lik = match self.config.decoder {
            DecoderFamily::Gaussian1d => {
                let mean = tape.slice_cols(out, 0, 1);
                let ls = tape.slice_cols(out, 1, 2);
                normal_log_density_t(tape, yr, mean, ls)
            }
            DecoderFamily::FactoredCategorical { .. } => tape.sum_cols(tape.mul(yr, out)),
        };
        Ok(Pass {
            batch: b,
            m,
            log_lik,
            log_q,
            log_prior,
            divergence,
        })
    }

    /// Parameters of `p(z | x)` for encoded inputs.
    pub fn prior_params(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.prior.forward_batch(&self.store, x)
    }

    /// Parameters of `q(z | x, y)`.
    pub fn inference_params(&self, batch: &Batch) -> Result<Array2<f64>> {
        self.check_batch(batch)?;
        let xy = ndarray::concatenate(ndarray::Axis(1), &[batch.x.view(), batch.y.view()])
            .map_err(|e| Error::Config(e.to_string()))?;
        self.inference.forward_batch(&self.store, &xy)
    }

    /// Draws latents from the prior for each row of encoded `x`.
    pub fn sample_prior_latents<R: Rng + ?Sized>(
        &self,
        x: &Array2<f64>,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        let spec = &self.config.latent;
        let params = self.prior_params(x)?;
        let noise = sample_noise(spec, x.nrows(), rng);
        match spec.family {
            LatentFamily::Discrete => hard_samples(&params, &noise, spec.k),
            _ => {
                let n = spec.n;
                let mu = params.slice(s![.., ..n]);
                let sigma = params.slice(s![.., n..]).mapv(f64::exp);
                let z0 = &mu + &(&sigma * &noise);
                match &self.flow {
                    Some(flow) => Ok(flow.forward_batch(&self.store, &z0)?.0),
                    None => Ok(z0),
                }
            }
        }
    }

    /// Decoder output parameters for latents `z` and encoded `x`.
    pub fn decode(&self, z: &Array2<f64>, x: &Array2<f64>) -> Result<Array2<f64>> {
        let zx = ndarray::concatenate(ndarray::Axis(1), &[z.view(), x.view()])
            .map_err(|e| Error::Config(e.to_string()))?;
        self.decoder.forward_batch(&self.store, &zx)
    }

    /// Writes the parameter checkpoint to `path` and the JSON sidecar next to
    /// it.
    pub fn save(&self, path: &Path, objective: &ObjectiveConfig) -> Result<()> {
        self.store.write_checkpoint(BufWriter::new(File::create(path)?))?;
        let sidecar = Sidecar {
            model: self.config.clone(),
            objective: *objective,
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(sidecar_path(path))?), &sidecar)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, ObjectiveConfig)> {
        let sidecar: Sidecar =
            serde_json::from_reader(BufReader::new(File::open(sidecar_path(path))?))?;
        let store = ParameterStore::read_checkpoint(BufReader::new(File::open(path)?))?;
        Ok((Self::from_store(sidecar.model, store)?, sidecar.objective))
    }
}

/// Sidecar location for a checkpoint path: same name with `.json` appended.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    model: ModelConfig,
    objective: ObjectiveConfig,
}

/// Per-dimension `KL(q || p)` for mean/log-std blocks, `rows x n`.
fn gaussian_kl_t(tape: &Tape, q: Var, p: Var, n: usize) -> Var {
    let (mq, lq) = (tape.slice_cols(q, 0, n), tape.slice_cols(q, n, 2 * n));
    let (mp, lp) = (tape.slice_cols(p, 0, n), tape.slice_cols(p, n, 2 * n));
    let log_ratio = tape.sub(lp, lq);
    let var_ratio = tape.exp(tape.scale(tape.neg(log_ratio), 2.0));
    let inv_var_p = tape.exp(tape.scale(lp, -2.0));
    let mean_term = tape.mul(tape.square(tape.sub(mq, mp)), inv_var_p);
    let quad = tape.scale(tape.add(var_ratio, mean_term), 0.5);
    tape.add_scalar(tape.add(log_ratio, quad), -0.5)
}

/// One-hot Gumbel-Max winners per block of `k` columns.
fn hard_samples(log_w: &Array2<f64>, noise: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
    if log_w.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("latent logits"));
    }
    let mut out = Array2::zeros(log_w.dim());
    for ((lw, g), mut o) in log_w.rows().into_iter().zip(noise.rows()).zip(out.rows_mut()) {
        let (lw, g) = (lw.to_vec(), g.to_vec());
        for blk in 0..lw.len() / k {
            let r = blk * k..(blk + 1) * k;
            let j = gumbel_argmax(&lw[r.clone()], &g[r])?;
            o[blk * k + j] = 1.0;
        }
    }
    Ok(out)
}

/// Draws `n` outcomes for one encoded input: `z ~ p(z | x)`, then
/// `y ~ p(y | z, x)`. Rows are raw outcomes (class indices for categorical
/// decoders).
pub fn sample_prediction<R: Rng + ?Sized>(
    model: &TransitionModel,
    x: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let width = model.config.input.width();
    if x.len() != width {
        return Err(Error::Config(format!("encoded input has {} values, expected {width}", x.len())));
    }
    let xs = Array2::from_shape_fn((n, width), |(_, j)| x[j]);
    let z = model.sample_prior_latents(&xs, rng)?;
    let out = model.decode(&z, &xs)?;
    let decoder = model.config.decoder;
    let mut y = Array2::zeros((n, decoder.outcome_width()));
    match decoder {
        DecoderFamily::Gaussian1d => {
            for i in 0..n {
                let e: f64 = StandardNormal.sample(rng);
                y[[i, 0]] = out[[i, 0]] + out[[i, 1]].exp() * e;
            }
        }
        DecoderFamily::FactoredCategorical { dims, classes } => {
            for i in 0..n {
                for d in 0..dims {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut pick = classes - 1;
                    for c in 0..classes {
                        acc += out[[i, d * classes + c]].exp();
                        if u < acc {
                            pick = c;
                            break;
                        }
                    }
                    y[[i, d]] = pick as f64;
                }
            }
        }
    }
    Ok(y)
}
