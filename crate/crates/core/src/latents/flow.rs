use std::ops::Range;

use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::LatentSpec;
use crate::diffcore::{Bound, Head, Mlp, MlpSpec, ParameterStore, Tape, Var};
use crate::error::{Error, Result};

/// Scale-net outputs are squashed into `(-S_BOUND, S_BOUND)`.
pub const S_BOUND: f64 = 5.0;

fn check_split(len: usize, d: usize) -> Result<()> {
    if d == 0 || d >= len {
        return Err(Error::Config(format!("split {d} must satisfy 1 <= d < {len}")));
    }
    Ok(())
}

fn check_net_output(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Config(format!("{what} returned {got} values, expected {want}")));
    }
    Ok(())
}

/// Affine coupling: the first `d` coordinates pass through and condition
/// `z'[d..] = t(z[..d]) + z[d..] * exp(s(z[..d]))`. Returns `(z', log|det J|)`.
pub fn coupling_forward<S, T>(z: &[f64], d: usize, s: S, t: T) -> Result<(Vec<f64>, f64)>
where
    S: Fn(&[f64]) -> Vec<f64>,
    T: Fn(&[f64]) -> Vec<f64>,
{
    check_split(z.len(), d)?;
    let (keep, change) = z.split_at(d);
    let sv = s(keep);
    let tv = t(keep);
    check_net_output("scale net", sv.len(), change.len())?;
    check_net_output("translation net", tv.len(), change.len())?;
    let mut out = keep.to_vec();
    out.extend(
        change
            .iter()
            .zip(&sv)
            .zip(&tv)
            .map(|((c, s), t)| t + c * s.exp()),
    );
    Ok((out, sv.iter().sum()))
}

/// Exact inverse of [`coupling_forward`] for the same split and nets.
pub fn coupling_inverse<S, T>(z_out: &[f64], d: usize, s: S, t: T) -> Result<Vec<f64>>
where
    S: Fn(&[f64]) -> Vec<f64>,
    T: Fn(&[f64]) -> Vec<f64>,
{
    check_split(z_out.len(), d)?;
    let (keep, change) = z_out.split_at(d);
    let sv = s(keep);
    let tv = t(keep);
    check_net_output("scale net", sv.len(), change.len())?;
    check_net_output("translation net", tv.len(), change.len())?;
    let mut out = keep.to_vec();
    out.extend(
        change
            .iter()
            .zip(&sv)
            .zip(&tv)
            .map(|((c, s), t)| (c - t) * (-s).exp()),
    );
    Ok(out)
}

/// `log q_L(z_L) = log q_0(z_0) - sum_l log|det J_l|`.
pub fn flow_log_density(base_log_density: f64, log_dets: &[f64]) -> f64 {
    base_log_density - log_dets.iter().sum::<f64>()
}

/// A latent draw pushed through a flow, with its density bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub z: Vec<f64>,
    pub base_log_density: f64,
    pub log_dets: Vec<f64>,
}

impl LatentSample {
    pub fn log_density(&self) -> f64 {
        flow_log_density(self.base_log_density, &self.log_dets)
    }
}

/// Contiguous index split of one coupling layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub keep: Range<usize>,
    pub change: Range<usize>,
}

impl Partition {
    /// Alternating halves: even layers keep `[0, n/2)`, odd layers keep
    /// `[n/2, n)`.
    pub fn alternating(n: usize, layer: usize) -> Self {
        let d = n / 2;
        if layer % 2 == 0 {
            Self {
                keep: 0..d,
                change: d..n,
            }
        } else {
            Self {
                keep: d..n,
                change: 0..d,
            }
        }
    }

    fn keep_first(&self) -> bool {
        self.keep.start == 0
    }
}

/// One affine coupling layer with MLP scale and translation functions.
#[derive(Debug, Clone)]
pub struct CouplingLayer {
    partition: Partition,
    scale: Mlp,
    shift: Mlp,
}

impl CouplingLayer {
    fn nets(
        partition: &Partition,
        hidden: &[usize],
    ) -> (MlpSpec, MlpSpec) {
        let spec = MlpSpec::new(partition.keep.len(), hidden, partition.change.len(), Head::Linear);
        (spec.clone(), spec)
    }

    pub fn new<R: Rng + ?Sized>(
        partition: Partition,
        hidden: &[usize],
        prefix: &str,
        store: &mut ParameterStore,
        rng: &mut R,
    ) -> Result<Self> {
        let (ss, ts) = Self::nets(&partition, hidden);
        let scale = Mlp::new(ss, &format!("{prefix}.s"), store, rng)?;
        let shift = Mlp::new(ts, &format!("{prefix}.t"), store, rng)?;
        Ok(Self {
            partition,
            scale,
            shift,
        })
    }

    pub fn attach(
        partition: Partition,
        hidden: &[usize],
        prefix: &str,
        store: &ParameterStore,
    ) -> Result<Self> {
        let (ss, ts) = Self::nets(&partition, hidden);
        Ok(Self {
            scale: Mlp::attach(ss, &format!("{prefix}.s"), store)?,
            shift: Mlp::attach(ts, &format!("{prefix}.t"), store)?,
            partition,
        })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn scale_net(&self) -> &Mlp {
        &self.scale
    }

    pub fn shift_net(&self) -> &Mlp {
        &self.shift
    }

    /// Squashed scale values for the kept coordinates of a batch.
    fn scale_values(&self, store: &ParameterStore, keep: &Array2<f64>) -> Result<Array2<f64>> {
        let raw = self.scale.forward_batch(store, keep)?;
        Ok(raw.mapv(|r| S_BOUND * (r / S_BOUND).tanh()))
    }

    /// Returns `(z', s)` where `s` is `rows x |change|` and `log|det J| =
    /// sum(s)` per row.
    pub fn forward_t(&self, tape: &Tape, params: &Bound, z: Var) -> (Var, Var) {
        let p = &self.partition;
        let keep = tape.slice_cols(z, p.keep.start, p.keep.end);
        let change = tape.slice_cols(z, p.change.start, p.change.end);
        let raw = self.scale.forward_t(tape, params, keep);
        let squashed = tape.tanh(tape.scale(raw, 1.0 / S_BOUND));
        let s = tape.scale(squashed, S_BOUND);
        let t = self.shift.forward_t(tape, params, keep);
        let grown = tape.mul(change, tape.exp(s));
        let changed = tape.add(t, grown);
        let out = if p.keep_first() {
            tape.concat_cols(&[keep, changed])
        } else {
            tape.concat_cols(&[changed, keep])
        };
        (out, s)
    }

    /// Batched forward; returns `(z', log|det J| per row)`.
    pub fn forward_batch(
        &self,
        store: &ParameterStore,
        z: &Array2<f64>,
    ) -> Result<(Array2<f64>, Vec<f64>)> {
        let p = &self.partition;
        let keep = z.slice(s![.., p.keep.clone()]).to_owned();
        let sv = self.scale_values(store, &keep)?;
        let tv = self.shift.forward_batch(store, &keep)?;
        let mut out = z.clone();
        let change = z.slice(s![.., p.change.clone()]);
        let new_change = &tv + &(&change * &sv.mapv(f64::exp));
        out.slice_mut(s![.., p.change.clone()]).assign(&new_change);
        Ok((out, sv.sum_axis(Axis(1)).to_vec()))
    }

    pub fn inverse_batch(&self, store: &ParameterStore, z_out: &Array2<f64>) -> Result<Array2<f64>> {
        let p = &self.partition;
        let keep = z_out.slice(s![.., p.keep.clone()]).to_owned();
        let sv = self.scale_values(store, &keep)?;
        let tv = self.shift.forward_batch(store, &keep)?;
        let mut out = z_out.clone();
        let change = z_out.slice(s![.., p.change.clone()]);
        let orig = (&change - &tv) * sv.mapv(|s| (-s).exp());
        out.slice_mut(s![.., p.change.clone()]).assign(&orig);
        Ok(out)
    }
}

/// Tape outputs of a full flow pass.
#[derive(Debug, Clone, Copy)]
pub struct FlowPass {
    /// Transformed sample, `rows x n`.
    pub z: Var,
    /// Log-determinant contributions attributed to the coordinate each
    /// scale entry multiplies, `rows x n`.
    pub log_det_per_dim: Var,
}

/// A stack of coupling layers with alternating masks.
#[derive(Debug, Clone)]
pub struct Flow {
    n: usize,
    layers: Vec<CouplingLayer>,
}

impl Flow {
    pub fn new<R: Rng + ?Sized>(
        spec: &LatentSpec,
        prefix: &str,
        store: &mut ParameterStore,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let layers = (0..spec.n_flow)
            .map(|l| {
                CouplingLayer::new(
                    Partition::alternating(spec.n, l),
                    &spec.flow_hidden,
                    &format!("{prefix}.c{l}"),
                    store,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { n: spec.n, layers })
    }

    pub fn attach(spec: &LatentSpec, prefix: &str, store: &ParameterStore) -> Result<Self> {
        spec.validate()?;
        let layers = (0..spec.n_flow)
            .map(|l| {
                CouplingLayer::attach(
                    Partition::alternating(spec.n, l),
                    &spec.flow_hidden,
                    &format!("{prefix}.c{l}"),
                    store,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { n: spec.n, layers })
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn forward_t(&self, tape: &Tape, params: &Bound, z0: Var) -> FlowPass {
        let rows = tape.shape(z0).0;
        let mut z = z0;
        let mut per_dim: Option<Var> = None;
        for layer in &self.layers {
            let (next, s) = layer.forward_t(tape, params, z);
            let p = layer.partition();
            let zeros = tape.constant(Array2::zeros((rows, p.keep.len())));
            let spread = if p.keep_first() {
                tape.concat_cols(&[zeros, s])
            } else {
                tape.concat_cols(&[s, zeros])
            };
            per_dim = Some(match per_dim {
                Some(acc) => tape.add(acc, spread),
                None => spread,
            });
            z = next;
        }
        let log_det_per_dim =
            per_dim.unwrap_or_else(|| tape.constant(Array2::zeros((rows, self.n))));
        FlowPass {
            z,
            log_det_per_dim,
        }
    }

    /// Batched forward; returns `(z_L, log-dets as rows x L)`.
    pub fn forward_batch(
        &self,
        store: &ParameterStore,
        z0: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let mut z = z0.clone();
        let mut log_dets = Array2::zeros((z0.nrows(), self.layers.len()));
        for (l, layer) in self.layers.iter().enumerate() {
            let (next, ld) = layer.forward_batch(store, &z)?;
            log_dets.column_mut(l).assign(&ndarray::Array1::from(ld));
            z = next;
        }
        Ok((z, log_dets))
    }

    pub fn inverse_batch(&self, store: &ParameterStore, z_l: &Array2<f64>) -> Result<Array2<f64>> {
        let mut z = z_l.clone();
        for layer in self.layers.iter().rev() {
            z = layer.inverse_batch(store, &z)?;
        }
        Ok(z)
    }

    /// Pushes one base draw through every layer.
    pub fn transform(
        &self,
        store: &ParameterStore,
        z0: &[f64],
        base_log_density: f64,
    ) -> Result<LatentSample> {
        let x = Array2::from_shape_vec((1, z0.len()), z0.to_vec())
            .map_err(|e| Error::Config(e.to_string()))?;
        let (z, ld) = self.forward_batch(store, &x)?;
        Ok(LatentSample {
            z: z.row(0).to_vec(),
            base_log_density,
            log_dets: ld.row(0).to_vec(),
        })
    }
}
