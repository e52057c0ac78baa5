use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Bound, ParamId, ParameterStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity. Every network in this crate uses ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
}

/// Transform applied to the last affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Head {
    Linear,
    /// Log-probabilities of contiguous categorical blocks of width `block`.
    SoftmaxLogits { block: usize },
    /// First half of the outputs are means, second half log standard
    /// deviations clamped to `[min_log_std, max_log_std]`.
    MeanLogStd { min_log_std: f64, max_log_std: f64 },
}

impl Head {
    /// Mean-and-log-std head with standard deviation confined to `[1e-3, 10]`.
    pub fn mean_log_std() -> Self {
        Head::MeanLogStd {
            min_log_std: 1e-3f64.ln(),
            max_log_std: 10f64.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    #[serde(default)]
    pub activation: Activation,
    pub head: Head,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize, head: Head) -> Self {
        Self {
            input,
            hidden: hidden.to_vec(),
            output,
            activation: Activation::Relu,
            head,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        match self.head {
            Head::SoftmaxLogits { block } if block == 0 || self.output % block != 0 => Err(
                Error::Config(format!("output {} not divisible by block {block}", self.output)),
            ),
            Head::MeanLogStd { .. } if self.output % 2 != 0 => {
                Err(Error::Config("mean-and-log-std head needs an even width".into()))
            }
            _ => Ok(()),
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input);
        w.extend(&self.hidden);
        w.push(self.output);
        w
    }
}

/// A fully connected network whose weights live in a [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Registers `prefix.l{i}.w` / `prefix.l{i}.b` in `store`, Glorot-uniform
    /// weights and zero biases.
    pub fn new<R: Rng + ?Sized>(
        spec: MlpSpec,
        prefix: &str,
        store: &mut ParameterStore,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (i, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-limit..limit));
            let wid = store.insert(format!("{prefix}.l{i}.w"), w)?;
            let bid = store.insert(format!("{prefix}.l{i}.b"), Array2::zeros((1, fan_out)))?;
            layers.push((wid, bid));
        }
        Ok(Self { spec, layers })
    }

    /// Re-attaches to groups already present in `store` (e.g. after loading
    /// a checkpoint).
    pub fn attach(spec: MlpSpec, prefix: &str, store: &ParameterStore) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            let lookup = |suffix: &str, dim: (usize, usize)| -> Result<ParamId> {
                let name = format!("{prefix}.l{i}.{suffix}");
                let id = store
                    .id(&name)
                    .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
                if store.get(id).dim() != dim {
                    return Err(Error::Config(format!("parameter `{name}` has wrong shape")));
                }
                Ok(id)
            };
            layers.push((lookup("w", (pair[0], pair[1]))?, lookup("b", (1, pair[1]))?));
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    /// Forward pass on the tape for a `rows x input` batch.
    pub fn forward_t(&self, tape: &Tape, params: &Bound, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, params.var(w));
            h = tape.add_row(z, params.var(b));
            if i < last {
                h = tape.relu(h);
            }
        }
        match self.spec.head {
            Head::Linear => h,
            Head::SoftmaxLogits { block } => tape.log_softmax_blocks(h, block),
            Head::MeanLogStd {
                min_log_std,
                max_log_std,
            } => {
                let d = self.spec.output / 2;
                let mean = tape.slice_cols(h, 0, d);
                let raw = tape.slice_cols(h, d, 2 * d);
                let log_std = tape.clamp(raw, min_log_std, max_log_std);
                tape.concat_cols(&[mean, log_std])
            }
        }
    }

    /// Plain batched forward pass, no gradient bookkeeping.
    pub fn forward_batch(&self, store: &ParameterStore, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.spec.input {
            return Err(Error::Config(format!(
                "input width {} does not match network input {}",
                x.ncols(),
                self.spec.input
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = h.dot(store.get(w)) + store.get(b);
            if i < last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        match self.spec.head {
            Head::Linear => {}
            Head::SoftmaxLogits { block } => {
                for mut row in h.rows_mut() {
                    for mut chunk in row.exact_chunks_mut(block) {
                        let m = chunk.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                        let lse = m + chunk.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                        chunk.mapv_inplace(|v| v - lse);
                    }
                }
            }
            Head::MeanLogStd {
                min_log_std,
                max_log_std,
            } => {
                let d = self.spec.output / 2;
                h.slice_mut(ndarray::s![.., d..])
                    .mapv_inplace(|v| v.clamp(min_log_std, max_log_std));
            }
        }
        Ok(h)
    }

    /// Single-input forward pass.
    pub fn forward(&self, store: &ParameterStore, input: &[f64]) -> Result<Vec<f64>> {
        let x = Array1::from(input.to_vec()).insert_axis(Axis(0));
        Ok(self.forward_batch(store, &x)?.row(0).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParameterStore::new();
        let net = Mlp::new(MlpSpec::new(3, &[4, 4], 2, Head::Linear), "n", &mut store, &mut rng)
            .unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).fill(0.0);
        }
        assert_eq!(net.forward(&store, &[0.3, -1.0, 7.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParameterStore::new();
        let net =
            Mlp::new(MlpSpec::new(2, &[], 2, Head::Linear), "n", &mut store, &mut rng).unwrap();
        let (w, b) = net.layers()[0];
        store.get_mut(w).assign(&array![[1.0, 0.0], [0.0, 1.0]]);
        store.get_mut(b).fill(0.0);
        assert_eq!(net.forward(&store, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn relu_composition_by_hand() {
        // w1=1, b1=-1, w2=1, b2=0 at input 0.5: relu(-0.5) = 0
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParameterStore::new();
        let net =
            Mlp::new(MlpSpec::new(1, &[1], 1, Head::Linear), "n", &mut store, &mut rng).unwrap();
        let (w1, b1) = net.layers()[0];
        let (w2, b2) = net.layers()[1];
        store.get_mut(w1).fill(1.0);
        store.get_mut(b1).fill(-1.0);
        store.get_mut(w2).fill(1.0);
        store.get_mut(b2).fill(0.0);
        assert_eq!(net.forward(&store, &[0.5]).unwrap(), vec![0.0]);
        assert_eq!(net.forward(&store, &[1.5]).unwrap(), vec![0.5]);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParameterStore::new();
        let net =
            Mlp::new(MlpSpec::new(2, &[3], 1, Head::Linear), "n", &mut store, &mut rng).unwrap();
        assert!(matches!(net.forward(&store, &[1.0]), Err(Error::Config(_))));
    }

    #[test]
    fn reference_architectures_expressible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for hidden in [vec![50, 50, 50], vec![30, 30], vec![250, 250, 250], vec![100, 100]] {
            let mut store = ParameterStore::new();
            Mlp::new(MlpSpec::new(4, &hidden, 2, Head::Linear), "n", &mut store, &mut rng)
                .unwrap();
            assert_eq!(store.len(), 2 * (hidden.len() + 1));
        }
        assert!(MlpSpec::new(4, &[0], 2, Head::Linear).validate().is_err());
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for head in [
            Head::Linear,
            Head::SoftmaxLogits { block: 3 },
            Head::mean_log_std(),
        ] {
            let mut store = ParameterStore::new();
            let net = Mlp::new(MlpSpec::new(3, &[8, 5], 6, head), "n", &mut store, &mut rng)
                .unwrap();
            let x = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - 1.5) * 0.7 + j as f64);
            let plain = net.forward_batch(&store, &x).unwrap();
            let tape = Tape::new();
            let bound = store.bind(&tape);
            let xv = tape.constant(x);
            let out = tape.value(net.forward_t(&tape, &bound, xv));
            assert_eq!(plain, out);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParameterStore::new();
        let net = Mlp::new(MlpSpec::new(2, &[16, 16], 3, Head::Linear), "n", &mut store, &mut rng)
            .unwrap();
        let a = net.forward(&store, &[0.1, 0.2]).unwrap();
        let b = net.forward(&store, &[0.1, 0.2]).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
