//! Reparametrized latent families: location-scale Gaussian, Gumbel-Max /
//! Gumbel-Softmax categoricals and affine coupling flows.

mod flow;
mod gaussian;
mod gumbel;

use serde::{Deserialize, Serialize};

use crate::diffcore::Schedule;
use crate::error::{Error, Result};

pub use flow::{
    coupling_forward, coupling_inverse, flow_log_density, CouplingLayer, Flow, FlowPass,
    LatentSample, Partition, S_BOUND,
};
pub use gaussian::{
    gaussian_reparam, gaussian_reparam_t, normal_log_density, normal_log_density_t,
    LN_SQRT_2PI,
};
pub use gumbel::{gumbel_argmax, gumbel_max, gumbel_sample, gumbel_softmax, gumbel_softmax_t};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentFamily {
    Gaussian,
    GaussianFlow,
    Discrete,
}

/// Which coordinates each coupling layer transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Masking {
    /// Layer `l` transforms the half left untouched by layer `l - 1`.
    #[default]
    AlternatingHalves,
}

/// Declarative description of the latent layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub family: LatentFamily,
    /// Number of independent latent variables.
    pub n: usize,
    /// Categories per discrete variable (ignored for continuous families).
    #[serde(default)]
    pub k: usize,
    /// Coupling layers (gaussian-flow only).
    #[serde(default)]
    pub n_flow: usize,
    /// Gumbel-Softmax temperature over training steps.
    pub temperature: Schedule,
    #[serde(default)]
    pub masking: Masking,
    /// Hidden widths of each coupling layer's scale and translation nets.
    #[serde(default = "default_flow_hidden")]
    pub flow_hidden: Vec<usize>,
}

fn default_flow_hidden() -> Vec<usize> {
    vec![32, 32]
}

/// Temperature anneal 2.0 to 0.001 over the first 70% of training.
pub fn default_temperature(total: u64) -> Schedule {
    Schedule::new(2.0, 0.001, 0.7, total)
}

impl LatentSpec {
    pub fn gaussian(n: usize) -> Self {
        Self {
            family: LatentFamily::Gaussian,
            n,
            k: 0,
            n_flow: 0,
            temperature: default_temperature(1),
            masking: Masking::AlternatingHalves,
            flow_hidden: default_flow_hidden(),
        }
    }

    pub fn flow(n: usize, n_flow: usize) -> Self {
        Self {
            family: LatentFamily::GaussianFlow,
            n_flow,
            ..Self::gaussian(n)
        }
    }

    pub fn discrete(n: usize, k: usize) -> Self {
        Self {
            family: LatentFamily::Discrete,
            k,
            ..Self::gaussian(n)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("latent dimensionality must be positive".into()));
        }
        match self.family {
            LatentFamily::Discrete if self.k < 2 => Err(Error::Config(
                "discrete latents need at least two categories".into(),
            )),
            LatentFamily::GaussianFlow if self.n_flow < 1 || self.n < 2 => Err(Error::Config(
                "flow latents need n_flow >= 1 and n >= 2".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn is_discrete(&self) -> bool {
        self.family == LatentFamily::Discrete
    }

    /// Width of the distribution parameters emitted by prior and inference
    /// networks: `2n` (mean, log-std) or `n*k` (log class probabilities).
    pub fn param_width(&self) -> usize {
        match self.family {
            LatentFamily::Discrete => self.n * self.k,
            _ => 2 * self.n,
        }
    }

    /// Width of one latent sample (and of its noise draw).
    pub fn sample_width(&self) -> usize {
        match self.family {
            LatentFamily::Discrete => self.n * self.k,
            _ => self.n,
        }
    }
}
