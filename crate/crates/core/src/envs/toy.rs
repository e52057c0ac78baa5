use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latents::{normal_log_density, LN_SQRT_2PI};

/// Piecewise conditional mixture on `x in [-1, 1]`.
///
/// Left of `boundaries.0` the outcome is a single Gaussian at 2.5; between
/// the boundaries it is a two-component mixture at `±4x`; right of
/// `boundaries.1` a three-component mixture at `5 + ln(x+1)`, `-x + 0.2` and
/// `5x²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    /// Weights of the middle pair followed by the right triple.
    pub weights: [f64; 5],
    pub sigma: f64,
    pub boundaries: (f64, f64),
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            weights: [0.2, 0.8, 0.3, 0.5, 0.2],
            sigma: 0.1,
            boundaries: (-0.3, 0.3),
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("mixture weights must be nonnegative".into()));
        }
        if (w[0] + w[1] - 1.0).abs() > 1e-12 || (w[2] + w[3] + w[4] - 1.0).abs() > 1e-12 {
            return Err(Error::Config("mixture weights must sum to one per branch".into()));
        }
        if !(self.sigma > 0.0) || self.boundaries.0 >= self.boundaries.1 {
            return Err(Error::Config("invalid toy sigma or boundaries".into()));
        }
        Ok(())
    }

    /// `(weight, mean)` of every active component at `x`.
    pub fn components(&self, x: f64) -> Result<Vec<(f64, f64)>> {
        if !(-1.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("toy input {x} outside [-1, 1]")));
        }
        let w = &self.weights;
        Ok(if x < self.boundaries.0 {
            vec![(1.0, 2.5)]
        } else if x < self.boundaries.1 {
            vec![(w[0], 4.0 * x), (w[1], -4.0 * x)]
        } else {
            vec![
                (w[2], 5.0 + (x + 1.0).ln()),
                (w[3], -x + 0.2),
                (w[4], 5.0 * x * x),
            ]
        })
    }
}

/// One draw of `y` given `x`.
pub fn toy_sample<R: Rng + ?Sized>(spec: &ToySpec, x: f64, rng: &mut R) -> Result<f64> {
    let comps = spec.components(x)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut mean = comps[comps.len() - 1].1;
    for (w, m) in &comps {
        acc += w;
        if u < acc {
            mean = *m;
            break;
        }
    }
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::Config(e.to_string()))?;
    Ok(mean + noise.sample(rng))
}

/// Exact conditional density `p(y | x)`.
pub fn toy_density(spec: &ToySpec, x: f64, y: f64) -> Result<f64> {
    Ok(spec
        .components(x)?
        .iter()
        .map(|(w, m)| w * normal_log_density(y, *m, spec.sigma.ln()).exp())
        .sum())
}

/// `ln p(y | x)`.
pub fn toy_log_density(spec: &ToySpec, x: f64, y: f64) -> Result<f64> {
    let comps = spec.components(x)?;
    let logs: Vec<f64> = comps
        .iter()
        .map(|(w, m)| w.ln() + normal_log_density(y, *m, spec.sigma.ln()))
        .collect();
    Ok(crate::diffcore::logsumexp(logs.iter().copied()))
}

/// Peak of a single component, `1 / (sigma sqrt(2 pi))`.
pub fn component_peak(spec: &ToySpec) -> f64 {
    (-LN_SQRT_2PI - spec.sigma.ln()).exp()
}

/// `n` pairs with `x ~ Uniform(-1, 1)`.
pub fn toy_dataset<R: Rng + ?Sized>(spec: &ToySpec, n: usize, rng: &mut R) -> Result<Vec<(f64, f64)>> {
    (0..n)
        .map(|_| {
            let x = rng.gen_range(-1.0..=1.0);
            toy_sample(spec, x, rng).map(|y| (x, y))
        })
        .collect()
}
