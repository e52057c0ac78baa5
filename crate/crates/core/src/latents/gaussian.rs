use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};

/// `ln sqrt(2 pi)`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `z = mu + sigma * eps`.
pub fn gaussian_reparam(mu: &[f64], sigma: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != sigma.len() || mu.len() != eps.len() {
        return Err(Error::Config("gaussian_reparam length mismatch".into()));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Domain(format!("standard deviation must be positive, got {s}")));
    }
    Ok(mu
        .iter()
        .zip(sigma)
        .zip(eps)
        .map(|((m, s), e)| m + s * e)
        .collect())
}

/// Tape form parametrized by log standard deviation: `mu + exp(log_std) * eps`.
pub fn gaussian_reparam_t(tape: &Tape, mu: Var, log_std: Var, eps: Var) -> Var {
    let sigma = tape.exp(log_std);
    let scaled = tape.mul(sigma, eps);
    tape.add(mu, scaled)
}

/// Elementwise `log N(z | mu, exp(log_std)^2)`.
pub fn normal_log_density(z: f64, mu: f64, log_std: f64) -> f64 {
    let u = (z - mu) * (-log_std).exp();
    -LN_SQRT_2PI - log_std - 0.5 * u * u
}

/// Elementwise tape form of [`normal_log_density`].
pub fn normal_log_density_t(tape: &Tape, z: Var, mu: Var, log_std: Var) -> Var {
    let diff = tape.sub(z, mu);
    let neg = tape.neg(log_std);
    let inv = tape.exp(neg);
    let u = tape.mul(diff, inv);
    let sq = tape.square(u);
    let half = tape.scale(sq, -0.5);
    let out = tape.sub(half, log_std);
    tape.add_scalar(out, -LN_SQRT_2PI)
}
