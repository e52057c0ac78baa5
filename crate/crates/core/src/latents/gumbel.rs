use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};

/// Gumbel(0, 1) draw from a uniform: `-ln(-ln u)`.
pub fn gumbel_sample(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("uniform draw must lie in (0, 1), got {u}")));
    }
    Ok(-(-u.ln()).ln())
}

/// Index of `max_j (g_j + log_w_j)`; ties go to the lowest index.
pub fn gumbel_argmax(log_w: &[f64], g: &[f64]) -> Result<usize> {
    if log_w.len() != g.len() || log_w.is_empty() {
        return Err(Error::Config("gumbel_max length mismatch".into()));
    }
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (j, (lw, gj)) in log_w.iter().zip(g).enumerate() {
        let v = lw + gj;
        if v > best_val {
            best_val = v;
            best = j;
        }
    }
    if best_val == f64::NEG_INFINITY || best_val.is_nan() {
        return Err(Error::Domain("class log-probabilities are all -inf".into()));
    }
    Ok(best)
}

/// One-hot vector at the Gumbel-Max winner.
pub fn gumbel_max(log_w: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    let j = gumbel_argmax(log_w, g)?;
    let mut out = vec![0.0; log_w.len()];
    out[j] = 1.0;
    Ok(out)
}

/// Relaxed sample `softmax((log_w + g) / tau)`.
pub fn gumbel_softmax(log_w: &[f64], g: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {tau}")));
    }
    if log_w.len() != g.len() || log_w.is_empty() {
        return Err(Error::Config("gumbel_softmax length mismatch".into()));
    }
    let logits: Vec<f64> = log_w.iter().zip(g).map(|(l, g)| (l + g) / tau).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Tape form over `rows x (n*k)` blocks of log class probabilities.
pub fn gumbel_softmax_t(tape: &Tape, log_w: Var, g: Var, k: usize, tau: f64) -> Var {
    let shifted = tape.add(log_w, g);
    let scaled = tape.scale(shifted, 1.0 / tau);
    let log_z = tape.log_softmax_blocks(scaled, k);
    tape.exp(log_z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gumbel_sample_known_points() {
        assert!(gumbel_sample((-1.0f64).exp()).unwrap().abs() < 1e-15);
        let u = (-std::f64::consts::E).exp();
        assert!((gumbel_sample(u).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn gumbel_sample_domain() {
        for u in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(gumbel_sample(u), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn gumbel_sample_increasing() {
        let mut prev = f64::NEG_INFINITY;
        for i in 1..1000 {
            let g = gumbel_sample(i as f64 / 1000.0).unwrap();
            assert!(g > prev);
            prev = g;
        }
    }

    #[test]
    fn gumbel_max_by_inspection() {
        assert_eq!(gumbel_max(&[0.0, 0.0], &[5.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        // degenerate distribution always picks the supported class
        let lw = [0.0, f64::NEG_INFINITY];
        for g in [[-3.0, 9.0], [0.0, 0.0], [2.0, 40.0]] {
            assert_eq!(gumbel_argmax(&lw, &g).unwrap(), 0);
        }
        // ties break low
        assert_eq!(gumbel_argmax(&[0.0, 0.0, 0.0], &[1.0, 1.0, 0.0]).unwrap(), 0);
    }

    #[test]
    fn gumbel_max_frequencies_converge() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lw = [0.3f64.ln(), 0.7f64.ln()];
        let n = 100_000;
        let mut counts = [0usize; 2];
        for _ in 0..n {
            let g: Vec<f64> = (0..2)
                .map(|_| gumbel_sample(rng.gen_range(f64::MIN_POSITIVE..1.0)).unwrap())
                .collect();
            counts[gumbel_argmax(&lw, &g).unwrap()] += 1;
        }
        assert!((counts[0] as f64 / n as f64 - 0.3).abs() < 0.01);
        assert!((counts[1] as f64 / n as f64 - 0.7).abs() < 0.01);
    }

    #[test]
    fn gumbel_softmax_direct_evaluation() {
        let z = gumbel_softmax(&[0.0, 0.0], &[1.0, 0.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((z[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((z[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((z[0] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn gumbel_softmax_temperature_limits() {
        let hot = gumbel_softmax(&[-0.2, -1.9, -0.4], &[0.3, 1.2, -0.7], 1e9).unwrap();
        for v in hot {
            assert!((v - 1.0 / 3.0).abs() < 1e-8);
        }
        let cold = gumbel_softmax(&[0.0, 0.0], &[1.0, 0.0], 1e-3).unwrap();
        assert!((cold[0] - 1.0).abs() < 1e-12 && cold[1] < 1e-12);
        assert!(matches!(
            gumbel_softmax(&[0.0], &[0.0], 0.0),
            Err(Error::Domain(_))
        ));
    }
}
