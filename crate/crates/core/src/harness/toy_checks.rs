use rand::Rng;

use crate::cvae::{sample_prediction, TransitionModel};
use crate::error::{Error, Result};

/// `n` model draws of `y` at scalar input `x`.
pub fn toy_samples<R: Rng + ?Sized>(model: &TransitionModel, x: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    Ok(sample_prediction(model, &[x], n, rng)?.column(0).to_vec())
}

/// Sample mean and standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One-dimensional 2-means (Lloyd iterations from the extremes). Returns
/// `(center, weight)` of both clusters, lower center first.
pub fn two_means(v: &[f64]) -> Result<[(f64, f64); 2]> {
    if v.len() < 2 {
        return Err(Error::Domain("need at least two samples".into()));
    }
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut c = [lo, hi];
    let mut counts = [0usize; 2];
    for _ in 0..100 {
        let mid = 0.5 * (c[0] + c[1]);
        let mut sums = [0.0; 2];
        counts = [0; 2];
        for &y in v {
            let k = usize::from(y > mid);
            sums[k] += y;
            counts[k] += 1;
        }
        let next = [0, 1].map(|k| if counts[k] > 0 { sums[k] / counts[k] as f64 } else { c[k] });
        if next == c {
            break;
        }
        c = next;
    }
    let n = v.len() as f64;
    Ok([(c[0], counts[0] as f64 / n), (c[1], counts[1] as f64 / n)])
}

/// Cluster weights matched to two target locations: the lower-centred
/// cluster goes with the lower target.
pub fn weights_near(clusters: &[(f64, f64); 2], targets: [f64; 2]) -> [f64; 2] {
    if targets[0] <= targets[1] {
        [clusters[0].1, clusters[1].1]
    } else {
        [clusters[1].1, clusters[0].1]
    }
}
