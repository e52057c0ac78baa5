//! Divergences between discrete tables and diagonal Gaussians, in nats.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// A finite distribution over totally ordered outcome keys.
///
/// Keys are unique and sorted, probabilities are nonnegative and sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable<K>", bound(deserialize = "K: Ord + Clone + Deserialize<'de>"))]
pub struct DistTable<K> {
    support: Vec<K>,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTable<K> {
    support: Vec<K>,
    probs: Vec<f64>,
}

impl<K: Ord + Clone> TryFrom<RawTable<K>> for DistTable<K> {
    type Error = Error;

    fn try_from(raw: RawTable<K>) -> Result<Self> {
        if raw.support.len() != raw.probs.len() {
            return Err(Error::Format("support and probs differ in length".into()));
        }
        Self::new(raw.support.into_iter().zip(raw.probs).collect())
    }
}

impl<K: Ord + Clone> DistTable<K> {
    /// Builds a table from `(key, probability)` pairs in any order.
    pub fn new(mut pairs: Vec<(K, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Domain("distribution needs at least one outcome".into()));
        }
        if let Some((_, p)) = pairs.iter().find(|(_, p)| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::Domain(format!("invalid probability {p}")));
        }
        let total: f64 = pairs.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::Domain(format!("probabilities sum to {total}")));
        }
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Domain("duplicate outcome key".into()));
        }
        let (support, probs) = pairs.into_iter().unzip();
        Ok(Self { support, probs })
    }

    /// Normalizes nonnegative weights; keys may repeat and are merged.
    pub fn from_weights(pairs: impl IntoIterator<Item = (K, f64)>) -> Result<Self> {
        let mut merged: BTreeMap<K, f64> = BTreeMap::new();
        for (k, w) in pairs {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Domain(format!("invalid weight {w}")));
            }
            *merged.entry(k).or_insert(0.0) += w;
        }
        let total: f64 = merged.values().sum();
        if !(total > 0.0) {
            return Err(Error::Domain("weights sum to zero".into()));
        }
        let pairs: Vec<(K, f64)> = merged.into_iter().map(|(k, w)| (k, w / total)).collect();
        // renormalize once more so the sum check holds after rounding
        let s: f64 = pairs.iter().map(|(_, p)| p).sum();
        Self::new(pairs.into_iter().map(|(k, p)| (k, p / s)).collect())
    }

    pub fn point_mass(key: K) -> Self {
        Self {
            support: vec![key],
            probs: vec![1.0],
        }
    }

    pub fn support(&self) -> &[K] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Probability of `key`, zero when absent.
    pub fn prob(&self, key: &K) -> f64 {
        self.support
            .binary_search(key)
            .map(|i| self.probs[i])
            .unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, f64)> {
        self.support.iter().zip(self.probs.iter().copied())
    }

    /// Maps keys and merges collisions.
    pub fn map_keys<J: Ord + Clone>(&self, f: impl Fn(&K) -> J) -> Result<DistTable<J>> {
        DistTable::from_weights(self.iter().map(|(k, p)| (f(k), p)))
    }
}

/// Pairs of aligned probabilities over the union of both supports.
fn aligned<'a, K: Ord>(
    p: &'a DistTable<K>,
    q: &'a DistTable<K>,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    let (mut i, mut j) = (0, 0);
    std::iter::from_fn(move || {
        let (ps, qs) = (&p.support, &q.support);
        match (ps.get(i), qs.get(j)) {
            (None, None) => None,
            (Some(_), None) => {
                i += 1;
                Some((p.probs[i - 1], 0.0))
            }
            (None, Some(_)) => {
                j += 1;
                Some((0.0, q.probs[j - 1]))
            }
            (Some(a), Some(b)) => match a.cmp(b) {
                std::cmp::Ordering::Less => {
                    i += 1;
                    Some((p.probs[i - 1], 0.0))
                }
                std::cmp::Ordering::Greater => {
                    j += 1;
                    Some((0.0, q.probs[j - 1]))
                }
                std::cmp::Ordering::Equal => {
                    i += 1;
                    j += 1;
                    Some((p.probs[i - 1], q.probs[j - 1]))
                }
            },
        }
    })
}

/// `sum p ln(p / q)`; `f64::INFINITY` when `q` misses mass of `p`.
pub fn kl_categorical<K: Ord>(p: &DistTable<K>, q: &DistTable<K>) -> f64 {
    let mut kl = 0.0;
    for (pi, qi) in aligned(p, q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return f64::INFINITY;
        }
        kl += pi * (pi / qi).ln();
    }
    kl.max(0.0)
}

/// `sqrt(1 - sum sqrt(p q))` over the union of supports, evaluated as
/// `sqrt(sum (sqrt p - sqrt q)^2 / 2)` so that identical tables give exactly 0.
pub fn hellinger<K: Ord>(p: &DistTable<K>, q: &DistTable<K>) -> f64 {
    let sq: f64 = aligned(p, q).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
    (0.5 * sq).min(1.0).sqrt()
}

/// KL between diagonal Gaussians `N(mu1, sigma1^2) || N(mu2, sigma2^2)`.
pub fn kl_gaussian_diag(mu1: &[f64], sigma1: &[f64], mu2: &[f64], sigma2: &[f64]) -> Result<f64> {
    let n = mu1.len();
    if sigma1.len() != n || mu2.len() != n || sigma2.len() != n {
        return Err(Error::Config("kl_gaussian_diag length mismatch".into()));
    }
    if let Some(s) = sigma1.iter().chain(sigma2).find(|s| !(**s > 0.0)) {
        return Err(Error::Domain(format!("standard deviation must be positive, got {s}")));
    }
    Ok((0..n)
        .map(|i| {
            let (s1, s2) = (sigma1[i], sigma2[i]);
            let d = mu1[i] - mu2[i];
            (s2 / s1).ln() + (s1 * s1 + d * d) / (2.0 * s2 * s2) - 0.5
        })
        .sum())
}

/// Relative frequencies of the observed keys.
pub fn empirical_dist<K: Ord + Clone>(samples: &[K]) -> Result<DistTable<K>> {
    if samples.is_empty() {
        return Err(Error::Domain("empirical distribution of no samples".into()));
    }
    let mut counts: BTreeMap<&K, usize> = BTreeMap::new();
    for s in samples {
        *counts.entry(s).or_insert(0) += 1;
    }
    let n = samples.len() as f64;
    DistTable::from_weights(counts.into_iter().map(|(k, c)| (k.clone(), c as f64 / n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(ps: &[f64]) -> DistTable<usize> {
        DistTable::new(ps.iter().copied().enumerate().collect()).unwrap()
    }

    #[test]
    fn kl_known_values() {
        let p = table(&[0.3, 0.2, 0.5]);
        assert_eq!(kl_categorical(&p, &p), 0.0);
        let v = kl_categorical(&table(&[0.999, 0.001]), &table(&[0.3, 0.7]));
        assert!((v - 1.20).abs() < 0.01, "{v}");
        let v = kl_categorical(&table(&[0.5, 0.5]), &table(&[0.25, 0.75]));
        let want = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((v - want).abs() < 1e-15);
        assert!((v - 0.1438).abs() < 1e-4);
    }

    #[test]
    fn kl_missing_support_is_infinite() {
        let p = table(&[0.5, 0.5]);
        let q = DistTable::new(vec![(0, 1.0)]).unwrap();
        assert_eq!(kl_categorical(&p, &q), f64::INFINITY);
        // the reverse direction only needs q's support covered
        assert!((kl_categorical(&q, &p) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gaussian_kl_closed_forms() {
        assert_eq!(kl_gaussian_diag(&[0.3], &[1.2], &[0.3], &[1.2]).unwrap(), 0.0);
        assert!((kl_gaussian_diag(&[0.0], &[1.0], &[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        let v = kl_gaussian_diag(&[0.0], &[2.0], &[0.0], &[1.0]).unwrap();
        assert!((v - 0.5 * (4.0 - 1.0 - 4f64.ln())).abs() < 1e-15);
        assert!((v - 0.8069).abs() < 1e-4);
        assert!(matches!(
            kl_gaussian_diag(&[0.0], &[0.0], &[0.0], &[1.0]),
            Err(Error::Domain(_))
        ));
    }

    fn quadrature_kl(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
        let logpdf = |x: f64, m: f64, s: f64| {
            let u = (x - m) / s;
            -0.5 * u * u - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
        };
        let lo = m1 - 20.0 * s1;
        let hi = m1 + 20.0 * s1;
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        // composite Simpson
        let f = |x: f64| {
            let lp = logpdf(x, m1, s1);
            lp.exp() * (lp - logpdf(x, m2, s2))
        };
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(lo + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn gaussian_kl_matches_quadrature() {
        for (m1, s1, m2, s2) in [(0.0, 1.0, 1.0, 1.0), (0.4, 0.3, -1.1, 2.5), (2.0, 1.7, 1.5, 0.6)] {
            let a = kl_gaussian_diag(&[m1], &[s1], &[m2], &[s2]).unwrap();
            let q = quadrature_kl(m1, s1, m2, s2);
            assert!((a - q).abs() < 1e-6, "{a} vs {q}");
        }
    }

    #[test]
    fn hellinger_known_values() {
        let p = table(&[0.2, 0.8]);
        assert_eq!(hellinger(&p, &p), 0.0);
        let a = DistTable::new(vec![(0, 1.0)]).unwrap();
        let b = DistTable::new(vec![(1, 1.0)]).unwrap();
        assert_eq!(hellinger(&a, &b), 1.0);
        let v = hellinger(&table(&[1.0, 0.0]), &table(&[0.5, 0.5]));
        assert!((v - (1.0 - 0.5f64.sqrt()).sqrt()).abs() < 1e-15);
        assert!((v - 0.5412).abs() < 1e-4);
    }

    #[test]
    fn empirical_examples() {
        let d = empirical_dist(&['a', 'a', 'b', 'b']).unwrap();
        assert_eq!(d.support(), &['a', 'b']);
        assert_eq!(d.probs(), &[0.5, 0.5]);
        let d = empirical_dist(&[7u8]).unwrap();
        assert_eq!(d, DistTable::point_mass(7));
        assert!(matches!(empirical_dist::<u8>(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn empirical_frequencies_concentrate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cdf = [0.4, 0.8, 0.9, 1.0];
        let samples: Vec<usize> = (0..100_000)
            .map(|_| {
                let u: f64 = rng.gen();
                cdf.iter().position(|&c| u < c).unwrap()
            })
            .collect();
        let d = empirical_dist(&samples).unwrap();
        for (k, want) in [0.4, 0.4, 0.1, 0.1].iter().enumerate() {
            assert!((d.prob(&k) - want).abs() < 0.01);
        }
    }

    #[test]
    fn invalid_tables_rejected() {
        assert!(DistTable::new(vec![(0, 0.5), (1, 0.4)]).is_err());
        assert!(DistTable::new(vec![(0, 0.5), (0, 0.5)]).is_err());
        assert!(DistTable::new(vec![(0, -0.5), (1, 1.5)]).is_err());
        assert!(DistTable::<u8>::new(vec![]).is_err());
    }

    #[test]
    fn json_shape_round_trips() {
        let d = DistTable::new(vec![(3u32, 0.25), (1, 0.75)]).unwrap();
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(s, r#"{"support":[1,3],"probs":[0.75,0.25]}"#);
        let back: DistTable<u32> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<DistTable<u32>>(r#"{"support":[1],"probs":[0.5]}"#).is_err());
    }

    fn simplex(n: usize) -> impl Strategy<Value = DistTable<usize>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_filter_map("zero mass", |w| {
            DistTable::from_weights(w.into_iter().enumerate()).ok()
        })
    }

    proptest! {
        #[test]
        fn kl_nonnegative(p in simplex(5), q in simplex(5)) {
            let v = kl_categorical(&p, &q);
            prop_assert!(v >= 0.0);
            prop_assert_eq!(kl_categorical(&p, &p), 0.0);
        }

        #[test]
        fn kl_zero_only_for_equal(p in simplex(4), q in simplex(4)) {
            let differ = p.probs().iter().zip(q.probs()).any(|(a, b)| (a - b).abs() > 1e-3)
                || p.support() != q.support();
            if differ {
                prop_assert!(kl_categorical(&p, &q) > 0.0);
            }
        }

        #[test]
        fn hellinger_metric(p in simplex(6), q in simplex(6), r in simplex(6)) {
            let (pq, qp) = (hellinger(&p, &q), hellinger(&q, &p));
            prop_assert!((pq - qp).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&pq));
            prop_assert!(hellinger(&p, &r) <= pq + hellinger(&q, &r) + 1e-12);
        }
    }
}
