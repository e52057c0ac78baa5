use super::params::{Bound, Gradients, ParameterStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Loss builders record a scalar loss on the tape from bound parameters.
pub trait LossFn: Fn(&Tape, &Bound) -> Result<Var> {}
impl<F: Fn(&Tape, &Bound) -> Result<Var>> LossFn for F {}

/// Evaluates a loss and its exact reverse-mode gradient.
///
/// The loss closure must use the same noise on every call; the gradient is
/// the pathwise derivative for that fixed noise.
pub fn value_and_grad<F>(store: &ParameterStore, loss: F) -> Result<(f64, Gradients)>
where
    F: FnOnce(&Tape, &Bound) -> Result<Var>,
{
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let out = loss(&tape, &bound)?;
    if tape.shape(out) != (1, 1) {
        return Err(Error::Config("loss must be a 1x1 scalar".into()));
    }
    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(Error::numerical("loss"));
    }
    let grads = tape.backward(out);
    Ok((value, bound.collect(&tape, &grads)))
}

/// Gradient only.
pub fn grad<F>(store: &ParameterStore, loss: F) -> Result<Gradients>
where
    F: FnOnce(&Tape, &Bound) -> Result<Var>,
{
    value_and_grad(store, loss).map(|(_, g)| g)
}

/// Loss value without gradient bookkeeping beyond the forward tape.
pub fn loss_value<F>(store: &ParameterStore, loss: F) -> Result<f64>
where
    F: FnOnce(&Tape, &Bound) -> Result<Var>,
{
    let tape = Tape::new();
    let bound = store.bind_constant(&tape);
    let out = loss(&tape, &bound)?;
    Ok(tape.scalar(out))
}

/// Smallest ReLU pre-activation magnitude seen while evaluating `loss`.
pub fn relu_margin<F>(store: &ParameterStore, loss: F) -> Result<f64>
where
    F: FnOnce(&Tape, &Bound) -> Result<Var>,
{
    let tape = Tape::new();
    let bound = store.bind_constant(&tape);
    loss(&tape, &bound)?;
    Ok(tape.relu_margin())
}

/// Largest `|analytic - central difference| / max(1, |analytic|)` over every
/// scalar parameter.
pub fn grad_check<F>(store: &ParameterStore, loss: F, h: f64) -> Result<f64>
where
    F: LossFn,
{
    if h <= 0.0 {
        return Err(Error::Domain("finite-difference step must be positive".into()));
    }
    let analytic = grad(store, &loss)?;
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        for k in 0..n {
            let orig = store.get(id).as_slice().expect("contiguous")[k];
            probe.get_mut(id).as_slice_mut().unwrap()[k] = orig + h;
            let plus = loss_value(&probe, &loss)?;
            probe.get_mut(id).as_slice_mut().unwrap()[k] = orig - h;
            let minus = loss_value(&probe, &loss)?;
            probe.get_mut(id).as_slice_mut().unwrap()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id).as_slice().unwrap()[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Adam hyper-parameters; defaults are the usual `0.9 / 0.999 / 1e-8`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    store: &mut ParameterStore,
    grads: &Gradients,
    lr: f64,
    cfg: AdamConfig,
) -> Result<()> {
    if lr <= 0.0 || !lr.is_finite() {
        return Err(Error::Domain(format!("learning rate must be positive, got {lr}")));
    }
    store.adam_update(grads, lr, cfg.beta1, cfg.beta2, cfg.eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn quadratic(t: &Tape, b: &Bound, store: &ParameterStore) -> Var {
        let id = store.id("theta").unwrap();
        let sq = t.square(b.var(id));
        let s = t.sum_all(sq);
        t.scale(s, 0.5)
    }

    fn theta_store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("theta", array![[1.5, -2.0, 0.25]]).unwrap();
        s
    }

    #[test]
    fn quadratic_gradient_is_theta() {
        let store = theta_store();
        let g = grad(&store, |t, b| Ok(quadratic(t, b, &store))).unwrap();
        let id = store.id("theta").unwrap();
        assert_eq!(g.get(id), store.get(id));
    }

    #[test]
    fn quadratic_grad_check_tight() {
        let store = theta_store();
        let err = grad_check(&store, |t: &Tape, b: &Bound| Ok(quadratic(t, b, &store)), 1e-5)
            .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn affine_reparam_gradient() {
        // loss = mu + sigma * eps
        let eps = 0.7;
        let mut store = ParameterStore::new();
        let mu = store.insert("mu", array![[0.3]]).unwrap();
        let sigma = store.insert("sigma", array![[2.0]]).unwrap();
        let g = grad(&store, |t, b| {
            let e = t.constant(array![[eps]]);
            let se = t.mul(b.var(sigma), e);
            Ok(t.add(b.var(mu), se))
        })
        .unwrap();
        assert_eq!(g.get(mu)[[0, 0]], 1.0);
        assert_eq!(g.get(sigma)[[0, 0]], eps);
    }

    #[test]
    fn non_finite_loss_reported() {
        let store = theta_store();
        let err = value_and_grad(&store, |t, b| {
            let id = store.id("theta").unwrap();
            let l = t.ln(b.var(id));
            Ok(t.sum_all(l))
        })
        .unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }));
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut store = theta_store();
        let before = store.by_name("theta").unwrap().clone();
        let zeros = store.zeros_like();
        adam_step(&mut store, &zeros, 0.1, AdamConfig::default()).unwrap();
        assert_eq!(store.by_name("theta").unwrap(), &before);
        assert_eq!(store.step(), 1);
    }

    #[test]
    fn adam_moments_decay_under_zero_gradient() {
        let mut store = theta_store();
        let id = store.id("theta").unwrap();
        let g = grad(&store, |t, b| Ok(quadratic(t, b, &store))).unwrap();
        adam_step(&mut store, &g, 0.01, AdamConfig::default()).unwrap();
        let m1 = store.moments(id).0.clone();
        let zeros = store.zeros_like();
        adam_step(&mut store, &zeros, 0.01, AdamConfig::default()).unwrap();
        let m2 = store.moments(id).0;
        for (a, b) in m1.iter().zip(m2.iter()) {
            assert!(b.abs() < a.abs());
        }
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // first step: m_hat = g, v_hat = g^2, so |update| = lr * |g| / (|g| + eps)
        let mut store = theta_store();
        let before = store.by_name("theta").unwrap().clone();
        let g = grad(&store, |t, b| Ok(quadratic(t, b, &store))).unwrap();
        let lr = 0.01;
        adam_step(&mut store, &g, lr, AdamConfig::default()).unwrap();
        let after = store.by_name("theta").unwrap();
        for ((a, b), gv) in after.iter().zip(before.iter()).zip(before.iter()) {
            let expected = lr * gv.abs() / (gv.abs() + 1e-8);
            assert!(((a - b).abs() - expected).abs() < 1e-15);
            assert!((a - b) * gv < 0.0);
        }
    }

    #[test]
    fn adam_constant_gradient_moves_monotonically() {
        let mut store = ParameterStore::new();
        let id = store.insert("w", Array2::zeros((1, 2))).unwrap();
        let g = Gradients::from_arrays(vec![array![[0.5, -3.0]]]);
        let mut prev = store.get(id).clone();
        for _ in 0..2 {
            adam_step(&mut store, &g, 0.1, AdamConfig::default()).unwrap();
            let cur = store.get(id).clone();
            assert!(cur[[0, 0]] < prev[[0, 0]]);
            assert!(cur[[0, 1]] > prev[[0, 1]]);
            prev = cur;
        }
    }

    #[test]
    fn adam_rejects_bad_inputs() {
        let mut store = theta_store();
        let zeros = store.zeros_like();
        assert!(matches!(
            adam_step(&mut store, &zeros, 0.0, AdamConfig::default()),
            Err(Error::Domain(_))
        ));
        let nan = Gradients::from_arrays(vec![array![[f64::NAN, 0.0, 0.0]]]);
        assert!(matches!(
            adam_step(&mut store, &nan, 0.1, AdamConfig::default()),
            Err(Error::Numerical { .. })
        ));
        assert_eq!(store.step(), 0);
    }
}
