//! Conditional VAE for transition distributions `p(y | x)`: learned prior
//! `p(z | x)`, inference network `q(z | x, y)` and decoder `p(y | z, x)`,
//! with the ELBO, the Renyi importance-weighted bound, free bits and
//! importance-sampled evaluation.

mod encoding;
mod model;
mod objectives;

pub use encoding::{
    encode_input, encode_inputs, one_hot, InputEncoding, GRID_ACTIONS, GRID_CLASSES,
    GRID_COORDS,
};
pub use model::{
    sample_noise, sample_prediction, sidecar_path, Batch, DecoderFamily, ModelConfig, Pass,
    Sampling, TransitionModel,
};
pub use objectives::{
    elbo, elbo_t, free_bits_objective, log_marginals, test_nll, test_nll_with_noise,
    train_step, training_loss_t, training_terms_t, vr_bound, vr_bound_t, DivergenceMode,
    ObjectiveConfig, StepReport, TrainingTerms,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, relu_margin, ParameterStore, Tape};
    use crate::error::Error;
    use crate::latents::LatentSpec;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Binary latent, binary outcome, constant input. Parameters are set by
    /// hand: prior log-probabilities, inference logits per outcome class and
    /// decoder logits per latent class.
    fn two_point(prior: [f64; 2], q_given: [[f64; 2]; 2], dec_given: [[f64; 2]; 2]) -> TransitionModel {
        let cfg = ModelConfig {
            latent: LatentSpec::discrete(1, 2),
            decoder: DecoderFamily::FactoredCategorical { dims: 1, classes: 2 },
            input: InputEncoding::Passthrough { width: 1 },
            prior_hidden: vec![],
            inference_hidden: vec![],
            decoder_hidden: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = TransitionModel::new(cfg, &mut rng).unwrap();
        let s = model.store_mut();
        set(s, "prior.l0.w", array![[0.0, 0.0]]);
        set(s, "prior.l0.b", array![[prior[0].ln(), prior[1].ln()]]);
        // inference input: [x, y0, y1]
        set(
            s,
            "inference.l0.w",
            array![[0.0, 0.0], [q_given[0][0], q_given[0][1]], [q_given[1][0], q_given[1][1]]],
        );
        set(s, "inference.l0.b", array![[0.0, 0.0]]);
        // decoder input: [z0, z1, x]
        set(
            s,
            "decoder.l0.w",
            array![[dec_given[0][0], dec_given[0][1]], [dec_given[1][0], dec_given[1][1]], [0.0, 0.0]],
        );
        set(s, "decoder.l0.b", array![[0.0, 0.0]]);
        model
    }

    fn set(store: &mut ParameterStore, name: &str, v: Array2<f64>) {
        let id = store.id(name).unwrap();
        *store.get_mut(id) = v;
    }

    fn batch_of(classes: &[usize]) -> Batch {
        let x = Array2::from_elem((classes.len(), 1), 1.0);
        let mut y = Array2::zeros((classes.len(), 2));
        for (i, &c) in classes.iter().enumerate() {
            y[[i, c]] = 1.0;
        }
        Batch::new(x, y).unwrap()
    }

    const SHARP: [[f64; 2]; 2] = [[50.0, -50.0], [-50.0, 50.0]];

    fn forced(z: &[usize]) -> Array2<f64> {
        Array2::from_shape_fn((z.len(), 2), |(i, j)| if j == z[i] { 100.0 } else { -100.0 })
    }

    fn log_softmax2(a: [f64; 2]) -> [f64; 2] {
        let m = a[0].max(a[1]);
        let l = m + ((a[0] - m).exp() + (a[1] - m).exp()).ln();
        [a[0] - l, a[1] - l]
    }

    #[test]
    fn elbo_of_perfect_two_point_model() {
        let model = two_point([0.3, 0.7], [[0.0, -1000.0], [-1000.0, 0.0]], SHARP);
        let v = elbo(&model, &batch_of(&[0]), &forced(&[0])).unwrap();
        assert!((v - 0.3f64.ln()).abs() < 1e-12, "{v}");
        assert!((v + 1.204).abs() < 1e-3);
        let v = elbo(&model, &batch_of(&[1]), &forced(&[1])).unwrap();
        assert!((v - 0.7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn elbo_collapses_to_decoder_when_q_equals_prior() {
        let prior: [f64; 2] = [0.3, 0.7];
        let lp = [prior[0].ln(), prior[1].ln()];
        let dec = [[0.4f64.ln(), 0.6f64.ln()], [0.4f64.ln(), 0.6f64.ln()]];
        let model = two_point(prior, [lp, lp], dec);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise = sample_noise(model.latent(), 1, &mut rng);
        let v = elbo(&model, &batch_of(&[0]), &noise).unwrap();
        assert!((v - 0.4f64.ln()).abs() < 1e-12);
    }

    /// Independent evaluation of the Renyi bound for one datapoint and a
    /// fixed set of latent draws.
    fn vr_oracle(prior: [f64; 2], q: [f64; 2], dec: [[f64; 2]; 2], y: usize, z: &[usize], alpha: f64) -> f64 {
        let lq = log_softmax2([q[0].ln(), q[1].ln()]);
        let terms: Vec<f64> = z
            .iter()
            .map(|&zi| {
                let lw = log_softmax2(dec[zi])[y] + prior[zi].ln() - lq[zi];
                ((1.0 - alpha) * lw).exp()
            })
            .collect();
        (terms.iter().sum::<f64>() / z.len() as f64).ln() / (1.0 - alpha)
    }

    #[test]
    fn vr_bound_matches_exhaustive_enumeration() {
        let prior: [f64; 2] = [0.3, 0.7];
        let q: [f64; 2] = [0.999, 0.001];
        let qlog = [q[0].ln(), q[1].ln()];
        let model = two_point(prior, [qlog, [qlog[1], qlog[0]]], SHARP);
        let b = batch_of(&[0]);
        let (mut expected_impl, mut expected_oracle) = (0.0, 0.0);
        for combo in 0..8usize {
            let z: Vec<usize> = (0..3).map(|j| (combo >> j) & 1).collect();
            let got = vr_bound(&model, &b, &forced(&z), 3, 0.5).unwrap();
            let want = vr_oracle(prior, q, SHARP, 0, &z, 0.5);
            assert!((got - want).abs() < 1e-10, "{z:?}: {got} vs {want}");
            let p: f64 = z.iter().map(|&zi| q[zi]).product();
            expected_impl += p * got;
            expected_oracle += p * want;
        }
        assert!((expected_impl - expected_oracle).abs() < 1e-10);
    }

    #[test]
    fn single_sample_bound_is_independent_of_alpha() {
        let model = two_point([0.3, 0.7], [[0.2, -0.5], [-1.0, 0.4]], [[1.0, -2.0], [0.3, 0.1]]);
        let b = batch_of(&[1]);
        for z in [0, 1] {
            let lo = vr_bound(&model, &b, &forced(&[z]), 1, 0.1).unwrap();
            let hi = vr_bound(&model, &b, &forced(&[z]), 1, 0.9).unwrap();
            assert!((lo - hi).abs() < 1e-12);
        }
    }

    fn exact_posterior_model() -> TransitionModel {
        // p(y0|z0)=0.9, p(y0|z1)=0.2, prior (0.3, 0.7): p(y0)=0.41
        let dec = [[0.9f64.ln(), 0.1f64.ln()], [0.2f64.ln(), 0.8f64.ln()]];
        let post0 = [(0.27f64 / 0.41).ln(), (0.14f64 / 0.41).ln()];
        let post1 = [(0.03f64 / 0.59).ln(), (0.56f64 / 0.59).ln()];
        two_point([0.3, 0.7], [post0, post1], dec)
    }

    #[test]
    fn exact_posterior_makes_bound_tight() {
        let model = exact_posterior_model();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (m, alpha) in [(1, 0.5), (3, 0.5), (7, 0.2), (2, 0.95)] {
            let noise = sample_noise(model.latent(), m, &mut rng);
            let v = vr_bound(&model, &batch_of(&[0]), &noise, m, alpha).unwrap();
            assert!((v - 0.41f64.ln()).abs() < 1e-12, "m={m} alpha={alpha}: {v}");
            let v = vr_bound(&model, &batch_of(&[1]), &noise, m, alpha).unwrap();
            assert!((v - 0.59f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn test_nll_recovers_marginal_entropy() {
        let model = two_point([0.3, 0.7], [[0.0, -1000.0], [-1000.0, 0.0]], SHARP);
        let classes: Vec<usize> = (0..100).map(|i| usize::from(i % 10 >= 3)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nll = test_nll(&model, &batch_of(&classes), 50, &mut rng).unwrap();
        let h = -(0.3 * 0.3f64.ln() + 0.7 * 0.7f64.ln());
        assert!((nll - h).abs() < 1e-9, "{nll}");
        assert!((nll - 0.6109).abs() < 1e-4);
    }

    #[test]
    fn test_nll_with_q_equal_prior_is_plain_monte_carlo() {
        let lp = [0.3f64.ln(), 0.7f64.ln()];
        let dec = [[0.9f64.ln(), 0.1f64.ln()], [0.2f64.ln(), 0.8f64.ln()]];
        let model = two_point([0.3, 0.7], [lp, lp], dec);
        // half the draws pick each latent
        let noise = forced(&[0, 1, 0, 1]);
        let v = test_nll_with_noise(&model, &batch_of(&[0]), &noise, 4).unwrap();
        assert!((v + (0.5f64 * 0.9 + 0.5 * 0.2).ln()).abs() < 1e-12);
    }

    #[test]
    fn free_bits_examples() {
        assert!((free_bits_objective(1.0, &[0.01, 0.2], 0.07) - (1.0 - 0.27)).abs() < 1e-15);
        assert_eq!(free_bits_objective(1.0, &[0.01, 0.2], 0.0), 1.0 - 0.21);
        assert_eq!(free_bits_objective(-2.0, &[0.3, 0.5], 0.07), -2.0 - 0.8);
    }

    fn toy_model(latent: LatentSpec, hidden: usize, seed: u64) -> TransitionModel {
        let mut cfg = ModelConfig::toy(latent);
        cfg.prior_hidden = vec![hidden];
        cfg.inference_hidden = vec![hidden];
        cfg.decoder_hidden = vec![hidden, hidden];
        if cfg.latent.n_flow > 0 {
            cfg.latent.flow_hidden = vec![hidden];
        }
        TransitionModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn toy_batch(n: usize, seed: u64) -> Batch {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 1), |_| rng.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((n, 1), |(i, _)| 2.0 * x[[i, 0]] + rng.gen_range(-0.5..0.5));
        Batch::new(x, y).unwrap()
    }

    #[test]
    fn training_loss_gradients_match_finite_differences() {
        for latent in [LatentSpec::gaussian(2), LatentSpec::flow(2, 2), LatentSpec::discrete(2, 3)] {
            let cfg = ObjectiveConfig::for_latent(&latent);
            let batch = toy_batch(3, 5);
            let mut accepted = None;
            for seed in 0..50 {
                let model = toy_model(latent.clone(), 5, seed);
                let noise = sample_noise(model.latent(), 3 * cfg.k, &mut ChaCha8Rng::seed_from_u64(seed));
                let sampling = Sampling::Relaxed { tau: 0.7 };
                let margin = relu_margin(model.store(), |t, b| {
                    Ok(training_loss_t(&model, t, b, &batch, &noise, &cfg, sampling)?.loss)
                })
                .unwrap();
                if margin > 1e-4 {
                    accepted = Some((model, noise, sampling));
                    break;
                }
            }
            let (model, noise, sampling) = accepted.expect("inputs away from ReLU kinks");
            let err = grad_check(
                model.store(),
                |t: &Tape, b: &crate::diffcore::Bound| {
                    Ok(training_loss_t(&model, t, b, &batch, &noise, &cfg, sampling)?.loss)
                },
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-6, "{:?}: {err}", latent.family);
        }
    }

    #[test]
    fn test_nll_is_permutation_invariant() {
        let model = toy_model(LatentSpec::gaussian(2), 8, 3);
        let batch = toy_batch(40, 1);
        let m = 20;
        let noise = sample_noise(model.latent(), 40 * m, &mut ChaCha8Rng::seed_from_u64(4));
        let base = test_nll_with_noise(&model, &batch, &noise, m).unwrap();
        let perm: Vec<usize> = (0..40).map(|i| (i * 17 + 5) % 40).collect();
        let pb = batch.select(&perm);
        let pn_rows: Vec<usize> = perm.iter().flat_map(|&i| (0..m).map(move |j| i * m + j)).collect();
        let pn = noise.select(ndarray::Axis(0), &pn_rows);
        let permuted = test_nll_with_noise(&model, &pb, &pn, m).unwrap();
        assert!((base - permuted).abs() < 1e-9);
    }

    #[test]
    fn vr_bound_dominates_elbo_on_average() {
        let model = toy_model(LatentSpec::gaussian(2), 10, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (mut diffs, chunks) = (Vec::new(), 40);
        for c in 0..chunks {
            let b = toy_batch(50, 100 + c);
            let e = elbo(&model, &b, &sample_noise(model.latent(), 50, &mut rng)).unwrap();
            let v = vr_bound(&model, &b, &sample_noise(model.latent(), 150, &mut rng), 3, 0.5)
                .unwrap();
            diffs.push(v - e);
        }
        let mean = diffs.iter().sum::<f64>() / chunks as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (chunks - 1) as f64;
        let se = (var / chunks as f64).sqrt();
        assert!(mean >= -2.0 * se, "{mean} +- {se}");
    }

    #[test]
    fn point_mass_decoder_gives_identical_samples() {
        let model = two_point([0.3, 0.7], [[0.0, 0.0], [0.0, 0.0]], [[0.0, -1e4], [0.0, -1e4]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ys = sample_prediction(&model, &[1.0], 200, &mut rng).unwrap();
        assert!(ys.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_step_reports_floored_penalties() {
        let mut model = toy_model(LatentSpec::gaussian(3), 8, 2);
        let cfg = ObjectiveConfig::for_latent(model.latent());
        let batch = toy_batch(16, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let noise = sample_noise(model.latent(), 16 * cfg.k, &mut rng);
            let r = train_step(&mut model, &batch, &noise, &cfg, 1.0, 1e-3, Default::default()).unwrap();
            assert!(r.penalties.iter().all(|&p| p >= cfg.free_bits));
            let want = -free_bits_objective(r.reconstruction, &r.divergences, cfg.free_bits);
            assert!((r.loss - want).abs() < 1e-9);
        }
    }

    #[test]
    fn objective_config_validation() {
        let g = LatentSpec::gaussian(2);
        assert!(ObjectiveConfig::for_latent(&g).validate(&g).is_ok());
        let mut c = ObjectiveConfig::for_latent(&g);
        c.alpha = 1.0;
        assert!(c.validate(&g).is_err());
        let f = LatentSpec::flow(2, 2);
        assert!(ObjectiveConfig::for_latent(&g).validate(&f).is_err());
        c = ObjectiveConfig::for_latent(&g);
        c.k = 0;
        assert!(c.validate(&g).is_err());
    }

    #[test]
    fn mismatched_noise_is_config_error() {
        let model = toy_model(LatentSpec::gaussian(2), 4, 0);
        let batch = toy_batch(3, 0);
        let r = elbo(&model, &batch, &Array2::zeros((2, 2)));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip_preserves_model() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.swve");
        for latent in [LatentSpec::flow(4, 2), LatentSpec::discrete(3, 3)] {
            let model = toy_model(latent, 6, 1);
            let cfg = ObjectiveConfig::for_latent(model.latent());
            model.save(&path, &cfg).unwrap();
            let (back, back_cfg) = TransitionModel::load(&path).unwrap();
            assert_eq!(back_cfg, cfg);
            assert_eq!(back.config(), model.config());
            let batch = toy_batch(5, 2);
            let noise = sample_noise(model.latent(), 5, &mut ChaCha8Rng::seed_from_u64(0));
            assert_eq!(
                elbo(&model, &batch, &noise).unwrap(),
                elbo(&back, &batch, &noise).unwrap()
            );
        }
    }
}
