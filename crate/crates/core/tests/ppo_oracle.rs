mod oracle;

use madqrl::env::Observation;
use madqrl::policy::{log_softmax, ModelSpec, Network};
use madqrl::ppo::{
    clipped_surrogate, compute_gae, kl_divergence, normalize_advantages, ppo_loss, ActorCritic,
    PpoConfig, Sample, Step, Trajectory,
};
use madqrl::qsim::{AnsatzConfig, Entanglement};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn trajectory(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64) -> Trajectory {
    Trajectory {
        steps: rewards
            .iter()
            .zip(values)
            .zip(dones)
            .map(|((&reward, &value_pred), &done)| Step {
                obs: Observation::zeros(1, 1),
                critic_obs: None,
                action: 0,
                reward,
                log_prob_old: 0.0,
                logits_old: vec![0.0],
                value_pred,
                done,
            })
            .collect(),
        bootstrap_value: bootstrap,
    }
}

/// Random trajectory pieces of length 1..=32 with occasional terminals.
fn piece() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>, f64)> {
    (1usize..=32).prop_flat_map(|n| {
        (
            prop::collection::vec(-1.0..1.0f64, n),
            prop::collection::vec(-2.0..2.0f64, n),
            prop::collection::vec(prop::bool::weighted(0.1), n),
            -2.0..2.0f64,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gae_matches_explicit_sum((r, v, d, b) in piece(), gamma in 0.5..0.999f64, lambda in 0.0..=1.0f64) {
        let cfg = PpoConfig { gamma, gae_lambda: lambda, ..PpoConfig::default() };
        let got = compute_gae(&trajectory(&r, &v, &d, b), &cfg).unwrap();
        let want = oracle::gae_by_sum(&r, &v, &d, b, gamma, lambda);
        for (t, (g, w)) in got.advantages.iter().zip(&want).enumerate() {
            prop_assert!((g - w).abs() < 1e-12, "step {t}: {g} vs {w}");
            prop_assert!((got.returns[t] - (w + v[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn full_lambda_with_zero_values_is_the_discounted_return((r, _v, d, b) in piece(), gamma in 0.5..0.999f64) {
        let cfg = PpoConfig { gamma, gae_lambda: 1.0, ..PpoConfig::default() };
        let zeros = vec![0.0; r.len()];
        let got = compute_gae(&trajectory(&r, &zeros, &d, b), &cfg).unwrap();
        let want = oracle::discounted_returns(&r, &d, b, gamma);
        prop_assert_eq!(&got.advantages, &want);
        prop_assert_eq!(&got.returns, &want);
    }

    #[test]
    fn normalized_advantages_are_standardized(mut adv in prop::collection::vec(-10.0..10.0f64, 2..200)) {
        let spread = adv.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - adv.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-6);
        normalize_advantages(&mut adv);
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn surrogate_never_exceeds_unclipped(ratio in 0.0..3.0f64, adv in -5.0..5.0f64, eps in 0.01..0.5f64) {
        prop_assert!(clipped_surrogate(ratio, adv, eps) <= ratio * adv + 1e-15);
    }

    #[test]
    fn kl_is_non_negative_and_zero_on_self(p in prop::collection::vec(-5.0..5.0f64, 2..10), shift in -3.0..3.0f64) {
        let q: Vec<f64> = p.iter().enumerate().map(|(i, x)| x + shift * i as f64).collect();
        prop_assert!(kl_divergence(&p, &q) >= -1e-12);
        prop_assert!(kl_divergence(&p, &p).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_normalizes(logits in prop::collection::vec(-50.0..50.0f64, 1..12)) {
        let s: f64 = log_softmax(&logits).iter().map(|l| l.exp()).sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }
}

fn random_obs(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Observation {
    let mut o = Observation::zeros(shape.0, shape.1);
    o.pixels
        .iter_mut()
        .for_each(|p| *p = rng.gen_range(0.0..1.0));
    o
}

/// Batch of 8 samples whose behaviour policy is a slightly perturbed copy
/// of `params`, so the ratios sit away from the clip edges.
fn batch(model: &ActorCritic, params: &[f64], rng: &mut ChaCha8Rng) -> Vec<Sample> {
    let shape = model.actor.spec().obs_shape;
    (0..8)
        .map(|_| {
            let obs = random_obs(rng, shape);
            let logits = model
                .actor
                .forward(model.split(params).0, &obs)
                .unwrap()
                .logits;
            let old: Vec<f64> = logits
                .iter()
                .map(|l| l + rng.gen_range(-0.05..0.05))
                .collect();
            let action = rng.gen_range(0..logits.len());
            Sample {
                critic_obs: None,
                action,
                log_prob_old: log_softmax(&old)[action],
                logits_old: old,
                advantage: rng.gen_range(-1.0..1.0),
                ret: rng.gen_range(-1.0..1.0),
                obs,
            }
        })
        .collect()
}

fn check_loss_gradient(spec: &ModelSpec, seed: u64) {
    let model = ActorCritic {
        actor: Network::new(spec).unwrap(),
        critic: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = model.init_params(&mut rng);
    let samples = batch(&model, &params, &mut rng);
    let cfg = PpoConfig {
        entropy_coef: 0.1,
        ..PpoConfig::default()
    };
    let grad = ppo_loss(&model, &params, &samples, &cfg, true)
        .unwrap()
        .1
        .unwrap();
    let fd = oracle::finite_difference(&params, 1e-5, |p| {
        vec![ppo_loss(&model, p, &samples, &cfg, false).unwrap().0.total]
    });
    let diff: f64 = grad
        .iter()
        .zip(&fd)
        .map(|(g, f)| (g - f[0]).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = fd.iter().map(|f| f[0] * f[0]).sum::<f64>().sqrt();
    assert!(
        diff <= 1e-4 * norm,
        "relative gradient error {}",
        diff / norm
    );
}

#[test]
fn hybrid_loss_gradient_matches_finite_differences() {
    let spec = ModelSpec::hybrid(
        (3, 4),
        3,
        AnsatzConfig::new(2, 2, Entanglement::Strong).unwrap(),
    );
    for seed in 0..3 {
        check_loss_gradient(&spec, seed);
    }
}

#[test]
fn basic_hybrid_and_classical_gradients_match_finite_differences() {
    check_loss_gradient(
        &ModelSpec::hybrid(
            (3, 4),
            3,
            AnsatzConfig::new(3, 1, Entanglement::Basic).unwrap(),
        ),
        7,
    );
    let mut spec = ModelSpec::classical((8, 8), 3);
    spec.cnn.channels = vec![2, 3];
    check_loss_gradient(&spec, 11);
}
