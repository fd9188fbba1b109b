mod common;

use common::{posterior_error, GpInstance};
use ctxsel::model::{AlternativeGp, ContextTable, KernelSpec, NoiseModel};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn posterior_matches_joint_gaussian_conditioning() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..300 {
        let inst = GpInstance::random(&mut rng, 6, 12);
        let err = posterior_error(&inst);
        assert!(err <= 1e-8, "instance {i}: relative error {err:e}");
    }
}

#[test]
fn collapsed_likelihood_equals_raw_likelihood() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    while checked < 100 {
        let inst = GpInstance::random(&mut rng, 6, 12);
        if inst.observations.is_empty() {
            continue;
        }
        let gp = inst.model();
        let lml = gp
            .log_marginal_likelihood(&inst.kernel, &NoiseModel::Known(inst.noise.clone()), &inst.contexts)
            .unwrap();
        let raw = inst.brute_force_lml();
        assert!((lml - raw).abs() <= 1e-8 * raw.abs().max(1.0), "{lml} vs {raw}");
        checked += 1;
    }
}

#[test]
fn sequential_mean_is_order_free() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let inst = GpInstance::random(&mut rng, 6, 12);
        let gp = inst.model();
        let full = gp.fit_posterior(&inst.contexts).unwrap().mean;
        let mut order: Vec<usize> = (0..inst.contexts.len()).collect();
        let reversed: Vec<usize> = order.iter().rev().copied().collect();
        let a = gp.sequential_posterior_mean(&inst.contexts, &order).unwrap();
        let b = gp.sequential_posterior_mean(&inst.contexts, &reversed).unwrap();
        for c in 0..full.len() {
            assert!((a[c] - b[c]).abs() <= 1e-8 * (1.0 + b[c].abs()));
            assert!((a[c] - full[c]).abs() <= 1e-8 * (1.0 + full[c].abs()));
        }
        for _ in 0..5 {
            order.shuffle(&mut rng);
            let s = gp.sequential_posterior_mean(&inst.contexts, &order).unwrap();
            for c in 0..full.len() {
                assert!((s[c] - full[c]).abs() <= 1e-8 * (1.0 + full[c].abs()));
            }
        }
    }
}

#[test]
fn four_contexts_ten_observations() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let contexts = ContextTable::from_points(&[0.0, 0.3, 0.55, 1.0]).unwrap();
    let mut gp = AlternativeGp::new(
        KernelSpec::matern52(1.5, vec![0.4]).unwrap(),
        0.2,
        NoiseModel::Known(vec![0.1, 0.2, 0.05, 0.3]),
        false,
        4,
    )
    .unwrap();
    for _ in 0..10 {
        gp.add_observation(rng.random_range(0..4), rng.random_range(-2.0..2.0)).unwrap();
    }
    let full = gp.fit_posterior(&contexts).unwrap().mean;
    let seq = gp.sequential_posterior_mean(&contexts, &[2, 0, 3, 1]).unwrap();
    for c in 0..4 {
        assert!((seq[c] - full[c]).abs() <= 1e-8);
    }
}

#[test]
fn uninformative_prior_reduces_to_sample_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let contexts = ContextTable::from_points(&[0.0, 1.0, 2.0]).unwrap();
    let noise = vec![0.5, 1.0, 2.0];
    let mut gp = AlternativeGp::new(
        KernelSpec::independent(1e8, 1).unwrap(),
        0.0,
        NoiseModel::Known(noise.clone()),
        false,
        3,
    )
    .unwrap();
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for step in 0..600 {
        let c = rng.random_range(0..3);
        let y = 40.0 + rng.random_range(-5.0..5.0);
        gp.add_observation(c, y).unwrap();
        sums[c] += y;
        counts[c] += 1;
        if step % 50 != 0 {
            continue;
        }
        let post = gp.fit_posterior(&contexts).unwrap();
        for c in (0..3).filter(|&c| counts[c] > 0) {
            let mean = sums[c] / counts[c] as f64;
            let var = noise[c] / counts[c] as f64;
            assert!((post.mean[c] - mean).abs() <= 1e-4 * (1.0 + mean.abs()));
            assert!((post.variance[c] - var).abs() <= 1e-4 * var);
        }
    }
}

fn instance_strategy() -> impl Strategy<Value = GpInstance> {
    any::<u64>().prop_map(|seed| GpInstance::random(&mut ChaCha8Rng::seed_from_u64(seed), 6, 12))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn posterior_covariance_is_symmetric_and_cauchy_schwarz(inst in instance_strategy()) {
        let post = inst.model().fit_posterior(&inst.contexts).unwrap();
        let cov = post.covariance().unwrap();
        let n = inst.contexts.len();
        for i in 0..n {
            prop_assert!(post.variance[i] >= 0.0);
            prop_assert_eq!(post.variance[i], cov[(i, i)]);
            for j in 0..n {
                prop_assert!((cov[(i, j)] - cov[(j, i)]).abs() <= 1e-12);
                let bound = (post.variance[i] * post.variance[j]).sqrt() + 1e-9;
                prop_assert!(cov[(i, j)].abs() <= bound);
            }
        }
    }

    #[test]
    fn extra_observation_never_raises_variance(inst in instance_strategy(), extra in any::<(u8, i8)>()) {
        let gp = inst.model();
        let before = gp.fit_posterior(&inst.contexts).unwrap();
        let mut more = gp.clone();
        let c = extra.0 as usize % inst.contexts.len();
        more.add_observation(c, extra.1 as f64 / 16.0).unwrap();
        let after = more.fit_posterior(&inst.contexts).unwrap();
        for i in 0..inst.contexts.len() {
            prop_assert!(after.variance[i] <= before.variance[i] + 1e-10);
        }
    }

    #[test]
    fn refit_matches_fresh_fit(inst in instance_strategy()) {
        let mut gp = inst.model();
        let cached = gp.refit(&inst.contexts, ctxsel::model::CovarianceMode::Full).unwrap().clone();
        let fresh = gp.fit_posterior(&inst.contexts).unwrap();
        for i in 0..inst.contexts.len() {
            let scale = fresh.mean[i].abs().max(1e-300);
            prop_assert!((cached.mean[i] - fresh.mean[i]).abs() <= 1e-10 * scale);
        }
    }
}
