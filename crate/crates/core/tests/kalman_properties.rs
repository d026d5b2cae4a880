mod common;

use ensemble_sync::kalman::{self, min_eigenvalue, TOL_PSD};
use ensemble_sync::model::{build_steps, filter_performance, initial_state, smooth_performance};
use ensemble_sync::oracle;
use ensemble_sync::synth::{make_script, simulate, Condition, SimulationParams};
use ensemble_sync::EnsembleConfig;
use proptest::prelude::*;

use common::{random_instance, rel_err_mat, rel_err_vec, zero_block_instance};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn filter_and_smoother_match_the_oracle(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let filtered = kalman::filter(&inst.init, &inst.steps, &inst.ys).unwrap();
        let smoothed = kalman::smooth(&filtered, &inst.steps).unwrap();
        let joint = oracle::build_joint(&inst.init, &inst.steps).unwrap();
        let exact_f = oracle::filtered_posteriors(&joint, &inst.ys).unwrap();
        let exact_s = oracle::condition_on_observations(&joint, &inst.ys).unwrap();
        for n in 0..inst.ys.len() {
            prop_assert!(rel_err_vec(&filtered[n].posterior.mean, &exact_f[n].mean) <= 1e-8);
            prop_assert!(rel_err_mat(&filtered[n].posterior.cov, &exact_f[n].cov) <= 1e-6);
            prop_assert!(rel_err_vec(&smoothed[n].smoothed.mean, &exact_s[n].mean) <= 1e-8);
            prop_assert!(rel_err_mat(&smoothed[n].smoothed.cov, &exact_s[n].cov) <= 1e-6);
        }
    }

    #[test]
    fn update_never_increases_covariance(seed in any::<u64>()) {
        let inst = random_instance(seed);
        for step in kalman::filter(&inst.init, &inst.steps, &inst.ys).unwrap() {
            let diff = &step.prior.cov - &step.posterior.cov;
            prop_assert!(min_eigenvalue(&diff) >= -TOL_PSD);
            prop_assert!(step.posterior.cov.trace() <= step.prior.cov.trace() + TOL_PSD);
        }
    }

    #[test]
    fn stored_covariances_are_exactly_symmetric(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let filtered = kalman::filter(&inst.init, &inst.steps, &inst.ys).unwrap();
        let smoothed = kalman::smooth(&filtered, &inst.steps).unwrap();
        for f in &filtered {
            prop_assert_eq!(&f.prior.cov, &f.prior.cov.transpose());
            prop_assert_eq!(&f.posterior.cov, &f.posterior.cov.transpose());
            prop_assert_eq!(&f.obs_pred_cov, &f.obs_pred_cov.transpose());
        }
        for (s, f) in smoothed.iter().zip(&filtered) {
            prop_assert_eq!(&s.smoothed.cov, &s.smoothed.cov.transpose());
            prop_assert!(s.smoothed.cov.trace() <= f.posterior.cov.trace() + TOL_PSD);
        }
    }

    #[test]
    fn smoother_of_one_step_is_the_filter(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let filtered = kalman::filter(&inst.init, &inst.steps[..1], &inst.ys[..1]).unwrap();
        let smoothed = kalman::smooth(&filtered, &inst.steps[..1]).unwrap();
        prop_assert_eq!(&smoothed[0].smoothed, &filtered[0].posterior);
        prop_assert!(!smoothed[0].jitter_applied);
    }
}

#[test]
fn zero_process_noise_blocks_use_the_jitter() {
    for seed in 0..20 {
        let inst = zero_block_instance(seed);
        let filtered = kalman::filter(&inst.init, &inst.steps, &inst.ys).unwrap();
        let smoothed = kalman::smooth(&filtered, &inst.steps).unwrap();
        assert!(smoothed.iter().any(|s| s.jitter_applied));
        let joint = oracle::build_joint(&inst.init, &inst.steps).unwrap();
        let exact = oracle::condition_on_observations(&joint, &inst.ys).unwrap();
        for (s, e) in smoothed.iter().zip(&exact) {
            assert!(rel_err_vec(&s.smoothed.mean, &e.mean) <= 1e-4);
            assert!(rel_err_mat(&s.smoothed.cov, &e.cov) <= 1e-4);
        }
    }
}

#[test]
fn runs_are_bit_identical() {
    let inst = random_instance(42);
    let a = kalman::filter(&inst.init, &inst.steps, &inst.ys).unwrap();
    let b = kalman::filter(&inst.init, &inst.steps, &inst.ys).unwrap();
    assert_eq!(a, b);
    assert_eq!(kalman::smooth(&a, &inst.steps).unwrap(), kalman::smooth(&b, &inst.steps).unwrap());
}

/// The ensemble model itself, checked end to end against exact conditioning.
#[test]
fn ensemble_gains_match_the_oracle() {
    let k = 2;
    let script = make_script(Condition::Normal, k, 5, 500.0, None, 9).unwrap();
    let params = SimulationParams::uniform(k, 5, 0.3, 0.02, 15.0, script, 9);
    let data = simulate(&params).unwrap().0.to_ioi_series().unwrap();
    let config = EnsembleConfig::new(k).unwrap();

    let filtered = filter_performance(&data, &config).unwrap();
    let smoothed = smooth_performance(&data, &config).unwrap();
    let steps = build_steps(&data, &config).unwrap();
    let init = initial_state(&config, &data.iois()[0]).unwrap();
    let joint = oracle::build_joint(&init, &steps).unwrap();
    let ys = data.observations();
    let exact_f = oracle::filtered_posteriors(&joint, &ys).unwrap();
    let exact_s = oracle::condition_on_observations(&joint, &ys).unwrap();

    let alpha = config.layout().alpha();
    for n in 0..5 {
        for (pair, d) in alpha.clone().enumerate() {
            let f = filtered.gains.steps[n].alpha[pair];
            let s = smoothed.gains.steps[n].alpha[pair];
            assert!((f.mean - exact_f[n].mean[d]).abs() <= 1e-8 * exact_f[n].mean.amax());
            assert!((s.mean - exact_s[n].mean[d]).abs() <= 1e-8 * exact_s[n].mean.amax());
            assert!((f.var - exact_f[n].cov[(d, d)]).abs() <= 1e-6 * exact_f[n].cov.amax());
            assert!((s.var - exact_s[n].cov[(d, d)]).abs() <= 1e-6 * exact_s[n].cov.amax());
            assert!(s.var <= f.var + TOL_PSD);
        }
    }
}
