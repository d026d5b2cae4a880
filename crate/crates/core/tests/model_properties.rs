use ensemble_sync::kalman::GaussianBelief;
use ensemble_sync::model::{
    asynchrony_vector, build_steps, build_transition_matrix, pair_index, EstimateMode, GainIndex, GainTrajectory,
    HiddenStateLayout,
};
use ensemble_sync::{EnsembleConfig, IoiSeries, OnsetTimeline};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// K performers, two onsets each, jittered around a shared start.
fn timeline_strategy(max_k: usize) -> impl Strategy<Value = OnsetTimeline> {
    (2..=max_k)
        .prop_flat_map(|k| prop::collection::vec((-100.0..100.0f64, 300.0..700.0f64), k))
        .prop_map(|cols| OnsetTimeline::new(cols.into_iter().map(|(t0, r)| vec![t0, t0 + r]).collect()).unwrap())
}

proptest! {
    #[test]
    fn asynchronies_are_antisymmetric(tl in timeline_strategy(6)) {
        let k = tl.k();
        for i in 1..=k {
            for j in (1..=k).filter(|&j| j != i) {
                let aij = asynchrony_vector(&tl, i, 1).unwrap()[if j < i { j - 1 } else { j - 2 }];
                let aji = asynchrony_vector(&tl, j, 1).unwrap()[if i < j { i - 1 } else { i - 2 }];
                prop_assert_eq!(aij, -aji);
            }
        }
    }

    #[test]
    fn transition_matrix_is_sparse(tl in timeline_strategy(6)) {
        let k = tl.k();
        let g = build_transition_matrix(&tl, 1).unwrap();
        let nonzero = g.iter().filter(|&&x| x != 0.0).count();
        prop_assert!(nonzero <= 2 * k * k + 3 * k * (k - 1) + 2 * k);
    }

    #[test]
    fn coupling_blocks_scale_with_onsets(tl in timeline_strategy(5), gamma in 0.1..10.0f64) {
        let scaled = OnsetTimeline::new(
            tl.rows().iter().map(|row| row.iter().map(|t| gamma * t).collect()).collect(),
        ).unwrap();
        let g = build_transition_matrix(&tl, 1).unwrap();
        let gs = build_transition_matrix(&scaled, 1).unwrap();
        let layout = HiddenStateLayout::new(tl.k());
        let gains_start = layout.alpha().start;
        for r in 0..layout.dim() {
            for c in 0..layout.dim() {
                if c >= gains_start && r < gains_start {
                    let expected = gamma * g[(r, c)];
                    prop_assert!((gs[(r, c)] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
                } else {
                    prop_assert_eq!(gs[(r, c)], g[(r, c)]);
                }
            }
        }
    }
}

#[test]
fn gain_layout_round_trips() {
    for k in 2..=6 {
        let layout = HiddenStateLayout::new(k);
        let index = GainIndex::new(k);
        let mut mean = DVector::zeros(layout.dim());
        for (i, j) in index.pairs() {
            let idx = pair_index(i, j, k).unwrap();
            mean[layout.alpha().start + idx] = (10 * i + j) as f64;
            mean[layout.beta().start + idx] = -((10 * i + j) as f64);
            assert_eq!(index.pair(idx), (i, j));
        }
        let belief = GaussianBelief::new(mean, DMatrix::identity(layout.dim(), layout.dim())).unwrap();
        let gains = GainTrajectory::from_beliefs(k, EstimateMode::Filtered, [&belief]);
        for (i, j) in index.pairs() {
            assert_eq!(gains.alpha_path(i, j).unwrap()[0].mean, (10 * i + j) as f64);
            assert_eq!(gains.beta_path(i, j).unwrap()[0].mean, -((10 * i + j) as f64));
        }
    }
}

#[test]
fn observation_matrix_is_the_same_at_every_step() {
    let iois = vec![vec![500.0, 510.0, 495.0]; 12];
    let data = IoiSeries::new(iois, vec![0.0, 3.0, -2.0]).unwrap();
    let steps = build_steps(&data, &EnsembleConfig::new(3).unwrap()).unwrap();
    assert!(steps.windows(2).all(|w| w[0].obs_matrix == w[1].obs_matrix));
    assert!(steps.windows(2).any(|w| w[0].trans_matrix != w[1].trans_matrix));
}
