//! Shared generators and comparisons for the integration tests.
#![allow(dead_code)]

use ensemble_sync::kalman::{GaussianBelief, StepModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..1.0))
}

/// `B Bᵀ / dim + floor·I`, comfortably positive definite.
pub fn random_spd(rng: &mut impl Rng, dim: usize, floor: f64) -> DMatrix<f64> {
    let b = random_matrix(rng, dim, dim, 1.0);
    &b * b.transpose() / dim as f64 + DMatrix::identity(dim, dim) * floor
}

/// Normwise relative error `max|a − b| / max|b|`.
pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

/// A random linear-Gaussian instance with observations drawn from the model.
pub struct Instance {
    pub init: GaussianBelief,
    pub steps: Vec<StepModel>,
    pub ys: Vec<DVector<f64>>,
}

/// `p ≤ 8`, `m ≤ 4`, `N ≤ 6`, all noise covariances positive definite.
pub fn random_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let p = r.random_range(1..=8);
    let m = r.random_range(1..=4);
    let n = r.random_range(1..=6);
    let init =
        GaussianBelief::new(DVector::from_fn(p, |_, _| r.random_range(-2.0..2.0)), random_spd(&mut r, p, 0.2)).unwrap();
    let steps: Vec<StepModel> = (0..n)
        .map(|_| {
            StepModel::new(
                random_matrix(&mut r, m, p, 1.0),
                random_matrix(&mut r, p, p, 0.9 / (p as f64).sqrt()),
                random_spd(&mut r, m, 0.1),
                random_spd(&mut r, p, 0.1),
            )
            .unwrap()
        })
        .collect();
    let ys = (0..n).map(|_| DVector::from_fn(m, |_, _| r.random_range(-3.0..3.0))).collect();
    Instance { init, steps, ys }
}

/// Like [`random_instance`] but the trailing `z` state components have zero
/// process noise, zero prior variance and evolve only among themselves, so
/// `R_{n+1}` is singular and the smoother must regularize it.
pub fn zero_block_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let p = r.random_range(3..=8);
    let z = r.random_range(1..p);
    let m = r.random_range(1..=4);
    let n = r.random_range(2..=6);
    let mask = |mut mat: DMatrix<f64>| {
        for i in p - z..p {
            for j in 0..p - z {
                mat[(i, j)] = 0.0;
            }
        }
        mat
    };
    let zero_block = |mut mat: DMatrix<f64>| {
        for i in 0..p {
            for j in 0..p {
                if i >= p - z || j >= p - z {
                    mat[(i, j)] = 0.0;
                }
            }
        }
        mat
    };
    let init = GaussianBelief::new(
        DVector::from_fn(p, |_, _| r.random_range(-2.0..2.0)),
        zero_block(random_spd(&mut r, p, 0.2)),
    )
    .unwrap();
    let steps: Vec<StepModel> = (0..n)
        .map(|_| {
            StepModel::new(
                random_matrix(&mut r, m, p, 1.0),
                mask(random_matrix(&mut r, p, p, 0.9 / (p as f64).sqrt())),
                random_spd(&mut r, m, 0.1),
                zero_block(random_spd(&mut r, p, 0.1)),
            )
            .unwrap()
        })
        .collect();
    let ys = (0..n).map(|_| DVector::from_fn(m, |_, _| r.random_range(-3.0..3.0))).collect();
    Instance { init, steps, ys }
}
