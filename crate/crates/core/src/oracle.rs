//! Brute-force inference for small state-space instances.
//!
//! The whole trajectory `(θ_0, …, θ_N, y_1, …, y_N)` is written as a linear
//! map of the independent sources `(θ_0, w_1…w_N, v_1…v_N)`, the joint
//! Gaussian is formed explicitly, and posteriors come from textbook
//! conditioning. Nothing here shares code with [`crate::kalman`]; it exists to
//! check the recursions and costs O((Np)³).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kalman::{GaussianBelief, StepModel};

/// Largest stacked dimension `p(N+1) + mN` accepted by [`build_joint`].
pub const MAX_JOINT_DIM: usize = 400;

/// Jitter added to the observed block when it is not numerically PD.
const OBS_BLOCK_JITTER: f64 = 1e-12;

/// Joint distribution of the stacked vector `(θ_0, …, θ_N, y_1, …, y_N)`.
#[derive(Debug, Clone)]
pub struct JointGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub state_dim: usize,
    pub obs_dim: usize,
    pub steps: usize,
}

impl JointGaussian {
    /// Offset of `θ_n` (n = 0..=N) in the stacked vector.
    pub fn state_offset(&self, n: usize) -> usize {
        n * self.state_dim
    }

    /// Offset of `y_n` (n = 1..=N) in the stacked vector.
    pub fn obs_offset(&self, n: usize) -> usize {
        (self.steps + 1) * self.state_dim + (n - 1) * self.obs_dim
    }

    pub fn marginal_state(&self, n: usize) -> GaussianBelief {
        let p = self.state_dim;
        let o = self.state_offset(n);
        GaussianBelief { mean: self.mean.rows(o, p).into_owned(), cov: self.cov.view((o, o), (p, p)).into_owned() }
    }
}

/// Compose the joint Gaussian of states and observations.
pub fn build_joint(init: &GaussianBelief, steps: &[StepModel]) -> Result<JointGaussian> {
    let n_steps = steps.len();
    let p = init.mean.len();
    let m = steps.first().map_or(0, |s| s.obs_matrix.nrows());
    let total = p * (n_steps + 1) + m * n_steps;
    if total > MAX_JOINT_DIM {
        return Err(Error::OracleTooLarge { size: total, limit: MAX_JOINT_DIM });
    }
    for (i, s) in steps.iter().enumerate() {
        if s.trans_matrix.shape() != (p, p)
            || s.obs_matrix.shape() != (m, p)
            || s.obs_cov.shape() != (m, m)
            || s.proc_cov.shape() != (p, p)
        {
            return Err(Error::Dimension(format!("oracle step {} has inconsistent shapes", i + 1)));
        }
    }

    // Sources: θ_0 (p), w_1..w_N (p each), v_1..v_N (m each).
    let n_src = p + n_steps * p + n_steps * m;
    let mut src_cov = DMatrix::zeros(n_src, n_src);
    let mut src_mean = DVector::zeros(n_src);
    src_cov.view_mut((0, 0), (p, p)).copy_from(&init.cov);
    src_mean.rows_mut(0, p).copy_from(&init.mean);
    for (i, s) in steps.iter().enumerate() {
        let w_off = p + i * p;
        src_cov.view_mut((w_off, w_off), (p, p)).copy_from(&s.proc_cov);
        let v_off = p + n_steps * p + i * m;
        src_cov.view_mut((v_off, v_off), (m, m)).copy_from(&s.obs_cov);
    }

    // Loading matrix: every stacked variable as a combination of sources.
    let mut load = DMatrix::zeros(total, n_src);
    load.view_mut((0, 0), (p, p)).fill_with_identity();
    for (i, s) in steps.iter().enumerate() {
        let prev = load.rows(i * p, p).into_owned();
        let mut row = &s.trans_matrix * prev;
        let w_off = p + i * p;
        for d in 0..p {
            row[(d, w_off + d)] += 1.0;
        }
        load.rows_mut((i + 1) * p, p).copy_from(&row);

        let mut obs = &s.obs_matrix * &row;
        let v_off = p + n_steps * p + i * m;
        for d in 0..m {
            obs[(d, v_off + d)] += 1.0;
        }
        load.rows_mut((n_steps + 1) * p + i * m, m).copy_from(&obs);
    }

    let mean = &load * src_mean;
    let cov = &load * src_cov * load.transpose();
    let cov = 0.5 * (&cov + cov.transpose());
    Ok(JointGaussian { mean, cov, state_dim: p, obs_dim: m, steps: n_steps })
}

/// Exact posteriors of every `θ_n` (n = 1..=N) given `y_1..y_upto`.
///
/// `upto = N` gives the smoothed beliefs; `upto = n` evaluated at `θ_n` gives
/// the filtered belief.
pub fn condition_prefix(joint: &JointGaussian, ys: &[DVector<f64>], upto: usize) -> Result<Vec<GaussianBelief>> {
    let (p, m) = (joint.state_dim, joint.obs_dim);
    if upto == 0 || upto > joint.steps || ys.len() < upto {
        return Err(Error::Contract(format!(
            "cannot condition on {upto} observations ({} supplied, {} steps)",
            ys.len(),
            joint.steps
        )));
    }
    let n_obs = upto * m;
    let y_off = joint.obs_offset(1);
    let n_state = (joint.steps + 1) * p;

    let mut obs_vec = DVector::zeros(n_obs);
    for (i, y) in ys.iter().take(upto).enumerate() {
        if y.len() != m {
            return Err(Error::Dimension(format!("observation {} has length {}, expected {m}", i + 1, y.len())));
        }
        obs_vec.rows_mut(i * m, m).copy_from(y);
    }

    let syy = joint.cov.view((y_off, y_off), (n_obs, n_obs)).into_owned();
    let sxy = joint.cov.view((0, y_off), (n_state, n_obs)).into_owned();
    let sxx = joint.cov.view((0, 0), (n_state, n_state)).into_owned();
    let resid = obs_vec - joint.mean.rows(y_off, n_obs);

    // Plain LU, deliberately a different factorization from the filter's.
    let lu = syy.clone().lu();
    let lu = if lu.determinant().abs() > 0.0 && lu.solve(&resid).is_some() {
        lu
    } else {
        (syy + DMatrix::identity(n_obs, n_obs) * OBS_BLOCK_JITTER).lu()
    };
    let weights =
        lu.solve(&sxy.transpose()).ok_or_else(|| Error::Contract("singular observation block in oracle".into()))?;
    let innov = lu.solve(&resid).ok_or_else(|| Error::Contract("singular observation block in oracle".into()))?;

    let post_mean = joint.mean.rows(0, n_state) + &sxy * innov;
    let post_cov = sxx - &sxy * weights;

    Ok((1..=joint.steps)
        .map(|n| {
            let o = n * p;
            let cov = post_cov.view((o, o), (p, p)).into_owned();
            GaussianBelief { mean: post_mean.rows(o, p).into_owned(), cov: 0.5 * (&cov + cov.transpose()) }
        })
        .collect())
}

/// Smoothed posteriors `p(θ_n | y_1:N)` for n = 1..=N.
pub fn condition_on_observations(joint: &JointGaussian, ys: &[DVector<f64>]) -> Result<Vec<GaussianBelief>> {
    condition_prefix(joint, ys, joint.steps)
}

/// Filtered posteriors `p(θ_n | y_1:n)` for n = 1..=N.
pub fn filtered_posteriors(joint: &JointGaussian, ys: &[DVector<f64>]) -> Result<Vec<GaussianBelief>> {
    (1..=joint.steps).map(|n| condition_prefix(joint, ys, n).map(|mut all| all.swap_remove(n - 1))).collect()
}
