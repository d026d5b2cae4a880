//! Linear-Gaussian Kalman filter and backward (RTS) smoother.
//!
//! State:       `θ_n = G_n θ_{n-1} + w_n`,  `w_n ~ N(0, W_n)`
//! Observation: `y_n = F_n θ_n + v_n`,      `v_n ~ N(0, V_n)`
//! Prior:       `θ_0 ~ N(k_0, C_0)`
//!
//! Everything here is dense and generic; nothing knows about performers.
//! Every covariance produced is replaced by `(M + Mᵀ)/2` right after it is
//! formed, and all inverses are applied through a Cholesky solve.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// A matrix whose Cholesky-based condition estimate exceeds `1 / TOL_SINGULAR`
/// is treated as singular.
pub const TOL_SINGULAR: f64 = 1e-12;
/// Slack allowed on the smallest eigenvalue of a PSD matrix.
pub const TOL_PSD: f64 = 1e-9;
/// Slack for trace comparisons between filtered and smoothed covariances.
pub const TOL_NUM: f64 = 1e-9;
/// Diagonal jitter added to a singular `R_{n+1}` inside the smoother solve.
pub const SMOOTHER_JITTER: f64 = 1e-10;

/// Mean and covariance of a multivariate normal.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if cov.nrows() != p || cov.ncols() != p {
            return Err(Error::Dimension(format!(
                "belief mean has length {p} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(Self { mean, cov: symmetrize(&cov) })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Marginal variances (the covariance diagonal).
    pub fn variances(&self) -> DVector<f64> {
        self.cov.diagonal()
    }
}

/// One step of the state-space model: `(F_n, G_n, V_n, W_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepModel {
    /// Observation matrix, m×p.
    pub obs_matrix: DMatrix<f64>,
    /// State transition matrix, p×p.
    pub trans_matrix: DMatrix<f64>,
    /// Observation noise covariance, m×m.
    pub obs_cov: DMatrix<f64>,
    /// Process noise covariance, p×p.
    pub proc_cov: DMatrix<f64>,
}

impl StepModel {
    pub fn new(
        obs_matrix: DMatrix<f64>,
        trans_matrix: DMatrix<f64>,
        obs_cov: DMatrix<f64>,
        proc_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let step = Self { obs_matrix, trans_matrix, obs_cov, proc_cov };
        step.check_dims()?;
        Ok(step)
    }

    /// State dimension p.
    pub fn state_dim(&self) -> usize {
        self.trans_matrix.nrows()
    }

    /// Observation dimension m.
    pub fn obs_dim(&self) -> usize {
        self.obs_matrix.nrows()
    }

    fn check_dims(&self) -> Result<()> {
        let p = self.state_dim();
        let m = self.obs_dim();
        let shape = |mat: &DMatrix<f64>| (mat.nrows(), mat.ncols());
        if shape(&self.trans_matrix) != (p, p) {
            return Err(Error::Dimension(format!("G is {:?}, expected square", shape(&self.trans_matrix))));
        }
        if shape(&self.obs_matrix) != (m, p) {
            return Err(Error::Dimension(format!("F is {:?}, expected ({m}, {p})", shape(&self.obs_matrix))));
        }
        if shape(&self.obs_cov) != (m, m) {
            return Err(Error::Dimension(format!("V is {:?}, expected ({m}, {m})", shape(&self.obs_cov))));
        }
        if shape(&self.proc_cov) != (p, p) {
            return Err(Error::Dimension(format!("W is {:?}, expected ({p}, {p})", shape(&self.proc_cov))));
        }
        Ok(())
    }
}

/// One-step-ahead prediction of the state and of the observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `(a_n, R_n)`
    pub prior: GaussianBelief,
    /// `f_n`
    pub obs_pred_mean: DVector<f64>,
    /// `Q_n`
    pub obs_pred_cov: DMatrix<f64>,
}

/// Everything the filter knows after processing observation `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    /// `(a_n, R_n)`
    pub prior: GaussianBelief,
    /// `f_n`
    pub obs_pred_mean: DVector<f64>,
    /// `Q_n`
    pub obs_pred_cov: DMatrix<f64>,
    /// `e_n = y_n - f_n`
    pub innovation: DVector<f64>,
    /// `(k_n, C_n)`
    pub posterior: GaussianBelief,
}

/// Smoothed belief `(s_n, S_n)` for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedStep {
    pub smoothed: GaussianBelief,
    /// Set when `R_{n+1}` had to be regularized with [`SMOOTHER_JITTER`].
    pub jitter_applied: bool,
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let n = out.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = avg;
            out[(j, i)] = avg;
        }
    }
    out
}

/// Cholesky factor of a symmetric matrix, or `None` if it is not positive
/// definite or its condition estimate exceeds `1 / TOL_SINGULAR`.
///
/// The estimate is `(max L_ii / min L_ii)^2`, a lower bound on the 2-norm
/// condition number that is exact for diagonal matrices.
pub(crate) fn factor_spd(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if m.nrows() == 0 {
        return Cholesky::new(m.clone());
    }
    let chol = Cholesky::new(m.clone())?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if !(lo > 0.0) || !lo.is_finite() || !hi.is_finite() {
        return None;
    }
    let ratio = hi / lo;
    (ratio * ratio <= 1.0 / TOL_SINGULAR).then_some(chol)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Prediction step: `a = G k`, `R = G C Gᵀ + W`, `f = F a`, `Q = F R Fᵀ + V`.
pub fn predict(prev_posterior: &GaussianBelief, step: &StepModel) -> Result<Prediction> {
    step.check_dims()?;
    if prev_posterior.dim() != step.state_dim() || prev_posterior.cov.nrows() != step.state_dim() {
        return Err(Error::Dimension(format!(
            "belief has dimension {} but the step model has p = {}",
            prev_posterior.dim(),
            step.state_dim()
        )));
    }
    let g = &step.trans_matrix;
    let f = &step.obs_matrix;

    let a = g * &prev_posterior.mean;
    let r = symmetrize(&(g * &prev_posterior.cov * g.transpose() + &step.proc_cov));
    let f_mean = f * &a;
    let q = symmetrize(&(f * &r * f.transpose() + &step.obs_cov));

    Ok(Prediction { prior: GaussianBelief { mean: a, cov: r }, obs_pred_mean: f_mean, obs_pred_cov: q })
}

/// Update step: fold observation `y` into the prior.
///
/// `k = a + R Fᵀ Q⁻¹ e` and `C = R - R Fᵀ Q⁻¹ F R`, with `Q⁻¹` applied by a
/// Cholesky solve. A (near-)singular `Q` is an error.
pub fn update(
    prior: &GaussianBelief,
    obs_pred_mean: &DVector<f64>,
    obs_pred_cov: &DMatrix<f64>,
    obs_matrix: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<FilterStep> {
    let p = prior.dim();
    let m = obs_matrix.nrows();
    if obs_matrix.ncols() != p
        || obs_pred_mean.len() != m
        || y.len() != m
        || obs_pred_cov.nrows() != m
        || obs_pred_cov.ncols() != m
    {
        return Err(Error::Dimension(format!(
            "update expects F {m}x{p}, f and y of length {m}, Q {m}x{m}; got f {}, y {}, Q {}x{}",
            obs_pred_mean.len(),
            y.len(),
            obs_pred_cov.nrows(),
            obs_pred_cov.ncols()
        )));
    }

    let chol = factor_spd(obs_pred_cov).ok_or(Error::DegenerateInnovation { step: None })?;
    let e = y - obs_pred_mean;

    // Q⁻¹ F R, m×p; its transpose is the gain R Fᵀ Q⁻¹ since R and Q are symmetric.
    let fr = obs_matrix * &prior.cov;
    let gain_t = chol.solve(&fr);

    let k = &prior.mean + gain_t.transpose() * &e;
    let c = symmetrize(&(&prior.cov - gain_t.transpose() * &fr));

    Ok(FilterStep {
        prior: prior.clone(),
        obs_pred_mean: obs_pred_mean.clone(),
        obs_pred_cov: obs_pred_cov.clone(),
        innovation: e,
        posterior: GaussianBelief { mean: k, cov: c },
    })
}

/// Run the forward filter over `N = steps.len()` observations.
///
/// `steps[n]` and `observations[n]` drive observation `n + 1`.
pub fn filter(init: &GaussianBelief, steps: &[StepModel], observations: &[DVector<f64>]) -> Result<Vec<FilterStep>> {
    if steps.is_empty() {
        return Err(Error::Contract("filter needs at least one step".into()));
    }
    if steps.len() != observations.len() {
        return Err(Error::Contract(format!("{} step models but {} observations", steps.len(), observations.len())));
    }

    let mut out = Vec::with_capacity(steps.len());
    let mut belief = init.clone();
    for (idx, (step, y)) in steps.iter().zip(observations).enumerate() {
        let n = idx + 1;
        let pred = predict(&belief, step).map_err(|e| e.at(n))?;
        let fs =
            update(&pred.prior, &pred.obs_pred_mean, &pred.obs_pred_cov, &step.obs_matrix, y).map_err(|e| e.at(n))?;
        belief = fs.posterior.clone();
        out.push(fs);
    }
    Ok(out)
}

/// Backward smoothing pass over a completed filter run.
///
/// `s_n = k_n + C_n G_{n+1}ᵀ R_{n+1}⁻¹ (s_{n+1} - a_{n+1})`
/// `S_n = C_n - C_n G_{n+1}ᵀ R_{n+1}⁻¹ (R_{n+1} - S_{n+1}) R_{n+1}⁻¹ G_{n+1} C_n`
///
/// When `R_{n+1}` is singular (typically a null block in `W` over a state
/// component the data pinned down), the solve is retried once with
/// [`SMOOTHER_JITTER`] on the diagonal and the step is flagged.
pub fn smooth(filter_steps: &[FilterStep], steps: &[StepModel]) -> Result<Vec<SmoothedStep>> {
    let n_steps = filter_steps.len();
    if n_steps == 0 {
        return Err(Error::Contract("smooth needs at least one filter step".into()));
    }
    if steps.len() != n_steps {
        return Err(Error::Contract(format!("{} filter steps but {} step models", n_steps, steps.len())));
    }

    let mut out: Vec<SmoothedStep> = Vec::with_capacity(n_steps);
    let last = &filter_steps[n_steps - 1].posterior;
    out.push(SmoothedStep { smoothed: last.clone(), jitter_applied: false });

    for idx in (0..n_steps - 1).rev() {
        let n = idx + 1;
        let post = &filter_steps[idx].posterior;
        let next_prior = &filter_steps[idx + 1].prior;
        let g_next = &steps[idx + 1].trans_matrix;
        let next_smoothed = &out.last().expect("seeded with the final step").smoothed;

        let (chol, jitter_applied) = match factor_spd(&next_prior.cov) {
            Some(c) => (c, false),
            None => {
                let p = next_prior.dim();
                let jittered = &next_prior.cov + DMatrix::identity(p, p) * SMOOTHER_JITTER;
                let c = factor_spd(&jittered).ok_or(Error::DegenerateSmootherPrior { step: Some(n) })?;
                (c, true)
            }
        };

        // R⁻¹ G C, whose transpose is the smoother gain C Gᵀ R⁻¹.
        let gc = g_next * &post.cov;
        let gain_t = chol.solve(&gc);
        let gain = gain_t.transpose();

        let s = &post.mean + &gain * (&next_smoothed.mean - &next_prior.mean);
        let big_s = symmetrize(&(&post.cov - &gain * (&next_prior.cov - &next_smoothed.cov) * &gain_t));

        out.push(SmoothedStep { smoothed: GaussianBelief { mean: s, cov: big_s }, jitter_applied });
    }

    out.reverse();
    Ok(out)
}

/// Gaussian log-likelihood of the innovations,
/// `Σ_n -½ (m log 2π + log det Q_n + e_nᵀ Q_n⁻¹ e_n)`.
pub fn innovation_loglik(filter_steps: &[FilterStep]) -> Result<f64> {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    for (idx, fs) in filter_steps.iter().enumerate() {
        let m = fs.innovation.len();
        let chol = Cholesky::new(fs.obs_pred_cov.clone()).ok_or(Error::NotPositiveDefinite { step: Some(idx + 1) })?;
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        if !logdet.is_finite() {
            return Err(Error::NotPositiveDefinite { step: Some(idx + 1) });
        }
        let quad = fs.innovation.dot(&chol.solve(&fs.innovation));
        total += -0.5 * (m as f64 * ln_2pi + logdet + quad);
    }
    Ok(total)
}
