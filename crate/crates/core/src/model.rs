//! State-space form of the ensemble phase/period correction model.
//!
//! For `K` performers the hidden state has `2K²` components laid out as
//! `[T (K) | r (K) | α (K(K-1)) | β (K(K-1))]`: timekeeper intervals, IOIs,
//! phase correction gains and period correction gains. Gains are ordered
//! lexicographically on the ordered pair `(i, j)`, `i ≠ j`. The observation is
//! the IOI vector, so `F = [0 | I | 0 | 0]` and all the coupling lives in the
//! time-varying transition matrix `G_n`, which carries the asynchronies at
//! `n - 1`.
//!
//! Performer ids in the public API are 1-based. Times are milliseconds.

use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kalman::{self, FilterStep, GaussianBelief, SmoothedStep, StepModel};

/// Noise, prior and size parameters of the ensemble model.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    /// Number of performers.
    pub k: usize,
    /// Timekeeper random-walk variance, ms².
    pub sigma_t2: f64,
    /// Motor (IOI) variance, ms².
    pub sigma_r2: f64,
    /// Per-gain random-walk variance of α.
    pub v_alpha: f64,
    /// Correlation between distinct α_ij of the same performer.
    pub rho_alpha: f64,
    pub v_beta: f64,
    pub rho_beta: f64,
    /// Diagonal of `V_n`, ms².
    pub obs_jitter: f64,
    pub alpha_init: f64,
    pub beta_init: f64,
    /// Prior variance of each gain in `C_0`.
    pub init_gain_var: f64,
    /// Prior variance of the T and r components in `C_0`, ms².
    pub init_tr_var: f64,
}

impl EnsembleConfig {
    pub const DEFAULT_SIGMA_T2: f64 = 500.0;
    pub const DEFAULT_SIGMA_R2: f64 = 25.0;
    pub const DEFAULT_V_ALPHA: f64 = 1e-4;
    pub const DEFAULT_RHO_ALPHA: f64 = -0.1;
    pub const DEFAULT_OBS_JITTER: f64 = 1e-5;
    pub const DEFAULT_ALPHA_INIT: f64 = 0.25;
    pub const DEFAULT_INIT_GAIN_VAR: f64 = 1e-3;

    /// Defaults for `k` performers: phase correction only, β frozen.
    pub fn new(k: usize) -> Result<Self> {
        let cfg = Self {
            k,
            sigma_t2: Self::DEFAULT_SIGMA_T2,
            sigma_r2: Self::DEFAULT_SIGMA_R2,
            v_alpha: Self::DEFAULT_V_ALPHA,
            rho_alpha: Self::DEFAULT_RHO_ALPHA,
            v_beta: 0.0,
            rho_beta: 0.0,
            obs_jitter: Self::DEFAULT_OBS_JITTER,
            alpha_init: Self::DEFAULT_ALPHA_INIT,
            beta_init: 0.0,
            init_gain_var: Self::DEFAULT_INIT_GAIN_VAR,
            init_tr_var: Self::DEFAULT_SIGMA_T2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        let values = [
            ("sigma_T2", self.sigma_t2),
            ("sigma_r2", self.sigma_r2),
            ("v_alpha", self.v_alpha),
            ("rho_alpha", self.rho_alpha),
            ("v_beta", self.v_beta),
            ("rho_beta", self.rho_beta),
            ("obs_jitter", self.obs_jitter),
            ("alpha_init", self.alpha_init),
            ("beta_init", self.beta_init),
            ("init_gain_var", self.init_gain_var),
            ("init_Tr_var", self.init_tr_var),
        ];
        for (name, v) in values {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {v}")));
            }
        }
        for (name, v) in [
            ("sigma_T2", self.sigma_t2),
            ("sigma_r2", self.sigma_r2),
            ("v_alpha", self.v_alpha),
            ("v_beta", self.v_beta),
            ("init_gain_var", self.init_gain_var),
            ("init_Tr_var", self.init_tr_var),
        ] {
            if v < 0.0 {
                return Err(Error::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.obs_jitter <= 0.0 {
            return Err(Error::Config(format!(
                "obs_jitter must be positive (a zero V breaks the innovation solve), got {}",
                self.obs_jitter
            )));
        }
        check_compound_symmetry("alpha", self.k, self.v_alpha, self.rho_alpha)?;
        check_compound_symmetry("beta", self.k, self.v_beta, self.rho_beta)?;
        Ok(())
    }

    pub fn layout(&self) -> HiddenStateLayout {
        HiddenStateLayout { k: self.k }
    }
}

/// Eigenvalues of a (K-1)×(K-1) compound-symmetric block are `v(1-ρ)` and
/// `v(1+(K-2)ρ)`; both must be positive when `v > 0`.
fn check_compound_symmetry(name: &str, k: usize, v: f64, rho: f64) -> Result<()> {
    if rho.abs() >= 1.0 {
        return Err(Error::Config(format!("|rho_{name}| must be < 1, got {rho}")));
    }
    if v > 0.0 && k >= 2 {
        let lo = v * (1.0 - rho);
        let hi = v * (1.0 + (k as f64 - 2.0) * rho);
        if lo <= 0.0 || hi <= 0.0 {
            return Err(Error::Config(format!(
                "W^{name} block is not positive definite for K = {k}, v = {v}, rho = {rho}"
            )));
        }
    }
    Ok(())
}

/// Position of the ordered pair `(i, j)` among the `K(K-1)` gains.
pub fn pair_index(i: usize, j: usize, k: usize) -> Result<usize> {
    if i == 0 || j == 0 || i > k || j > k {
        return Err(Error::Contract(format!("performer pair ({i}, {j}) out of range for K = {k}")));
    }
    if i == j {
        return Err(Error::Contract(format!("pair ({i}, {j}) has no gain: i must differ from j")));
    }
    let rank = if j < i { j - 1 } else { j - 2 };
    Ok((i - 1) * (k - 1) + rank)
}

/// The lexicographic enumeration of ordered pairs for `K` performers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GainIndex {
    pub k: usize,
}

impl GainIndex {
    pub fn new(k: usize) -> Self {
        Self { k }
    }

    pub fn len(&self) -> usize {
        self.k * self.k.saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> Result<usize> {
        pair_index(i, j, self.k)
    }

    /// Inverse of [`pair_index`].
    pub fn pair(&self, idx: usize) -> (usize, usize) {
        let i = idx / (self.k - 1) + 1;
        let rank = idx % (self.k - 1);
        let j = if rank + 1 < i { rank + 1 } else { rank + 2 };
        (i, j)
    }

    /// All pairs in index order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.len()).map(|idx| self.pair(idx))
    }
}

/// Offsets of the four sub-vectors of `θ_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HiddenStateLayout {
    pub k: usize,
}

impl HiddenStateLayout {
    pub fn new(k: usize) -> Self {
        Self { k }
    }

    pub fn dim(&self) -> usize {
        2 * self.k * self.k
    }

    pub fn n_gains(&self) -> usize {
        self.k * (self.k - 1)
    }

    pub fn timekeeper(&self) -> Range<usize> {
        0..self.k
    }

    pub fn ioi(&self) -> Range<usize> {
        self.k..2 * self.k
    }

    pub fn alpha(&self) -> Range<usize> {
        2 * self.k..2 * self.k + self.n_gains()
    }

    pub fn beta(&self) -> Range<usize> {
        2 * self.k + self.n_gains()..self.dim()
    }
}

/// Absolute onset times `t_{i,n}`, one row per performer, `n = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct OnsetTimeline {
    onsets: Vec<Vec<f64>>,
}

impl OnsetTimeline {
    pub fn new(onsets: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = onsets.first() else {
            return Err(Error::Contract("timeline needs at least one performer".into()));
        };
        let len = first.len();
        if len == 0 {
            return Err(Error::Contract("timeline needs at least one onset".into()));
        }
        for (p, row) in onsets.iter().enumerate() {
            if row.len() != len {
                return Err(Error::Contract(format!(
                    "performer {} has {} onsets, performer 1 has {len}",
                    p + 1,
                    row.len()
                )));
            }
            if let Some(bad) = row.iter().position(|t| !t.is_finite()) {
                return Err(Error::Contract(format!("performer {} onset {bad} is not finite", p + 1)));
            }
            if let Some(n) = row.windows(2).position(|w| w[1] <= w[0]) {
                return Err(Error::Contract(format!(
                    "onsets of performer {} not strictly increasing at n = {}",
                    p + 1,
                    n + 1
                )));
            }
        }
        Ok(Self { onsets })
    }

    pub fn k(&self) -> usize {
        self.onsets.len()
    }

    /// Number of intervals N (onsets are indexed 0..=N).
    pub fn steps(&self) -> usize {
        self.onsets[0].len() - 1
    }

    /// `t_{i,n}` for 1-based performer `i`.
    pub fn onset(&self, i: usize, n: usize) -> f64 {
        self.onsets[i - 1][n]
    }

    pub fn performer(&self, i: usize) -> &[f64] {
        &self.onsets[i - 1]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.onsets
    }

    pub fn to_ioi_series(&self) -> Result<IoiSeries> {
        let k = self.k();
        let iois =
            (1..=self.steps()).map(|n| (0..k).map(|p| self.onsets[p][n] - self.onsets[p][n - 1]).collect()).collect();
        IoiSeries::new(iois, self.onsets.iter().map(|row| row[0]).collect())
    }
}

/// IOIs `r_{i,n}` (`n = 1..=N`) plus the initial onsets `t_{i,0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IoiSeries {
    /// `iois[n-1][i-1] = r_{i,n}`
    iois: Vec<Vec<f64>>,
    initial_onsets: Vec<f64>,
}

impl IoiSeries {
    pub fn new(iois: Vec<Vec<f64>>, initial_onsets: Vec<f64>) -> Result<Self> {
        let k = initial_onsets.len();
        if k == 0 {
            return Err(Error::Contract("IOI series needs at least one performer".into()));
        }
        if initial_onsets.iter().any(|t| !t.is_finite()) {
            return Err(Error::Contract("initial onsets must be finite".into()));
        }
        for (idx, row) in iois.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Contract(format!("IOI row {} has {} entries, expected {k}", idx + 1, row.len())));
            }
            if let Some(p) = row.iter().position(|r| !(r.is_finite() && *r > 0.0)) {
                return Err(Error::Contract(format!(
                    "IOI of performer {} at n = {} must be positive, got {}",
                    p + 1,
                    idx + 1,
                    row[p]
                )));
            }
        }
        Ok(Self { iois, initial_onsets })
    }

    pub fn k(&self) -> usize {
        self.initial_onsets.len()
    }

    /// N, the number of observation vectors.
    pub fn len(&self) -> usize {
        self.iois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iois.is_empty()
    }

    pub fn iois(&self) -> &[Vec<f64>] {
        &self.iois
    }

    pub fn initial_onsets(&self) -> &[f64] {
        &self.initial_onsets
    }

    /// Onsets rebuilt by cumulative summation from `t_{i,0}`.
    pub fn to_timeline(&self) -> Result<OnsetTimeline> {
        let rows = (0..self.k())
            .map(|p| {
                let mut t = self.initial_onsets[p];
                let mut row = Vec::with_capacity(self.len() + 1);
                row.push(t);
                for r in &self.iois {
                    t += r[p];
                    row.push(t);
                }
                row
            })
            .collect();
        OnsetTimeline::new(rows)
    }

    /// Observation vectors `y_n`.
    pub fn observations(&self) -> Vec<DVector<f64>> {
        self.iois.iter().map(|r| DVector::from_column_slice(r)).collect()
    }
}

/// `[A_{i1}, …, A_{iK}]` at onset index `n - 1`, skipping `j = i`.
pub fn asynchrony_vector(timeline: &OnsetTimeline, i: usize, n: usize) -> Result<Vec<f64>> {
    let k = timeline.k();
    if i == 0 || i > k {
        return Err(Error::Contract(format!("performer {i} out of range for K = {k}")));
    }
    if n == 0 || n > timeline.steps() + 1 {
        return Err(Error::Contract(format!("step {n} out of range: timeline has onsets 0..={}", timeline.steps())));
    }
    let ti = timeline.onset(i, n - 1);
    Ok((1..=k).filter(|&j| j != i).map(|j| ti - timeline.onset(j, n - 1)).collect())
}

/// `F = [0_K | I_K | 0 | 0]`, the same for every step.
pub fn build_observation_matrix(k: usize) -> DMatrix<f64> {
    let layout = HiddenStateLayout::new(k);
    let mut f = DMatrix::zeros(k, layout.dim());
    for (row, col) in layout.ioi().enumerate() {
        f[(row, col)] = 1.0;
    }
    f
}

/// `G_n`, built from the onsets at `n - 1`.
///
/// Block rows: `T` keeps `T_{n-1}` and is pushed by `-A·β`; `r` becomes
/// `T_{n-1} - A·α - A·β`; the gains are carried over unchanged.
pub fn build_transition_matrix(timeline: &OnsetTimeline, n: usize) -> Result<DMatrix<f64>> {
    let k = timeline.k();
    let layout = HiddenStateLayout::new(k);
    let (t, r, alpha, beta) = (layout.timekeeper(), layout.ioi(), layout.alpha(), layout.beta());
    let mut g = DMatrix::zeros(layout.dim(), layout.dim());

    for d in 0..k {
        g[(t.start + d, t.start + d)] = 1.0;
        g[(r.start + d, t.start + d)] = 1.0;
    }
    for d in 0..layout.n_gains() {
        g[(alpha.start + d, alpha.start + d)] = 1.0;
        g[(beta.start + d, beta.start + d)] = 1.0;
    }
    for i in 1..=k {
        let asyn = asynchrony_vector(timeline, i, n)?;
        let block = (i - 1) * (k - 1);
        for (slot, a) in asyn.iter().enumerate() {
            let col = block + slot;
            g[(t.start + i - 1, beta.start + col)] = -a;
            g[(r.start + i - 1, alpha.start + col)] = -a;
            g[(r.start + i - 1, beta.start + col)] = -a;
        }
    }
    Ok(g)
}

fn compound_symmetric_blocks(k: usize, v: f64, rho: f64) -> DMatrix<f64> {
    let n = k * k.saturating_sub(1);
    let mut w = DMatrix::zeros(n, n);
    if k < 2 {
        return w;
    }
    let c = rho * v;
    for i in 0..k {
        let o = i * (k - 1);
        for a in 0..k - 1 {
            for b in 0..k - 1 {
                w[(o + a, o + b)] = if a == b { v } else { c };
            }
        }
    }
    w
}

/// `W = blockdiag(σ_T² I, σ_r² I, W^α, W^β)`.
pub fn build_process_cov(config: &EnsembleConfig) -> Result<DMatrix<f64>> {
    config.validate()?;
    let k = config.k;
    let layout = config.layout();
    let mut w = DMatrix::zeros(layout.dim(), layout.dim());
    for d in layout.timekeeper() {
        w[(d, d)] = config.sigma_t2;
    }
    for d in layout.ioi() {
        w[(d, d)] = config.sigma_r2;
    }
    let ng = layout.n_gains();
    let a0 = layout.alpha().start;
    let b0 = layout.beta().start;
    w.view_mut((a0, a0), (ng, ng)).copy_from(&compound_symmetric_blocks(k, config.v_alpha, config.rho_alpha));
    w.view_mut((b0, b0), (ng, ng)).copy_from(&compound_symmetric_blocks(k, config.v_beta, config.rho_beta));
    Ok(w)
}

/// `V = obs_jitter · I_K`.
pub fn build_obs_cov(config: &EnsembleConfig) -> Result<DMatrix<f64>> {
    if !(config.obs_jitter > 0.0) {
        return Err(Error::Config(format!("obs_jitter must be positive, got {}", config.obs_jitter)));
    }
    Ok(DMatrix::identity(config.k, config.k) * config.obs_jitter)
}

/// Prior `N(k_0, C_0)`: T and r start at the first IOIs, gains at their
/// configured initial values, diagonal covariance.
pub fn initial_state(config: &EnsembleConfig, first_iois: &[f64]) -> Result<GaussianBelief> {
    if first_iois.len() != config.k {
        return Err(Error::Contract(format!("{} first IOIs for K = {}", first_iois.len(), config.k)));
    }
    if let Some(p) = first_iois.iter().position(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::Contract(format!("first IOI of performer {} must be positive", p + 1)));
    }
    let layout = config.layout();
    let mut mean = DVector::zeros(layout.dim());
    let mut var = DVector::zeros(layout.dim());
    for (d, &r) in first_iois.iter().enumerate() {
        mean[layout.timekeeper().start + d] = r;
        mean[layout.ioi().start + d] = r;
    }
    for d in layout.timekeeper().chain(layout.ioi()) {
        var[d] = config.init_tr_var;
    }
    for d in layout.alpha() {
        mean[d] = config.alpha_init;
        var[d] = config.init_gain_var;
    }
    for d in layout.beta() {
        mean[d] = config.beta_init;
        var[d] = config.init_gain_var;
    }
    GaussianBelief::new(mean, DMatrix::from_diagonal(&var))
}

/// Step models `(F, G_n, V, W)` for every observation of a performance.
pub fn build_steps(data: &IoiSeries, config: &EnsembleConfig) -> Result<Vec<StepModel>> {
    check_data(data, config)?;
    let timeline = data.to_timeline()?;
    let f = build_observation_matrix(config.k);
    let v = build_obs_cov(config)?;
    let w = build_process_cov(config)?;
    (1..=data.len())
        .map(|n| {
            let g = build_transition_matrix(&timeline, n)?;
            StepModel::new(f.clone(), g, v.clone(), w.clone())
        })
        .collect()
}

fn check_data(data: &IoiSeries, config: &EnsembleConfig) -> Result<()> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("performance has no IOIs (N = 0)".into()));
    }
    if data.k() != config.k {
        return Err(Error::Contract(format!("data has K = {} but config has K = {}", data.k(), config.k)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMode {
    Filtered,
    Smoothed,
}

impl fmt::Display for EstimateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimateMode::Filtered => "filtered",
            EstimateMode::Smoothed => "smoothed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainEstimate {
    pub mean: f64,
    pub var: f64,
}

/// Gain estimates at one step, in pair-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct GainStep {
    pub n: usize,
    pub mode: EstimateMode,
    pub alpha: Vec<GainEstimate>,
    pub beta: Vec<GainEstimate>,
}

/// Per-pair trajectories of α and β estimates over `n = 1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTrajectory {
    pub k: usize,
    pub steps: Vec<GainStep>,
}

impl GainTrajectory {
    pub fn from_beliefs<'a>(
        k: usize,
        mode: EstimateMode,
        beliefs: impl IntoIterator<Item = &'a GaussianBelief>,
    ) -> Self {
        let layout = HiddenStateLayout::new(k);
        let extract = |b: &GaussianBelief, range: Range<usize>| {
            range.map(|d| GainEstimate { mean: b.mean[d], var: b.cov[(d, d)] }).collect::<Vec<_>>()
        };
        let steps = beliefs
            .into_iter()
            .enumerate()
            .map(|(idx, b)| GainStep {
                n: idx + 1,
                mode,
                alpha: extract(b, layout.alpha()),
                beta: extract(b, layout.beta()),
            })
            .collect();
        Self { k, steps }
    }

    pub fn pairs(&self) -> GainIndex {
        GainIndex::new(self.k)
    }

    /// True when there are no gains to report (K = 1).
    pub fn is_empty(&self) -> bool {
        self.pairs().is_empty()
    }

    /// α estimates of pair `(i, j)` over all steps.
    pub fn alpha_path(&self, i: usize, j: usize) -> Result<Vec<GainEstimate>> {
        let idx = pair_index(i, j, self.k)?;
        Ok(self.steps.iter().map(|s| s.alpha[idx]).collect())
    }

    pub fn beta_path(&self, i: usize, j: usize) -> Result<Vec<GainEstimate>> {
        let idx = pair_index(i, j, self.k)?;
        Ok(self.steps.iter().map(|s| s.beta[idx]).collect())
    }
}

/// Filter, smoother and gains for one performance.
#[derive(Debug, Clone)]
pub struct PerformanceFit {
    pub steps: Vec<StepModel>,
    pub filtered: Vec<FilterStep>,
    pub smoothed: Option<Vec<SmoothedStep>>,
    pub gains: GainTrajectory,
}

impl PerformanceFit {
    pub fn loglik(&self) -> Result<f64> {
        kalman::innovation_loglik(&self.filtered)
    }
}

/// Forward pass over a performance; gains come from the filtered posteriors.
pub fn filter_performance(data: &IoiSeries, config: &EnsembleConfig) -> Result<PerformanceFit> {
    let steps = build_steps(data, config)?;
    let init = initial_state(config, &data.iois()[0])?;
    let filtered = kalman::filter(&init, &steps, &data.observations())?;
    let gains = GainTrajectory::from_beliefs(config.k, EstimateMode::Filtered, filtered.iter().map(|f| &f.posterior));
    Ok(PerformanceFit { steps, filtered, smoothed: None, gains })
}

/// Forward and backward pass; gains come from the smoothed beliefs.
pub fn smooth_performance(data: &IoiSeries, config: &EnsembleConfig) -> Result<PerformanceFit> {
    let mut fit = filter_performance(data, config)?;
    let smoothed = kalman::smooth(&fit.filtered, &fit.steps)?;
    fit.gains = GainTrajectory::from_beliefs(config.k, EstimateMode::Smoothed, smoothed.iter().map(|s| &s.smoothed));
    fit.smoothed = Some(smoothed);
    Ok(fit)
}

pub fn run_filter(data: &IoiSeries, config: &EnsembleConfig) -> Result<(Vec<FilterStep>, GainTrajectory)> {
    let fit = filter_performance(data, config)?;
    Ok((fit.filtered, fit.gains))
}

pub fn run_smoother(data: &IoiSeries, config: &EnsembleConfig) -> Result<(Vec<SmoothedStep>, GainTrajectory)> {
    let fit = smooth_performance(data, config)?;
    Ok((fit.smoothed.expect("smooth_performance fills smoothed"), fit.gains))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn timeline(rows: Vec<Vec<f64>>) -> OnsetTimeline {
        OnsetTimeline::new(rows).unwrap()
    }

    #[test]
    fn pair_index_examples() {
        assert_eq!(pair_index(1, 2, 4).unwrap(), 0);
        assert_eq!(pair_index(2, 1, 4).unwrap(), 3);
        assert_eq!(pair_index(4, 3, 4).unwrap(), 11);
        assert!(pair_index(2, 2, 4).is_err());
        assert!(pair_index(0, 1, 4).is_err());
        assert!(pair_index(1, 5, 4).is_err());
    }

    #[test]
    fn gain_index_is_contiguous_per_performer() {
        for k in 2..=6 {
            let gi = GainIndex::new(k);
            for i in 1..=k {
                let idx: Vec<_> = (1..=k).filter(|&j| j != i).map(|j| gi.index(i, j).unwrap()).collect();
                let expected: Vec<_> = ((i - 1) * (k - 1)..i * (k - 1)).collect();
                assert_eq!(idx, expected);
            }
            for idx in 0..gi.len() {
                let (i, j) = gi.pair(idx);
                assert_eq!(gi.index(i, j).unwrap(), idx);
            }
        }
    }

    #[test]
    fn asynchrony_examples() {
        let tl = timeline(vec![vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0]]);
        assert_eq!(asynchrony_vector(&tl, 2, 1).unwrap(), vec![0.0, 0.0]);

        let tl = timeline(vec![vec![1.0, 2.0], vec![1.2, 2.0]]);
        assert!((asynchrony_vector(&tl, 1, 1).unwrap()[0] + 0.2).abs() < 1e-15);
        assert!((asynchrony_vector(&tl, 2, 1).unwrap()[0] - 0.2).abs() < 1e-15);

        let tl = timeline(vec![vec![0.0, 1.0], vec![0.01, 1.0], vec![0.03, 1.0]]);
        let a = asynchrony_vector(&tl, 2, 1).unwrap();
        assert_eq!(a, vec![0.01 - 0.0, 0.01 - 0.03]);
        assert!(asynchrony_vector(&tl, 2, 3).is_err());
        assert!(asynchrony_vector(&tl, 4, 1).is_err());
    }

    #[test]
    fn observation_matrix_shapes() {
        assert_eq!(build_observation_matrix(1), DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
        let f2 = build_observation_matrix(2);
        assert_eq!(f2.row(0).iter().copied().collect::<Vec<_>>(), vec![0., 0., 1., 0., 0., 0., 0., 0.]);
        assert_eq!(f2.row(1).iter().copied().collect::<Vec<_>>(), vec![0., 0., 0., 1., 0., 0., 0., 0.]);
        let f4 = build_observation_matrix(4);
        assert_eq!(f4.shape(), (4, 32));
        assert_eq!(f4.iter().filter(|&&x| x != 0.0).count(), 4);
        assert!(f4.iter().all(|&x| x == 0.0 || x == 1.0));
    }

    #[test]
    fn transition_matrix_k2_by_hand() {
        // Layout for K = 2: T1 T2 r1 r2 a12 a21 b12 b21.
        let tl = timeline(vec![vec![1.0, 2.0], vec![1.2, 2.1]]);
        let g = build_transition_matrix(&tl, 1).unwrap();
        let d = 0.2;
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(8, 8, &[
            1., 0., 0., 0., 0., 0., d,  0.,
            0., 1., 0., 0., 0., 0., 0., -d,
            1., 0., 0., 0., d,  0., d,  0.,
            0., 1., 0., 0., 0., -d, 0., -d,
            0., 0., 0., 0., 1., 0., 0., 0.,
            0., 0., 0., 0., 0., 1., 0., 0.,
            0., 0., 0., 0., 0., 0., 1., 0.,
            0., 0., 0., 0., 0., 0., 0., 1.,
        ]);
        assert!((g - expected).amax() < 1e-15);
    }

    #[test]
    fn zero_asynchrony_reduces_to_timekeeper_propagation() {
        let tl = timeline(vec![vec![0.0, 500.0]; 3]);
        let g = build_transition_matrix(&tl, 1).unwrap();
        let layout = HiddenStateLayout::new(3);
        let mut theta = DVector::zeros(layout.dim());
        for d in 0..3 {
            theta[d] = 480.0 + d as f64;
            theta[3 + d] = 999.0;
        }
        let next = &g * &theta;
        for d in 0..3 {
            assert_eq!(next[d], theta[d]);
            assert_eq!(next[3 + d], theta[d]);
        }
        // Coupling blocks vanish entirely.
        let coupling = g.view((0, 6), (6, 12));
        assert!(coupling.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn process_cov_defaults_k4() {
        let cfg = EnsembleConfig::new(4).unwrap();
        let w = build_process_cov(&cfg).unwrap();
        assert_eq!(w.shape(), (32, 32));
        for d in 0..4 {
            assert_eq!(w[(d, d)], 500.0);
            assert_eq!(w[(4 + d, 4 + d)], 25.0);
        }
        let l = cfg.layout();
        let block = w.view((l.alpha().start, l.alpha().start), (3, 3)).into_owned();
        for a in 0..3 {
            for b in 0..3 {
                let want = if a == b { 1e-4 } else { -1e-5 };
                assert!((block[(a, b)] - want).abs() < 1e-20);
            }
        }
        // Different performers' gains are uncorrelated.
        assert_eq!(w[(l.alpha().start, l.alpha().start + 3)], 0.0);
        assert!(w.view((l.beta().start, l.beta().start), (12, 12)).iter().all(|&x| x == 0.0));

        let mut eig: Vec<f64> = block.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((eig[0] - 0.8e-4).abs() < 1e-18);
        assert!((eig[1] - 1.1e-4).abs() < 1e-18);
        assert!((eig[2] - 1.1e-4).abs() < 1e-18);
    }

    #[test]
    fn uncorrelated_gains_give_scaled_identity() {
        let mut cfg = EnsembleConfig::new(3).unwrap();
        cfg.rho_alpha = 0.0;
        let w = build_process_cov(&cfg).unwrap();
        let l = cfg.layout();
        let block = w.view((l.alpha().start, l.alpha().start), (6, 6)).into_owned();
        assert_eq!(block, DMatrix::identity(6, 6) * 1e-4);
    }

    #[test]
    fn config_rejects_non_pd_gain_blocks() {
        let mut cfg = EnsembleConfig::new(8).unwrap();
        cfg.rho_alpha = -0.2; // 1 + 6·(-0.2) < 0
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.rho_alpha = -0.1;
        cfg.v_beta = 1e-4;
        cfg.rho_beta = 1.0;
        assert!(cfg.validate().is_err());
        assert!(EnsembleConfig::new(0).is_err());
        let mut cfg = EnsembleConfig::new(2).unwrap();
        cfg.sigma_t2 = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn obs_cov_examples() {
        let cfg = EnsembleConfig::new(4).unwrap();
        assert_eq!(build_obs_cov(&cfg).unwrap(), DMatrix::identity(4, 4) * 1e-5);
        let mut cfg = EnsembleConfig::new(1).unwrap();
        assert_eq!(build_obs_cov(&cfg).unwrap(), DMatrix::from_element(1, 1, 1e-5));
        cfg.obs_jitter = 1.0;
        assert_eq!(build_obs_cov(&cfg).unwrap(), DMatrix::identity(1, 1));
        cfg.obs_jitter = 0.0;
        assert!(build_obs_cov(&cfg).is_err());
    }

    #[test]
    fn initial_state_examples() {
        let cfg = EnsembleConfig::new(4).unwrap();
        let b = initial_state(&cfg, &[0.5; 4]).unwrap();
        let mut want = vec![0.5; 8];
        want.extend([0.25; 12]);
        want.extend([0.0; 12]);
        assert_eq!(b.mean.iter().copied().collect::<Vec<_>>(), want);
        assert_eq!(b.cov[(0, 0)], 500.0);
        assert_eq!(b.cov[(10, 10)], 1e-3);
        assert_eq!(b.cov[(0, 1)], 0.0);

        let mut cfg0 = cfg.clone();
        cfg0.alpha_init = 0.0;
        let b = initial_state(&cfg0, &[0.5; 4]).unwrap();
        assert!(b.mean.rows(8, 24).iter().all(|&x| x == 0.0));

        let cfg1 = EnsembleConfig::new(1).unwrap();
        let b = initial_state(&cfg1, &[480.0]).unwrap();
        assert_eq!(b.mean.as_slice(), &[480.0, 480.0]);

        assert!(initial_state(&cfg, &[0.5, 0.5, 0.0, 0.5]).is_err());
    }

    #[test]
    fn ioi_round_trip_and_validation() {
        let tl = timeline(vec![vec![0.0, 0.5, 1.0]]);
        let s = tl.to_ioi_series().unwrap();
        assert_eq!(s.iois(), &[vec![0.5], vec![0.5]]);
        assert_eq!(s.to_timeline().unwrap(), tl);
        assert!(IoiSeries::new(vec![vec![1.0, -1.0]], vec![0.0, 0.0]).is_err());
        assert!(OnsetTimeline::new(vec![vec![0.0, 1.0, 1.0]]).is_err());
        assert!(OnsetTimeline::new(vec![vec![0.0, 1.0], vec![0.0]]).is_err());
    }

    #[test]
    fn run_filter_rejects_empty_and_mismatched_data() {
        let cfg = EnsembleConfig::new(2).unwrap();
        let empty = IoiSeries::new(vec![], vec![0.0, 0.0]).unwrap();
        assert!(matches!(run_filter(&empty, &cfg), Err(Error::Contract(_))));
        let k3 = IoiSeries::new(vec![vec![500.0; 3]], vec![0.0; 3]).unwrap();
        assert!(run_filter(&k3, &cfg).is_err());
    }

    #[test]
    fn single_performer_has_no_gains() {
        let cfg = EnsembleConfig::new(1).unwrap();
        let data = IoiSeries::new(vec![vec![500.0], vec![510.0], vec![490.0]], vec![0.0]).unwrap();
        let (steps, gains) = run_filter(&data, &cfg).unwrap();
        assert_eq!(steps.len(), 3);
        assert!(gains.is_empty());
        assert_eq!(steps[0].posterior.dim(), 2);
    }
}
