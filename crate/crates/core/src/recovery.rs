//! Simulate-then-smooth recovery experiments.
//!
//! A trial simulates a performance with known gains, smooths it with the
//! ensemble model and compares the smoothed α paths with the truth. Sweeps
//! run independent seeds through [`crate::parallel::map`].

use crate::error::Result;
use crate::model::{smooth_performance, EnsembleConfig, GainIndex};
use crate::parallel::{self, Execution};
use crate::synth::{make_script, simulate, Condition, GainRamp, GainSpec, SimulationParams};

#[derive(Debug, Clone, PartialEq)]
pub struct RecoverySetup {
    pub condition: Condition,
    pub k: usize,
    pub n: usize,
    pub base_t: f64,
    pub leader: Option<usize>,
    /// Onset noise standard deviation, ms.
    pub sigma_t: f64,
    /// True gain specs, applied to every pair.
    pub alpha: GainSpec,
    pub beta: GainSpec,
    /// Scripted drift of the true α over the tempo-change window: followers'
    /// α toward the leader rise by this amount and the leader's α toward the
    /// others fall by it. Zero leaves the gains as specified.
    pub leader_drift: f64,
    pub config: EnsembleConfig,
}

impl RecoverySetup {
    /// Constant α = 0.25, β = 0, σ_T² = 500 ms², default model config.
    pub fn new(condition: Condition, k: usize, n: usize, leader: Option<usize>) -> Result<Self> {
        Ok(Self {
            condition,
            k,
            n,
            base_t: 500.0,
            leader,
            sigma_t: EnsembleConfig::DEFAULT_SIGMA_T2.sqrt(),
            alpha: GainSpec::constant(EnsembleConfig::DEFAULT_ALPHA_INIT),
            beta: GainSpec::constant(0.0),
            leader_drift: 0.0,
            config: EnsembleConfig::new(k)?,
        })
    }

    pub fn params(&self, seed: u64) -> Result<SimulationParams> {
        let script = make_script(self.condition, self.k, self.n, self.base_t, self.leader, seed)?;
        let index = GainIndex::new(self.k);
        let true_alpha = index
            .pairs()
            .map(|(i, j)| match (self.leader, script.change_window()) {
                (Some(l), Some((start, end))) if self.leader_drift != 0.0 && (i == l || j == l) => {
                    let delta = if j == l { self.leader_drift } else { -self.leader_drift };
                    self.alpha.with_ramp(GainRamp { start, end, delta })
                }
                _ => self.alpha,
            })
            .collect();
        Ok(SimulationParams {
            k: self.k,
            n: self.n,
            true_alpha,
            true_beta: vec![self.beta; index.len()],
            sigma_t: self.sigma_t,
            script,
            seed,
            initial_onsets: vec![0.0; self.k],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRecovery {
    pub i: usize,
    pub j: usize,
    /// Mean |smoothed α − true α| over the final quarter of steps.
    pub mae_final_quarter: f64,
    /// Mean smoothed α over the final quarter of steps.
    pub mean_final_quarter: f64,
    /// Mean true α over the same steps.
    pub truth_final_quarter: f64,
    /// Least-squares slope of the smoothed α mean over the trend window.
    pub window_slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub seed: u64,
    pub condition: Condition,
    pub k: usize,
    pub n: usize,
    pub leader: Option<usize>,
    /// Steps `(first, last)` over which slopes are fitted.
    pub window: (usize, usize),
    pub pairs: Vec<PairRecovery>,
}

impl RecoveryReport {
    pub fn pair(&self, i: usize, j: usize) -> Option<&PairRecovery> {
        self.pairs.iter().find(|p| p.i == i && p.j == j)
    }

    pub fn max_mae(&self) -> f64 {
        self.pairs.iter().map(|p| p.mae_final_quarter).fold(0.0, f64::max)
    }

    /// Every follower's α toward the leader trends upward.
    pub fn followers_converge_on_leader(&self) -> Option<bool> {
        let l = self.leader?;
        Some(self.pairs.iter().filter(|p| p.j == l).all(|p| p.window_slope > 0.0))
    }

    /// Mean slope of the leader's own α toward the others.
    pub fn leader_mean_slope(&self) -> Option<f64> {
        let l = self.leader?;
        let own: Vec<f64> = self.pairs.iter().filter(|p| p.i == l).map(|p| p.window_slope).collect();
        (!own.is_empty()).then(|| own.iter().sum::<f64>() / own.len() as f64)
    }

    /// Followers' α toward the leader rise while the leader's own α fall.
    pub fn shows_leadership(&self) -> bool {
        self.followers_converge_on_leader().unwrap_or(false) && self.leader_mean_slope().is_some_and(|s| s < 0.0)
    }
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// One simulate-smooth-compare trial.
pub fn run_trial(setup: &RecoverySetup, seed: u64) -> Result<RecoveryReport> {
    let params = setup.params(seed)?;
    let (timeline, truth) = simulate(&params)?;
    let data = timeline.to_ioi_series()?;
    let fit = smooth_performance(&data, &setup.config)?;

    let n = setup.n;
    let quarter_start = n - (n / 4).max(1) + 1;
    let window = params.script.change_window().unwrap_or((1, n));

    let index = GainIndex::new(setup.k);
    let pairs = index
        .pairs()
        .enumerate()
        .map(|(idx, (i, j))| {
            let est: Vec<f64> = fit.gains.steps.iter().map(|s| s.alpha[idx].mean).collect();
            let tail = quarter_start..=n;
            let len = tail.clone().count() as f64;
            let mae = tail.clone().map(|s| (est[s - 1] - truth.alpha[s][idx]).abs()).sum::<f64>() / len;
            let mean = tail.clone().map(|s| est[s - 1]).sum::<f64>() / len;
            let truth_mean = tail.map(|s| truth.alpha[s][idx]).sum::<f64>() / len;
            let xs: Vec<f64> = (window.0..=window.1).map(|s| s as f64).collect();
            let ys: Vec<f64> = (window.0..=window.1).map(|s| est[s - 1]).collect();
            PairRecovery {
                i,
                j,
                mae_final_quarter: mae,
                mean_final_quarter: mean,
                truth_final_quarter: truth_mean,
                window_slope: ols_slope(&xs, &ys),
            }
        })
        .collect();

    Ok(RecoveryReport { seed, condition: setup.condition, k: setup.k, n, leader: setup.leader, window, pairs })
}

/// Run one trial per seed; results are in seed order.
pub fn sweep(exec: Execution, setup: &RecoverySetup, seeds: &[u64]) -> Vec<Result<RecoveryReport>> {
    parallel::map(exec, seeds, |&seed| run_trial(setup, seed))
}
