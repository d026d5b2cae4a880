//! Synthetic ensemble performances with known gains.
//!
//! Each step first computes the asynchronies at `n - 1`, then advances the
//! period gains and the timekeepers, then the phase gains, and finally emits
//! the onsets:
//!
//! ```text
//! β_ij,n = β_ij,n-1 + w^β
//! T_i,n  = T_i,n-1 - Σ_j β_ij,n A_ij,n-1
//! α_ij,n = α_ij,n-1 + w^α                    (clipped to [-0.5, 1.5])
//! t_i,n  = t_i,n-1 + m_i(n) T_i,n - Σ_j α_ij,n A_ij,n-1 + ε_i,n
//! ```
//!
//! where `m_i(n)` is the tempo multiplier of the script.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{GainIndex, IoiSeries, OnsetTimeline};

pub const ALPHA_CLIP: (f64, f64) = (-0.5, 1.5);
/// Relative depth of the normal-condition tempo sinusoid.
pub const NORMAL_DEPTH: f64 = 0.03;
/// Leader's tempo multiplier at the peak of the speed-condition accelerando.
pub const SPEED_PEAK: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Deadpan,
    Normal,
    Speed,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Deadpan => "deadpan",
            Condition::Normal => "normal",
            Condition::Speed => "speed",
        })
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "deadpan" => Ok(Condition::Deadpan),
            "normal" => Ok(Condition::Normal),
            "speed" => Ok(Condition::Speed),
            other => Err(Error::Contract(format!("unknown condition {other:?}"))),
        }
    }
}

/// Linear ramp of the tempo multiplier over steps `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempoSegment {
    pub start: usize,
    pub end: usize,
    pub from: f64,
    pub to: f64,
}

impl TempoSegment {
    fn at(&self, n: usize) -> f64 {
        if self.end == self.start {
            return self.from;
        }
        let u = (n - self.start) as f64 / (self.end - self.start) as f64;
        self.from + u * (self.to - self.from)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TempoScript {
    pub condition: Condition,
    /// Performer driving the tempo change (speed condition only).
    pub leader: Option<usize>,
    pub base_t: f64,
    /// Consecutive segments may share an endpoint but must not overlap.
    pub segments: Vec<TempoSegment>,
}

impl TempoScript {
    /// Tempo multiplier of the timekeeper of performer `i` at step `n`.
    pub fn multiplier(&self, i: usize, n: usize) -> f64 {
        if let Some(leader) = self.leader {
            if i != leader {
                return 1.0;
            }
        }
        self.segments.iter().find(|s| s.start <= n && n <= s.end).map_or(1.0, |s| s.at(n))
    }

    /// Steps over which the scripted tempo change happens, if any.
    pub fn change_window(&self) -> Option<(usize, usize)> {
        let moving: Vec<_> = self.segments.iter().filter(|s| s.from != s.to).collect();
        Some((moving.first()?.start, moving.last()?.end))
    }

    pub fn validate(&self, k: usize, n: usize) -> Result<()> {
        if !(self.base_t.is_finite() && self.base_t > 0.0) {
            return Err(Error::Contract(format!("base_T must be positive, got {}", self.base_t)));
        }
        match (self.condition, self.leader) {
            (Condition::Speed, None) => return Err(Error::Contract("speed condition requires a leader".into())),
            (Condition::Speed, Some(l)) if l == 0 || l > k => {
                return Err(Error::Contract(format!("leader {l} out of range for K = {k}")));
            }
            (Condition::Deadpan | Condition::Normal, Some(_)) => {
                return Err(Error::Contract(format!(
                    "a leader only applies to the speed condition, not {}",
                    self.condition
                )));
            }
            _ => {}
        }
        for (idx, s) in self.segments.iter().enumerate() {
            if s.start == 0 || s.start > s.end || s.end > n.max(1) {
                return Err(Error::Contract(format!("segment {idx} spans {}..={} outside 1..={n}", s.start, s.end)));
            }
            if !(s.from > 0.0 && s.to > 0.0) {
                return Err(Error::Contract(format!("segment {idx} has a nonpositive multiplier")));
            }
            if idx > 0 && s.start < self.segments[idx - 1].end {
                return Err(Error::Contract(format!("segment {idx} overlaps its predecessor")));
            }
        }
        Ok(())
    }
}

/// Build the tempo script of a performance condition.
///
/// * deadpan: multiplier 1 throughout;
/// * normal: every timekeeper follows `1 + 0.03 sin(2π c n / N + φ)` with
///   `c ∈ [1, 2)` cycles and phase `φ` drawn from `seed`, sampled as one
///   linear segment per step;
/// * speed: the leader holds tempo for the first third, ramps to ×0.8 over
///   the middle third and back to ×1.0 over the last third.
pub fn make_script(
    condition: Condition,
    k: usize,
    n: usize,
    base_t: f64,
    leader: Option<usize>,
    seed: u64,
) -> Result<TempoScript> {
    let n_eff = n.max(1);
    let segments = match condition {
        Condition::Deadpan => vec![TempoSegment { start: 1, end: n_eff, from: 1.0, to: 1.0 }],
        Condition::Normal => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cycles: f64 = rng.random_range(1.0..2.0);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let curve = |s: usize| {
                1.0 + NORMAL_DEPTH * (std::f64::consts::TAU * cycles * s as f64 / n_eff as f64 + phase).sin()
            };
            if n_eff == 1 {
                vec![TempoSegment { start: 1, end: 1, from: curve(1), to: curve(1) }]
            } else {
                (1..n_eff).map(|s| TempoSegment { start: s, end: s + 1, from: curve(s), to: curve(s + 1) }).collect()
            }
        }
        Condition::Speed => {
            let a = n_eff / 3 + 1;
            let b = 2 * n_eff / 3 + 1;
            let b = b.min(n_eff);
            let a = a.min(b);
            vec![
                TempoSegment { start: 1, end: a, from: 1.0, to: 1.0 },
                TempoSegment { start: a, end: b, from: 1.0, to: SPEED_PEAK },
                TempoSegment { start: b, end: n_eff, from: SPEED_PEAK, to: 1.0 },
            ]
        }
    };
    let script = TempoScript { condition, leader, base_t, segments };
    script.validate(k, n_eff)?;
    Ok(script)
}

/// Deterministic linear drift of a gain from its value at `start` by
/// `delta` in total, spread evenly over steps `start+1..=end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainRamp {
    pub start: usize,
    pub end: usize,
    pub delta: f64,
}

impl GainRamp {
    fn increment(&self, n: usize) -> f64 {
        if n > self.start && n <= self.end {
            self.delta / (self.end - self.start) as f64
        } else {
            0.0
        }
    }
}

/// Evolution of one true gain: initial value, per-step random-walk standard
/// deviation and an optional scripted drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSpec {
    pub init: f64,
    pub step_std: f64,
    pub ramp: Option<GainRamp>,
}

impl GainSpec {
    pub fn constant(value: f64) -> Self {
        Self { init: value, step_std: 0.0, ramp: None }
    }

    pub fn random_walk(init: f64, step_std: f64) -> Self {
        Self { init, step_std, ramp: None }
    }

    pub fn with_ramp(self, ramp: GainRamp) -> Self {
        Self { ramp: Some(ramp), ..self }
    }

    fn advance(&self, value: f64, n: usize, rng: &mut impl Rng) -> f64 {
        let mut next = value + self.ramp.map_or(0.0, |r| r.increment(n));
        if self.step_std > 0.0 {
            next += self.step_std * rng.sample::<f64, _>(StandardNormal);
        }
        next
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationParams {
    pub k: usize,
    pub n: usize,
    /// One spec per ordered pair, in pair-index order.
    pub true_alpha: Vec<GainSpec>,
    pub true_beta: Vec<GainSpec>,
    /// Standard deviation of the onset noise ε, ms.
    pub sigma_t: f64,
    pub script: TempoScript,
    pub seed: u64,
    /// `t_{i,0}`, ms.
    pub initial_onsets: Vec<f64>,
}

impl SimulationParams {
    /// Same constant α and β on every pair, all performers starting together.
    pub fn uniform(k: usize, n: usize, alpha: f64, beta: f64, sigma_t: f64, script: TempoScript, seed: u64) -> Self {
        let pairs = GainIndex::new(k).len();
        Self {
            k,
            n,
            true_alpha: vec![GainSpec::constant(alpha); pairs],
            true_beta: vec![GainSpec::constant(beta); pairs],
            sigma_t,
            script,
            seed,
            initial_onsets: vec![0.0; k],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n == 0 {
            return Err(Error::Contract(format!("need K >= 1 and N >= 1, got K = {}, N = {}", self.k, self.n)));
        }
        if !(self.sigma_t >= 0.0 && self.sigma_t.is_finite()) {
            return Err(Error::Contract(format!("sigma_T must be nonnegative, got {}", self.sigma_t)));
        }
        let pairs = GainIndex::new(self.k).len();
        if self.true_alpha.len() != pairs || self.true_beta.len() != pairs {
            return Err(Error::Contract(format!("expected {pairs} gain specs per kind")));
        }
        if self
            .true_alpha
            .iter()
            .chain(&self.true_beta)
            .any(|g| !(g.step_std >= 0.0 && g.init.is_finite() && g.step_std.is_finite()))
        {
            return Err(Error::Contract("gain specs need finite values and nonnegative step std".into()));
        }
        if self.initial_onsets.len() != self.k || self.initial_onsets.iter().any(|t| !t.is_finite()) {
            return Err(Error::Contract("need one finite initial onset per performer".into()));
        }
        self.script.validate(self.k, self.n)
    }
}

/// Gain and timekeeper paths used to generate a performance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `alpha[n][pair]` for `n = 0..=N`.
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    /// Effective (tempo-scaled) timekeeper intervals `timekeeper[n][i-1]`;
    /// entry 0 holds the unscaled starting interval.
    pub timekeeper: Vec<Vec<f64>>,
    /// Asynchronies `A_ij,n` in pair-index order for `n = 0..=N`, as used
    /// by the generator (free of the cancellation in `t_i,n - t_j,n`).
    pub asynchrony: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn alpha_path(&self, pair: usize) -> Vec<f64> {
        self.alpha.iter().map(|row| row[pair]).collect()
    }
}

/// Generate one performance. Deterministic in `params.seed`.
///
/// Onsets are tracked as deviations from a shared grid `c_n = c_0 + n·base_T`
/// so that asynchronies are differences of small numbers; the emitted onset
/// is `c_n + d_i,n`.
pub fn simulate(params: &SimulationParams) -> Result<(OnsetTimeline, GroundTruth)> {
    params.validate()?;
    let (k, n_steps) = (params.k, params.n);
    let base_t = params.script.base_t;
    let index = GainIndex::new(k);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let origin = params.initial_onsets[0];
    let mut dev: Vec<f64> = params.initial_onsets.iter().map(|&t| t - origin).collect();
    let mut onsets: Vec<Vec<f64>> = params.initial_onsets.iter().map(|&t| vec![t]).collect();
    let mut alpha: Vec<f64> = params.true_alpha.iter().map(|g| g.init).collect();
    let mut beta: Vec<f64> = params.true_beta.iter().map(|g| g.init).collect();
    let mut timekeeper = vec![base_t; k];

    let asynchronies = |dev: &[f64]| -> Vec<f64> { index.pairs().map(|(i, j)| dev[i - 1] - dev[j - 1]).collect() };
    let mut truth = GroundTruth {
        alpha: vec![alpha.clone()],
        beta: vec![beta.clone()],
        timekeeper: vec![timekeeper.clone()],
        asynchrony: vec![asynchronies(&dev)],
    };

    for n in 1..=n_steps {
        let grid = origin + n as f64 * base_t;
        let asyn = truth.asynchrony.last().expect("seeded with n = 0").clone();

        for (b, spec) in beta.iter_mut().zip(&params.true_beta) {
            *b = spec.advance(*b, n, &mut rng);
        }
        for (a, spec) in alpha.iter_mut().zip(&params.true_alpha) {
            *a = spec.advance(*a, n, &mut rng).clamp(ALPHA_CLIP.0, ALPHA_CLIP.1);
        }

        let mut effective = vec![0.0; k];
        for i in 1..=k {
            let block = (i - 1) * (k - 1)..i * (k - 1);
            let period_shift: f64 = block.clone().map(|idx| beta[idx] * asyn[idx]).sum();
            let phase_shift: f64 = block.map(|idx| alpha[idx] * asyn[idx]).sum();
            timekeeper[i - 1] -= period_shift;
            effective[i - 1] = params.script.multiplier(i, n) * timekeeper[i - 1];
            let noise = params.sigma_t * rng.sample::<f64, _>(StandardNormal);
            dev[i - 1] += (effective[i - 1] - base_t) - phase_shift + noise;

            let prev = onsets[i - 1][n - 1];
            let t = grid + dev[i - 1];
            if !(t > prev) {
                return Err(Error::Unstable { step: n, performer: i });
            }
            onsets[i - 1].push(t);
        }

        truth.alpha.push(alpha.clone());
        truth.beta.push(beta.clone());
        truth.timekeeper.push(effective);
        truth.asynchrony.push(asynchronies(&dev));
    }

    Ok((OnsetTimeline::new(onsets)?, truth))
}

pub fn to_ioi_series(timeline: &OnsetTimeline) -> Result<IoiSeries> {
    timeline.to_ioi_series()
}
