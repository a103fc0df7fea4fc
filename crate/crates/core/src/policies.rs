//! Arm-selection policies behind one decision contract.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::belief::{correlated_update, replay, BeliefState, History};
use crate::error::{check_arm, Error, Result};
use crate::gaussian::{std_pdf, SeedRng};
use crate::planner::{argmax, value_t1, ObservationDensity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "myopic")]
    Myopic,
    #[serde(rename = "golden")]
    Golden,
    #[serde(rename = "ucb1")]
    Ucb1,
    #[serde(rename = "ucb1-normal")]
    Ucb1Normal,
    #[serde(rename = "ucb1-normal-cor")]
    Ucb1NormalCor,
    #[serde(rename = "vi-cor")]
    ViCor,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Random,
        PolicyKind::Myopic,
        PolicyKind::Golden,
        PolicyKind::Ucb1,
        PolicyKind::Ucb1Normal,
        PolicyKind::Ucb1NormalCor,
        PolicyKind::ViCor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Myopic => "myopic",
            PolicyKind::Golden => "golden",
            PolicyKind::Ucb1 => "ucb1",
            PolicyKind::Ucb1Normal => "ucb1-normal",
            PolicyKind::Ucb1NormalCor => "ucb1-normal-cor",
            PolicyKind::ViCor => "vi-cor",
        }
    }

    /// Whether selections depend on the random stream.
    pub fn is_stochastic(self) -> bool {
        matches!(self, PolicyKind::Random | PolicyKind::ViCor)
    }

    /// Whether the policy reads the belief and so depends on the noise variance.
    pub fn uses_belief(self) -> bool {
        matches!(
            self,
            PolicyKind::Myopic | PolicyKind::Ucb1NormalCor | PolicyKind::ViCor
        )
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy '{s}'")))
    }
}

/// Everything a policy may look at when choosing the arm for step `step`.
///
/// `belief` is always `replay(prior, history)`.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub prior: &'a BeliefState,
    pub belief: &'a BeliefState,
    pub history: &'a History,
    /// 1-based index of the decision being made.
    pub step: usize,
    pub horizon: usize,
}

pub trait Policy: Send {
    fn kind(&self) -> PolicyKind;

    fn select(&mut self, ctx: &StepContext<'_>, rng: &mut SeedRng) -> Result<usize>;

    fn observe(&mut self, _arm: usize, _payoff: f64) {}
}

/// Per-arm play counts, reward sums and squared-reward sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcbArmStats {
    pub counts: Vec<u64>,
    pub sums: Vec<f64>,
    pub squared_sums: Vec<f64>,
}

impl UcbArmStats {
    pub fn new(arms: usize) -> Self {
        Self {
            counts: vec![0; arms],
            sums: vec![0.0; arms],
            squared_sums: vec![0.0; arms],
        }
    }

    pub fn from_history(arms: usize, history: &History) -> Result<Self> {
        history.validate(arms)?;
        let mut s = Self::new(arms);
        for o in history.steps() {
            s.record(o.arm, o.payoff);
        }
        Ok(s)
    }

    pub fn arms(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, arm: usize, reward: f64) {
        self.counts[arm] += 1;
        self.sums[arm] += reward;
        self.squared_sums[arm] += reward * reward;
    }

    pub fn mean(&self, arm: usize) -> f64 {
        self.sums[arm] / self.counts[arm] as f64
    }

    fn first_unplayed(&self) -> Option<usize> {
        self.counts.iter().position(|&c| c == 0)
    }
}

/// `x̄ + √(2 ln t / tᵢ)`.
pub fn ucb1_index(mean: f64, plays: u64, t: usize) -> f64 {
    mean + (2.0 * (t as f64).ln() / plays as f64).sqrt()
}

/// UCB1 over rewards already scaled to `[0, 1]`.
pub fn ucb1_select(stats: &UcbArmStats, t: usize) -> Result<usize> {
    if let Some(arm) = stats.first_unplayed() {
        return Ok(arm);
    }
    let idx: Vec<f64> = (0..stats.arms())
        .map(|i| ucb1_index(stats.mean(i), stats.counts[i], t))
        .collect();
    argmax(&idx).ok_or_else(|| Error::Domain("no arms".into()))
}

/// Min-max scaling of raw payoffs onto `[0, 1]`, clamping excursions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardScaler {
    pub min: f64,
    pub max: f64,
}

impl RewardScaler {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let (min, max) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        Self { min, max }
    }

    pub fn scale(&self, x: f64) -> f64 {
        let span = self.max - self.min;
        if !span.is_finite() || span <= 0.0 {
            return 0.5;
        }
        ((x - self.min) / span).clamp(0.0, 1.0)
    }
}

/// `⌈8 ln t⌉`, the minimum play count before the UCB1-NORMAL index applies.
pub fn forced_play_threshold(t: usize) -> u64 {
    if t <= 1 {
        0
    } else {
        (8.0 * (t as f64).ln()).ceil() as u64
    }
}

/// Unplayed arms first, then the least-played arm under the threshold.
pub fn forced_exploration(stats: &UcbArmStats, t: usize) -> Option<usize> {
    if let Some(arm) = stats.first_unplayed() {
        return Some(arm);
    }
    let threshold = forced_play_threshold(t);
    (0..stats.arms())
        .filter(|&i| stats.counts[i] < threshold)
        .min_by_key(|&i| (stats.counts[i], i))
}

/// `m + √(16 · (q − tᵢ m²)/(tᵢ − 1) · (t − 1)/tᵢ)` with a negative radicand
/// floored at zero.
pub fn ucb1_normal_index(mean: f64, squared_sum: f64, plays: u64, t: usize) -> Result<f64> {
    if plays < 2 {
        return Err(Error::Invariant(format!(
            "UCB1-NORMAL index reached with {plays} plays"
        )));
    }
    let ti = plays as f64;
    let spread = ((squared_sum - ti * mean * mean) / (ti - 1.0)).max(0.0);
    Ok(mean + (16.0 * spread * (t as f64 - 1.0) / ti).sqrt())
}

fn ucb1_normal_argmax(stats: &UcbArmStats, means: &[f64], t: usize) -> Result<usize> {
    let idx = (0..stats.arms())
        .map(|i| ucb1_normal_index(means[i], stats.squared_sums[i], stats.counts[i], t))
        .collect::<Result<Vec<_>>>()?;
    argmax(&idx).ok_or_else(|| Error::Domain("no arms".into()))
}

pub fn ucb1_normal_select(stats: &UcbArmStats, t: usize) -> Result<usize> {
    if let Some(arm) = forced_exploration(stats, t) {
        return Ok(arm);
    }
    let means: Vec<f64> = (0..stats.arms()).map(|i| stats.mean(i)).collect();
    ucb1_normal_argmax(stats, &means, t)
}

/// UCB1-NORMAL with the empirical means replaced by the posterior means
/// obtained by replaying the whole history through the correlated update.
pub fn ucb1_normal_cor_select(prior: &BeliefState, history: &History, t: usize) -> Result<usize> {
    let stats = UcbArmStats::from_history(prior.arms(), history)?;
    if let Some(arm) = forced_exploration(&stats, t) {
        return Ok(arm);
    }
    let posterior = replay(prior, history)?;
    ucb1_normal_argmax(&stats, posterior.theta().as_slice(), t)
}

/// Argmax of the current posterior means.
pub fn myopic_select(belief: &BeliefState) -> usize {
    value_t1(belief).map(|(_, arm)| arm).unwrap_or(0)
}

pub fn random_select(arms: usize, rng: &mut SeedRng) -> usize {
    rng.random_range(0..arms)
}

/// Per-step hindsight best arm of a realized payoff matrix (rows are steps)
/// and the total of the row maxima.
pub fn golden_trace(payoffs: &DMatrix<f64>) -> Result<(Vec<usize>, f64)> {
    if payoffs.nrows() == 0 || payoffs.ncols() == 0 {
        return Err(Error::Domain("golden trace of an empty matrix".into()));
    }
    let mut total = 0.0;
    let picks = payoffs
        .row_iter()
        .map(|row| {
            let r: Vec<f64> = row.iter().copied().collect();
            let arm = argmax(&r).expect("non-empty row");
            total += r[arm];
            arm
        })
        .collect();
    Ok((picks, total))
}

/// Best single arm in hindsight over the whole matrix.
pub fn best_fixed_arm_trace(payoffs: &DMatrix<f64>) -> Result<(Vec<usize>, f64)> {
    if payoffs.nrows() == 0 || payoffs.ncols() == 0 {
        return Err(Error::Domain("golden trace of an empty matrix".into()));
    }
    let sums: Vec<f64> = payoffs.column_iter().map(|c| c.sum()).collect();
    let arm = argmax(&sums).expect("non-empty");
    Ok((vec![arm; payoffs.nrows()], sums[arm]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViCorSampling {
    /// Observations drawn from the observation density, plain average.
    #[default]
    MonteCarlo,
    /// Uniform grid over ±6 standard deviations weighted by the density.
    WeightedGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViCorConfig {
    /// Observations per candidate arm at each lookahead node.
    pub samples: usize,
    /// Lookahead depth; 1 reduces to the myopic choice.
    pub depth: usize,
    pub density: ObservationDensity,
    pub sampling: ViCorSampling,
}

impl Default for ViCorConfig {
    fn default() -> Self {
        Self {
            samples: 64,
            depth: 2,
            density: ObservationDensity::Belief,
            sampling: ViCorSampling::MonteCarlo,
        }
    }
}

impl ViCorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.depth == 0 {
            return Err(Error::Config(format!(
                "vi-cor needs samples >= 1 and depth >= 1, got {} and {}",
                self.samples, self.depth
            )));
        }
        Ok(())
    }

    fn effective_depth(&self, t: usize, horizon: usize) -> usize {
        let remaining = (horizon + 1).saturating_sub(t).max(1);
        remaining.min(self.depth)
    }
}

/// Standardized observation offsets and their weights for one node.
fn node_samples(cfg: &ViCorConfig, rng: &mut SeedRng) -> (Vec<f64>, Vec<f64>) {
    let m = cfg.samples;
    match cfg.sampling {
        ViCorSampling::MonteCarlo => {
            let z = (0..m).map(|_| StandardNormal.sample(rng)).collect();
            (z, vec![1.0 / m as f64; m])
        }
        ViCorSampling::WeightedGrid => {
            let z: Vec<f64> = if m == 1 {
                vec![0.0]
            } else {
                (0..m).map(|k| -6.0 + 12.0 * k as f64 / (m - 1) as f64).collect()
            };
            let w: Vec<f64> = z.iter().map(|&v| std_pdf(v)).collect();
            let total: f64 = w.iter().sum();
            (z, w.into_iter().map(|v| v / total).collect())
        }
    }
}

/// Lookahead value estimate of each first arm: `θ_i` plus the sampled
/// average of the best value reachable after observing arm `i`.
pub fn vi_cor_values(
    belief: &BeliefState,
    t: usize,
    horizon: usize,
    cfg: &ViCorConfig,
    rng: &mut SeedRng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let depth = cfg.effective_depth(t, horizon);
    node_values(belief, depth, cfg, rng)
}

pub fn vi_cor_select(
    belief: &BeliefState,
    t: usize,
    horizon: usize,
    cfg: &ViCorConfig,
    rng: &mut SeedRng,
) -> Result<usize> {
    let values = vi_cor_values(belief, t, horizon, cfg, rng)?;
    argmax(&values).ok_or_else(|| Error::Domain("no arms".into()))
}

fn node_values(
    b: &BeliefState,
    depth: usize,
    cfg: &ViCorConfig,
    rng: &mut SeedRng,
) -> Result<Vec<f64>> {
    let theta = b.theta();
    if depth <= 1 {
        return Ok(theta.iter().copied().collect());
    }
    // common random numbers across candidate arms
    let (z, w) = node_samples(cfg, rng);
    let mut values = Vec::with_capacity(b.arms());
    for i in 0..b.arms() {
        let sd = cfg.density.variance(b, i).sqrt();
        let mut future = 0.0;
        if depth == 2 {
            let lines = b.posterior_lines(i)?;
            for (&zk, &wk) in z.iter().zip(&w) {
                let x = theta[i] + sd * zk;
                let best = lines
                    .iter()
                    .map(|(a, s)| a + s * x)
                    .fold(f64::NEG_INFINITY, f64::max);
                future += wk * best;
            }
        } else {
            for (&zk, &wk) in z.iter().zip(&w) {
                let next = correlated_update(b, i, theta[i] + sd * zk)?;
                let v = node_values(&next, depth - 1, cfg, rng)?;
                future += wk * v.into_iter().fold(f64::NEG_INFINITY, f64::max);
            }
        }
        values.push(theta[i] + future);
    }
    Ok(values)
}

pub struct RandomPolicy {
    arms: usize,
}

impl Policy for RandomPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Random
    }

    fn select(&mut self, _ctx: &StepContext<'_>, rng: &mut SeedRng) -> Result<usize> {
        Ok(random_select(self.arms, rng))
    }
}

pub struct MyopicPolicy;

impl Policy for MyopicPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Myopic
    }

    fn select(&mut self, ctx: &StepContext<'_>, _rng: &mut SeedRng) -> Result<usize> {
        Ok(myopic_select(ctx.belief))
    }
}

pub struct Ucb1Policy {
    scaler: RewardScaler,
    stats: UcbArmStats,
}

impl Ucb1Policy {
    pub fn new(arms: usize, scaler: RewardScaler) -> Self {
        Self {
            scaler,
            stats: UcbArmStats::new(arms),
        }
    }
}

impl Policy for Ucb1Policy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Ucb1
    }

    fn select(&mut self, ctx: &StepContext<'_>, _rng: &mut SeedRng) -> Result<usize> {
        ucb1_select(&self.stats, ctx.step)
    }

    fn observe(&mut self, arm: usize, payoff: f64) {
        self.stats.record(arm, self.scaler.scale(payoff));
    }
}

pub struct Ucb1NormalPolicy {
    stats: UcbArmStats,
}

impl Policy for Ucb1NormalPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Ucb1Normal
    }

    fn select(&mut self, ctx: &StepContext<'_>, _rng: &mut SeedRng) -> Result<usize> {
        ucb1_normal_select(&self.stats, ctx.step)
    }

    fn observe(&mut self, arm: usize, payoff: f64) {
        self.stats.record(arm, payoff);
    }
}

/// Keeps its own play statistics; the posterior means come from the
/// context belief, which is the incremental fold of the same history.
pub struct Ucb1NormalCorPolicy {
    stats: UcbArmStats,
}

impl Policy for Ucb1NormalCorPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Ucb1NormalCor
    }

    fn select(&mut self, ctx: &StepContext<'_>, _rng: &mut SeedRng) -> Result<usize> {
        if let Some(arm) = forced_exploration(&self.stats, ctx.step) {
            return Ok(arm);
        }
        ucb1_normal_argmax(&self.stats, ctx.belief.theta().as_slice(), ctx.step)
    }

    fn observe(&mut self, arm: usize, payoff: f64) {
        self.stats.record(arm, payoff);
    }
}

pub struct ViCorPolicy {
    cfg: ViCorConfig,
}

impl Policy for ViCorPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::ViCor
    }

    fn select(&mut self, ctx: &StepContext<'_>, rng: &mut SeedRng) -> Result<usize> {
        vi_cor_select(ctx.belief, ctx.step, ctx.horizon, &self.cfg, rng)
    }
}

/// Options needed to construct any policy.
#[derive(Debug, Clone, Copy)]
pub struct PolicyOptions {
    pub vi_cor: ViCorConfig,
    /// Training-window payoff range for UCB1 reward scaling.
    pub scaler: RewardScaler,
}

/// Builds a stateful policy; the hindsight `golden` oracle has no online form.
pub fn build_policy(kind: PolicyKind, arms: usize, opts: &PolicyOptions) -> Result<Box<dyn Policy>> {
    if arms == 0 {
        return Err(Error::Domain("policy needs at least one arm".into()));
    }
    Ok(match kind {
        PolicyKind::Random => Box::new(RandomPolicy { arms }),
        PolicyKind::Myopic => Box::new(MyopicPolicy),
        PolicyKind::Ucb1 => Box::new(Ucb1Policy::new(arms, opts.scaler)),
        PolicyKind::Ucb1Normal => Box::new(Ucb1NormalPolicy {
            stats: UcbArmStats::new(arms),
        }),
        PolicyKind::Ucb1NormalCor => Box::new(Ucb1NormalCorPolicy {
            stats: UcbArmStats::new(arms),
        }),
        PolicyKind::ViCor => {
            opts.vi_cor.validate()?;
            Box::new(ViCorPolicy { cfg: opts.vi_cor })
        }
        PolicyKind::Golden => {
            return Err(Error::Config(
                "golden is a hindsight oracle and cannot select online".into(),
            ))
        }
    })
}

/// Checks a policy's pick before it reaches the environment.
pub fn checked_select(
    policy: &mut dyn Policy,
    ctx: &StepContext<'_>,
    rng: &mut SeedRng,
) -> Result<usize> {
    let arm = policy.select(ctx, rng)?;
    check_arm(arm, ctx.belief.arms()).map_err(|_| {
        Error::Invariant(format!("{} selected invalid arm {arm}", policy.kind()))
    })?;
    Ok(arm)
}
