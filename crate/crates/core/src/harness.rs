//! Experiment orchestration: overlapping chunks, prior fitting on the
//! training head of each chunk, noise tuning, policy runs over the test
//! tail, GOLDEN normalization, paired significance tests and output files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{correlated_update, BeliefState, History, UpdateMode};
use crate::env::{Environment, ReplayEnv, SeriesSpec, SyntheticEnv};
use crate::error::{Error, Result};
use crate::gaussian::{fit_prior, wilcoxon_signed_rank, SeedRng};
use crate::policies::{
    best_fixed_arm_trace, build_policy, checked_select, golden_trace, PolicyKind, PolicyOptions,
    RewardScaler, StepContext, ViCorConfig,
};

/// Environment variable bounding the worker pool.
pub const THREADS_ENV: &str = "CORRBANDIT_THREADS";

pub const DEFAULT_NOISE_GRID: [f64; 7] = [0.01, 0.1, 1.0, 10.0, 40.0, 60.0, 100.0];

/// Where payoff rows come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    /// Recorded series in the replay CSV layout.
    Replay { path: PathBuf },
    /// Two-stage Gaussian process; one episode of `length` rows per seed.
    Synthetic {
        theta: Vec<f64>,
        cov: Vec<Vec<f64>>,
        noise_var: f64,
        length: usize,
    },
    /// Generated daily series; one series per seed.
    Series(SeriesSpec),
}

/// Normalization reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldenMode {
    /// Best realized arm at every step.
    #[default]
    PerStep,
    /// Best single arm over the test window.
    BestFixedArm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub environment: EnvSpec,
    pub policies: Vec<PolicyKind>,
    #[serde(default = "default_chunks")]
    pub chunks: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_noise_grid")]
    pub noise_grid: Vec<f64>,
    /// Fixed noise variance for every policy; skips tuning when set.
    #[serde(default)]
    pub noise_var: Option<f64>,
    #[serde(default = "default_impressions")]
    pub impressions_per_step: u32,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub vi_cor: ViCorConfig,
    #[serde(default)]
    pub update_mode: UpdateMode,
    #[serde(default)]
    pub golden: GoldenMode,
    /// Worker count; falls back to `CORRBANDIT_THREADS`, then all cores.
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_chunks() -> usize {
    8
}
fn default_train_fraction() -> f64 {
    0.2
}
fn default_noise_grid() -> Vec<f64> {
    DEFAULT_NOISE_GRID.to_vec()
}
fn default_impressions() -> u32 {
    1
}
fn default_seeds() -> Vec<u64> {
    (0..32).collect()
}

impl ExperimentConfig {
    pub fn new(environment: EnvSpec, policies: Vec<PolicyKind>) -> Self {
        Self {
            name: default_name(),
            environment,
            policies,
            chunks: default_chunks(),
            train_fraction: default_train_fraction(),
            noise_grid: default_noise_grid(),
            noise_var: None,
            impressions_per_step: default_impressions(),
            seeds: default_seeds(),
            vi_cor: ViCorConfig::default(),
            update_mode: UpdateMode::default(),
            golden: GoldenMode::default(),
            threads: None,
        }
    }

    /// Reads a JSON config; a relative replay path is resolved against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let EnvSpec::Replay { path: data } = &mut cfg.environment {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.policies.is_empty() {
            return bad("at least one policy is required".into());
        }
        let unique: BTreeSet<_> = self.policies.iter().collect();
        if unique.len() != self.policies.len() {
            return bad("policies must not repeat".into());
        }
        if self.chunks == 0 {
            return bad("chunks must be >= 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} outside (0, 1)", self.train_fraction));
        }
        if self.noise_grid.is_empty() || self.noise_grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("noise_grid must be non-empty with positive values".into());
        }
        if let Some(v) = self.noise_var {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("noise_var {v} must be > 0"));
            }
        }
        if self.impressions_per_step == 0 {
            return bad("impressions_per_step must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be >= 1".into());
        }
        self.vi_cor.validate()?;
        match &self.environment {
            EnvSpec::Series(s) => s.validate()?,
            EnvSpec::Synthetic { theta, cov, noise_var, length } => {
                if theta.is_empty() || cov.len() != theta.len() || cov.iter().any(|r| r.len() != theta.len()) {
                    return bad("synthetic theta/cov dimensions disagree".into());
                }
                if noise_var.is_nan() || *noise_var <= 0.0 || *length == 0 {
                    return bad("synthetic noise_var must be > 0 and length >= 1".into());
                }
            }
            EnvSpec::Replay { .. } => {}
        }
        Ok(())
    }
}

/// Train and test row ranges of one chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChunkWindow {
    pub index: usize,
    pub train: Range<usize>,
    pub test: Range<usize>,
}

/// `chunks` overlapping windows of length `⌈2L/(C+1)⌉` spread over
/// `[0, L)`, the last ending at `L`; each split into a training head of
/// `⌈f·w⌉` rows and a test tail.
pub fn make_chunks(length: usize, chunks: usize, train_fraction: f64) -> Result<Vec<ChunkWindow>> {
    if chunks == 0 {
        return Err(Error::Config("chunks must be >= 1".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train_fraction {train_fraction} outside (0, 1)")));
    }
    if length < 2 * chunks {
        return Err(Error::Config(format!(
            "series of {length} rows is too short for {chunks} chunks"
        )));
    }
    let window = (2 * length).div_ceil(chunks + 1);
    let stride = if chunks > 1 { (length - window) / (chunks - 1) } else { 0 };
    let train = ((train_fraction * window as f64 - 1e-9).ceil() as usize).clamp(1, window - 1);
    Ok((0..chunks)
        .map(|i| {
            let start = if i + 1 == chunks { length - window } else { i * stride };
            ChunkWindow {
                index: i,
                train: start..start + train,
                test: start + train..start + window,
            }
        })
        .collect())
}

/// One policy run over one chunk's test rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub policy: PolicyKind,
    pub chunk: usize,
    pub seed: u64,
    pub noise_var: f64,
    pub payoffs: Vec<f64>,
    pub selections: Vec<usize>,
    pub cumulative: f64,
    pub golden_value: f64,
    /// `100 · cumulative / golden_value`.
    pub normalized_score: f64,
}

impl RunResult {
    pub fn cumulative_trace(&self) -> Vec<f64> {
        self.payoffs
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect()
    }

    pub fn selection_counts(&self, arms: usize) -> Vec<usize> {
        let mut c = vec![0; arms];
        for &s in &self.selections {
            c[s] += 1;
        }
        c
    }
}

/// Everything a single policy run needs besides the payoff rows.
#[derive(Debug, Clone, Copy)]
pub struct RunSettings {
    pub mode: UpdateMode,
    pub vi_cor: ViCorConfig,
}

/// Fits the prior on `train`, then plays `kind` through `test` row by row.
/// Returns the selected payoffs and arms.
pub fn run_policy(
    kind: PolicyKind,
    train: &DMatrix<f64>,
    test: &DMatrix<f64>,
    noise_var: f64,
    settings: RunSettings,
    rng: &mut SeedRng,
) -> Result<(Vec<f64>, Vec<usize>)> {
    if kind == PolicyKind::Golden {
        let (picks, _) = golden_trace(test)?;
        let payoffs = picks.iter().enumerate().map(|(t, &a)| test[(t, a)]).collect();
        return Ok((payoffs, picks));
    }
    let (theta, cov) = fit_prior(train)?;
    let prior = BeliefState::new(theta, cov, noise_var, settings.mode)?;
    let opts = PolicyOptions {
        vi_cor: settings.vi_cor,
        scaler: RewardScaler::from_values(train.iter().copied()),
    };
    let mut env = ReplayEnv::from_matrix(test.clone())?;
    run_episode(kind, &prior, &mut env, test.nrows(), &opts, rng)
}

/// Plays `horizon` steps of `kind` against `env` starting from `prior`,
/// folding every observation into the belief. Returns the selected payoffs
/// and arms.
pub fn run_episode(
    kind: PolicyKind,
    prior: &BeliefState,
    env: &mut dyn Environment,
    horizon: usize,
    opts: &PolicyOptions,
    rng: &mut SeedRng,
) -> Result<(Vec<f64>, Vec<usize>)> {
    if env.arms() != prior.arms() {
        return Err(Error::Config(format!(
            "belief has {} arms but the environment has {}",
            prior.arms(),
            env.arms()
        )));
    }
    let mut policy = build_policy(kind, prior.arms(), opts)?;
    let mut belief = prior.clone();
    let mut history = History::new();
    let mut payoffs = Vec::with_capacity(horizon);
    let mut selections = Vec::with_capacity(horizon);
    for step in 1..=horizon {
        let ctx = StepContext {
            prior,
            belief: &belief,
            history: &history,
            step,
            horizon,
        };
        let arm = checked_select(policy.as_mut(), &ctx, rng)?;
        let x = env.step(arm)?.selected_payoff;
        policy.observe(arm, x);
        history.push(arm, x)?;
        belief = correlated_update(&belief, arm, x)?;
        payoffs.push(x);
        selections.push(arm);
    }
    Ok((payoffs, selections))
}

/// Picks the noise variance from `grid` that maximizes the cumulative payoff
/// of `kind` on the last 20% of `train`, with the prior fit on the rest.
/// Ties go to the smaller value; fewer than 5 rows fall back to the median.
pub fn tune_noise(
    kind: PolicyKind,
    train: &DMatrix<f64>,
    grid: &[f64],
    settings: RunSettings,
    seed: u64,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Config("empty noise grid".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let rows = train.nrows();
    if rows < 5 {
        return Ok(sorted[(sorted.len() - 1) / 2]);
    }
    let validation = (0.2 * rows as f64 - 1e-9).ceil() as usize;
    let fit = train.rows(0, rows - validation).clone_owned();
    let held = train.rows(rows - validation, validation).clone_owned();
    let mut best = (f64::NEG_INFINITY, sorted[0]);
    for &noise in &sorted {
        let mut rng = SeedRng::seed_from_u64(seed);
        let (payoffs, _) = run_policy(kind, &fit, &held, noise, settings, &mut rng)?;
        let score: f64 = payoffs.iter().sum();
        if score > best.0 {
            best = (score, noise);
        }
    }
    Ok(best.1)
}

/// Payoff matrices for the configured environment, one per seed (a replay
/// is shared by all seeds).
pub struct Dataset {
    pub arm_names: Vec<String>,
    matrices: BTreeMap<u64, DMatrix<f64>>,
    shared: Option<DMatrix<f64>>,
}

impl Dataset {
    pub fn build(env: &EnvSpec, seeds: &[u64]) -> Result<Self> {
        match env {
            EnvSpec::Replay { path } => {
                let r = ReplayEnv::load(path)?;
                Ok(Self {
                    arm_names: r.arm_names().to_vec(),
                    matrices: BTreeMap::new(),
                    shared: Some(r.payoffs().clone()),
                })
            }
            EnvSpec::Synthetic { theta, cov, noise_var, length } => {
                let n = theta.len();
                let cov = DMatrix::from_fn(n, n, |i, j| cov[i][j]);
                let mut env = SyntheticEnv::new(DVector::from_column_slice(theta), cov, *noise_var)?;
                let matrices = seeds
                    .iter()
                    .map(|&s| Ok((s, env.generate(derive_seed(&[s, 0xda7a]), *length)?)))
                    .collect::<Result<_>>()?;
                Ok(Self {
                    arm_names: (0..n).map(|j| format!("arm{j}")).collect(),
                    matrices,
                    shared: None,
                })
            }
            EnvSpec::Series(spec) => {
                let matrices = seeds
                    .iter()
                    .map(|&s| Ok((s, spec.generate(derive_seed(&[s, 0xda7a]))?)))
                    .collect::<Result<_>>()?;
                Ok(Self {
                    arm_names: (0..spec.means.len()).map(|j| format!("arm{j}")).collect(),
                    matrices,
                    shared: None,
                })
            }
        }
    }

    pub fn is_replay(&self) -> bool {
        self.shared.is_some()
    }

    pub fn matrix(&self, seed: u64) -> &DMatrix<f64> {
        self.shared
            .as_ref()
            .or_else(|| self.matrices.get(&seed))
            .expect("dataset built for every configured seed")
    }

    pub fn length(&self) -> usize {
        match &self.shared {
            Some(m) => m.nrows(),
            None => self.matrices.values().next().map_or(0, DMatrix::nrows),
        }
    }
}

/// SplitMix64 over the parts, for per-run seed streams.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243f_6a88_85a3_08d3;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

fn policy_tag(kind: PolicyKind) -> u64 {
    PolicyKind::ALL.iter().position(|k| *k == kind).unwrap_or(0) as u64
}

struct Job {
    chunk: ChunkWindow,
    kind: PolicyKind,
    seed: u64,
}

/// Runs every chunk × policy × seed job of `cfg`.
///
/// On a replay only stochastic policies use every seed; deterministic
/// policies run once per chunk with the first seed. Output order is
/// (chunk, configured policy order, seed) regardless of scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let data = Dataset::build(&cfg.environment, &cfg.seeds)?;
    let windows = make_chunks(data.length(), cfg.chunks, cfg.train_fraction)?;
    let settings = RunSettings {
        mode: cfg.update_mode,
        vi_cor: cfg.vi_cor,
    };
    let mut jobs = Vec::new();
    for w in &windows {
        for &kind in &cfg.policies {
            let seeds: &[u64] = if data.is_replay() && !kind.is_stochastic() {
                &cfg.seeds[..1]
            } else {
                &cfg.seeds
            };
            for &seed in seeds {
                jobs.push(Job {
                    chunk: w.clone(),
                    kind,
                    seed,
                });
            }
        }
    }

    let run = |job: &Job| -> Result<RunResult> {
        let m = data.matrix(job.seed);
        let train = m.rows(job.chunk.train.start, job.chunk.train.len()).clone_owned();
        let test = m.rows(job.chunk.test.start, job.chunk.test.len()).clone_owned();
        let stream = derive_seed(&[job.seed, job.chunk.index as u64, policy_tag(job.kind)]);
        let noise_var = match cfg.noise_var {
            Some(v) => v,
            None if job.kind.uses_belief() => {
                tune_noise(job.kind, &train, &cfg.noise_grid, settings, stream)?
            }
            None => {
                let mut g = cfg.noise_grid.clone();
                g.sort_by(f64::total_cmp);
                g[(g.len() - 1) / 2]
            }
        };
        let mut rng = SeedRng::seed_from_u64(stream);
        let (payoffs, selections) = run_policy(job.kind, &train, &test, noise_var, settings, &mut rng)?;
        let golden_picks = match cfg.golden {
            GoldenMode::PerStep => golden_trace(&test)?.0,
            GoldenMode::BestFixedArm => best_fixed_arm_trace(&test)?.0,
        };
        let m_imp = f64::from(cfg.impressions_per_step);
        let payoffs: Vec<f64> = payoffs.into_iter().map(|p| p * m_imp).collect();
        let cumulative: f64 = payoffs.iter().sum();
        let golden_value: f64 = golden_picks.iter().enumerate().map(|(t, &a)| test[(t, a)] * m_imp).sum();
        if golden_value == 0.0 {
            return Err(Error::Comparability("golden cumulative payoff is zero".into()));
        }
        Ok(RunResult {
            policy: job.kind,
            chunk: job.chunk.index,
            seed: job.seed,
            noise_var,
            payoffs,
            selections,
            cumulative,
            golden_value,
            normalized_score: cumulative / golden_value * 100.0,
        })
    };

    let threads = cfg.threads.or_else(threads_from_env).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let mut results: Vec<RunResult> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                run(job).map_err(|e| Error::InChunk {
                    chunk: job.chunk.index,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let order = |k: PolicyKind| cfg.policies.iter().position(|p| *p == k).unwrap_or(usize::MAX);
    results.sort_by_key(|r| (r.chunk, order(r.policy), r.seed));
    Ok(results)
}

fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    /// Mean over chunks of the per-chunk mean normalized score.
    pub mean_normalized: f64,
    pub mean_cumulative: f64,
    pub chunk_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairTest {
    pub first: PolicyKind,
    pub second: PolicyKind,
    /// Mean over chunks of `first - second` normalized score.
    pub mean_difference: f64,
    pub p_value: Option<f64>,
    pub significant: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub chunks: Vec<usize>,
    /// Policies by mean normalized score, best first.
    pub ranking: Vec<PolicySummary>,
    /// Best against second best.
    pub headline: PairTest,
    pub pairs: Vec<PairTest>,
}

pub const SIGNIFICANCE: f64 = 0.05;

/// Ranks policies by mean normalized score and tests best against second
/// best (and every other pair) with the paired signed-rank test over chunks.
pub fn compare_policies(results: &[RunResult]) -> Result<ComparisonTable> {
    let mut by_policy: BTreeMap<PolicyKind, BTreeMap<usize, Vec<&RunResult>>> = BTreeMap::new();
    for r in results {
        by_policy.entry(r.policy).or_default().entry(r.chunk).or_default().push(r);
    }
    if by_policy.len() < 2 {
        return Err(Error::Comparability(format!(
            "need at least 2 policies, found {}",
            by_policy.len()
        )));
    }
    let chunks: Vec<usize> = by_policy.values().next().expect("non-empty").keys().copied().collect();
    for (kind, per_chunk) in &by_policy {
        if per_chunk.keys().copied().collect::<Vec<_>>() != chunks {
            return Err(Error::Comparability(format!(
                "policy {kind} covers a different chunk set"
            )));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut ranking: Vec<PolicySummary> = by_policy
        .iter()
        .map(|(&policy, per_chunk)| {
            let chunk_scores: Vec<f64> = per_chunk
                .values()
                .map(|runs| mean(&runs.iter().map(|r| r.normalized_score).collect::<Vec<_>>()))
                .collect();
            let cum: Vec<f64> = per_chunk
                .values()
                .map(|runs| mean(&runs.iter().map(|r| r.cumulative).collect::<Vec<_>>()))
                .collect();
            PolicySummary {
                policy,
                mean_normalized: mean(&chunk_scores),
                mean_cumulative: mean(&cum),
                chunk_scores,
            }
        })
        .collect();
    ranking.sort_by(|a, b| {
        b.mean_normalized
            .total_cmp(&a.mean_normalized)
            .then(a.policy.cmp(&b.policy))
    });

    let pair = |a: &PolicySummary, b: &PolicySummary| {
        let paired: Vec<(f64, f64)> = a
            .chunk_scores
            .iter()
            .copied()
            .zip(b.chunk_scores.iter().copied())
            .collect();
        let mean_difference = mean(&paired.iter().map(|(x, y)| x - y).collect::<Vec<_>>());
        let (p_value, note) = match wilcoxon_signed_rank(&paired) {
            Ok(p) => (Some(p), None),
            Err(e) => (None, Some(e.to_string())),
        };
        PairTest {
            first: a.policy,
            second: b.policy,
            mean_difference,
            p_value,
            significant: p_value.is_some_and(|p| p < SIGNIFICANCE),
            note,
        }
    };
    let headline = pair(&ranking[0], &ranking[1]);
    let mut pairs = Vec::new();
    for i in 0..ranking.len() {
        for j in (i + 1)..ranking.len() {
            pairs.push(pair(&ranking[i], &ranking[j]));
        }
    }
    Ok(ComparisonTable {
        chunks,
        ranking,
        headline,
        pairs,
    })
}

impl ComparisonTable {
    pub fn summary(&self, a: PolicyKind) -> Option<&PolicySummary> {
        self.ranking.iter().find(|s| s.policy == a)
    }

    /// The paired test of `a` against `b`, oriented as `a - b`.
    pub fn pair(&self, a: PolicyKind, b: PolicyKind) -> Option<PairTest> {
        self.pairs.iter().find_map(|p| {
            if p.first == a && p.second == b {
                Some(p.clone())
            } else if p.first == b && p.second == a {
                Some(PairTest {
                    first: a,
                    second: b,
                    mean_difference: -p.mean_difference,
                    ..p.clone()
                })
            } else {
                None
            }
        })
    }
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    name: &'a str,
    runs: usize,
    comparison: Option<&'a ComparisonTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison_error: Option<String>,
}

pub const RESULTS_HEADER: &str =
    "policy,chunk,seed,noise_var,steps,cumulative,golden_value,normalized_score,selection_counts";
pub const TRACES_HEADER: &str = "policy,chunk,seed,step,payoff,cumulative,selection";
pub const PLOT_HEADER: &str = "step,mean_cumulative,runs";

/// Writes `results.csv`, `traces.csv`, `summary.json` and
/// `plotdata/<policy>.csv` under `dir`. Output is a pure function of
/// `results`.
pub fn emit(name: &str, results: &[RunResult], arms: usize, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("plotdata")).map_err(|e| Error::io(dir, e))?;
    let write = |rel: &str, body: String| {
        let p = dir.join(rel);
        fs::write(&p, body).map_err(|e| Error::io(p, e))
    };

    let mut res = String::from(RESULTS_HEADER);
    res.push('\n');
    let mut traces = String::from(TRACES_HEADER);
    traces.push('\n');
    for r in results {
        let counts: Vec<String> = r.selection_counts(arms).iter().map(ToString::to_string).collect();
        let _ = writeln!(
            res,
            "{},{},{},{},{},{},{},{},{}",
            r.policy,
            r.chunk,
            r.seed,
            r.noise_var,
            r.payoffs.len(),
            r.cumulative,
            r.golden_value,
            r.normalized_score,
            counts.join(";")
        );
        for (step, (cum, (p, s))) in r
            .cumulative_trace()
            .iter()
            .zip(r.payoffs.iter().zip(&r.selections))
            .enumerate()
        {
            let _ = writeln!(traces, "{},{},{},{},{},{},{}", r.policy, r.chunk, r.seed, step + 1, p, cum, s);
        }
    }
    write("results.csv", res)?;
    write("traces.csv", traces)?;

    let mut by_policy: BTreeMap<PolicyKind, Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        by_policy.entry(r.policy).or_default().push(r);
    }
    for (kind, runs) in &by_policy {
        let longest = runs.iter().map(|r| r.payoffs.len()).max().unwrap_or(0);
        let mut sums = vec![0.0; longest];
        let mut counts = vec![0usize; longest];
        for r in runs {
            for (k, c) in r.cumulative_trace().into_iter().enumerate() {
                sums[k] += c;
                counts[k] += 1;
            }
        }
        let mut body = String::from(PLOT_HEADER);
        body.push('\n');
        for k in 0..longest {
            let _ = writeln!(body, "{},{},{}", k + 1, sums[k] / counts[k] as f64, counts[k]);
        }
        write(&format!("plotdata/{kind}.csv"), body)?;
    }

    let (comparison, comparison_error) = match compare_policies(results) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let summary = SummaryFile {
        name,
        runs: results.len(),
        comparison: comparison.as_ref(),
        comparison_error,
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    write("summary.json", json)
}

/// Loads, runs and writes a full experiment. Returns the results.
pub fn run_and_emit(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<RunResult>> {
    let results = run_experiment(cfg)?;
    let arms = Dataset::build(&cfg.environment, &cfg.seeds[..1])?.arm_names.len();
    emit(&cfg.name, &results, arms, dir)?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_at_reference_scale() {
        let c = make_chunks(150, 8, 0.2).unwrap();
        assert_eq!(c.len(), 8);
        for w in &c {
            assert_eq!(w.train.len(), 7);
            assert_eq!(w.test.len(), 27);
        }
        let starts: Vec<usize> = c.iter().map(|w| w.train.start).collect();
        assert_eq!(starts, vec![0, 16, 32, 48, 64, 80, 96, 116]);
        assert_eq!(c.last().unwrap().test.end, 150);
    }

    #[test]
    fn single_chunk_covers_all() {
        let c = make_chunks(40, 1, 0.2).unwrap();
        assert_eq!(c[0].train, 0..8);
        assert_eq!(c[0].test, 8..40);
    }

    #[test]
    fn chunk_errors() {
        assert!(make_chunks(15, 8, 0.2).is_err());
        assert!(make_chunks(100, 0, 0.2).is_err());
        assert!(make_chunks(100, 2, 1.0).is_err());
    }

    #[test]
    fn fraction_rounding_is_stable() {
        // 0.2 * 35 is 7.000000000000001 in binary
        let c = make_chunks(35, 1, 0.2).unwrap();
        assert_eq!(c[0].train.len(), 7);
    }

    #[test]
    fn seeds_differ() {
        assert_ne!(derive_seed(&[1, 2]), derive_seed(&[2, 1]));
        assert_eq!(derive_seed(&[7]), derive_seed(&[7]));
    }

    #[test]
    fn config_defaults_and_validation() {
        let json = r#"{"environment": {"kind": "replay", "path": "x.csv"}, "policies": ["myopic", "vi-cor"]}"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.chunks, 8);
        assert_eq!(cfg.train_fraction, 0.2);
        assert_eq!(cfg.seeds.len(), 32);
        assert_eq!(cfg.noise_grid, DEFAULT_NOISE_GRID.to_vec());
        assert_eq!(cfg.vi_cor.samples, 64);
        assert_eq!(cfg.vi_cor.depth, 2);
        cfg.validate().unwrap();
        let mut bad = cfg.clone();
        bad.train_fraction = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.noise_grid = vec![1.0, -1.0];
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.policies = vec![PolicyKind::Myopic, PolicyKind::Myopic];
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"environment": {"kind": "replay", "path": "x"}, "policies": [], "bogus": 1}"#).is_err());
    }
}
