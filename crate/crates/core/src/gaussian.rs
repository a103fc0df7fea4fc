//! Scalar Gaussian primitives, multivariate sampling, prior estimation and
//! the Wilcoxon signed-rank test used by the experiment harness.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};

/// Seedable generator used everywhere randomness is needed.
pub type SeedRng = ChaCha8Rng;

/// Weight of the diagonal target in [`fit_prior`] shrinkage.
pub const SHRINKAGE: f64 = 0.1;
/// Relative diagonal jitter added by [`fit_prior`], scaled by `trace / dim`.
pub const JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianParams {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() || !variance.is_finite() || variance < 0.0 {
            return Err(Error::Domain(format!(
                "gaussian requires finite mean and variance >= 0, got N({mean}, {variance})"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    fn nondegenerate(&self) -> Result<f64> {
        if self.variance > 0.0 && self.variance.is_finite() && self.mean.is_finite() {
            Ok(self.variance.sqrt())
        } else {
            Err(Error::Domain(format!(
                "degenerate gaussian N({}, {})",
                self.mean, self.variance
            )))
        }
    }
}

/// Closed interval over the extended real line. Endpoints may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(Error::Domain(format!("invalid interval [{lower}, {upper}]")));
        }
        Ok(Self { lower, upper })
    }

    pub fn real_line() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn is_empty(&self) -> bool {
        self.lower >= self.upper
    }
}

pub fn normal_pdf(x: f64, p: GaussianParams) -> Result<f64> {
    let sd = p.nondegenerate()?;
    if !x.is_finite() {
        return Err(Error::Domain(format!("pdf evaluated at non-finite x={x}")));
    }
    Ok(std_pdf((x - p.mean) / sd) / sd)
}

pub fn normal_cdf(x: f64, p: GaussianParams) -> Result<f64> {
    let sd = p.nondegenerate()?;
    if x.is_nan() {
        return Err(Error::Domain("cdf evaluated at NaN".into()));
    }
    Ok(std_cdf((x - p.mean) / sd))
}

/// `∫ x p(x) dx` over `iv` for the Gaussian `p`, in closed form:
/// `mean * (Φ(n) - Φ(m)) - variance * (p(n) - p(m))`.
pub fn partial_first_moment(iv: Interval, p: GaussianParams) -> Result<f64> {
    let sd = p.nondegenerate()?;
    if iv.lower.is_nan() || iv.upper.is_nan() || iv.lower > iv.upper {
        return Err(Error::Domain(format!(
            "invalid interval [{}, {}]",
            iv.lower, iv.upper
        )));
    }
    if iv.lower == iv.upper {
        return Ok(0.0);
    }
    let zl = (iv.lower - p.mean) / sd;
    let zu = (iv.upper - p.mean) / sd;
    let mass = std_mass(zl, zu);
    // variance * (pdf(m) - pdf(n)) with pdf = std_pdf(z) / sd
    let tilt = sd * (std_pdf(zl) - std_pdf(zu));
    Ok(p.mean * mass + tilt)
}

/// Probability mass of `iv` under `p`, computed without tail cancellation.
pub fn interval_mass(iv: Interval, p: GaussianParams) -> Result<f64> {
    let sd = p.nondegenerate()?;
    if iv.lower > iv.upper {
        return Err(Error::Domain(format!(
            "invalid interval [{}, {}]",
            iv.lower, iv.upper
        )));
    }
    Ok(std_mass((iv.lower - p.mean) / sd, (iv.upper - p.mean) / sd))
}

pub(crate) fn std_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
    }
}

/// Upper tail `1 - Φ(z)`.
fn std_sf(z: f64) -> f64 {
    if z == f64::INFINITY {
        0.0
    } else if z == f64::NEG_INFINITY {
        1.0
    } else {
        0.5 * erfc(z * FRAC_1_SQRT_2)
    }
}

pub(crate) fn std_cdf(z: f64) -> f64 {
    std_sf(-z)
}

fn std_mass(zl: f64, zu: f64) -> f64 {
    if zl >= 0.0 {
        std_sf(zl) - std_sf(zu)
    } else if zu <= 0.0 {
        std_cdf(zu) - std_cdf(zl)
    } else {
        1.0 - std_sf(zu) - std_cdf(zl)
    }
}

/// Draws from `N(mean, cov)` via a precomputed square-root factor.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl MvnSampler {
    /// Builds the factor by Cholesky, falling back to a clipped symmetric
    /// eigendecomposition for semidefinite inputs (e.g. the zero matrix).
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Domain(format!(
                "covariance is {}x{}, mean has length {n}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite mean or covariance".into()));
        }
        let scale = cov.diagonal().iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
        let asym = (cov - cov.transpose()).amax();
        if asym > 1e-9 * scale.max(1.0) {
            return Err(Error::Factorization(format!(
                "covariance not symmetric (max asymmetry {asym:e})"
            )));
        }
        let sym = (cov + cov.transpose()) * 0.5;
        if let Some(chol) = sym.clone().cholesky() {
            return Ok(Self {
                mean,
                factor: chol.l(),
            });
        }
        let eig = SymmetricEigen::new(sym);
        let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
        let mut roots = DVector::zeros(n);
        for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda < -tol {
                return Err(Error::Factorization(format!(
                    "covariance has negative eigenvalue {lambda:e}"
                )));
            }
            roots[i] = lambda.max(0.0).sqrt();
        }
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        Ok(Self { mean, factor })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        &self.mean + &self.factor * z
    }
}

/// `count` draws from `N(mean, cov)`, one per row. Deterministic in `seed`.
pub fn sample_mvn(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    count: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let sampler = MvnSampler::new(mean.clone(), cov)?;
    let mut rng = SeedRng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(count, mean.len());
    for r in 0..count {
        let s = sampler.sample(&mut rng);
        out.row_mut(r).copy_from(&s.transpose());
    }
    Ok(out)
}

/// Sample mean and a shrunk, jittered sample covariance of `samples`
/// (rows are time steps, columns are arms).
///
/// The covariance is `(1 - λ) S + λ diag(S)` plus `ε · trace / dim` on the
/// diagonal, so it is positive definite for any finite input.
pub fn fit_prior(samples: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let rows = samples.nrows();
    let dim = samples.ncols();
    if rows < 2 {
        return Err(Error::InsufficientData(format!(
            "prior estimation needs at least 2 rows, got {rows}"
        )));
    }
    if dim == 0 {
        return Err(Error::InsufficientData("prior estimation needs at least 1 arm".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite sample".into()));
    }
    let mean = samples.row_mean().transpose();
    let mut centered = samples.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let sample_cov = centered.transpose() * &centered / (rows as f64 - 1.0);

    let mut cov = sample_cov.clone() * (1.0 - SHRINKAGE);
    for i in 0..dim {
        cov[(i, i)] = sample_cov[(i, i)];
    }
    let avg_var = sample_cov.trace() / dim as f64;
    // All-constant input has zero trace; fall back to an absolute floor.
    let mut jitter = if avg_var > 0.0 { JITTER * avg_var } else { JITTER };
    for _ in 0..8 {
        let mut candidate = cov.clone();
        for i in 0..dim {
            candidate[(i, i)] += jitter;
        }
        if candidate.clone().cholesky().is_some() {
            return Ok((mean, candidate));
        }
        jitter *= 100.0;
    }
    Err(Error::Factorization(
        "shrunk sample covariance is not positive definite".into(),
    ))
}

/// Largest sample size for which the exact null distribution is enumerated.
pub const WILCOXON_EXACT_MAX: usize = 25;

/// Two-sided p-value of the Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped and tied magnitudes share their average rank.
/// Up to [`WILCOXON_EXACT_MAX`] non-zero pairs the null distribution of the
/// positive rank sum is enumerated exactly; above that a normal approximation
/// with tie and continuity corrections is used.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::Domain("non-finite value in paired sample".into()));
    }
    let diffs: Vec<f64> = pairs
        .iter()
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(Error::UndefinedTest(
            "all paired differences are zero".into(),
        ));
    }
    if diffs.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "signed-rank test needs at least 5 non-tied pairs, got {}",
            diffs.len()
        )));
    }
    let n = diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diffs[a].abs().total_cmp(&diffs[b].abs()));

    // Doubled ranks keep average ranks integral.
    let mut rank2 = vec![0u64; n];
    let mut tie_groups = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        // ranks i+1..=j+1 averaged, doubled: (i+1)+(j+1)
        let r2 = (i + j + 2) as u64;
        for k in i..=j {
            rank2[order[k]] = r2;
        }
        tie_groups.push(j - i + 1);
        i = j + 1;
    }
    let w2_plus: u64 = (0..n).filter(|&k| diffs[k] > 0.0).map(|k| rank2[k]).sum();

    let p = if n <= WILCOXON_EXACT_MAX {
        let total: u64 = rank2.iter().sum();
        let mut counts = vec![0.0f64; total as usize + 1];
        counts[0] = 1.0;
        let mut reach = 0usize;
        for &r in &rank2 {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] != 0.0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let all = 2f64.powi(n as i32);
        let w = w2_plus as usize;
        let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
        let upper: f64 = counts[w..].iter().sum::<f64>() / all;
        (2.0 * lower.min(upper)).min(1.0)
    } else {
        let nf = n as f64;
        let w = w2_plus as f64 / 2.0;
        let center = nf * (nf + 1.0) / 4.0;
        let ties: f64 = tie_groups
            .iter()
            .map(|&t| {
                let t = t as f64;
                t * t * t - t
            })
            .sum();
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
        let z = ((w - center).abs() - 0.5).max(0.0) / var.sqrt();
        (2.0 * std_sf(z)).min(1.0)
    };
    Ok(p)
}
