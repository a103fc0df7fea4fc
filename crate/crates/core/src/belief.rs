//! Gaussian belief over the hidden payoff vector and its update rules.
//!
//! Observing payoff `x` on arm `s` moves every arm's mean along its
//! covariance with `s`:
//!
//! ```text
//! θ'_j  = θ_j + Σ_sj (x - θ_s) / (Σ_ss + σ₀²)
//! Σ'_jj = Σ_jj - Σ_sj² / (Σ_ss + σ₀²)
//! ```
//!
//! For `j = s` this is the ordinary conjugate self update. What happens to
//! the off-diagonal entries is selected by [`UpdateMode`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_arm, Error, Result};
use crate::gaussian::GaussianParams;

/// Treatment of cross-covariances after an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Means and variances only; off-diagonal entries keep their prior values.
    ///
    /// Repeated observations can drive a variance negative when the frozen
    /// cross-covariances exceed what the shrinking variances allow; such an
    /// update fails with [`Error::Degenerate`].
    DiagonalOnly,
    /// Full rank-one posterior `Σ' = Σ - c cᵀ / (Σ_ss + σ₀²)`, `c = Σ e_s`.
    #[default]
    JointGaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    theta: DVector<f64>,
    cov: DMatrix<f64>,
    noise_var: f64,
    mode: UpdateMode,
}

const SYMMETRY_TOL: f64 = 1e-12;

impl BeliefState {
    pub fn new(
        theta: DVector<f64>,
        cov: DMatrix<f64>,
        noise_var: f64,
        mode: UpdateMode,
    ) -> Result<Self> {
        let n = theta.len();
        if n == 0 {
            return Err(Error::Domain("belief needs at least one arm".into()));
        }
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Domain(format!(
                "covariance is {}x{} for {n} arms",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::Domain(format!("noise variance must be > 0, got {noise_var}")));
        }
        if theta.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("belief entries must be finite".into()));
        }
        let scale = cov.diagonal().amax().max(1.0);
        for i in 0..n {
            if cov[(i, i)] < 0.0 {
                return Err(Error::Domain(format!("negative variance {} on arm {i}", cov[(i, i)])));
            }
            for j in (i + 1)..n {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::Domain(format!("covariance not symmetric at ({i},{j})")));
                }
                let bound = (cov[(i, i)] * cov[(j, j)]).sqrt();
                if cov[(i, j)].abs() > bound * (1.0 + 1e-9) + SYMMETRY_TOL * scale {
                    return Err(Error::Domain(format!(
                        "covariance ({i},{j}) = {} exceeds Cauchy-Schwarz bound {bound}",
                        cov[(i, j)]
                    )));
                }
            }
        }
        Ok(Self {
            theta,
            cov,
            noise_var,
            mode,
        })
    }

    pub fn from_rows(
        theta: &[f64],
        cov: &[&[f64]],
        noise_var: f64,
        mode: UpdateMode,
    ) -> Result<Self> {
        let n = theta.len();
        if cov.len() != n || cov.iter().any(|r| r.len() != n) {
            return Err(Error::Domain("covariance rows do not match theta".into()));
        }
        let m = DMatrix::from_fn(n, n, |i, j| cov[i][j]);
        Self::new(DVector::from_column_slice(theta), m, noise_var, mode)
    }

    pub fn arms(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn variance(&self, arm: usize) -> f64 {
        self.cov[(arm, arm)]
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn mode(&self) -> UpdateMode {
        self.mode
    }

    pub fn with_noise_var(&self, noise_var: f64) -> Result<Self> {
        Self::new(self.theta.clone(), self.cov.clone(), noise_var, self.mode)
    }

    pub fn with_mode(&self, mode: UpdateMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    /// Posterior mean of every arm as an affine function of a pending
    /// observation on `selected`: `θ'_j(x) = intercept_j + slope_j · x`.
    pub fn posterior_lines(&self, selected: usize) -> Result<Vec<(f64, f64)>> {
        check_arm(selected, self.arms())?;
        let denom = self.cov[(selected, selected)] + self.noise_var;
        let base = self.theta[selected];
        Ok((0..self.arms())
            .map(|j| {
                let slope = self.cov[(selected, j)] / denom;
                (self.theta[j] - slope * base, slope)
            })
            .collect())
    }
}

/// Conjugate update of the observed arm alone; every other entry is untouched.
pub fn self_update(b: &BeliefState, arm: usize, x: f64) -> Result<BeliefState> {
    check_arm(arm, b.arms())?;
    check_payoff(x)?;
    let var = b.cov[(arm, arm)];
    let denom = var + b.noise_var;
    let mut out = b.clone();
    out.theta[arm] = (var * x + b.noise_var * b.theta[arm]) / denom;
    out.cov[(arm, arm)] = var * b.noise_var / denom;
    Ok(out)
}

/// Updates every arm after observing payoff `x` on `selected`.
pub fn correlated_update(b: &BeliefState, selected: usize, x: f64) -> Result<BeliefState> {
    check_arm(selected, b.arms())?;
    check_payoff(x)?;
    let n = b.arms();
    let denom = b.cov[(selected, selected)] + b.noise_var;
    let residual = x - b.theta[selected];
    let c = b.cov.column(selected).clone_owned();
    let mut out = b.clone();
    out.theta.axpy(residual / denom, &c, 1.0);
    match b.mode {
        UpdateMode::DiagonalOnly => {
            for j in 0..n {
                out.cov[(j, j)] = b.cov[(j, j)] - c[j] * c[j] / denom;
            }
        }
        UpdateMode::JointGaussian => {
            out.cov.ger(-1.0 / denom, &c, &c, 1.0);
            // keep exact symmetry against rounding in the rank-one update
            for i in 0..n {
                for j in (i + 1)..n {
                    let v = 0.5 * (out.cov[(i, j)] + out.cov[(j, i)]);
                    out.cov[(i, j)] = v;
                    out.cov[(j, i)] = v;
                }
            }
        }
    }
    // the selected variance in closed form avoids cancellation
    let var_s = b.cov[(selected, selected)];
    out.cov[(selected, selected)] = var_s * b.noise_var / denom;
    for j in 0..n {
        let before = b.cov[(j, j)];
        let after = out.cov[(j, j)];
        if after < 0.0 || (after == 0.0 && before > 0.0) || !after.is_finite() {
            return Err(Error::Degenerate(format!(
                "variance of arm {j} would become {after} after observing arm {selected}"
            )));
        }
    }
    Ok(out)
}

/// Predictive distribution of the next payoff on `arm`: `N(θ_a, Σ_aa + σ₀²)`.
pub fn predictive(b: &BeliefState, arm: usize) -> Result<GaussianParams> {
    check_arm(arm, b.arms())?;
    GaussianParams::new(b.theta[arm], b.cov[(arm, arm)] + b.noise_var)
}

/// Folds [`correlated_update`] over `history` starting from `prior`.
pub fn replay(prior: &BeliefState, history: &History) -> Result<BeliefState> {
    history
        .steps()
        .iter()
        .try_fold(prior.clone(), |b, obs| correlated_update(&b, obs.arm, obs.payoff))
}

fn check_payoff(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("non-finite payoff {x}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub arm: usize,
    pub payoff: f64,
}

/// Selected arms and observed payoffs, oldest first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    steps: Vec<Observation>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_steps(steps: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut h = Self::new();
        for (arm, payoff) in steps {
            h.push(arm, payoff)?;
        }
        Ok(h)
    }

    pub fn push(&mut self, arm: usize, payoff: f64) -> Result<()> {
        check_payoff(payoff)?;
        self.steps.push(Observation { arm, payoff });
        Ok(())
    }

    pub fn steps(&self) -> &[Observation] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Checks every recorded arm against `arms`.
    pub fn validate(&self, arms: usize) -> Result<()> {
        self.steps.iter().try_for_each(|o| check_arm(o.arm, arms))
    }
}

#[derive(Serialize, Deserialize)]
struct BeliefRepr {
    theta: Vec<f64>,
    cov: Vec<Vec<f64>>,
    noise_var: f64,
    #[serde(default)]
    mode: UpdateMode,
}

impl Serialize for BeliefState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.arms();
        BeliefRepr {
            theta: self.theta.iter().copied().collect(),
            cov: (0..n)
                .map(|i| (0..n).map(|j| self.cov[(i, j)]).collect())
                .collect(),
            noise_var: self.noise_var,
            mode: self.mode,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BeliefState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = BeliefRepr::deserialize(d)?;
        let rows: Vec<&[f64]> = r.cov.iter().map(Vec::as_slice).collect();
        BeliefState::from_rows(&r.theta, &rows, r.noise_var, r.mode)
            .map_err(serde::de::Error::custom)
    }
}

/// The two-arm example belief: `θ = [1, 0.95]`, `Σ = [[10, 0.2], [0.2, 50]]`, `σ₀² = 0.1`.
pub fn toy_belief(mode: UpdateMode) -> BeliefState {
    BeliefState::from_rows(&[1.0, 0.95], &[&[10.0, 0.2], &[0.2, 50.0]], 0.1, mode)
        .expect("toy belief is valid")
}
