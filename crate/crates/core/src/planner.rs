//! Exact value iteration for horizons one and two.
//!
//! After observing `x` on the first arm every posterior mean is affine in
//! `x`, so the second-step choice is the upper envelope of `N` lines. The
//! two-step value integrates each envelope segment in closed form.

use serde::{Deserialize, Serialize};

use crate::belief::BeliefState;
use crate::error::{check_arm, Error, Result};
use crate::gaussian::{interval_mass, partial_first_moment, GaussianParams, Interval};

/// Distribution assumed for the pending first-step observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationDensity {
    /// `N(θ_i, Σ_ii)`: the current belief about the arm's true payoff.
    /// Reproduces the published two-arm example values.
    #[default]
    Belief,
    /// `N(θ_i, Σ_ii + σ₀²)`: the Bayesian predictive of the next payoff.
    Predictive,
}

impl ObservationDensity {
    pub fn variance(self, b: &BeliefState, arm: usize) -> f64 {
        match self {
            ObservationDensity::Belief => b.variance(arm),
            ObservationDensity::Predictive => b.variance(arm) + b.noise_var(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominanceRegion {
    pub arm: usize,
    pub interval: Interval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepPolicy {
    pub first_arm: usize,
    /// Second-step rule, conditioned on the first observation.
    pub regions: Vec<DominanceRegion>,
    pub value: f64,
    /// Value of committing to each first arm.
    pub branch_values: Vec<f64>,
}

impl TwoStepPolicy {
    pub fn second_arm(&self, x: f64) -> usize {
        region_owner(&self.regions, x)
    }
}

/// Owner of `x` among ordered, contiguous regions; breakpoints go left.
pub fn region_owner(regions: &[DominanceRegion], x: f64) -> usize {
    regions
        .iter()
        .find(|r| x <= r.interval.upper)
        .or(regions.last())
        .map(|r| r.arm)
        .expect("decomposition is never empty")
}

/// One-step optimum: the largest mean, lowest index on ties.
pub fn value_t1(b: &BeliefState) -> Result<(f64, usize)> {
    argmax(b.theta().as_slice())
        .map(|arm| (b.theta()[arm], arm))
        .ok_or_else(|| Error::Domain("empty belief".into()))
}

pub(crate) fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if v <= values[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Upper envelope of the posterior-mean lines after observing `selected`,
/// as maximal intervals ordered from `-∞` to `+∞`. Arms that never attain
/// the maximum are omitted.
pub fn dominance_regions(b: &BeliefState, selected: usize) -> Result<Vec<DominanceRegion>> {
    let lines = b.posterior_lines(selected)?;
    Ok(upper_envelope(&lines))
}

/// Envelope of `intercept + slope * x` lines by sorting on slope and
/// discarding lines that are never strictly on top.
pub fn upper_envelope(lines: &[(f64, f64)]) -> Vec<DominanceRegion> {
    let mut order: Vec<usize> = (0..lines.len()).collect();
    // slope ascending; among equal slopes the winner (largest intercept,
    // then lowest index) comes first
    order.sort_by(|&a, &b| {
        lines[a]
            .1
            .total_cmp(&lines[b].1)
            .then(lines[b].0.total_cmp(&lines[a].0))
            .then(a.cmp(&b))
    });
    order.dedup_by(|later, earlier| lines[*later].1 == lines[*earlier].1);

    let cross = |i: usize, j: usize| (lines[i].0 - lines[j].0) / (lines[j].1 - lines[i].1);
    let mut hull: Vec<usize> = Vec::with_capacity(order.len());
    for &line in &order {
        while let Some(&top) = hull.last() {
            let start = if hull.len() >= 2 {
                cross(hull[hull.len() - 2], top)
            } else {
                f64::NEG_INFINITY
            };
            // `top` holds the max only on [start, cross(top, line)]
            if cross(top, line) <= start {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(line);
    }

    let mut regions = Vec::with_capacity(hull.len());
    let mut lower = f64::NEG_INFINITY;
    for (k, &arm) in hull.iter().enumerate() {
        let upper = hull.get(k + 1).map_or(f64::INFINITY, |&next| cross(arm, next));
        regions.push(DominanceRegion {
            arm,
            interval: Interval { lower, upper },
        });
        lower = upper;
    }
    regions
}

/// Two-step value of playing `first` now and the best arm next:
/// `θ_first + Σ_regions [a_j (Φ(n) - Φ(m)) + b_j ∫_m^n x p(x) dx]`.
pub fn value_t2_branch(
    b: &BeliefState,
    first: usize,
    density: ObservationDensity,
) -> Result<(f64, Vec<DominanceRegion>)> {
    check_arm(first, b.arms())?;
    let lines = b.posterior_lines(first)?;
    let regions = upper_envelope(&lines);
    let mean = b.theta()[first];
    let variance = density.variance(b, first);
    let expected_next = if variance > 0.0 {
        let p = GaussianParams::new(mean, variance)?;
        regions.iter().try_fold(0.0, |acc, r| {
            let (intercept, slope) = lines[r.arm];
            Ok::<_, Error>(
                acc + intercept * interval_mass(r.interval, p)?
                    + slope * partial_first_moment(r.interval, p)?,
            )
        })?
    } else {
        // a point mass at the mean leaves every posterior mean unchanged
        b.theta().max()
    };
    Ok((mean + expected_next, regions))
}

/// Optimal two-step plan: the best first arm and its second-step rule.
pub fn value_t2(b: &BeliefState, density: ObservationDensity) -> Result<TwoStepPolicy> {
    let branches = (0..b.arms())
        .map(|i| value_t2_branch(b, i, density))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = branches.iter().map(|(v, _)| *v).collect();
    let first_arm = argmax(&values).ok_or_else(|| Error::Domain("empty belief".into()))?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invariant("non-finite two-step value".into()));
    }
    let (value, regions) = branches.into_iter().nth(first_arm).expect("index in range");
    Ok(TwoStepPolicy {
        first_arm,
        regions,
        value,
        branch_values: values,
    })
}

/// Result of [`plan`]: the exact value and the first arm to play.
#[derive(Debug, Clone, PartialEq)]
pub enum ExactPlan {
    OneStep { value: f64, arm: usize },
    TwoStep(TwoStepPolicy),
}

pub fn plan(b: &BeliefState, horizon: usize, density: ObservationDensity) -> Result<ExactPlan> {
    match horizon {
        1 => value_t1(b).map(|(value, arm)| ExactPlan::OneStep { value, arm }),
        2 => value_t2(b, density).map(ExactPlan::TwoStep),
        h => Err(Error::HorizonUnsupported(h)),
    }
}
