//! Payoff generators: the two-stage Gaussian process, generated daily
//! series, and replay of recorded series.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_arm, Error, Result};
use crate::gaussian::{MvnSampler, SeedRng};

/// Payoffs of one step. Every arm's payoff is realized regardless of the choice.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub selected_payoff: f64,
    pub row: DVector<f64>,
}

pub trait Environment {
    fn arms(&self) -> usize;
    fn step(&mut self, arm: usize) -> Result<StepOutcome>;
}

/// Hidden `μ ~ N(θ, Σ)` drawn once per episode, then `X ~ N(μ, σ² I)` each step.
#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    true_theta: DVector<f64>,
    true_cov: DMatrix<f64>,
    noise_var: f64,
    hidden: MvnSampler,
    mu: Option<DVector<f64>>,
    rng: SeedRng,
}

impl SyntheticEnv {
    pub fn new(true_theta: DVector<f64>, true_cov: DMatrix<f64>, noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::Domain(format!("noise variance must be > 0, got {noise_var}")));
        }
        let hidden = MvnSampler::new(true_theta.clone(), &true_cov)?;
        Ok(Self {
            true_theta,
            true_cov,
            noise_var,
            hidden,
            mu: None,
            rng: SeedRng::seed_from_u64(0),
        })
    }

    pub fn true_theta(&self) -> &DVector<f64> {
        &self.true_theta
    }

    pub fn true_cov(&self) -> &DMatrix<f64> {
        &self.true_cov
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// Starts a new episode with a fresh hidden payoff vector.
    pub fn reset(&mut self, seed: u64) {
        self.rng = SeedRng::seed_from_u64(seed);
        self.mu = Some(self.hidden.sample(&mut self.rng));
    }

    pub fn hidden_mean(&self) -> Option<&DVector<f64>> {
        self.mu.as_ref()
    }

    /// A full episode of `length` rows after resetting with `seed`.
    pub fn generate(&mut self, seed: u64, length: usize) -> Result<DMatrix<f64>> {
        self.reset(seed);
        let n = self.arms();
        let mut out = DMatrix::zeros(length, n);
        for r in 0..length {
            let o = self.step(0)?;
            out.row_mut(r).copy_from(&o.row.transpose());
        }
        Ok(out)
    }
}

impl Environment for SyntheticEnv {
    fn arms(&self) -> usize {
        self.true_theta.len()
    }

    fn step(&mut self, arm: usize) -> Result<StepOutcome> {
        check_arm(arm, self.arms())?;
        let mu = self
            .mu
            .as_ref()
            .ok_or_else(|| Error::Invariant("synthetic environment stepped before reset".into()))?;
        let sd = self.noise_var.sqrt();
        let rng = &mut self.rng;
        let row = mu.map(|m| m + sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
        Ok(StepOutcome {
            selected_payoff: row[arm],
            row,
        })
    }
}

/// A temporary multiplicative change of one arm's mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub arm: usize,
    pub start: usize,
    pub length: usize,
    pub factor: f64,
}

/// Daily payoff series with equicorrelated AR(1) fluctuations around fixed
/// per-arm levels, optionally with bursts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSpec {
    pub means: Vec<f64>,
    pub std_devs: Vec<f64>,
    /// Common pairwise correlation of the daily fluctuations.
    pub correlation: f64,
    pub length: usize,
    /// AR(1) coefficient of the fluctuations; 0 gives independent days.
    #[serde(default)]
    pub persistence: f64,
    #[serde(default)]
    pub bursts: Vec<Burst>,
}

impl SeriesSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.means.len();
        if n == 0 || self.std_devs.len() != n {
            return Err(Error::Config("series needs matching non-empty means and std_devs".into()));
        }
        if self.std_devs.iter().any(|s| s.is_nan() || *s < 0.0) || self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("series means must be finite and std_devs >= 0".into()));
        }
        let lo = if n > 1 { -1.0 / (n as f64 - 1.0) } else { -1.0 };
        if !(self.correlation >= lo && self.correlation <= 1.0) {
            return Err(Error::Config(format!(
                "equicorrelation {} outside [{lo}, 1] for {n} arms",
                self.correlation
            )));
        }
        if !(self.persistence > -1.0 && self.persistence < 1.0) {
            return Err(Error::Config("persistence must lie in (-1, 1)".into()));
        }
        for b in &self.bursts {
            check_arm(b.arm, n).map_err(|e| Error::Config(format!("burst: {e}")))?;
        }
        Ok(())
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.means.len();
        DMatrix::from_fn(n, n, |i, j| {
            let c = if i == j { 1.0 } else { self.correlation };
            c * self.std_devs[i] * self.std_devs[j]
        })
    }

    pub fn generate(&self, seed: u64) -> Result<DMatrix<f64>> {
        self.validate()?;
        let n = self.means.len();
        let sampler = MvnSampler::new(DVector::zeros(n), &self.covariance())?;
        let mut rng = SeedRng::seed_from_u64(seed);
        let phi = self.persistence;
        let innovation = (1.0 - phi * phi).sqrt();
        let mut state = sampler.sample(&mut rng);
        let mut out = DMatrix::zeros(self.length, n);
        for t in 0..self.length {
            if t > 0 {
                state = state * phi + sampler.sample(&mut rng) * innovation;
            }
            for j in 0..n {
                let mut level = self.means[j];
                for b in &self.bursts {
                    if b.arm == j && t >= b.start && t < b.start + b.length {
                        level *= b.factor;
                    }
                }
                out[(t, j)] = level + state[j];
            }
        }
        Ok(out)
    }
}

/// Recorded daily payoffs, one row per day and one column per arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEnv {
    payoffs: DMatrix<f64>,
    arm_names: Vec<String>,
    dates: Vec<String>,
    cursor: usize,
}

impl ReplayEnv {
    pub fn new(payoffs: DMatrix<f64>, arm_names: Vec<String>) -> Result<Self> {
        if arm_names.len() != payoffs.ncols() {
            return Err(Error::Domain("arm names do not match payoff columns".into()));
        }
        if payoffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("replay payoffs must be finite".into()));
        }
        let dates = synthetic_dates(payoffs.nrows());
        Ok(Self {
            payoffs,
            arm_names,
            dates,
            cursor: 0,
        })
    }

    pub fn from_matrix(payoffs: DMatrix<f64>) -> Result<Self> {
        let names = (0..payoffs.ncols()).map(|j| format!("arm{j}")).collect();
        Self::new(payoffs, names)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses the `date,<arm>,...` CSV layout. Empty cells mark missing
    /// values; the series is trimmed to its longest fully observed suffix.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let fail = |line: usize, column: usize, message: String| Error::Format {
            path: PathBuf::from(origin),
            line,
            column,
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::None)
            .from_reader(text.as_bytes());
        let mut records = reader.records();
        let header = match records.next() {
            Some(Ok(h)) => h,
            Some(Err(e)) => return Err(fail(1, 1, e.to_string())),
            None => return Err(fail(1, 1, "empty file".into())),
        };
        if header.get(0).map(str::trim) != Some("date") {
            return Err(fail(1, 1, "first header cell must be 'date'".into()));
        }
        let arm_names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        if arm_names.is_empty() {
            return Err(fail(1, 2, "header names no arms".into()));
        }
        if let Some(k) = arm_names.iter().position(String::is_empty) {
            return Err(fail(1, k + 2, "empty arm name".into()));
        }
        let width = arm_names.len() + 1;

        let mut dates = Vec::new();
        let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
        for rec in records {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                fail(line, 1, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            if rec.len() == 1 && rec.get(0).is_some_and(|c| c.trim().is_empty()) {
                continue;
            }
            if rec.len() != width {
                return Err(fail(
                    line,
                    rec.len().min(width) + 1,
                    format!("expected {width} fields, found {}", rec.len()),
                ));
            }
            let date = rec.get(0).unwrap_or("").trim();
            if !is_iso_date(date) {
                return Err(fail(line, 1, format!("'{date}' is not a YYYY-MM-DD date")));
            }
            let mut values = Vec::with_capacity(width - 1);
            for (k, cell) in rec.iter().enumerate().skip(1) {
                let cell = cell.trim();
                if cell.is_empty() {
                    values.push(None);
                    continue;
                }
                let v: f64 = cell
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| fail(line, k + 1, format!("'{cell}' is not a finite decimal")))?;
                values.push(Some(v));
            }
            dates.push(date.to_string());
            rows.push(values);
        }
        let first_full = rows
            .iter()
            .rposition(|r| r.iter().any(Option::is_none))
            .map_or(0, |i| i + 1);
        let kept = rows.len() - first_full;
        if kept < 2 {
            return Err(fail(
                1 + rows.len(),
                1,
                format!("need at least 2 fully observed data rows, found {kept}"),
            ));
        }
        let payoffs = DMatrix::from_fn(kept, width - 1, |i, j| {
            rows[first_full + i][j].expect("suffix rows are complete")
        });
        Ok(Self {
            payoffs,
            arm_names,
            dates: dates.split_off(first_full),
            cursor: 0,
        })
    }

    pub fn payoffs(&self) -> &DMatrix<f64> {
        &self.payoffs
    }

    pub fn arm_names(&self) -> &[String] {
        &self.arm_names
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn rows(&self) -> usize {
        self.payoffs.nrows()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.rows() - self.cursor
    }

    /// A fresh environment over rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.rows() {
            return Err(Error::Domain(format!(
                "slice {start}..{end} outside {} rows",
                self.rows()
            )));
        }
        Ok(Self {
            payoffs: self.payoffs.rows(start, end - start).clone_owned(),
            arm_names: self.arm_names.clone(),
            dates: self.dates[start..end].to_vec(),
            cursor: 0,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("date");
        for name in &self.arm_names {
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for (i, date) in self.dates.iter().enumerate() {
            s.push_str(date);
            for v in self.payoffs.row(i).iter() {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

impl Environment for ReplayEnv {
    fn arms(&self) -> usize {
        self.payoffs.ncols()
    }

    fn step(&mut self, arm: usize) -> Result<StepOutcome> {
        check_arm(arm, self.arms())?;
        if self.cursor >= self.rows() {
            return Err(Error::EndOfData { rows: self.rows() });
        }
        let row = self.payoffs.row(self.cursor).transpose();
        self.cursor += 1;
        Ok(StepOutcome {
            selected_payoff: row[arm],
            row,
        })
    }
}

fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 10
        && b.iter().enumerate().all(|(i, c)| match i {
            4 | 7 => *c == b'-',
            _ => c.is_ascii_digit(),
        })
}

/// Synthetic dates starting 2012-01-01, for writing generated series.
pub fn synthetic_dates(count: usize) -> Vec<String> {
    const DAYS: [u32; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    let (mut y, mut m, mut d) = (2012u32, 1usize, 1u32);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(format!("{y:04}-{m:02}-{d:02}"));
        let leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
        let len = DAYS[m - 1] + u32::from(m == 2 && leap);
        d += 1;
        if d > len {
            d = 1;
            m += 1;
            if m > 12 {
                m = 1;
                y += 1;
            }
        }
    }
    out
}

impl ReplayEnv {
    pub fn with_dates(mut self, dates: Vec<String>) -> Result<Self> {
        if dates.len() != self.rows() {
            return Err(Error::Domain("date count does not match rows".into()));
        }
        self.dates = dates;
        Ok(self)
    }
}
