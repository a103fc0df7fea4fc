#![allow(dead_code)]

use corrbandit_core::{BeliefState, UpdateMode};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (k, err) = gk15(f, a, b);
    // stop once the error estimate is at rounding level
    if err <= tol || err <= 64.0 * f64::EPSILON * k.abs() || depth == 0 {
        return k;
    }
    let m = 0.5 * (a + b);
    adapt(f, a, m, 0.5 * tol, depth - 1) + adapt(f, m, b, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss–Kronrod (7, 15) integral of `f` over a finite `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    adapt(&f, a, b, abs_tol, 40)
}

/// Density written out directly, independent of the crate's helpers.
pub fn gauss_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Integration limits clipped to where the Gaussian has numerically
/// non-zero weight.
pub fn clip(lower: f64, upper: f64, mean: f64, var: f64) -> (f64, f64) {
    let reach = 40.0 * var.sqrt();
    (lower.max(mean - reach), upper.min(mean + reach))
}

pub fn random_cov(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let scale: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..3.0)).collect();
    let mut c = &a * a.transpose() + DMatrix::identity(n, n) * 0.05;
    for i in 0..n {
        for j in 0..n {
            c[(i, j)] *= scale[i] * scale[j];
        }
    }
    (c.clone() + c.transpose()) * 0.5
}

pub fn random_belief(rng: &mut impl Rng, n: usize, mode: UpdateMode) -> BeliefState {
    let theta = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let noise = rng.random_range(0.05..5.0);
    BeliefState::new(theta, random_cov(rng, n), noise, mode).expect("valid random belief")
}
