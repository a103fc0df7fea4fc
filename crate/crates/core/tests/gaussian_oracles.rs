mod common;

use common::{clip, gauss_pdf, integrate};
use corrbandit_core::gaussian::{
    fit_prior, interval_mass, normal_cdf, normal_pdf, partial_first_moment, sample_mvn,
    wilcoxon_signed_rank,
};
use corrbandit_core::{GaussianParams, Interval, SeedRng};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn random_case(rng: &mut SeedRng) -> (Interval, GaussianParams) {
    let mean = rng.random_range(-10.0..10.0);
    let var = 10f64.powf(rng.random_range(-2.0..2.0));
    let sd: f64 = var.sqrt();
    let lower = if rng.random_bool(0.1) {
        f64::NEG_INFINITY
    } else {
        mean + sd * rng.random_range(-8.0..8.0)
    };
    let upper = if rng.random_bool(0.1) {
        f64::INFINITY
    } else if lower.is_finite() {
        lower + sd * rng.random_range(0.0..8.0)
    } else {
        mean + sd * rng.random_range(-8.0..8.0)
    };
    (Interval::new(lower, upper).unwrap(), GaussianParams::new(mean, var).unwrap())
}

/// Closed-form partial first moments against adaptive quadrature. The
/// error is measured relative to `∫ |x| p(x) dx`, which equals the magnitude
/// of the result whenever the interval does not straddle zero.
#[test]
fn partial_moment_matches_quadrature() {
    let mut rng = SeedRng::seed_from_u64(11);
    for _ in 0..1000 {
        let (iv, p) = random_case(&mut rng);
        let (a, b) = clip(iv.lower, iv.upper, p.mean, p.variance);
        let f = |x: f64| x * gauss_pdf(x, p.mean, p.variance);
        // ∫|x|p over the whole line is at most |mean| + sd
        let bound = p.mean.abs() + p.std_dev();
        let rough = integrate(|x| f(x).abs(), a, b, 1e-15 * bound).max(1e-300);
        let scale = integrate(|x| f(x).abs(), a, b, 1e-13 * rough).max(1e-300);
        let oracle = integrate(f, a, b, 1e-13 * scale);
        let got = partial_first_moment(iv, p).unwrap();
        assert!(
            (got - oracle).abs() <= 1e-9 * scale,
            "{iv:?} {p:?}: {got} vs {oracle}"
        );
    }
}

#[test]
fn mass_and_cdf_match_quadrature() {
    let mut rng = SeedRng::seed_from_u64(12);
    for _ in 0..500 {
        let (iv, p) = random_case(&mut rng);
        let (a, b) = clip(iv.lower, iv.upper, p.mean, p.variance);
        let oracle = integrate(|x| gauss_pdf(x, p.mean, p.variance), a, b, 1e-16);
        let got = interval_mass(iv, p).unwrap();
        assert!((got - oracle).abs() <= 1e-12 + 1e-9 * oracle, "{got} vs {oracle}");
        if iv.upper.is_finite() {
            let lo = p.mean - 40.0 * p.std_dev();
            let cdf = integrate(|x| gauss_pdf(x, p.mean, p.variance), lo, iv.upper.max(lo), 1e-16);
            let got = normal_cdf(iv.upper, p).unwrap();
            assert!((got - cdf).abs() <= 1e-12 + 1e-9 * cdf, "{got} vs {cdf}");
        }
    }
}

#[test]
fn pdf_is_derivative_of_cdf() {
    let mut rng = SeedRng::seed_from_u64(13);
    for _ in 0..200 {
        let p = GaussianParams::new(rng.random_range(-5.0..5.0), rng.random_range(0.1..10.0)).unwrap();
        let x = p.mean + p.std_dev() * rng.random_range(-4.0..4.0);
        let h = 1e-5 * p.std_dev();
        let fd = (normal_cdf(x + h, p).unwrap() - normal_cdf(x - h, p).unwrap()) / (2.0 * h);
        let pdf = normal_pdf(x, p).unwrap();
        assert!((fd - pdf).abs() <= 1e-6 * pdf.max(1e-3), "{fd} vs {pdf}");
        assert!((pdf - gauss_pdf(x, p.mean, p.variance)).abs() <= 1e-14);
    }
}

#[test]
fn sampler_moments_within_three_standard_errors() {
    let mean = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let cov = DMatrix::from_row_slice(3, 3, &[4.0, 1.2, -0.6, 1.2, 2.0, 0.3, -0.6, 0.3, 1.0]);
    let n = 200_000;
    let s = sample_mvn(&mean, &cov, n, 99).unwrap();
    for j in 0..3 {
        let m = s.column(j).mean();
        let se = (cov[(j, j)] / n as f64).sqrt();
        assert!((m - mean[j]).abs() <= 3.0 * se, "mean {j}: {m}");
    }
    for i in 0..3 {
        for j in 0..3 {
            let xi = s.column(i).add_scalar(-mean[i]);
            let xj = s.column(j).add_scalar(-mean[j]);
            let prod = xi.component_mul(&xj);
            let c = prod.mean();
            // var(X_i X_j) = Σ_ii Σ_jj + Σ_ij² for centred Gaussians
            let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / n as f64).sqrt();
            assert!((c - cov[(i, j)]).abs() <= 3.0 * se, "cov {i}{j}: {c}");
        }
    }
}

#[test]
fn fit_prior_round_trip() {
    let mean = DVector::from_vec(vec![10.0, 11.0]);
    let cov = DMatrix::from_row_slice(2, 2, &[4.0, 3.0, 3.0, 9.0]);
    let n = 100_000;
    let s = sample_mvn(&mean, &cov, n, 5).unwrap();
    let (theta, sigma) = fit_prior(&s).unwrap();
    for j in 0..2 {
        assert!((theta[j] - mean[j]).abs() <= 3.0 * (cov[(j, j)] / n as f64).sqrt());
    }
    // shrinkage keeps the diagonal and scales the off-diagonal by 0.9
    let se = ((cov[(0, 0)] * cov[(1, 1)] + 9.0) / n as f64).sqrt();
    assert!((sigma[(0, 1)] - 0.9 * 3.0).abs() <= 3.0 * 0.9 * se, "{}", sigma[(0, 1)]);
    assert!((sigma[(0, 0)] - 4.0).abs() <= 3.0 * (2.0 * 16.0 / n as f64).sqrt());
}

#[test]
fn eight_positive_pairs_exact() {
    let pairs: Vec<(f64, f64)> = (1..=8).map(|k| (k as f64 + 0.5, 0.0)).collect();
    assert_eq!(wilcoxon_signed_rank(&pairs).unwrap(), 0.0078125);
}

/// Exact two-sided p-value by brute-force sign enumeration.
fn brute_wilcoxon(diffs: &[f64]) -> f64 {
    let d: Vec<f64> = diffs.iter().copied().filter(|v| *v != 0.0).collect();
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs()));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[order[j + 1]].abs() == d[order[i]].abs() {
            j += 1;
        }
        for k in i..=j {
            ranks[order[k]] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    let w_plus: f64 = (0..n).filter(|&k| d[k] > 0.0).map(|k| ranks[k]).sum();
    let total: f64 = ranks.iter().sum();
    let stat = w_plus.min(total - w_plus);
    let mut extreme = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|&k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
        if w <= stat + 1e-9 {
            extreme += 1;
        }
    }
    (2.0 * extreme as f64 / (1u64 << n) as f64).min(1.0)
}

#[test]
fn wilcoxon_matches_enumeration() {
    let mut rng = SeedRng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.random_range(5..=14);
        // coarse values force ties
        let diffs: Vec<f64> = (0..n).map(|_| (rng.random_range(-6i32..=8)) as f64 * 0.5).collect();
        if diffs.iter().filter(|d| **d != 0.0).count() < 5 {
            continue;
        }
        let pairs: Vec<(f64, f64)> = diffs.iter().map(|d| (*d, 0.0)).collect();
        let got = wilcoxon_signed_rank(&pairs).unwrap();
        let want = brute_wilcoxon(&diffs);
        assert!((got - want).abs() < 1e-12, "{diffs:?}: {got} vs {want}");
    }
}

proptest! {
    #[test]
    fn moments_are_additive(mean in -5.0..5.0f64, var in 0.01..20.0f64, a in -10.0..10.0f64, w1 in 0.0..5.0f64, w2 in 0.0..5.0f64) {
        let p = GaussianParams::new(mean, var).unwrap();
        let (b, c) = (a + w1, a + w1 + w2);
        let whole = partial_first_moment(Interval::new(a, c).unwrap(), p).unwrap();
        let split = partial_first_moment(Interval::new(a, b).unwrap(), p).unwrap()
            + partial_first_moment(Interval::new(b, c).unwrap(), p).unwrap();
        prop_assert!((whole - split).abs() <= 1e-12 * (1.0 + whole.abs() + mean.abs()));
        let m = interval_mass(Interval::new(a, c).unwrap(), p).unwrap();
        let ms = interval_mass(Interval::new(a, b).unwrap(), p).unwrap() + interval_mass(Interval::new(b, c).unwrap(), p).unwrap();
        prop_assert!((m - ms).abs() <= 1e-14);
        prop_assert!((0.0..=1.0).contains(&m));
    }

    #[test]
    fn full_line_moment_is_mean(mean in -50.0..50.0f64, var in 1e-4..1e4f64) {
        let p = GaussianParams::new(mean, var).unwrap();
        let v = partial_first_moment(Interval::real_line(), p).unwrap();
        prop_assert!((v - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
    }

    #[test]
    fn wilcoxon_sign_symmetric(diffs in prop::collection::vec(-10.0..10.0f64, 5..40)) {
        prop_assume!(diffs.iter().filter(|d| **d != 0.0).count() >= 5);
        let pos: Vec<(f64, f64)> = diffs.iter().map(|d| (*d, 0.0)).collect();
        let neg: Vec<(f64, f64)> = diffs.iter().map(|d| (0.0, *d)).collect();
        let (a, b) = (wilcoxon_signed_rank(&pos).unwrap(), wilcoxon_signed_rank(&neg).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a > 0.0 && a <= 1.0);
    }

    #[test]
    fn fit_prior_is_positive_definite(seed in 0u64..10_000, rows in 2usize..30, cols in 1usize..6, constant in any::<bool>()) {
        let mut rng = SeedRng::seed_from_u64(seed);
        let m = DMatrix::from_fn(rows, cols, |_, j| if constant && j == 0 { 3.0 } else { rng.random_range(-5.0..5.0) });
        let (_, cov) = fit_prior(&m).unwrap();
        prop_assert!(cov.clone().cholesky().is_some());
        prop_assert!((cov.clone() - cov.transpose()).amax() == 0.0);
    }
}
