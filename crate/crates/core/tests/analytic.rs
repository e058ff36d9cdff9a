use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sqs_core::analytic::{
    conditional_gaussian_sample, harmonic_oracle, composite_check, quadrature_moments, truncated_normal_moments, Conditioning,
    TestFunction,
};
use sqs_core::par::Execution;

#[test]
fn exact_conditioning_covariance() {
    let n = 10;
    let draws = 200_000u64;
    let (mut s1, mut s2, mut s12) = (0.0, 0.0, 0.0);
    for seed in 0..draws {
        let x = conditional_gaussian_sample(n, Conditioning::Exact, seed).unwrap();
        s1 += x[0];
        s2 += x[1];
        s12 += x[0] * x[1];
    }
    let m = draws as f64;
    let cov = s12 / m - (s1 / m) * (s2 / m);
    // Standard error of the product moment is about sqrt(1 + 1/n^2) / sqrt(draws).
    assert!((cov + 1.0 / n as f64).abs() < 4.0 / m.sqrt(), "{cov}");
}

#[test]
fn window_variance_matches_rejection_sampling() {
    let (z0, z1) = (1.0, 2.0);
    let (_, c) = truncated_normal_moments(z0, z1);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut k, mut s, mut ss) = (0usize, 0.0, 0.0);
    while k < 400_000 {
        let z: f64 = rng.sample(StandardNormal);
        if (z0..=z1).contains(&z) {
            k += 1;
            s += z;
            ss += z * z;
        }
    }
    let mean = s / k as f64;
    let var = ss / k as f64 - mean * mean;
    assert!((var - c).abs() < 1e-3, "{var} vs {c}");
}

#[test]
fn window_samples_have_prescribed_mean() {
    for seed in 0..50 {
        let x = conditional_gaussian_sample(25, Conditioning::Window { z0: -1.0, z1: 0.5 }, seed).unwrap();
        let s = x.iter().sum::<f64>() / 25.0;
        assert!((-0.2 - 1e-14..=0.1 + 1e-14).contains(&s));
    }
}

#[test]
fn quadrature_moments_of_bounded_function() {
    let m = quadrature_moments(&TestFunction::TwoPlusTanh);
    assert!((m.mean - 2.0).abs() < 1e-12);
    assert!(m.mean_x_derivative.abs() < 1e-12);
    // Simpson rule on [-12, 12] as an independent check.
    let simpson = |f: &dyn Fn(f64) -> f64| {
        let (a, b, steps) = (-12.0f64, 12.0f64, 20_000usize);
        let h = (b - a) / steps as f64;
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        (0..=steps)
            .map(|i| {
                let x = a + i as f64 * h;
                let w = if i == 0 || i == steps { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                w * f(x) * pdf(x)
            })
            .sum::<f64>()
            * h
            / 3.0
    };
    assert!((simpson(&|x: f64| 1.0 / x.cosh().powi(2)) - m.mean_derivative).abs() < 1e-10);
    assert!((simpson(&|x: f64| x.tanh().powi(2)) - m.variance).abs() < 1e-10);
}

#[test]
fn constant_function_is_degenerate_not_an_error() {
    let r = composite_check(TestFunction::Constant { value: 3.0 }, 20, 50, 1, Execution::Parallel).unwrap();
    assert!(r.degenerate);
    assert!(r.variance_ratio.is_nan());
    assert!(composite_check(TestFunction::Constant { value: -1.0 }, 20, 50, 1, Execution::Parallel).is_err());
}

proptest! {
    #[test]
    fn harmonic_below_arithmetic(values in prop::collection::vec(0.01f64..100.0, 1..40)) {
        let h = harmonic_oracle(&values).unwrap();
        let a = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!(h <= a * (1.0 + 1e-12));
    }

    #[test]
    fn harmonic_of_equal_values(a in 0.01f64..100.0, n in 1usize..20) {
        let h = harmonic_oracle(&vec![a; n]).unwrap();
        prop_assert!((h - a).abs() <= 1e-12 * a);
    }

    #[test]
    fn exact_samples_sum_to_zero(n in 2usize..200, seed in any::<u64>()) {
        let x = conditional_gaussian_sample(n, Conditioning::Exact, seed).unwrap();
        prop_assert!(x.iter().sum::<f64>().abs() <= 1e-12);
    }
}
