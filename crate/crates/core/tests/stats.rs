use nalgebra::DMatrix;
use proptest::prelude::*;
use sqs_core::stats::{loglog_slope, mean_variance, summarize, total_error, variance_ratio};

#[test]
fn one_dimensional_reference() {
    let reference: f64 = 1.0 / (0.5 * (1.0 / 1.5 + 1.0 / 0.5));
    assert!((reference - 0.75).abs() < 1e-15);
    let rep = summarize("classical", &[DMatrix::from_element(1, 1, 0.7), DMatrix::from_element(1, 1, 0.8)]).unwrap();
    assert!((total_error(&rep, &DMatrix::from_element(1, 1, reference)) - 0.0).abs() < 1e-15);
}

#[test]
fn ratio_of_report_with_itself() {
    let rep = summarize("classical", &[DMatrix::from_element(2, 2, 0.7), DMatrix::from_element(2, 2, 0.9)]).unwrap();
    assert_eq!(variance_ratio(&rep, &rep, 0, 0).unwrap(), 1.0);
    let flat = summarize("classical", &[DMatrix::from_element(2, 2, 0.7), DMatrix::from_element(2, 2, 0.7)]).unwrap();
    assert!(variance_ratio(&rep, &flat, 0, 0).is_err());
}

#[test]
fn power_laws() {
    let pts: Vec<(f64, f64)> = [10.0, 20.0, 40.0].iter().map(|&n: &f64| (n, 3.0 / n)).collect();
    assert!((loglog_slope(&pts).unwrap().slope + 1.0).abs() < 1e-12);
    assert!(loglog_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
    assert!(loglog_slope(&[(1.0, 1.0), (2.0, 1.0)]).is_err());
}

proptest! {
    #[test]
    fn variance_matches_two_pass(values in prop::collection::vec(-1e3f64..1e3, 2..100)) {
        let (m, v) = mean_variance(&values).unwrap();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        prop_assert!((m - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        prop_assert!((v - var).abs() <= 1e-12 * var.max(1e-300));
        prop_assert!(v >= 0.0);
    }

    #[test]
    fn total_error_is_translation_consistent(a in -5.0f64..5.0, b in -5.0f64..5.0, shift in -10.0f64..10.0, r in -5.0f64..5.0) {
        let tensors = [DMatrix::from_element(2, 2, a), DMatrix::from_element(2, 2, b)];
        let shifted: Vec<_> = tensors.iter().map(|t| t.add_scalar(shift)).collect();
        let e0 = total_error(&summarize("x", &tensors).unwrap(), &DMatrix::from_element(2, 2, r));
        let e1 = total_error(&summarize("x", &shifted).unwrap(), &DMatrix::from_element(2, 2, r + shift));
        prop_assert!((e0 - e1).abs() <= 1e-9);
    }

    #[test]
    fn half_width_formula(values in prop::collection::vec(0.0f64..1.0, 2..50)) {
        let tensors: Vec<_> = values.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect();
        let rep = summarize("x", &tensors).unwrap();
        let e = rep.entry(0, 0);
        prop_assert!((e.ci95 - 1.96 * (e.variance / values.len() as f64).sqrt()).abs() <= 1e-15);
    }
}
