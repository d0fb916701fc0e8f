use asm::bootstrap::percentile_interval;
use asm::discrepancy::fml_discrepancy;
use asm::estimate::{discrepancy, gradient};
use asm::matrices::implied_covariance;
use asm::metrics::{noncentral_chi2_cdf, rmsea};
use asm::moments::SampleMoments;
use asm::params::{build_parameter_table, theta_to_matrices};
use asm::report::sig6;
use asm::spec::{parse_model_spec, InvarianceLevel};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn pd(entries: &[f64], p: usize) -> DMatrix<f64> {
    let a = DMatrix::from_column_slice(p, p, &entries[..p * p]);
    &a * a.transpose() + DMatrix::identity(p, p) * 0.5
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn discrepancy_is_nonnegative(a in prop::collection::vec(-1.0..1.0f64, 16), b in prop::collection::vec(-1.0..1.0f64, 16)) {
        let s = pd(&a, 4);
        let sigma = pd(&b, 4);
        let f = fml_discrepancy(&s, &sigma, None).unwrap();
        prop_assert!(f >= -1e-12);
        prop_assert!(fml_discrepancy(&s, &s, None).unwrap().abs() < 1e-10);
        let d = DVector::from_element(4, 0.3);
        prop_assert!(fml_discrepancy(&s, &sigma, Some(&d)).unwrap() > f);
    }

    #[test]
    fn parser_never_panics(text in "[a-zA-Z0-9 >@=,\\[\\].\\-;\n#]{0,120}") {
        let _ = parse_model_spec(&text);
    }

    #[test]
    fn non_latent_statement_order_is_irrelevant(rotate in 0usize..4) {
        let mut lines = ["path X -> Y", "waves 3", "ar 2", "invariance weak"];
        lines.rotate_left(rotate);
        let text = format!("latent X by x1 x2 x3\nlatent Y by y1 y2 y3\n{}", lines.join("\n"));
        let a = parse_model_spec(&text).unwrap();
        let b = parse_model_spec("latent X by x1 x2 x3\nlatent Y by y1 y2 y3\npath X -> Y\nwaves 3\nar 2\ninvariance weak").unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn percentile_interval_is_ordered(v in prop::collection::vec(-100.0..100.0f64, 1..60), level in 0.5..0.999f64) {
        let (lo, hi) = percentile_interval(&v, level);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= lo && lo <= hi && hi <= max);
    }

    #[test]
    fn sig6_keeps_six_digits(x in -1e9..1e9f64) {
        let back: f64 = sig6(x).parse().unwrap();
        prop_assert!((back - x).abs() <= 5e-6 * x.abs().max(1e-4));
    }

    #[test]
    fn noncentral_cdf_falls_with_lambda(x in 1.0..200.0f64, df in 1.0..100.0f64, l in 0.0..50.0f64) {
        let a = noncentral_chi2_cdf(x, df, l);
        let b = noncentral_chi2_cdf(x, df, l + 1.0);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a + 1e-12);
    }

    #[test]
    fn rmsea_interval_brackets_point(chi2 in 0.0..3000.0f64, df in 1usize..1200, n in 50usize..10000) {
        let r = rmsea(chi2, df, n);
        prop_assert!(r.point >= 0.0);
        prop_assert!(r.lower <= r.point + 1e-9 && r.point <= r.upper + 1e-9);
    }

    #[test]
    fn gradient_vanishes_only_where_moments_match(shift in prop::collection::vec(-0.2..0.2f64, 8)) {
        let spec = parse_model_spec("latent X by x1 x2 x3\nlatent Y by y1 y2 y3\npath X -> Y\nwaves 1").unwrap();
        let table = build_parameter_table(&spec, InvarianceLevel::Configural).unwrap();
        let mut theta = table.start_theta();
        for (k, s) in shift.iter().enumerate() {
            theta[k % table.free_count] += s;
        }
        let m = theta_to_matrices(&table, &theta).unwrap();
        let sigma = implied_covariance(&m).unwrap();
        let mean = asm::matrices::implied_means(&m, &m.alpha).unwrap();
        let moments = SampleMoments::new(sigma, mean, 400).unwrap();
        prop_assert!(discrepancy(&table, &theta, &moments).unwrap().abs() < 1e-10);
        let g = gradient(&table, &theta, &moments).unwrap();
        prop_assert!(g.iter().all(|v| v.abs() < 1e-8));
    }
}
