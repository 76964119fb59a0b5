use std::collections::BTreeMap;

use conclab::estimators::{orlicz_norm, phi};
use conclab::inequalities::Relation;
use conclab::report::{from_csv, to_csv, CsvRow};
use conclab::stats::EstimateWithCI;
use conclab::{InequalityReport, McParams, Monotonicity, ProductMeasure, TestFunction};
use proptest::prelude::*;

fn params() -> McParams {
    McParams {
        bisect_tol: 1e-10,
        ..McParams::default()
    }
}

fn norm(v: &[f64]) -> f64 {
    orlicz_norm(v, None, &params(), 0).unwrap().value
}

fn mean_phi(v: &[f64], c: f64) -> f64 {
    v.iter().map(|x| phi(x.abs() / c).unwrap()).sum::<f64>() / v.len() as f64
}

fn euclid(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn builtins(n: usize) -> Vec<TestFunction> {
    let mut v = vec![
        TestFunction::max(n).unwrap(),
        TestFunction::softplus_sum(n).unwrap(),
        TestFunction::neg_logistic_sum(n).unwrap(),
        TestFunction::linear((0..n).map(|i| 0.5 + i as f64).collect()).unwrap(),
    ];
    if n % 2 == 1 {
        v.push(TestFunction::median(n).unwrap());
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn orlicz_norm_is_the_luxemburg_infimum(v in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        prop_assume!(v.iter().any(|x| *x != 0.0));
        let c = norm(&v);
        prop_assert!(mean_phi(&v, c) <= 1.0 + 1e-12);
        prop_assert!(mean_phi(&v, c * (1.0 - 1e-8)) > 1.0 - 1e-9);
    }

    #[test]
    fn orlicz_norm_is_absolutely_homogeneous(v in prop::collection::vec(-20.0f64..20.0, 1..40), s in -30.0f64..30.0) {
        prop_assume!(v.iter().any(|x| *x != 0.0) && s.abs() > 1e-3);
        let scaled: Vec<f64> = v.iter().map(|x| s * x).collect();
        let (a, b) = (norm(&scaled), s.abs() * norm(&v));
        prop_assert!((a - b).abs() <= 1e-8 * b, "{} vs {}", a, b);
    }

    #[test]
    fn orlicz_norm_is_monotone_in_modulus(pairs in prop::collection::vec((-20.0f64..20.0, 0.0f64..5.0), 1..40)) {
        let small: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let large: Vec<f64> = pairs.iter().map(|p| p.0.abs() + p.1).collect();
        prop_assume!(small.iter().any(|x| *x != 0.0));
        prop_assert!(norm(&small) <= norm(&large) * (1.0 + 1e-9));
    }

    #[test]
    fn nondecreasing_builtins_are_monotone(
        x in prop::collection::vec(-4.0f64..4.0, 5),
        d in prop::collection::vec(0.0f64..2.0, 5),
    ) {
        let y: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
        for f in builtins(5) {
            prop_assert_eq!(f.monotonicity(), Monotonicity::Nondecreasing);
            prop_assert!(f.eval(&x) <= f.eval(&y) + 1e-12, "{}", f.name());
            prop_assert!(f.gradient(&x).iter().all(|g| *g >= 0.0), "{}", f.name());
        }
    }

    #[test]
    fn max_and_median_are_one_lipschitz(
        x in prop::collection::vec(-10.0f64..10.0, 7),
        y in prop::collection::vec(-10.0f64..10.0, 7),
    ) {
        for f in [TestFunction::max(7).unwrap(), TestFunction::median(7).unwrap()] {
            prop_assert!((f.eval(&x) - f.eval(&y)).abs() <= euclid(&x, &y) + 1e-12);
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact(
        lhs in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
        se in 0.0f64..1e3,
        rhs in -1e300f64..1e300,
        t in prop::num::f64::NORMAL,
        subject in "[ -~]{0,24}",
    ) {
        let mut c = BTreeMap::new();
        c.insert("t".to_string(), t);
        let r = InequalityReport::new(
            "prop",
            subject,
            &ProductMeasure::gaussian(3).unwrap(),
            EstimateWithCI::normal(lhs, se, 0.99, 100, 1, "mean"),
            EstimateWithCI::exact(rhs, "bound"),
            Relation::LessEq,
            c,
        );
        let text = to_csv(std::slice::from_ref(&r)).unwrap();
        let rows = from_csv(text.as_bytes()).unwrap();
        prop_assert_eq!(rows.len(), 1);
        let row = &rows[0];
        prop_assert_eq!(row, &CsvRow::of(&r));
        for (a, b) in [
            (row.lhs, r.lhs.value),
            (row.lhs_se, r.lhs.std_error),
            (row.lhs_ci_low, r.lhs.ci_low),
            (row.lhs_ci_high, r.lhs.ci_high),
            (row.rhs, r.rhs.value),
            (row.margin, r.margin),
        ] {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        prop_assert_eq!(row.constants_map().unwrap()["t"].to_bits(), t.to_bits());
    }
}
