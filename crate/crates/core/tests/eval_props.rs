use fungp::eval::{ca, category_proportions, classify_flood, q2, rmse};
use proptest::prelude::*;

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
        )
    })
}

fn triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(0.0f64..5.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn q2_is_shift_invariant((y, p) in pair(), c in -100.0f64..100.0) {
        if let Ok(base) = q2(&y, &p) {
            let ys: Vec<f64> = y.iter().map(|v| v + c).collect();
            let ps: Vec<f64> = p.iter().map(|v| v + c).collect();
            let shifted = q2(&ys, &ps).unwrap();
            prop_assert!((base - shifted).abs() <= 1e-9 * base.abs().max(1.0));
        }
    }

    #[test]
    fn q2_is_one_exactly_when_rmse_is_zero((y, _p) in pair()) {
        if let Ok(v) = q2(&y, &y) {
            prop_assert_eq!(v, 1.0);
        }
        prop_assert_eq!(rmse(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn rmse_squared_is_mse_and_shift_invariant((y, p) in pair(), c in -100.0f64..100.0) {
        let r = rmse(&y, &p).unwrap();
        let mse = y.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
        prop_assert!((r * r - mse).abs() <= 1e-12 * mse.max(1.0));
        let ys: Vec<f64> = y.iter().map(|v| v + c).collect();
        let ps: Vec<f64> = p.iter().map(|v| v + c).collect();
        prop_assert!((rmse(&ys, &ps).unwrap() - r).abs() <= 1e-9 * r.max(1.0));
    }

    #[test]
    fn ca_is_monotone_in_c((y, m, s) in triple(), c1 in 0.0f64..4.0, dc in 0.0f64..4.0) {
        prop_assert!(ca(&y, &m, &s, c1).unwrap() <= ca(&y, &m, &s, c1 + dc).unwrap());
    }

    #[test]
    fn ca_is_scale_invariant((y, m, s) in triple(), c in 0.0f64..4.0, e in -6i32..6) {
        let f = 2f64.powi(e);
        let sc = |v: &Vec<f64>| v.iter().map(|x| x * f).collect::<Vec<_>>();
        prop_assert_eq!(ca(&y, &m, &s, c).unwrap(), ca(&sc(&y), &sc(&m), &sc(&s), c).unwrap());
    }

    #[test]
    fn flood_classes_are_monotone(a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(classify_flood(lo).unwrap() <= classify_flood(hi).unwrap());
    }

    #[test]
    fn proportions_sum_to_one(v in prop::collection::vec(0.0f64..3.0, 1..50)) {
        let p = category_proportions(&v).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
