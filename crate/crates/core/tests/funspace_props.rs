use fungp::funspace::{
    fit_pca, functional_distance_sq, project, reconstruct, unit_grid, ProjectedInputs, ProjectedScenario,
    ScenarioInputs,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn replicate_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (2usize..12, 3usize..20).prop_flat_map(|(r, tau)| {
        prop::collection::vec(-5.0f64..5.0, r * tau).prop_map(move |v| DMatrix::from_vec(r, tau, v))
    })
}

fn scenario(p: &[usize]) -> impl Strategy<Value = ProjectedScenario> {
    let parts: Vec<_> = p
        .iter()
        .map(|&n| prop::collection::vec(-3.0f64..3.0, n).prop_map(DVector::from_vec))
        .collect();
    parts.prop_map(ProjectedScenario)
}

fn triple() -> impl Strategy<Value = (ProjectedScenario, ProjectedScenario, ProjectedScenario, Vec<f64>)> {
    prop::collection::vec(0usize..4, 1..4).prop_flat_map(|p| {
        let q = p.len();
        (
            scenario(&p),
            scenario(&p),
            scenario(&p),
            prop::collection::vec(0.1f64..5.0, q),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn basis_is_orthonormal_and_sorted(y in replicate_matrix(), target in 0.5f64..1.0) {
        let b = fit_pca("c", &y, target).unwrap();
        let p = b.n_components();
        if p > 0 {
            let gram = b.basis.tr_mul(&b.basis);
            prop_assert!((gram - DMatrix::identity(p, p)).amax() <= 1e-10);
        }
        for w in b.eigenvalues.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn truncation_is_minimal(y in replicate_matrix(), target in 0.5f64..0.999) {
        let b = fit_pca("c", &y, target).unwrap();
        let p = b.n_components();
        prop_assume!(p >= 1);
        let kept: f64 = b.eigenvalues.iter().sum();
        prop_assert!(kept / b.total_variance >= target - 1e-12);
        let before: f64 = b.eigenvalues[..p - 1].iter().sum();
        prop_assert!(before / b.total_variance < target);
    }

    #[test]
    fn reconstruction_error_equals_dropped_variance(y in replicate_matrix(), target in 0.3f64..0.99) {
        let b = fit_pca("c", &y, target).unwrap();
        let r = y.nrows();
        let mut mse = 0.0;
        for i in 0..r {
            let curve: Vec<f64> = y.row(i).iter().copied().collect();
            let back = reconstruct(&b, &project(&b, &curve).unwrap()).unwrap();
            mse += (DVector::from_vec(curve) - back).norm_squared();
        }
        mse /= r as f64;
        let dropped = b.dropped_variance();
        prop_assert!((mse - dropped).abs() <= 1e-8 * b.total_variance.max(1e-300));
    }

    #[test]
    fn project_after_reconstruct_is_identity(y in replicate_matrix(), seed in any::<u64>()) {
        let b = fit_pca("c", &y, 1.0).unwrap();
        let p = b.n_components();
        let a = DVector::from_fn(p, |i, _| ((seed >> (i % 60)) & 7) as f64 - 3.5);
        let round = project(&b, reconstruct(&b, &a).unwrap().as_slice()).unwrap();
        prop_assert!((round - a).amax() <= 1e-9);
    }

    #[test]
    fn distance_is_a_squared_seminorm((a, b, c, ls) in triple()) {
        let dab = functional_distance_sq(&a, &b, &ls).unwrap();
        let dba = functional_distance_sq(&b, &a, &ls).unwrap();
        let dac = functional_distance_sq(&a, &c, &ls).unwrap();
        let dcb = functional_distance_sq(&c, &b, &ls).unwrap();
        prop_assert!(dab >= 0.0);
        prop_assert_eq!(dab, dba);
        prop_assert_eq!(functional_distance_sq(&a, &a, &ls).unwrap(), 0.0);
        prop_assert!(dab.sqrt() <= dac.sqrt() + dcb.sqrt() + 1e-12);
    }

    #[test]
    fn projection_is_deterministic(y in replicate_matrix()) {
        let grid = unit_grid(y.ncols());
        let inputs = ScenarioInputs::new(grid, vec![("a".into(), y.clone())]).unwrap();
        let p1 = ProjectedInputs::fit(&inputs, 0.99).unwrap();
        let p2 = ProjectedInputs::fit(&inputs, 0.99).unwrap();
        prop_assert_eq!(p1.bases()[0].basis.as_slice(), p2.bases()[0].basis.as_slice());
        prop_assert_eq!(p1.channel_coefficients(0).as_slice(), p2.channel_coefficients(0).as_slice());
    }
}

#[test]
fn order_of_replicates_does_not_change_the_basis() {
    let y = DMatrix::from_fn(6, 9, |i, j| ((i * 7 + j * 3) % 11) as f64 + (i as f64 * 0.3 * j as f64).sin());
    let rev = DMatrix::from_fn(6, 9, |i, j| y[(5 - i, j)]);
    let a = fit_pca("c", &y, 0.99).unwrap();
    let b = fit_pca("c", &rev, 0.99).unwrap();
    assert_eq!(a.n_components(), b.n_components());
    assert!((a.basis.clone() - b.basis.clone()).amax() < 1e-8);
}
