mod common;

use common::{identity_inputs, oracle_corr, random_coefficients, rng, spread_points};
use fungp::kernels::{
    gram_functional, gram_spatial, separable_cov, spatial_cov, stationary_value, FunctionalKernelSpec, KernelKind,
    SpatialKernelSpec,
};
use fungp::kronlin::{cholesky, JitterPolicy};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn kind() -> impl Strategy<Value = KernelKind> {
    prop::sample::select(KernelKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matches_independent_formulas(k in kind(), d in 0.0f64..10.0, v in 0.01f64..10.0) {
        let got = stationary_value(k, d, v).unwrap();
        prop_assert!((got - v * oracle_corr(k, d)).abs() <= 1e-14 * v);
    }

    #[test]
    fn zero_distance_gives_variance(k in kind(), v in 0.01f64..10.0) {
        prop_assert_eq!(stationary_value(k, 0.0, v).unwrap(), v);
    }

    #[test]
    fn strictly_decreasing(k in kind(), d in 0.0f64..8.0, step in 0.01f64..1.0) {
        prop_assert!(stationary_value(k, d + step, 1.0).unwrap() < stationary_value(k, d, 1.0).unwrap());
    }

    #[test]
    fn spatial_symmetry(
        k in kind(),
        x in prop::array::uniform2(-2.0f64..2.0),
        y in prop::array::uniform2(-2.0f64..2.0),
        l in prop::array::uniform2(0.05f64..3.0),
        v in 0.1f64..4.0,
    ) {
        let spec = SpatialKernelSpec::new(k, l, v).unwrap();
        prop_assert_eq!(spatial_cov(&spec, &x, &y).unwrap(), spatial_cov(&spec, &y, &x).unwrap());
    }
}

#[test]
fn sampled_grams_are_positive_definite_with_small_jitter() {
    let mut g = rng(11);
    for _ in 0..50 {
        let r = g.random_range(1..=12);
        let s = g.random_range(1..=12);
        let p: Vec<usize> = (0..g.random_range(1..=3)).map(|_| g.random_range(1..=4)).collect();
        let inputs = identity_inputs(random_coefficients(&mut g, r, &p, 2.0));
        let kf_kind = KernelKind::ALL[g.random_range(0..4)];
        let kx_kind = KernelKind::ALL[g.random_range(0..4)];
        let fspec = FunctionalKernelSpec::new(kf_kind, p.iter().map(|_| g.random_range(0.2..2.0)).collect()).unwrap();
        let sspec = SpatialKernelSpec::new(kx_kind, [g.random_range(0.05..0.5), g.random_range(0.05..0.5)], 1.3).unwrap();
        let locs = spread_points(&mut g, s, 0.02);
        let kf = gram_functional(&fspec, &inputs).unwrap();
        let kx = gram_spatial(&sspec, &locs).unwrap();
        let policy = JitterPolicy { initial: 1e-10, max: 1e-8, ..JitterPolicy::default() };
        for (m, name) in [(&kf, "K_f"), (&kx, "K_x")] {
            let f = cholesky(m, policy, name).unwrap();
            assert!(f.jitter_applied() <= 1e-8 * m.diagonal().mean());
        }
        // Kronecker entries against the pointwise separable covariance
        let rows = inputs.rows();
        let big = kx.kronecker(&kf);
        for a in 0..r * s {
            for b in 0..r * s {
                let (ra, sa) = (a % r, a / r);
                let (rb, sb) = (b % r, b / r);
                let v = separable_cov(&fspec, &sspec, (&rows[ra], &locs[sa]), (&rows[rb], &locs[sb])).unwrap();
                assert!((big[(a, b)] - v).abs() <= 1e-15 * 1.3, "{a},{b}");
            }
        }
    }
}

#[test]
fn functional_gram_is_symmetric_with_unit_diagonal() {
    let mut g = rng(3);
    let inputs = identity_inputs(random_coefficients(&mut g, 9, &[2, 3], 1.0));
    let spec = FunctionalKernelSpec::new(KernelKind::Matern52, vec![0.7, 1.1]).unwrap();
    let k = gram_functional(&spec, &inputs).unwrap();
    assert_eq!(k.clone(), k.transpose());
    assert_eq!(k.diagonal(), DMatrix::<f64>::from_element(9, 1, 1.0).column(0));
}
