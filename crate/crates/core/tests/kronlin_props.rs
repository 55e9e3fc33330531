mod common;

use common::rng;
use fungp::kronlin::{
    cholesky, kron_apply, kron_logdet, kron_posterior_cov, kron_posterior_mean, kron_posterior_var, kron_quadratic,
    kron_tri_solve, JitterPolicy,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

fn spd(g: &mut ChaCha20Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| g.random_range(-1.0..1.0));
    (&a * a.transpose() + DMatrix::identity(n, n) * 0.5) * scale
}

fn rel(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-10 * b.abs().max(scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dense_oracle_equivalence(seed in any::<u64>(), r in 1usize..=6, s in 1usize..=8) {
        let mut g = rng(seed);
        let kf = spd(&mut g, r, 1.0);
        let kx = spd(&mut g, s, 2.0);
        let y = DVector::from_fn(r * s, |_, _| g.random_range(-2.0..2.0));
        let lf = cholesky(&kf, JitterPolicy::none(), "K_f").unwrap();
        let lx = cholesky(&kx, JitterPolicy::none(), "K_x").unwrap();

        let k = kx.kronecker(&kf);
        let dense = k.clone().cholesky().unwrap();
        let alpha = dense.solve(&y);
        let quad = y.dot(&alpha);
        let logdet = 2.0 * dense.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        prop_assert!(rel(kron_quadratic(&y, &lf, &lx).unwrap(), quad, 1.0));
        prop_assert!(rel(kron_logdet(&lf, &lx).unwrap(), logdet, 1.0));

        let a = kron_tri_solve(&lf, &lx, &y).unwrap();
        let kfs = DVector::from_fn(r, |_, _| g.random_range(-0.5..0.5));
        let kxs = DVector::from_fn(s, |_, _| g.random_range(-0.5..0.5));
        let kfs2 = DVector::from_fn(r, |_, _| g.random_range(-0.5..0.5));
        let kxs2 = DVector::from_fn(s, |_, _| g.random_range(-0.5..0.5));
        let kstar = kxs.kronecker(&kfs);
        let kstar2 = kxs2.kronecker(&kfs2);
        let mean = kstar.dot(&alpha);
        let scale = y.amax() * kstar.amax();
        prop_assert!(rel(kron_posterior_mean(&lf, &lx, &a, &kfs, &kxs).unwrap(), mean, scale));

        let prior = 50.0;
        let cov = prior - kstar.dot(&dense.solve(&kstar2));
        prop_assert!(rel(kron_posterior_cov(&lf, &lx, prior, &kfs, &kxs, &kfs2, &kxs2).unwrap(), cov, prior));
        let var = prior - kstar.dot(&dense.solve(&kstar));
        prop_assert!(var > 0.0);
        prop_assert!(rel(kron_posterior_var(&lf, &lx, prior, &kfs, &kxs).unwrap(), var, prior));
    }

    #[test]
    fn mixed_product_identity(seed in any::<u64>(), m in 1usize..5, n in 1usize..5, p in 1usize..5, q in 1usize..5) {
        let mut g = rng(seed);
        let mut rnd = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| g.random_range(-1.0..1.0));
        let a = rnd(m, n);
        let b = rnd(p, q);
        let a2 = rnd(n, 3);
        let b2 = rnd(q, 2);
        let u = DVector::from_column_slice(rnd(6, 1).as_slice());
        let lhs = kron_apply(&a, &b, &kron_apply(&a2, &b2, &u).unwrap()).unwrap();
        let rhs = kron_apply(&(&a * &a2), &(&b * &b2), &u).unwrap();
        prop_assert!((lhs.clone() - rhs).amax() <= 1e-12 * lhs.amax().max(1.0));
        let dense = a.kronecker(&b) * kron_apply(&a2, &b2, &u).unwrap();
        prop_assert!((lhs - dense).amax() <= 1e-12);
    }

    #[test]
    fn variance_within_prior(seed in any::<u64>(), r in 1usize..=6, s in 1usize..=8) {
        let mut g = rng(seed);
        let kf = spd(&mut g, r, 1.0);
        let kx = spd(&mut g, s, 1.0);
        let lf = cholesky(&kf, JitterPolicy::default(), "K_f").unwrap();
        let lx = cholesky(&kx, JitterPolicy::default(), "K_x").unwrap();
        // a training pair: the cross vectors are columns of the factors
        let i = g.random_range(0..r);
        let j = g.random_range(0..s);
        let prior = kf[(i, i)] * kx[(j, j)];
        let v = kron_posterior_var(&lf, &lx, prior, &kf.column(i).into_owned(), &kx.column(j).into_owned()).unwrap();
        prop_assert!(v >= 0.0 && v <= prior + 1e-10);
        prop_assert!(v <= 1e-8 * prior);
    }
}

#[test]
fn scaling_spatial_factor_scales_quadratic() {
    let mut g = rng(5);
    let kf = spd(&mut g, 3, 1.0);
    let kx = spd(&mut g, 4, 1.0);
    let y = DVector::from_fn(12, |_, _| g.random_range(-1.0..1.0));
    let lf = cholesky(&kf, JitterPolicy::none(), "K_f").unwrap();
    let z1 = kron_quadratic(&y, &lf, &cholesky(&kx, JitterPolicy::none(), "K_x").unwrap()).unwrap();
    let z4 = kron_quadratic(&y, &lf, &cholesky(&(kx * 4.0), JitterPolicy::none(), "K_x").unwrap()).unwrap();
    assert!((z4 - z1 / 4.0).abs() <= 1e-12 * z1);
}
