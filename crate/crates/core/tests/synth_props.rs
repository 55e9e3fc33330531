mod common;

use common::rng;
use fungp::funspace::unit_grid;
use fungp::kernels::KernelKind;
use fungp::synth::{gen_inputs, gen_maps_from_grams, generate, InputModel, InputSpec, SpatialLayout, SynthConfig};
use nalgebra::DMatrix;

fn total_variation(c: &[f64]) -> f64 {
    c.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

#[test]
fn longer_channel_lengthscales_give_smoother_means() {
    // channel i has ℓ_μ = i/10; mean curves averaged over 20 seeds
    let q = 8;
    let mut tv = vec![0.0; q];
    for seed in 0..20 {
        let spec = InputSpec {
            n_scenarios: 1,
            tau: 37,
            kind: KernelKind::Matern52,
            model: InputModel::Centered,
            channel_variances: vec![0.5; q],
            channel_lengthscales: (1..=q).map(|i| i as f64 / 10.0).collect(),
        };
        let inputs = gen_inputs(&spec, &mut rng(seed)).unwrap();
        for (i, t) in tv.iter_mut().enumerate() {
            let row: Vec<f64> = inputs.channel(i).row(0).iter().copied().collect();
            *t += total_variation(&row) / 20.0;
        }
    }
    for w in tv.windows(2) {
        assert!(w[1] < w[0], "{tv:?}");
    }
}

#[test]
fn identity_coregionalization_gives_uncorrelated_maps() {
    let r = 2;
    let grid = unit_grid(6);
    let locs: Vec<[f64; 2]> = grid.iter().map(|x| [*x, 0.0]).collect();
    let kx = DMatrix::from_fn(6, 6, |i, j| KernelKind::Matern52.correlation((locs[i][0] - locs[j][0]).abs() / 0.3));
    let kf = DMatrix::identity(r, r);
    let mut g = rng(1);
    let n = 4000;
    let mut acc = 0.0;
    let mut a2 = 0.0;
    let mut b2 = 0.0;
    for _ in 0..n {
        let y = gen_maps_from_grams(&kf, &kx, &mut g).unwrap();
        acc += y[(0, 2)] * y[(1, 2)];
        a2 += y[(0, 2)] * y[(0, 2)];
        b2 += y[(1, 2)] * y[(1, 2)];
    }
    let corr = acc / (a2 * b2).sqrt();
    assert!(corr.abs() < 5.0 / (n as f64).sqrt(), "{corr}");
}

#[test]
fn permuting_k_f_permutes_the_stack() {
    // exchangeability in law: the permuted Gram gives the same stack up to
    // the row permutation when driven by the correspondingly permuted noise
    let kf = DMatrix::from_row_slice(3, 3, &[1.0, 0.6, 0.2, 0.6, 1.0, 0.4, 0.2, 0.4, 1.0]);
    let kx = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    let perm = [2usize, 0, 1];
    let kfp = DMatrix::from_fn(3, 3, |i, j| kf[(perm[i], perm[j])]);
    // second moments over many draws agree entrywise
    let n = 5000;
    let mut c = DMatrix::<f64>::zeros(3, 3);
    let mut cp = DMatrix::<f64>::zeros(3, 3);
    let (mut g1, mut g2) = (rng(5), rng(6));
    for _ in 0..n {
        let y = gen_maps_from_grams(&kf, &kx, &mut g1).unwrap();
        let yp = gen_maps_from_grams(&kfp, &kx, &mut g2).unwrap();
        let col = y.column(0);
        let colp = yp.column(0);
        c += col * col.transpose();
        cp += colp * colp.transpose();
    }
    for i in 0..3 {
        for j in 0..3 {
            let a = c[(perm[i], perm[j])] / n as f64;
            let b = cp[(i, j)] / n as f64;
            assert!((a - b).abs() < 10.0 * (2.0 / n as f64).sqrt(), "{i},{j}: {a} vs {b}");
        }
    }
}

#[test]
fn generator_is_deterministic_per_seed() {
    let cfg = SynthConfig::multioutput_preset(4, SpatialLayout::Lhd { n: 9, restarts: 5 }, 123);
    assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    let other = SynthConfig { seed: 124, ..cfg.clone() };
    assert_ne!(generate(&cfg).unwrap().maps, generate(&other).unwrap().maps);
}
