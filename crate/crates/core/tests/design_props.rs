mod common;

use common::rng;
use fungp::design::{
    compute_efp, kmeans, maximin_lhd, maximin_lhd_candidates, scalar_summaries, select_doe, select_scenarios,
    standardize_columns, DoeConfig,
};
use fungp::Point2;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn within_inertia(points: &DMatrix<f64>, labels: &[usize], k: usize) -> f64 {
    let d = points.ncols();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<usize> = (0..points.nrows()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let mean: Vec<f64> = (0..d)
            .map(|j| members.iter().map(|&i| points[(i, j)]).sum::<f64>() / members.len() as f64)
            .collect();
        for &i in &members {
            total += (0..d).map(|j| (points[(i, j)] - mean[j]).powi(2)).sum::<f64>();
        }
    }
    total
}

fn grid(n: usize) -> Vec<Point2> {
    (0..n * n).map(|i| [(i % n) as f64 / (n - 1) as f64, (i / n) as f64 / (n - 1) as f64]).collect()
}

#[test]
fn two_blobs_match_best_partition() {
    let mut g = rng(17);
    let pts = DMatrix::from_fn(20, 2, |i, j| {
        let centre = if i < 10 { 0.0 } else { 1.0 };
        (if j == 0 { centre } else { 0.0 }) + g.random_range(-0.15..0.15)
    });
    // exhaustive search over all 2-partitions (point 0 fixed in cluster 0)
    let mut best = (f64::INFINITY, 0u32);
    for mask in 0..(1u32 << 19) {
        let labels: Vec<usize> = (0..20).map(|i| if i == 0 { 0 } else { ((mask >> (i - 1)) & 1) as usize }).collect();
        if labels.iter().all(|&l| l == 0) {
            continue;
        }
        let w = within_inertia(&pts, &labels, 2);
        if w < best.0 {
            best = (w, mask);
        }
    }
    let km = kmeans(&pts, 2, 5).unwrap();
    assert!((km.inertia - best.0).abs() <= 1e-9 * best.0);
    let first = km.assignments[0];
    assert!(km.assignments[..10].iter().all(|&a| a == first));
    assert!(km.assignments[10..].iter().all(|&a| a != first));
}

#[test]
fn single_cluster_on_a_uniform_strip_picks_the_central_point() {
    let locs: Vec<Point2> = (0..11).map(|i| [i as f64 / 10.0, 0.0]).collect();
    let efp = vec![0.2; 11];
    let cfg = DoeConfig { kappa1: 0, kappa2: 1, ..DoeConfig::default() };
    let d = select_doe(&locs, &efp, &cfg).unwrap();
    // nearest-to-mean oracle
    let mean = locs.iter().map(|p| p[0]).sum::<f64>() / 11.0;
    let expected = (0..11)
        .min_by(|&a, &b| (locs[a][0] - mean).abs().total_cmp(&(locs[b][0] - mean).abs()))
        .unwrap();
    assert_eq!(d.indices, vec![expected]);
    assert_eq!(d.classes, vec![2]);
}

#[test]
fn lhd_returns_the_best_candidate() {
    let (cands, best) = maximin_lhd_candidates(8, 2, 25, 3).unwrap();
    let min_d = |m: &DMatrix<f64>| {
        let mut d = f64::INFINITY;
        for a in 0..m.nrows() {
            for b in 0..a {
                d = d.min((m.row(a) - m.row(b)).norm());
            }
        }
        d
    };
    let chosen = min_d(&cands[best]);
    assert!(cands.iter().all(|c| chosen >= min_d(c)));
    assert_eq!(maximin_lhd(8, 2, 25, 3).unwrap(), cands[best]);
}

#[test]
fn monotone_channel_summaries() {
    let t: Vec<f64> = (0..37).map(|i| i as f64 / 36.0).collect();
    let s = scalar_summaries(&[t]).unwrap();
    assert_eq!(s[0], 1.0);
    assert!((s[1] - 0.5).abs() < 1e-15);
}

#[test]
fn standardized_features_have_unit_moments() {
    let mut g = rng(4);
    let f = DMatrix::from_fn(15, 4, |_, _| g.random_range(-3.0..7.0));
    let z = standardize_columns(&f);
    for c in z.column_iter() {
        assert!(c.mean().abs() < 1e-12);
        assert!((c.map(|v| v * v).mean() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn two_feature_clusters_give_one_representative_each() {
    let mut g = rng(8);
    let f = DMatrix::from_fn(10, 2, |i, _| if i % 2 == 0 { 0.0 } else { 5.0 } + g.random_range(-0.2..0.2));
    let sel = select_scenarios(&f, 2, 1, &[]).unwrap();
    assert_eq!(sel.len(), 2);
    assert_ne!(sel[0] % 2, sel[1] % 2);
}

#[test]
fn enrichment_never_repeats_indices() {
    let mut g = rng(9);
    let f = DMatrix::from_fn(30, 3, |_, _| g.random_range(-1.0..1.0));
    let first = select_scenarios(&f, 6, 2, &[]).unwrap();
    let second = select_scenarios(&f, 8, 3, &first).unwrap();
    assert!(second.iter().all(|i| !first.contains(i)));
    let all = select_scenarios(&f, 30, 0, &[]).unwrap();
    let mut sorted = all.clone();
    sorted.sort();
    assert_eq!(sorted, (0..30).collect::<Vec<_>>());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn efp_lies_in_unit_interval(r in 1usize..8, g in 1usize..20, seed in any::<u64>()) {
        let mut rg = rng(seed);
        let v = DMatrix::from_fn(r, g, |_, _| (rg.random_range(-1.0..2.0f64)).max(0.0));
        let efp = compute_efp(&v, 0.0).unwrap();
        prop_assert!(efp.iter().all(|e| (0.0..=1.0).contains(e)));
        prop_assert!(compute_efp(&DMatrix::zeros(r, g), 0.0).unwrap().iter().all(|e| *e == 0.0));
    }

    #[test]
    fn kmeans_inertia_is_nonincreasing(n in 2usize..40, k in 1usize..6, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let mut rg = rng(seed);
        let pts = DMatrix::from_fn(n, 3, |_, _| rg.random::<f64>());
        let km = kmeans(&pts, k, seed).unwrap();
        for w in km.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].max(1.0));
        }
        prop_assert_eq!(&km, &kmeans(&pts, k, seed).unwrap());
    }

    #[test]
    fn lhd_is_stratified(n in 1usize..30, dims in 1usize..5, restarts in 1usize..5, seed in any::<u64>()) {
        let d = maximin_lhd(n, dims, restarts, seed).unwrap();
        for col in d.column_iter() {
            let mut seen = vec![false; n];
            for v in col.iter() {
                prop_assert!((0.0..1.0).contains(v));
                let k = (v * n as f64).floor() as usize;
                prop_assert!(!seen[k]);
                seen[k] = true;
            }
        }
        prop_assert_eq!(d, maximin_lhd(n, dims, restarts, seed).unwrap());
    }

    #[test]
    fn doe_has_no_duplicates_and_promised_count(
        k1 in 1usize..8,
        k2 in 1usize..8,
        n_mand in 0usize..4,
        seed in any::<u64>(),
    ) {
        let locs = grid(12);
        let efp: Vec<f64> = locs.iter().map(|p| (1.0 - p[0]).clamp(0.0, 1.0) * (p[1] > 0.1) as u8 as f64).collect();
        let mut rg = rng(seed);
        let mandatory: Vec<usize> = (0..n_mand).map(|_| rg.random_range(0..locs.len())).collect();
        let cfg = DoeConfig { kappa1: k1, kappa2: k2, mandatory: mandatory.clone(), seed, ..DoeConfig::default() };
        let d = select_doe(&locs, &efp, &cfg).unwrap();
        let mut u = d.indices.clone();
        u.sort();
        u.dedup();
        prop_assert_eq!(u.len(), d.indices.len());
        let clustered = d.classes.iter().filter(|c| **c != 0).count();
        prop_assert_eq!(clustered, k1 + k2);
        let extra = d.mandatory.iter().filter(|m| {
            let pos = d.indices.iter().position(|i| i == *m).unwrap();
            d.classes[pos] == 0
        }).count();
        prop_assert_eq!(d.indices.len(), k1 + k2 + extra);
        prop_assert!(mandatory.iter().all(|m| d.indices.contains(m)));
        prop_assert_eq!(&d, &select_doe(&locs, &efp, &cfg).unwrap());
    }
}
