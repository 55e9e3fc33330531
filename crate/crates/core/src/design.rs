//! Design of experiments: empirical flooding probability, k-means, the
//! EFP-stratified spatial design, maximin Latin hypercubes and scenario
//! subset selection.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::funspace::ScenarioInputs;
use crate::Point2;

/// Maps of several scenarios on a common set of locations.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMapStack {
    pub locations: Vec<Point2>,
    /// `R × G`.
    pub values: DMatrix<f64>,
}

impl GridMapStack {
    pub fn new(locations: Vec<Point2>, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != locations.len() {
            return shape_err(format!(
                "{} map columns for {} locations",
                values.ncols(),
                locations.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("map values must be finite".into()));
        }
        Ok(Self { locations, values })
    }
}

/// Per location, the fraction of scenarios whose value exceeds `wet_threshold`.
pub fn compute_efp(values: &DMatrix<f64>, wet_threshold: f64) -> Result<Vec<f64>> {
    if values.nrows() == 0 {
        return shape_err("no scenarios");
    }
    let r = values.nrows() as f64;
    Ok(values
        .column_iter()
        .map(|c| c.iter().filter(|v| **v > wet_threshold).count() as f64 / r)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    /// `k × d`.
    pub centroids: DMatrix<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

const KMEANS_MAX_ITER: usize = 300;
const KMEANS_TOL: f64 = 1e-9;

fn sq_dist(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    points
        .row(i)
        .iter()
        .zip(centroids.row(c).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Lloyd's algorithm with k-means++ seeding. Rows of `points` are observations.
pub fn kmeans(points: &DMatrix<f64>, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("k = {k} clusters for {n} points")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("k-means points must be finite".into()));
    }
    let d = points.ncols();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| {
            points
                .row(i)
                .iter()
                .zip(points.row(chosen[0]).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
        .collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, w) in nearest.iter().enumerate() {
                acc += w;
                if *w > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| nearest.iter().rposition(|w| *w > 0.0).expect("positive total"))
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k ≤ n")
        };
        chosen.push(next);
        for (i, w) in nearest.iter_mut().enumerate() {
            let v: f64 = points
                .row(i)
                .iter()
                .zip(points.row(next).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            *w = w.min(v);
        }
    }
    let mut centroids = DMatrix::from_fn(k, d, |c, j| points[(chosen[c], j)]);

    let mut assignments = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut inertia = 0.0;
        for (i, a) in assignments.iter_mut().enumerate() {
            let (best, dist) = (0..k)
                .map(|c| (c, sq_dist(points, i, &centroids, c)))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            *a = best;
            inertia += dist;
        }
        let prev = history.last().copied();
        history.push(inertia);
        if iterations >= KMEANS_MAX_ITER || prev.is_some_and(|p: f64| p - inertia <= KMEANS_TOL * p.max(1e-300)) {
            break;
        }
        // update step; empty clusters keep their centroid
        let mut sums = DMatrix::<f64>::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for j in 0..d {
                sums[(a, j)] += points[(i, j)];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[(c, j)] = sums[(c, j)] / counts[c] as f64;
                }
            }
        }
    }
    Ok(KMeansResult {
        centroids,
        inertia: *history.last().expect("at least one iteration"),
        inertia_history: history,
        assignments,
        iterations,
    })
}

/// For every centroid in order, the nearest candidate row not taken by an
/// earlier centroid.
fn nearest_unique(points: &DMatrix<f64>, centroids: &DMatrix<f64>) -> Vec<usize> {
    let mut taken = vec![false; points.nrows()];
    let mut out = Vec::with_capacity(centroids.nrows());
    for c in 0..centroids.nrows() {
        let best = (0..points.nrows())
            .filter(|i| !taken[*i])
            .map(|i| (i, sq_dist(points, i, centroids, c)))
            .fold(None, |acc: Option<(usize, f64)>, x| match acc {
                Some(a) if a.1 <= x.1 => Some(a),
                _ => Some(x),
            });
        if let Some((i, _)) = best {
            taken[i] = true;
            out.push(i);
        }
    }
    out
}

/// Selected locations of an EFP-stratified design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoeResult {
    /// Indices into the candidate grid, class 1 first, then class 2, then
    /// mandatory points not already selected.
    pub indices: Vec<usize>,
    /// 1 or 2 for clustered selections, 0 for mandatory points.
    pub classes: Vec<u8>,
    pub mandatory: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoeConfig {
    pub kappa1: usize,
    pub kappa2: usize,
    pub efp_split: f64,
    pub mandatory: Vec<usize>,
    pub seed: u64,
}

impl Default for DoeConfig {
    fn default() -> Self {
        Self {
            kappa1: 50,
            kappa2: 50,
            efp_split: 0.4,
            mandatory: Vec::new(),
            seed: 0,
        }
    }
}

/// Clusters class 1 (`efp ≥ split`) and class 2 (`0 < efp < split`) on
/// `(x₁, x₂, EFP)`, coordinates rescaled to the unit square, and keeps the
/// grid point nearest each centroid.
pub fn select_doe(grid: &[Point2], efp: &[f64], cfg: &DoeConfig) -> Result<DoeResult> {
    if grid.len() != efp.len() {
        return shape_err(format!("{} EFP values for {} locations", efp.len(), grid.len()));
    }
    if let Some(m) = cfg.mandatory.iter().find(|m| **m >= grid.len()) {
        return Err(Error::Parameter(format!("mandatory index {m} outside the grid of {}", grid.len())));
    }
    if efp.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::Data("EFP values must lie in [0, 1]".into()));
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in grid {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let scale = |v: f64, k: usize| if hi[k] > lo[k] { (v - lo[k]) / (hi[k] - lo[k]) } else { 0.0 };

    let mut indices = Vec::with_capacity(cfg.kappa1 + cfg.kappa2 + cfg.mandatory.len());
    let mut classes = Vec::with_capacity(indices.capacity());
    let member = |label: u8, e: f64| e > 0.0 && (e >= cfg.efp_split) == (label == 1);
    for (label, kappa) in [(1u8, cfg.kappa1), (2, cfg.kappa2)] {
        if kappa == 0 {
            continue;
        }
        let members: Vec<usize> = (0..grid.len()).filter(|&i| member(label, efp[i])).collect();
        if members.is_empty() {
            return Err(Error::Parameter(format!(
                "class {label} has no locations at EFP split {}; choose a different split",
                cfg.efp_split
            )));
        }
        let pts = DMatrix::from_fn(members.len(), 3, |i, j| match j {
            2 => efp[members[i]],
            k => scale(grid[members[i]][k], k),
        });
        let km = kmeans(&pts, kappa, cfg.seed.wrapping_add(label as u64))?;
        for i in nearest_unique(&pts, &km.centroids) {
            indices.push(members[i]);
            classes.push(label);
        }
    }
    let mut mandatory = Vec::new();
    for &m in &cfg.mandatory {
        if !mandatory.contains(&m) {
            mandatory.push(m);
        }
        if !indices.contains(&m) {
            indices.push(m);
            classes.push(0);
        }
    }
    Ok(DoeResult {
        indices,
        classes,
        mandatory,
    })
}

fn min_pairwise_distance(design: &DMatrix<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..design.nrows() {
        for b in 0..a {
            best = best.min((design.row(a) - design.row(b)).norm());
        }
    }
    best
}

fn random_lhd(n: usize, dims: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n, dims);
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..dims {
        perm.shuffle(rng);
        for i in 0..n {
            d[(i, j)] = (perm[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    d
}

/// Random-restart maximin Latin hypercube on `[0, 1]^dims`.
pub fn maximin_lhd(n: usize, dims: usize, restarts: usize, seed: u64) -> Result<DMatrix<f64>> {
    let (mut all, best) = maximin_lhd_candidates(n, dims, restarts, seed)?;
    Ok(all.swap_remove(best))
}

/// Every candidate examined by [`maximin_lhd`] and the index of the one returned.
pub fn maximin_lhd_candidates(n: usize, dims: usize, restarts: usize, seed: u64) -> Result<(Vec<DMatrix<f64>>, usize)> {
    if n == 0 || dims == 0 {
        return Err(Error::Parameter("a Latin hypercube needs n ≥ 1 and dims ≥ 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let candidates: Vec<DMatrix<f64>> = (0..restarts.max(1)).map(|_| random_lhd(n, dims, &mut rng)).collect();
    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let d = min_pairwise_distance(c);
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    Ok((candidates, best))
}

/// `(max, mean)` of every curve, in channel order.
pub fn scalar_summaries(curves: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * curves.len());
    for c in curves {
        if c.is_empty() {
            return shape_err("empty curve");
        }
        out.push(c.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        out.push(c.iter().sum::<f64>() / c.len() as f64);
    }
    Ok(out)
}

/// Centers each column and divides by its population standard deviation
/// (constant columns become zero).
pub fn standardize_columns(features: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = features.clone();
    let n = features.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        for v in col.iter_mut() {
            *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
        }
    }
    out
}

/// Standardized scalar features of every scenario, `R × 2Q`.
pub fn scenario_features(inputs: &ScenarioInputs) -> Result<DMatrix<f64>> {
    let r = inputs.n_scenarios();
    let rows = (0..r)
        .map(|i| scalar_summaries(&inputs.scenario_curves(i)))
        .collect::<Result<Vec<_>>>()?;
    let d = 2 * inputs.n_channels();
    Ok(standardize_columns(&DMatrix::from_fn(r, d, |i, j| rows[i][j])))
}

/// `k` representative scenarios: k-means on the rows not in `exclude`, then the
/// scenario nearest each centroid.
pub fn select_scenarios(features: &DMatrix<f64>, k: usize, seed: u64, exclude: &[usize]) -> Result<Vec<usize>> {
    let candidates: Vec<usize> = (0..features.nrows()).filter(|i| !exclude.contains(i)).collect();
    if k > candidates.len() {
        return Err(Error::Parameter(format!(
            "{k} scenarios requested from {} candidates",
            candidates.len()
        )));
    }
    let pts = features.select_rows(candidates.iter());
    let km = kmeans(&pts, k, seed)?;
    Ok(nearest_unique(&pts, &km.centroids).into_iter().map(|i| candidates[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn efp_examples() {
        let v = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 2.0, 0.0, 0.0, 1.0, 0.5, 0.0, 1.0, 0.0, 0.0, 3.0]);
        assert_eq!(compute_efp(&v, 0.0).unwrap(), vec![0.5, 0.0, 1.0]);
        assert_eq!(compute_efp(&DMatrix::zeros(3, 2), 0.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn kmeans_trivial_cases() {
        let pts = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 3.0, 3.0]);
        let all = kmeans(&pts, 4, 7).unwrap();
        assert_eq!(all.inertia, 0.0);
        let mut a = all.assignments.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 4);
        let one = kmeans(&pts, 1, 7).unwrap();
        assert_eq!(one.centroids[(0, 0)], 1.0);
        assert_eq!(one.centroids[(0, 1)], 1.25);
        assert!(matches!(kmeans(&pts, 5, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn lhd_stratification() {
        let d = maximin_lhd(2, 1, 5, 3).unwrap();
        let mut v = [d[(0, 0)], d[(1, 0)]];
        v.sort_by(f64::total_cmp);
        assert!(v[0] < 0.5 && v[1] >= 0.5);
    }

    #[test]
    fn summaries() {
        assert_eq!(scalar_summaries(&[vec![2.5; 4]]).unwrap(), vec![2.5, 2.5]);
        let t = crate::funspace::unit_grid(37);
        let s = scalar_summaries(&[t]).unwrap();
        assert_eq!(s[0], 1.0);
        assert!((s[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn doe_requires_nonempty_classes() {
        let grid = vec![[0.0, 0.0], [1.0, 0.0]];
        let cfg = DoeConfig {
            kappa1: 1,
            kappa2: 1,
            ..DoeConfig::default()
        };
        assert!(matches!(select_doe(&grid, &[0.1, 0.2], &cfg), Err(Error::Parameter(_))));
    }
}
