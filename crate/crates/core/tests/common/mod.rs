#![allow(dead_code)]

use fungp::funspace::{PcaBasis, ProjectedInputs, ProjectedScenario};
use fungp::gp::Hyperparameters;
use fungp::kernels::KernelKind;
use fungp::Point2;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Kernel formulas written out independently of the library.
pub fn oracle_corr(kind: KernelKind, r: f64) -> f64 {
    match kind {
        KernelKind::SquaredExponential => (-0.5 * r * r).exp(),
        KernelKind::Matern52 => {
            let a = 5f64.sqrt() * r;
            (1.0 + a + 5.0 * r * r / 3.0) * (-a).exp()
        }
        KernelKind::Matern32 => {
            let a = 3f64.sqrt() * r;
            (1.0 + a) * (-a).exp()
        }
        KernelKind::Exponential => (-r).exp(),
    }
}

/// Projected inputs whose bases are coordinate vectors, so the coefficients
/// are exactly the given matrices.
pub fn identity_inputs(coefficients: Vec<DMatrix<f64>>) -> ProjectedInputs {
    let bases = coefficients
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let p = c.ncols();
            PcaBasis {
                channel_id: format!("c{i}"),
                mean_curve: DVector::zeros(p),
                basis: DMatrix::identity(p, p),
                eigenvalues: vec![1.0; p],
                total_variance: p as f64,
                inertia_target: 1.0,
            }
        })
        .collect();
    ProjectedInputs::from_parts(bases, coefficients).unwrap()
}

pub fn random_coefficients(rng: &mut ChaCha20Rng, r: usize, p_vector: &[usize], spread: f64) -> Vec<DMatrix<f64>> {
    p_vector
        .iter()
        .map(|&p| DMatrix::from_fn(r, p, |_, _| spread * (rng.random::<f64>() - 0.5)))
        .collect()
}

pub fn random_scenario(rng: &mut ChaCha20Rng, p_vector: &[usize], spread: f64) -> ProjectedScenario {
    ProjectedScenario(
        p_vector
            .iter()
            .map(|&p| DVector::from_fn(p, |_, _| spread * (rng.random::<f64>() - 0.5)))
            .collect(),
    )
}

/// Random points of the unit square at least `min_dist` apart.
pub fn spread_points(rng: &mut ChaCha20Rng, n: usize, min_dist: f64) -> Vec<Point2> {
    let mut pts: Vec<Point2> = Vec::with_capacity(n);
    while pts.len() < n {
        let p = [rng.random::<f64>(), rng.random::<f64>()];
        if pts.iter().all(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() >= min_dist) {
            pts.push(p);
        }
    }
    pts
}

pub fn oracle_kf(hyp: &Hyperparameters, a: &ProjectedScenario, b: &ProjectedScenario) -> f64 {
    let d2: f64 = a
        .0
        .iter()
        .zip(&b.0)
        .zip(&hyp.functional_lengthscales)
        .map(|((x, y), l)| (x - y).norm_squared() / (l * l))
        .sum();
    oracle_corr(hyp.functional_kind, d2.sqrt())
}

pub fn oracle_kx(hyp: &Hyperparameters, x: &Point2, y: &Point2) -> f64 {
    let [l1, l2] = hyp.spatial_lengthscales;
    let r = (((x[0] - y[0]) / l1).powi(2) + ((x[1] - y[1]) / l2).powi(2)).sqrt();
    hyp.spatial_variance * oracle_corr(hyp.spatial_kind, r)
}

/// Full covariance of the tuples `(scenario, location)` plus `jitter·I`.
pub fn oracle_gram(hyp: &Hyperparameters, tuples: &[(ProjectedScenario, Point2)], jitter: f64) -> DMatrix<f64> {
    let n = tuples.len();
    DMatrix::from_fn(n, n, |i, j| {
        let v = oracle_kf(hyp, &tuples[i].0, &tuples[j].0) * oracle_kx(hyp, &tuples[i].1, &tuples[j].1);
        if i == j {
            v + jitter
        } else {
            v
        }
    })
}

/// Scenario index fastest: tuple `s·R + r` is `(scenario r, location s)`.
pub fn tensor_tuples(rows: &[ProjectedScenario], locations: &[Point2]) -> Vec<(ProjectedScenario, Point2)> {
    locations
        .iter()
        .flat_map(|x| rows.iter().map(move |f| (f.clone(), *x)))
        .collect()
}

pub fn flatten(y: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(y.as_slice())
}

pub struct DenseOracle {
    pub quadratic: f64,
    pub logdet: f64,
    pub log_likelihood: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    tuples: Vec<(ProjectedScenario, Point2)>,
    hyp: Hyperparameters,
}

impl DenseOracle {
    pub fn new(hyp: &Hyperparameters, tuples: Vec<(ProjectedScenario, Point2)>, y: &DVector<f64>, k: DMatrix<f64>) -> Self {
        let n = y.len() as f64;
        let chol = k.cholesky().expect("oracle covariance is positive definite");
        let z = chol.l().solve_lower_triangular(y).unwrap();
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let quadratic = z.norm_squared();
        let alpha = chol.solve(y);
        Self {
            quadratic,
            logdet,
            log_likelihood: -0.5 * quadratic - 0.5 * logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln(),
            chol,
            alpha,
            tuples,
            hyp: hyp.clone(),
        }
    }

    /// Posterior mean and variance at one query.
    pub fn predict(&self, q: &ProjectedScenario, x: &Point2) -> (f64, f64) {
        let k = DVector::from_iterator(
            self.tuples.len(),
            self.tuples
                .iter()
                .map(|(f, y)| oracle_kf(&self.hyp, q, f) * oracle_kx(&self.hyp, x, y)),
        );
        let mean = k.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&k).unwrap();
        (mean, self.hyp.spatial_variance - v.norm_squared())
    }
}

pub fn rel_close(a: f64, b: f64, rtol: f64, scale: f64) -> bool {
    (a - b).abs() <= rtol * b.abs().max(scale)
}

pub fn random_kind(rng: &mut ChaCha20Rng) -> KernelKind {
    KernelKind::ALL[rng.random_range(0..4)]
}
