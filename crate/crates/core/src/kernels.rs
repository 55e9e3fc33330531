//! Stationary kernels and the separable functional × spatial covariance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::funspace::{check_lengthscales, functional_distance_sq, ProjectedInputs, ProjectedScenario};
use crate::Point2;

/// Distances below this are treated as exact zeros.
pub const ZERO_DISTANCE: f64 = 1e-15;

const SQRT3: f64 = 1.732_050_807_568_877_2;
const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    SquaredExponential,
    #[default]
    Matern52,
    Matern32,
    Exponential,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::SquaredExponential,
        KernelKind::Matern52,
        KernelKind::Matern32,
        KernelKind::Exponential,
    ];

    /// Unit-variance correlation at scaled distance `r ≥ 0`.
    #[inline]
    pub fn correlation(self, r: f64) -> f64 {
        if r < ZERO_DISTANCE {
            return 1.0;
        }
        match self {
            KernelKind::SquaredExponential => (-0.5 * r * r).exp(),
            KernelKind::Matern52 => {
                let s = SQRT5 * r;
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
            KernelKind::Matern32 => {
                let s = SQRT3 * r;
                (1.0 + s) * (-s).exp()
            }
            KernelKind::Exponential => (-r).exp(),
        }
    }

    /// Correlation as a function of the squared scaled distance.
    #[inline]
    pub fn correlation_sq(self, r2: f64) -> f64 {
        match self {
            KernelKind::SquaredExponential => (-0.5 * r2).exp(),
            _ => self.correlation(r2.max(0.0).sqrt()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::SquaredExponential => "squared_exponential",
            KernelKind::Matern52 => "matern52",
            KernelKind::Matern32 => "matern32",
            KernelKind::Exponential => "exponential",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "squared_exponential" | "se" | "rbf" | "gaussian" => Ok(KernelKind::SquaredExponential),
            "matern52" | "matern_52" | "matern5/2" => Ok(KernelKind::Matern52),
            "matern32" | "matern_32" | "matern3/2" => Ok(KernelKind::Matern32),
            "exponential" | "exp" | "matern12" => Ok(KernelKind::Exponential),
            other => Err(Error::Parameter(format!("unknown kernel kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Kernel value `σ² · ρ(r)` for a normed distance `r`.
pub fn stationary_value(kind: KernelKind, normed_distance: f64, variance: f64) -> Result<f64> {
    if !(normed_distance >= 0.0) {
        return Err(Error::Parameter(format!(
            "distance must be nonnegative, got {normed_distance}"
        )));
    }
    check_variance(variance)?;
    Ok(variance * kind.correlation(normed_distance))
}

fn check_variance(variance: f64) -> Result<()> {
    if variance.is_finite() && variance > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "variance must be positive and finite, got {variance}"
        )))
    }
}

/// Correlation kernel over functional inputs (unit variance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalKernelSpec {
    pub kind: KernelKind,
    pub lengthscales: Vec<f64>,
}

impl FunctionalKernelSpec {
    pub fn new(kind: KernelKind, lengthscales: Vec<f64>) -> Result<Self> {
        check_lengthscales(&lengthscales)?;
        Ok(Self { kind, lengthscales })
    }
}

/// Anisotropic covariance over planar locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialKernelSpec {
    pub kind: KernelKind,
    pub lengthscales: [f64; 2],
    pub variance: f64,
}

impl SpatialKernelSpec {
    pub fn new(kind: KernelKind, lengthscales: [f64; 2], variance: f64) -> Result<Self> {
        check_lengthscales(&lengthscales)?;
        check_variance(variance)?;
        Ok(Self {
            kind,
            lengthscales,
            variance,
        })
    }

    #[inline]
    fn scaled_distance_sq(&self, x: &Point2, y: &Point2) -> f64 {
        let d1 = (x[0] - y[0]) / self.lengthscales[0];
        let d2 = (x[1] - y[1]) / self.lengthscales[1];
        d1 * d1 + d2 * d2
    }

    #[inline]
    pub(crate) fn eval(&self, x: &Point2, y: &Point2) -> f64 {
        self.variance * self.kind.correlation_sq(self.scaled_distance_sq(x, y))
    }
}

/// `k_f(F, F') = ρ(‖F − F'‖_ℓ)`.
pub fn functional_corr(
    spec: &FunctionalKernelSpec,
    a: &ProjectedScenario,
    b: &ProjectedScenario,
) -> Result<f64> {
    let d2 = functional_distance_sq(a, b, &spec.lengthscales)?;
    Ok(spec.kind.correlation_sq(d2))
}

/// `k_x(x, x') = σ_x² ρ(√((Δx₁/ℓ₁)² + (Δx₂/ℓ₂)²))`.
pub fn spatial_cov(spec: &SpatialKernelSpec, x: &Point2, y: &Point2) -> Result<f64> {
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Data("coordinates must be finite".into()));
    }
    check_lengthscales(&spec.lengthscales)?;
    check_variance(spec.variance)?;
    Ok(spec.eval(x, y))
}

/// `R × R` functional correlation matrix over the projected scenarios.
pub fn gram_functional(spec: &FunctionalKernelSpec, projected: &ProjectedInputs) -> Result<DMatrix<f64>> {
    if spec.lengthscales.len() != projected.n_channels() {
        return shape_err(format!(
            "{} functional length-scales for {} channels",
            spec.lengthscales.len(),
            projected.n_channels()
        ));
    }
    check_lengthscales(&spec.lengthscales)?;
    let rows = projected.rows();
    gram_functional_rows(spec, &rows)
}

pub(crate) fn gram_functional_rows(
    spec: &FunctionalKernelSpec,
    rows: &[ProjectedScenario],
) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let mut k = DMatrix::identity(r, r);
    for i in 0..r {
        for j in 0..i {
            let v = functional_corr(spec, &rows[i], &rows[j])?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Cross-correlation vector between a query scenario and each row.
pub(crate) fn functional_cross(
    spec: &FunctionalKernelSpec,
    query: &ProjectedScenario,
    rows: &[ProjectedScenario],
) -> Result<nalgebra::DVector<f64>> {
    let vals = rows
        .iter()
        .map(|row| functional_corr(spec, query, row))
        .collect::<Result<Vec<_>>>()?;
    Ok(nalgebra::DVector::from_vec(vals))
}

/// `S × S` spatial covariance matrix.
pub fn gram_spatial(spec: &SpatialKernelSpec, locations: &[Point2]) -> Result<DMatrix<f64>> {
    check_lengthscales(&spec.lengthscales)?;
    check_variance(spec.variance)?;
    if locations.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("coordinates must be finite".into()));
    }
    let s = locations.len();
    let mut k = DMatrix::zeros(s, s);
    for i in 0..s {
        k[(i, i)] = spec.variance;
        for j in 0..i {
            let v = spec.eval(&locations[i], &locations[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// `S × M` cross-covariance between training locations (rows) and queries.
pub fn cross_spatial(spec: &SpatialKernelSpec, train: &[Point2], queries: &[Point2]) -> DMatrix<f64> {
    DMatrix::from_fn(train.len(), queries.len(), |i, j| {
        spec.eval(&train[i], &queries[j])
    })
}

/// Separable covariance `k_f(F, F') · k_x(x, x')`.
pub fn separable_cov(
    fspec: &FunctionalKernelSpec,
    sspec: &SpatialKernelSpec,
    a: (&ProjectedScenario, &Point2),
    b: (&ProjectedScenario, &Point2),
) -> Result<f64> {
    Ok(functional_corr(fspec, a.0, b.0)? * spatial_cov(sspec, a.1, b.1)?)
}

/// Read-only view of `K_f` as the coregionalization matrix `B` of a
/// multioutput GP: output `i` is the map of scenario `i` and
/// `k_{i,j}(x, x') = b_{i,j} k_x(x, x')`.
#[derive(Debug, Clone)]
pub struct CoregionalizationView<'a> {
    k_f: &'a DMatrix<f64>,
}

impl<'a> CoregionalizationView<'a> {
    pub fn new(k_f: &'a DMatrix<f64>) -> Result<Self> {
        if !k_f.is_square() {
            return shape_err("coregionalization matrix must be square");
        }
        let scale = k_f.amax().max(1.0);
        for i in 0..k_f.nrows() {
            if (k_f[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::Data(format!(
                    "K_f diagonal entry {i} is {}, expected 1",
                    k_f[(i, i)]
                )));
            }
            for j in 0..i {
                if (k_f[(i, j)] - k_f[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Data(format!("K_f is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { k_f })
    }

    pub fn n_outputs(&self) -> usize {
        self.k_f.nrows()
    }

    pub fn coefficient(&self, i: usize, j: usize) -> f64 {
        self.k_f[(i, j)]
    }

    /// `k_{i,j}(x, x') = b_{i,j} k_x(x, x')`.
    pub fn output_cov(&self, sspec: &SpatialKernelSpec, i: usize, j: usize, x: &Point2, y: &Point2) -> Result<f64> {
        Ok(self.coefficient(i, j) * spatial_cov(sspec, x, y)?)
    }
}
