//! Discretized functional inputs and their PCA representation.
//!
//! Every channel of every scenario is a time series sampled on a shared,
//! uniformly spaced grid. Per channel, a PCA basis is fitted on the scenario
//! replicates and curves are replaced by their coefficients. Because the basis
//! is orthonormal under the unit-weight inner product on the grid, the L²
//! distance between two projected curves is the Euclidean distance between
//! their coefficient vectors; the grid step is absorbed into the length-scales
//! (see [`lengthscale_for_grid`]).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

const UNIFORM_GRID_RTOL: f64 = 1e-6;

/// One channel of one scenario: a curve sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalInput {
    channel_id: String,
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl FunctionalInput {
    pub fn new(channel_id: impl Into<String>, grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_grid(&grid)?;
        if values.len() != grid.len() {
            return shape_err(format!(
                "curve has {} values for a grid of {} stamps",
                values.len(),
                grid.len()
            ));
        }
        check_finite(&values, "curve values")?;
        Ok(Self {
            channel_id: channel_id.into(),
            grid,
            values,
        })
    }

    pub fn channel_id(&self) -> &str {
        &self.channel_id
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `R` scenarios, each with the same `Q` channels sampled on one shared grid.
///
/// Stored channel-wise: channel `i` is an `R × τ` matrix whose rows are the
/// scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioInputs {
    grid: Vec<f64>,
    channel_ids: Vec<String>,
    channels: Vec<DMatrix<f64>>,
}

impl ScenarioInputs {
    /// Builds the set from per-channel `R × τ` matrices.
    pub fn new(grid: Vec<f64>, channels: Vec<(String, DMatrix<f64>)>) -> Result<Self> {
        check_grid(&grid)?;
        if channels.is_empty() {
            return Err(Error::Data("at least one channel is required".into()));
        }
        let r = channels[0].1.nrows();
        if r == 0 {
            return Err(Error::Data("at least one scenario is required".into()));
        }
        for (id, m) in &channels {
            if m.nrows() != r {
                return shape_err(format!(
                    "channel {id} has {} scenarios, expected {r}",
                    m.nrows()
                ));
            }
            if m.ncols() != grid.len() {
                return shape_err(format!(
                    "channel {id} has {} time stamps, grid has {}",
                    m.ncols(),
                    grid.len()
                ));
            }
            check_finite(m.as_slice(), &format!("channel {id}"))?;
        }
        let (channel_ids, channels) = channels.into_iter().unzip();
        Ok(Self {
            grid,
            channel_ids,
            channels,
        })
    }

    /// Builds the set from scenario records. Every record must carry the same
    /// channels, in the same order, on identical grids.
    pub fn from_scenarios(scenarios: &[Vec<FunctionalInput>]) -> Result<Self> {
        let first = scenarios
            .first()
            .ok_or_else(|| Error::Data("at least one scenario is required".into()))?;
        if first.is_empty() {
            return Err(Error::Data("at least one channel is required".into()));
        }
        let grid = first[0].grid.clone();
        let tau = grid.len();
        let mut channels: Vec<(String, DMatrix<f64>)> = first
            .iter()
            .map(|c| (c.channel_id.clone(), DMatrix::zeros(scenarios.len(), tau)))
            .collect();
        for (r, scenario) in scenarios.iter().enumerate() {
            if scenario.len() != channels.len() {
                return shape_err(format!(
                    "scenario {r} has {} channels, expected {}",
                    scenario.len(),
                    channels.len()
                ));
            }
            for (input, (id, m)) in scenario.iter().zip(channels.iter_mut()) {
                if &input.channel_id != id {
                    return Err(Error::Data(format!(
                        "scenario {r} has channel {} where {id} was expected",
                        input.channel_id
                    )));
                }
                if input.grid != grid {
                    return Err(Error::Data(format!(
                        "scenario {r} channel {id} uses a different time grid"
                    )));
                }
                for (t, v) in input.values.iter().enumerate() {
                    m[(r, t)] = *v;
                }
            }
        }
        Self::new(grid, channels)
    }

    pub fn n_scenarios(&self) -> usize {
        self.channels[0].nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn channel_ids(&self) -> &[String] {
        &self.channel_ids
    }

    /// The `R × τ` replicate matrix of channel `i`.
    pub fn channel(&self, i: usize) -> &DMatrix<f64> {
        &self.channels[i]
    }

    /// The `Q` curves of scenario `r`.
    pub fn scenario_curves(&self, r: usize) -> Vec<Vec<f64>> {
        self.channels
            .iter()
            .map(|m| m.row(r).iter().copied().collect())
            .collect()
    }

    /// Scenario `r` as channel records.
    pub fn scenario(&self, r: usize) -> Vec<FunctionalInput> {
        self.channel_ids
            .iter()
            .zip(self.scenario_curves(r))
            .map(|(id, values)| FunctionalInput {
                channel_id: id.clone(),
                grid: self.grid.clone(),
                values,
            })
            .collect()
    }

    /// A new set holding only the listed scenarios, in the listed order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let r = self.n_scenarios();
        if let Some(bad) = indices.iter().find(|&&i| i >= r) {
            return shape_err(format!("scenario index {bad} out of range for {r} scenarios"));
        }
        if indices.is_empty() {
            return Err(Error::Data("cannot select zero scenarios".into()));
        }
        let channels = self
            .channels
            .iter()
            .map(|m| m.select_rows(indices.iter()))
            .collect();
        Ok(Self {
            grid: self.grid.clone(),
            channel_ids: self.channel_ids.clone(),
            channels,
        })
    }
}

/// A truncated PCA basis for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub channel_id: String,
    pub mean_curve: DVector<f64>,
    /// `τ × p`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Retained eigenvalues, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Sum of all eigenvalues of the replicate covariance.
    pub total_variance: f64,
    pub inertia_target: f64,
}

impl PcaBasis {
    pub fn n_components(&self) -> usize {
        self.basis.ncols()
    }

    pub fn curve_len(&self) -> usize {
        self.mean_curve.len()
    }

    /// Sum of the eigenvalues that were truncated away.
    pub fn dropped_variance(&self) -> f64 {
        (self.total_variance - self.eigenvalues.iter().sum::<f64>()).max(0.0)
    }

    /// Cumulative inertia retained by the basis.
    pub fn retained_inertia(&self) -> f64 {
        if self.total_variance == 0.0 {
            1.0
        } else {
            self.eigenvalues.iter().sum::<f64>() / self.total_variance
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigenvalues (clamped at zero) and indices of a symmetric matrix in
/// nonincreasing order; ties keep the solver's order.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, Vec<usize>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    (values, order, eig.eigenvectors)
}

/// Eigenpairs of the `τ × τ` covariance `(1/R) F_cᵀ F_c`.
fn primal_eigenpairs(centered: &DMatrix<f64>) -> (Vec<f64>, Vec<DVector<f64>>) {
    let mut cov = centered.tr_mul(centered) / centered.nrows() as f64;
    symmetrize(&mut cov);
    let (values, order, vectors) = sorted_eigen(cov);
    let cols = order
        .iter()
        .map(|&i| {
            let c = vectors.column(i).into_owned();
            let n = c.norm();
            c / n
        })
        .collect();
    (values, cols)
}

/// Same nonzero spectrum through the `R × R` Gram matrix `(1/R) F_c F_cᵀ`
/// when there are fewer replicates than time stamps: an eigenvector `u`
/// maps to `F_cᵀ u`. Only components well above round-off are returned.
fn dual_eigenpairs(centered: &DMatrix<f64>) -> (Vec<f64>, Vec<DVector<f64>>) {
    let mut gram = centered * centered.transpose() / centered.nrows() as f64;
    symmetrize(&mut gram);
    let (values, order, vectors) = sorted_eigen(gram);
    let floor = 1e-12 * values[0];
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        if values[k] <= floor {
            break;
        }
        let mut v = centered.tr_mul(&vectors.column(i));
        // two Gram–Schmidt passes against earlier columns
        for _ in 0..2 {
            for c in &cols {
                let d = c.dot(&v);
                v.axpy(-d, c, 1.0);
            }
        }
        let n = v.norm();
        if !(n > 0.0) {
            break;
        }
        cols.push(v / n);
    }
    (values, cols)
}

/// Fits a PCA basis to the rows of `replicates` (`R × τ`).
///
/// The basis holds the leading eigenvectors of `(1/R) F_cᵀ F_c`, where `F_c`
/// is the column-centered replicate matrix, truncated at the smallest number
/// of components whose cumulative inertia reaches `inertia_target`. Each
/// column is signed so that its largest-magnitude entry is positive.
pub fn fit_pca(
    channel_id: &str,
    replicates: &DMatrix<f64>,
    inertia_target: f64,
) -> Result<PcaBasis> {
    if !(inertia_target > 0.0 && inertia_target <= 1.0) {
        return Err(Error::Parameter(format!(
            "inertia target {inertia_target} outside (0, 1]"
        )));
    }
    let (r, tau) = replicates.shape();
    if r == 0 || tau == 0 {
        return shape_err("PCA needs at least one replicate and one time stamp");
    }
    check_finite(replicates.as_slice(), &format!("replicates of {channel_id}"))?;

    let mean_curve = DVector::from_iterator(tau, replicates.column_iter().map(|c| c.mean()));
    let mut centered = replicates.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean_curve.transpose();
    }
    let total_variance = centered.norm_squared() / r as f64;
    let scale = replicates.amax();
    if total_variance < 1e-12 * (scale * scale + 1.0) {
        return Ok(PcaBasis {
            channel_id: channel_id.to_string(),
            mean_curve,
            basis: DMatrix::zeros(tau, 0),
            eigenvalues: Vec::new(),
            total_variance,
            inertia_target,
        });
    }

    let (sorted, vectors) = if r < tau {
        dual_eigenpairs(&centered)
    } else {
        primal_eigenpairs(&centered)
    };
    let eig_total: f64 = sorted.iter().sum();

    let mut p = vectors.len();
    let mut cumulative = 0.0;
    for (j, lambda) in sorted.iter().enumerate().take(vectors.len()) {
        cumulative += lambda;
        if cumulative / eig_total >= inertia_target {
            p = j + 1;
            break;
        }
    }

    let mut basis = DMatrix::zeros(tau, p);
    for (k, v) in vectors.into_iter().take(p).enumerate() {
        let mut col = v;
        let lead = col.iamax();
        if col[lead] < 0.0 {
            col.neg_mut();
        }
        basis.set_column(k, &col);
    }

    Ok(PcaBasis {
        channel_id: channel_id.to_string(),
        mean_curve,
        basis,
        eigenvalues: sorted[..p].to_vec(),
        total_variance: eig_total,
        inertia_target,
    })
}

/// Coefficients `α = Φᵀ (curve − mean)`.
pub fn project(basis: &PcaBasis, curve: &[f64]) -> Result<DVector<f64>> {
    if curve.len() != basis.curve_len() {
        return shape_err(format!(
            "curve of length {} projected on a basis for length {}",
            curve.len(),
            basis.curve_len()
        ));
    }
    let centered = DVector::from_column_slice(curve) - &basis.mean_curve;
    Ok(basis.basis.tr_mul(&centered))
}

/// Curve `mean + Φ α`.
pub fn reconstruct(basis: &PcaBasis, coefficients: &DVector<f64>) -> Result<DVector<f64>> {
    if coefficients.len() != basis.n_components() {
        return shape_err(format!(
            "{} coefficients for a basis with {} components",
            coefficients.len(),
            basis.n_components()
        ));
    }
    Ok(&basis.mean_curve + &basis.basis * coefficients)
}

/// The coefficient vectors of one scenario, one per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedScenario(pub Vec<DVector<f64>>);

impl ProjectedScenario {
    pub fn n_channels(&self) -> usize {
        self.0.len()
    }

    pub fn p_vector(&self) -> Vec<usize> {
        self.0.iter().map(|c| c.len()).collect()
    }
}

/// Per-channel PCA bases together with the coefficients of the replicates
/// they were fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedInputs {
    bases: Vec<PcaBasis>,
    /// Per channel, `R × p_i`.
    coefficients: Vec<DMatrix<f64>>,
}

impl ProjectedInputs {
    /// Fits one basis per channel and projects every scenario.
    pub fn fit(inputs: &ScenarioInputs, inertia_target: f64) -> Result<Self> {
        let bases = (0..inputs.n_channels())
            .map(|i| fit_pca(&inputs.channel_ids()[i], inputs.channel(i), inertia_target))
            .collect::<Result<Vec<_>>>()?;
        Self::with_bases(bases, inputs)
    }

    /// Projects `inputs` on previously fitted bases.
    pub fn with_bases(bases: Vec<PcaBasis>, inputs: &ScenarioInputs) -> Result<Self> {
        if bases.len() != inputs.n_channels() {
            return shape_err(format!(
                "{} bases for {} channels",
                bases.len(),
                inputs.n_channels()
            ));
        }
        let mut coefficients = Vec::with_capacity(bases.len());
        for (i, basis) in bases.iter().enumerate() {
            let m = inputs.channel(i);
            if m.ncols() != basis.curve_len() {
                return Err(Error::Data(format!(
                    "channel {} has {} time stamps, its basis expects {}",
                    basis.channel_id,
                    m.ncols(),
                    basis.curve_len()
                )));
            }
            let mut centered = m.clone();
            for mut row in centered.row_iter_mut() {
                row -= basis.mean_curve.transpose();
            }
            coefficients.push(centered * &basis.basis);
        }
        Ok(Self {
            bases,
            coefficients,
        })
    }

    /// Builds directly from bases and per-channel coefficient matrices.
    pub fn from_parts(bases: Vec<PcaBasis>, coefficients: Vec<DMatrix<f64>>) -> Result<Self> {
        if bases.len() != coefficients.len() || bases.is_empty() {
            return shape_err("bases and coefficient matrices must pair up and be nonempty");
        }
        let r = coefficients[0].nrows();
        for (b, c) in bases.iter().zip(&coefficients) {
            if c.nrows() != r || c.ncols() != b.n_components() {
                return shape_err(format!(
                    "coefficients for channel {} are {}×{}, expected {r}×{}",
                    b.channel_id,
                    c.nrows(),
                    c.ncols(),
                    b.n_components()
                ));
            }
        }
        Ok(Self {
            bases,
            coefficients,
        })
    }

    pub fn bases(&self) -> &[PcaBasis] {
        &self.bases
    }

    pub fn n_scenarios(&self) -> usize {
        self.coefficients[0].nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.bases.len()
    }

    pub fn p_vector(&self) -> Vec<usize> {
        self.bases.iter().map(|b| b.n_components()).collect()
    }

    /// The `R × p_i` coefficient matrix of channel `i`.
    pub fn channel_coefficients(&self, i: usize) -> &DMatrix<f64> {
        &self.coefficients[i]
    }

    pub fn row(&self, r: usize) -> ProjectedScenario {
        ProjectedScenario(
            self.coefficients
                .iter()
                .map(|c| c.row(r).transpose())
                .collect(),
        )
    }

    pub fn rows(&self) -> Vec<ProjectedScenario> {
        (0..self.n_scenarios()).map(|r| self.row(r)).collect()
    }

    /// Projects a new scenario's `Q` curves with the stored bases.
    pub fn project_scenario(&self, curves: &[Vec<f64>]) -> Result<ProjectedScenario> {
        if curves.len() != self.bases.len() {
            return shape_err(format!(
                "scenario has {} channels, bases cover {}",
                curves.len(),
                self.bases.len()
            ));
        }
        curves
            .iter()
            .zip(&self.bases)
            .map(|(c, b)| {
                check_finite(c, &format!("channel {}", b.channel_id))?;
                project(b, c)
            })
            .collect::<Result<Vec<_>>>()
            .map(ProjectedScenario)
    }

    /// Keeps only the listed scenarios (bases unchanged).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let r = self.n_scenarios();
        if let Some(bad) = indices.iter().find(|&&i| i >= r) {
            return shape_err(format!("scenario index {bad} out of range for {r} scenarios"));
        }
        Ok(Self {
            bases: self.bases.clone(),
            coefficients: self
                .coefficients
                .iter()
                .map(|c| c.select_rows(indices.iter()))
                .collect(),
        })
    }
}

/// Squared, length-scaled L² distance between two projected scenarios:
/// `Σ_i ‖α_i − α'_i‖² / ℓ_i²`.
pub fn functional_distance_sq(
    a: &ProjectedScenario,
    b: &ProjectedScenario,
    lengthscales: &[f64],
) -> Result<f64> {
    if a.n_channels() != b.n_channels() || a.n_channels() != lengthscales.len() {
        return shape_err(format!(
            "distance between scenarios with {} and {} channels using {} length-scales",
            a.n_channels(),
            b.n_channels(),
            lengthscales.len()
        ));
    }
    check_lengthscales(lengthscales)?;
    let mut total = 0.0;
    for ((x, y), l) in a.0.iter().zip(&b.0).zip(lengthscales) {
        if x.len() != y.len() {
            return shape_err(format!(
                "coefficient vectors of length {} and {}",
                x.len(),
                y.len()
            ));
        }
        total += (x - y).norm_squared() / (l * l);
    }
    Ok(total)
}

pub(crate) fn check_lengthscales(lengthscales: &[f64]) -> Result<()> {
    match lengthscales.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        Some(l) => Err(Error::Parameter(format!(
            "length-scales must be positive and finite, got {l}"
        ))),
        None => Ok(()),
    }
}

/// Squared unit-weight distance between two curves on the same grid.
pub fn grid_distance_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Converts a length-scale for the continuous `∫ (f − f')² dt` distance into
/// the equivalent length-scale for the unit-weight grid inner product.
pub fn lengthscale_for_grid(continuous_lengthscale: f64, grid: &[f64]) -> Result<f64> {
    check_grid(grid)?;
    let dt = grid[1] - grid[0];
    Ok(continuous_lengthscale / dt.sqrt())
}

/// Converts a magnitude and a nautical direction in degrees into Cartesian
/// components `(m sin θ, m cos θ)`.
pub fn preprocess_cartesian(magnitude: f64, direction_deg: f64) -> Result<(f64, f64)> {
    if !magnitude.is_finite() || !direction_deg.is_finite() {
        return Err(Error::Data("magnitude and direction must be finite".into()));
    }
    if magnitude < 0.0 {
        return Err(Error::Data(format!("negative magnitude {magnitude}")));
    }
    let theta = direction_deg.to_radians();
    Ok((magnitude * theta.sin(), magnitude * theta.cos()))
}

/// Applies [`preprocess_cartesian`] along two curves.
pub fn cartesian_curves(magnitude: &[f64], direction_deg: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if magnitude.len() != direction_deg.len() {
        return shape_err("magnitude and direction curves differ in length");
    }
    magnitude
        .iter()
        .zip(direction_deg)
        .map(|(m, d)| preprocess_cartesian(*m, *d))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

/// Still water level: `MSL + tide + surge`, pointwise.
pub fn derive_swl(msl: &[f64], tide: &[f64], surge: &[f64]) -> Result<Vec<f64>> {
    if msl.len() != tide.len() || msl.len() != surge.len() {
        return shape_err(format!(
            "SWL components have lengths {}, {}, {}",
            msl.len(),
            tide.len(),
            surge.len()
        ));
    }
    Ok(msl
        .iter()
        .zip(tide)
        .zip(surge)
        .map(|((m, t), s)| m + t + s)
        .collect())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::Data(format!(
            "time grid needs at least 2 stamps, got {}",
            grid.len()
        )));
    }
    check_finite(grid, "time grid")?;
    let step = grid[1] - grid[0];
    if step <= 0.0 {
        return Err(Error::Data("time grid must be strictly increasing".into()));
    }
    for w in grid.windows(2) {
        let d = w[1] - w[0];
        if d <= 0.0 {
            return Err(Error::Data("time grid must be strictly increasing".into()));
        }
        if (d - step).abs() > UNIFORM_GRID_RTOL * step {
            return Err(Error::Data("time grid must be uniformly spaced".into()));
        }
    }
    Ok(())
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Data(format!("{what}: non-finite value at position {i}"))),
        None => Ok(()),
    }
}

/// `n` equispaced stamps on `[0, 1]`.
pub fn unit_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}
