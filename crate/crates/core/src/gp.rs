//! The emulator: marginal likelihood, maximum-likelihood fitting, posterior
//! prediction, map forecasting and leave-one-out validation.
//!
//! Two training layouts are supported. A [`TensorTrainingSet`] observes every
//! scenario on the same `S` locations and is handled entirely through the
//! Kronecker factors of [`crate::kronlin`]. A [`DenseTrainingSet`] holds
//! arbitrary `(scenario, location)` tuples and uses one dense Cholesky factor
//! of the `N × N` covariance (optionally with a nugget).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::eval::{self, MetricReport};
use crate::funspace::{grid_distance_sq, ProjectedInputs, ProjectedScenario};
use crate::kernels::{
    cross_spatial, functional_cross, gram_spatial, FunctionalKernelSpec, KernelKind, SpatialKernelSpec,
};
use crate::kronlin::{self, cholesky, clamp_variance, CholeskyFactor, JitterPolicy};
use crate::optim::{nelder_mead, SimplexOptions};
use crate::Point2;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Largest excursion of a log-parameter from its starting value during fitting
/// (a factor of 10⁴ on the length-scale).
const LOG_BOX: f64 = 9.210_340_371_976_184;

/// Query blocks for map prediction, bounding the `S × M` work matrices.
const PREDICT_BLOCK: usize = 2048;

/// Kernel hyperparameters of the separable model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub functional_kind: KernelKind,
    pub functional_lengthscales: Vec<f64>,
    pub spatial_kind: KernelKind,
    pub spatial_lengthscales: [f64; 2],
    pub spatial_variance: f64,
}

impl Hyperparameters {
    pub fn validate(&self, n_channels: usize) -> Result<()> {
        if self.functional_lengthscales.len() != n_channels {
            return shape_err(format!(
                "{} functional length-scales for {n_channels} channels",
                self.functional_lengthscales.len()
            ));
        }
        self.functional_spec()?;
        self.spatial_spec()?;
        Ok(())
    }

    pub fn functional_spec(&self) -> Result<FunctionalKernelSpec> {
        FunctionalKernelSpec::new(self.functional_kind, self.functional_lengthscales.clone())
    }

    pub fn spatial_spec(&self) -> Result<SpatialKernelSpec> {
        SpatialKernelSpec::new(self.spatial_kind, self.spatial_lengthscales, self.spatial_variance)
    }

    /// Scale-free starting point: per channel, the median pairwise distance
    /// between the scenarios' coefficient vectors; spatially, half the
    /// diagonal of the locations' bounding box; unit variance.
    pub fn default_init(
        inputs: &ProjectedInputs,
        locations: &[Point2],
        functional_kind: KernelKind,
        spatial_kind: KernelKind,
    ) -> Self {
        let r = inputs.n_scenarios();
        let functional_lengthscales = (0..inputs.n_channels())
            .map(|i| {
                let c = inputs.channel_coefficients(i);
                let mut d = Vec::with_capacity(r * (r.saturating_sub(1)) / 2);
                for a in 0..r {
                    for b in 0..a {
                        d.push((c.row(a) - c.row(b)).norm());
                    }
                }
                match eval::median(&d) {
                    Some(m) if m > 1e-12 => m,
                    _ => 1.0,
                }
            })
            .collect();
        let half_diag = if locations.is_empty() {
            0.0
        } else {
            let (mut lo, mut hi) = (locations[0], locations[0]);
            for p in locations {
                for k in 0..2 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
            0.5 * ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
        };
        let ls = if half_diag > 1e-12 { half_diag } else { 1.0 };
        Self {
            functional_kind,
            functional_lengthscales,
            spatial_kind,
            spatial_lengthscales: [ls, ls],
            spatial_variance: 1.0,
        }
    }

    fn log_lengthscales(&self) -> Vec<f64> {
        self.functional_lengthscales
            .iter()
            .chain(&self.spatial_lengthscales)
            .map(|l| l.ln())
            .collect()
    }

    fn with_log_lengthscales(&self, theta: &[f64]) -> Self {
        let q = self.functional_lengthscales.len();
        let mut h = self.clone();
        for (l, t) in h.functional_lengthscales.iter_mut().zip(theta) {
            *l = t.exp();
        }
        h.spatial_lengthscales = [theta[q].exp(), theta[q + 1].exp()];
        h
    }
}

/// Every scenario observed on the same spatial design.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorTrainingSet {
    inputs: ProjectedInputs,
    locations: Vec<Point2>,
    observations: DMatrix<f64>,
}

impl TensorTrainingSet {
    /// `observations` is `R × S`: row `r` is the map of scenario `r`.
    pub fn new(inputs: ProjectedInputs, locations: Vec<Point2>, observations: DMatrix<f64>) -> Result<Self> {
        if observations.nrows() != inputs.n_scenarios() || observations.ncols() != locations.len() {
            return shape_err(format!(
                "observations are {}×{}, expected {}×{}",
                observations.nrows(),
                observations.ncols(),
                inputs.n_scenarios(),
                locations.len()
            ));
        }
        if locations.is_empty() {
            return Err(Error::Data("at least one location is required".into()));
        }
        if observations.iter().chain(locations.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Data("observations and locations must be finite".into()));
        }
        Ok(Self {
            inputs,
            locations,
            observations,
        })
    }

    pub fn inputs(&self) -> &ProjectedInputs {
        &self.inputs
    }

    pub fn locations(&self) -> &[Point2] {
        &self.locations
    }

    pub fn observations(&self) -> &DMatrix<f64> {
        &self.observations
    }

    pub fn n_scenarios(&self) -> usize {
        self.observations.nrows()
    }

    pub fn n_locations(&self) -> usize {
        self.observations.ncols()
    }

    /// The set restricted to the listed scenarios.
    pub fn select_scenarios(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            inputs: self.inputs.select(indices)?,
            locations: self.locations.clone(),
            observations: self.observations.select_rows(indices.iter()),
        })
    }
}

/// One observation of a dense (non-tensorized) design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseObservation {
    pub scenario: usize,
    pub location: Point2,
    pub value: f64,
}

/// Arbitrary `(scenario, location)` observations.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrainingSet {
    inputs: ProjectedInputs,
    observations: Vec<DenseObservation>,
    noise_variance: f64,
}

impl DenseTrainingSet {
    pub fn new(inputs: ProjectedInputs, observations: Vec<DenseObservation>, noise_variance: f64) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Data("at least one observation is required".into()));
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::Parameter(format!(
                "noise variance must be nonnegative, got {noise_variance}"
            )));
        }
        let r = inputs.n_scenarios();
        for (n, o) in observations.iter().enumerate() {
            if o.scenario >= r {
                return shape_err(format!("observation {n} refers to scenario {} of {r}", o.scenario));
            }
            if !o.value.is_finite() || o.location.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("observation {n} is not finite")));
            }
        }
        Ok(Self {
            inputs,
            observations,
            noise_variance,
        })
    }

    /// Flattens a tensor design into tuples (scenario-major).
    pub fn from_tensor(ts: &TensorTrainingSet, noise_variance: f64) -> Result<Self> {
        let mut obs = Vec::with_capacity(ts.n_scenarios() * ts.n_locations());
        for r in 0..ts.n_scenarios() {
            for (s, loc) in ts.locations.iter().enumerate() {
                obs.push(DenseObservation {
                    scenario: r,
                    location: *loc,
                    value: ts.observations[(r, s)],
                });
            }
        }
        Self::new(ts.inputs.clone(), obs, noise_variance)
    }

    pub fn inputs(&self) -> &ProjectedInputs {
        &self.inputs
    }

    pub fn observations(&self) -> &[DenseObservation] {
        &self.observations
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn locations(&self) -> Vec<Point2> {
        self.observations.iter().map(|o| o.location).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPath {
    Kronecker,
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainingSet {
    Kronecker(TensorTrainingSet),
    Dense(DenseTrainingSet),
}

impl TrainingSet {
    pub fn inputs(&self) -> &ProjectedInputs {
        match self {
            TrainingSet::Kronecker(t) => &t.inputs,
            TrainingSet::Dense(d) => &d.inputs,
        }
    }

    pub fn path(&self) -> ModelPath {
        match self {
            TrainingSet::Kronecker(_) => ModelPath::Kronecker,
            TrainingSet::Dense(_) => ModelPath::Dense,
        }
    }

    pub fn n_observations(&self) -> usize {
        match self {
            TrainingSet::Kronecker(t) => t.observations.len(),
            TrainingSet::Dense(d) => d.observations.len(),
        }
    }

    fn noise_variance(&self) -> f64 {
        match self {
            TrainingSet::Kronecker(_) => 0.0,
            TrainingSet::Dense(d) => d.noise_variance,
        }
    }
}

impl From<TensorTrainingSet> for TrainingSet {
    fn from(t: TensorTrainingSet) -> Self {
        TrainingSet::Kronecker(t)
    }
}

impl From<DenseTrainingSet> for TrainingSet {
    fn from(d: DenseTrainingSet) -> Self {
        TrainingSet::Dense(d)
    }
}

/// Per-channel squared coefficient distances between training scenarios,
/// computed once and rescaled for every length-scale vector.
#[derive(Debug, Clone)]
struct ScenarioDistances {
    per_channel: Vec<DMatrix<f64>>,
}

impl ScenarioDistances {
    fn new(inputs: &ProjectedInputs) -> Self {
        let r = inputs.n_scenarios();
        let per_channel = (0..inputs.n_channels())
            .map(|i| {
                let c = inputs.channel_coefficients(i);
                let rows: Vec<Vec<f64>> = c.row_iter().map(|row| row.iter().copied().collect()).collect();
                let mut d = DMatrix::zeros(r, r);
                for a in 0..r {
                    for b in 0..a {
                        let v = grid_distance_sq(&rows[a], &rows[b]);
                        d[(a, b)] = v;
                        d[(b, a)] = v;
                    }
                }
                d
            })
            .collect();
        Self { per_channel }
    }

    fn correlation(&self, kind: KernelKind, lengthscales: &[f64]) -> DMatrix<f64> {
        let r = self.per_channel[0].nrows();
        let inv: Vec<f64> = lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
        let mut k = DMatrix::identity(r, r);
        for a in 0..r {
            for b in 0..a {
                let d2: f64 = self
                    .per_channel
                    .iter()
                    .zip(&inv)
                    .map(|(d, w)| d[(a, b)] * w)
                    .sum();
                let v = kind.correlation_sq(d2);
                k[(a, b)] = v;
                k[(b, a)] = v;
            }
        }
        k
    }
}

/// Cached factors of a conditioned model.
#[derive(Debug, Clone)]
enum ModelState {
    Kronecker {
        l_f: CholeskyFactor,
        l_x: CholeskyFactor,
        /// `L_f⁻¹ Y L_x⁻ᵀ`, `R × S`.
        a: DMatrix<f64>,
    },
    Dense {
        l: CholeskyFactor,
        /// `K⁻¹ y`.
        alpha: DVector<f64>,
    },
}

/// Quadratic form and log-determinant of one covariance evaluation.
struct Evaluation {
    quadratic: f64,
    logdet: f64,
    n: usize,
    state: ModelState,
}

impl Evaluation {
    fn log_likelihood(&self) -> f64 {
        -0.5 * self.quadratic - 0.5 * self.logdet - 0.5 * self.n as f64 * LN_2PI
    }

    /// Log-likelihood at the variance that maximizes it for this correlation
    /// structure, `σ̂² = z / N`, with `z` and the log-determinant computed at
    /// unit variance.
    fn profiled(&self) -> (f64, f64) {
        let n = self.n as f64;
        let var = self.quadratic / n;
        let ll = -0.5 * n - 0.5 * (self.logdet + n * var.ln()) - 0.5 * n * LN_2PI;
        (ll, var)
    }
}

fn evaluate(
    hyp: &Hyperparameters,
    training: &TrainingSet,
    distances: &ScenarioDistances,
    jitter: JitterPolicy,
) -> Result<Evaluation> {
    let k_f = distances.correlation(hyp.functional_kind, &hyp.functional_lengthscales);
    let sspec = hyp.spatial_spec()?;
    match training {
        TrainingSet::Kronecker(ts) => {
            let l_f = cholesky(&k_f, jitter, "K_f")?;
            let k_x = gram_spatial(&sspec, &ts.locations)?;
            let l_x = cholesky(&k_x, jitter, "K_x")?;
            let a = kronlin::kron_tri_solve_mat(&l_f, &l_x, &ts.observations)?;
            Ok(Evaluation {
                quadratic: a.norm_squared(),
                logdet: kronlin::kron_logdet(&l_f, &l_x)?,
                n: ts.observations.len(),
                state: ModelState::Kronecker { l_f, l_x, a },
            })
        }
        TrainingSet::Dense(ds) => {
            let obs = &ds.observations;
            let n = obs.len();
            let mut k = DMatrix::zeros(n, n);
            for i in 0..n {
                k[(i, i)] = sspec.variance + ds.noise_variance;
                for j in 0..i {
                    let v = k_f[(obs[i].scenario, obs[j].scenario)] * sspec.eval(&obs[i].location, &obs[j].location);
                    k[(i, j)] = v;
                    k[(j, i)] = v;
                }
            }
            let l = cholesky(&k, jitter, "K")?;
            let y = DVector::from_iterator(n, obs.iter().map(|o| o.value));
            let z = l.solve_lower(&y)?;
            let alpha = l
                .lower()
                .tr_solve_lower_triangular(&z)
                .ok_or_else(|| Error::Numerical("singular dense factor".into()))?;
            Ok(Evaluation {
                quadratic: z.norm_squared(),
                logdet: l.logdet()?,
                n,
                state: ModelState::Dense { l, alpha },
            })
        }
    }
}

fn check_training(hyp: &Hyperparameters, training: &TrainingSet) -> Result<()> {
    hyp.validate(training.inputs().n_channels())
}

/// Gaussian log marginal likelihood `−½ yᵀK⁻¹y − ½ log|K| − (N/2) log 2π`.
pub fn log_marginal_likelihood(hyp: &Hyperparameters, training: &TrainingSet) -> Result<f64> {
    check_training(hyp, training)?;
    let distances = ScenarioDistances::new(training.inputs());
    evaluate(hyp, training, &distances, JitterPolicy::default())
        .map(|e| e.log_likelihood())
        .map_err(|e| fit_error(e, hyp))
}

fn fit_error(e: Error, hyp: &Hyperparameters) -> Error {
    match e {
        Error::Factorization { matrix, detail } => Error::Fit(format!(
            "factorization of {matrix} failed ({detail}) at hyperparameters {hyp:?}"
        )),
        other => other,
    }
}

/// Settings of the multi-start derivative-free likelihood search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Objective evaluations allowed per local search.
    pub max_evaluations: usize,
    /// Number of local searches; the first starts at the initialization, the
    /// others at Gaussian perturbations of it in log space.
    pub restarts: usize,
    pub seed: u64,
    /// Relative tolerance on the spread of objective values over the simplex.
    pub tolerance: f64,
    /// Initial simplex edge, in log-parameter units.
    pub initial_step: f64,
    /// Standard deviation of the restart perturbations, in log units.
    pub restart_spread: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_evaluations: 600,
            restarts: 3,
            seed: 0,
            tolerance: 1e-8,
            initial_step: 0.5,
            restart_spread: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    /// Starting log-length-scales (and log-variance when it is not profiled).
    pub start: Vec<f64>,
    /// Best log-likelihood reached; `None` if every evaluation failed.
    pub log_likelihood: Option<f64>,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Log-likelihood at the stored hyperparameters.
    pub log_likelihood: f64,
    /// Log-likelihood at the initialization, when it could be evaluated.
    pub init_log_likelihood: Option<f64>,
    pub evaluations: usize,
    pub converged: bool,
    pub best_restart: usize,
    pub restarts: Vec<RestartRecord>,
    /// Absolute jitter added to `K_f` and `K_x` (Kronecker) or `K` (dense).
    pub jitter: Vec<f64>,
}

/// Per-location posterior summary for a set of queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPrediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// True where a negative mean was set to zero.
    pub clamped: Vec<bool>,
}

impl MapPrediction {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn sd(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.sqrt()).collect()
    }

    fn extend(&mut self, other: MapPrediction) {
        self.mean.extend(other.mean);
        self.variance.extend(other.variance);
        self.clamped.extend(other.clamped);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictOptions {
    /// Replace negative posterior means by zero (flagged in the output).
    pub clamp_negative: bool,
}

/// A conditioned emulator: hyperparameters, training data and cached factors.
#[derive(Debug, Clone)]
pub struct FittedModel {
    hyperparameters: Hyperparameters,
    training: TrainingSet,
    rows: Vec<ProjectedScenario>,
    state: ModelState,
    diagnostics: FitDiagnostics,
}

impl FittedModel {
    /// Conditions on `training` at fixed hyperparameters (no optimization).
    pub fn condition(training: TrainingSet, hyperparameters: Hyperparameters) -> Result<Self> {
        check_training(&hyperparameters, &training)?;
        let distances = ScenarioDistances::new(training.inputs());
        let ev = evaluate(&hyperparameters, &training, &distances, JitterPolicy::default())
            .map_err(|e| fit_error(e, &hyperparameters))?;
        let ll = ev.log_likelihood();
        let diagnostics = FitDiagnostics {
            log_likelihood: ll,
            init_log_likelihood: Some(ll),
            evaluations: 1,
            converged: true,
            best_restart: 0,
            restarts: Vec::new(),
            jitter: jitter_of(&ev.state),
        };
        Ok(Self::assemble(training, hyperparameters, ev.state, diagnostics))
    }

    fn assemble(
        training: TrainingSet,
        hyperparameters: Hyperparameters,
        state: ModelState,
        diagnostics: FitDiagnostics,
    ) -> Self {
        let rows = training.inputs().rows();
        Self {
            hyperparameters,
            training,
            rows,
            state,
            diagnostics,
        }
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyperparameters
    }

    pub fn training(&self) -> &TrainingSet {
        &self.training
    }

    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.diagnostics
    }

    pub fn path(&self) -> ModelPath {
        self.training.path()
    }

    pub fn inputs(&self) -> &ProjectedInputs {
        self.training.inputs()
    }

    /// Recomputes the log-likelihood from the cached factors.
    pub fn cached_log_likelihood(&self) -> Result<f64> {
        let n = self.training.n_observations() as f64;
        let (quadratic, logdet) = match &self.state {
            ModelState::Kronecker { l_f, l_x, a } => (a.norm_squared(), kronlin::kron_logdet(l_f, l_x)?),
            ModelState::Dense { l, alpha } => {
                let y = match &self.training {
                    TrainingSet::Dense(d) => DVector::from_iterator(d.observations.len(), d.observations.iter().map(|o| o.value)),
                    TrainingSet::Kronecker(_) => unreachable!("dense state on a tensor training set"),
                };
                (y.dot(alpha), l.logdet()?)
            }
        };
        Ok(-0.5 * quadratic - 0.5 * logdet - 0.5 * n * LN_2PI)
    }

    fn check_query(&self, q: &ProjectedScenario) -> Result<()> {
        let expected = self.training.inputs().p_vector();
        if q.p_vector() != expected {
            return shape_err(format!(
                "query coefficients have shape {:?}, the model's bases give {expected:?}",
                q.p_vector()
            ));
        }
        Ok(())
    }

    /// Posterior mean and variance at `(scenario, location)` queries.
    pub fn predict(&self, queries: &[(ProjectedScenario, Point2)], opts: PredictOptions) -> Result<MapPrediction> {
        let mut out = MapPrediction {
            mean: Vec::with_capacity(queries.len()),
            variance: Vec::with_capacity(queries.len()),
            clamped: Vec::with_capacity(queries.len()),
        };
        let mut start = 0;
        while start < queries.len() {
            let scenario = &queries[start].0;
            let mut end = start + 1;
            while end < queries.len() && queries[end].0 == *scenario {
                end += 1;
            }
            let locs: Vec<Point2> = queries[start..end].iter().map(|q| q.1).collect();
            out.extend(self.predict_scenario(scenario, &locs, opts)?);
            start = end;
        }
        Ok(out)
    }

    /// Like [`predict`](Self::predict), projecting raw curves first.
    pub fn predict_curves(&self, queries: &[(Vec<Vec<f64>>, Point2)], opts: PredictOptions) -> Result<MapPrediction> {
        let projected = queries
            .iter()
            .map(|(c, x)| Ok((self.project(c)?, *x)))
            .collect::<Result<Vec<_>>>()?;
        self.predict(&projected, opts)
    }

    /// Projects a scenario's curves on the model's bases. A curve whose
    /// length differs from the training grid is a data error.
    pub fn project(&self, curves: &[Vec<f64>]) -> Result<ProjectedScenario> {
        let bases = self.training.inputs().bases();
        if curves.len() != bases.len() {
            return Err(Error::Data(format!(
                "scenario has {} channels, the model expects {}",
                curves.len(),
                bases.len()
            )));
        }
        for (c, b) in curves.iter().zip(bases) {
            if c.len() != b.curve_len() {
                return Err(Error::Data(format!(
                    "channel {} has {} time stamps, the training grid has {}",
                    b.channel_id,
                    c.len(),
                    b.curve_len()
                )));
            }
        }
        self.training.inputs().project_scenario(curves)
    }

    /// Forecasts the whole map of an unseen scenario at `locations`.
    pub fn forecast_map(&self, curves: &[Vec<f64>], locations: &[Point2], opts: PredictOptions) -> Result<MapPrediction> {
        let q = self.project(curves)?;
        self.predict_scenario(&q, locations, opts)
    }

    /// Posterior at many locations for one scenario.
    pub fn predict_scenario(
        &self,
        scenario: &ProjectedScenario,
        locations: &[Point2],
        opts: PredictOptions,
    ) -> Result<MapPrediction> {
        self.check_query(scenario)?;
        if locations.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("query locations must be finite".into()));
        }
        let fspec = self.hyperparameters.functional_spec()?;
        let sspec = self.hyperparameters.spatial_spec()?;
        let prior = sspec.variance;
        let k_f = functional_cross(&fspec, scenario, &self.rows)?;
        let mut out = MapPrediction {
            mean: Vec::with_capacity(locations.len()),
            variance: Vec::with_capacity(locations.len()),
            clamped: Vec::with_capacity(locations.len()),
        };
        match (&self.state, &self.training) {
            (ModelState::Kronecker { l_f, l_x, a }, TrainingSet::Kronecker(ts)) => {
                let b_f = l_f.solve_lower(&k_f)?;
                let bf2 = b_f.norm_squared();
                let w = a.tr_mul(&b_f);
                for block in locations.chunks(PREDICT_BLOCK) {
                    let k_x = cross_spatial(&sspec, &ts.locations, block);
                    let b_x = l_x.solve_lower_mat(&k_x)?;
                    for m in 0..block.len() {
                        let col = b_x.column(m);
                        out.mean.push(w.dot(&col));
                        out.variance.push(clamp_variance(prior - col.norm_squared() * bf2, prior)?);
                    }
                }
            }
            (ModelState::Dense { l, alpha }, TrainingSet::Dense(ds)) => {
                let obs = &ds.observations;
                for block in locations.chunks(PREDICT_BLOCK) {
                    let k_star = DMatrix::from_fn(obs.len(), block.len(), |n, m| {
                        k_f[obs[n].scenario] * sspec.eval(&obs[n].location, &block[m])
                    });
                    let v = l.solve_lower_mat(&k_star)?;
                    for m in 0..block.len() {
                        out.mean.push(k_star.column(m).dot(alpha));
                        out.variance.push(clamp_variance(prior - v.column(m).norm_squared(), prior)?);
                    }
                }
            }
            _ => unreachable!("model state does not match its training layout"),
        }
        out.clamped = vec![false; out.mean.len()];
        if opts.clamp_negative {
            for (m, c) in out.mean.iter_mut().zip(out.clamped.iter_mut()) {
                if *m < 0.0 {
                    *m = 0.0;
                    *c = true;
                }
            }
        }
        Ok(out)
    }

    /// Posterior covariance between two queries.
    pub fn posterior_cov(&self, a: (&ProjectedScenario, &Point2), b: (&ProjectedScenario, &Point2)) -> Result<f64> {
        self.check_query(a.0)?;
        self.check_query(b.0)?;
        let fspec = self.hyperparameters.functional_spec()?;
        let sspec = self.hyperparameters.spatial_spec()?;
        let prior = crate::kernels::separable_cov(&fspec, &sspec, a, b)?;
        let kf_a = functional_cross(&fspec, a.0, &self.rows)?;
        let kf_b = functional_cross(&fspec, b.0, &self.rows)?;
        match (&self.state, &self.training) {
            (ModelState::Kronecker { l_f, l_x, .. }, TrainingSet::Kronecker(ts)) => {
                let kx_a = cross_spatial(&sspec, &ts.locations, &[*a.1]).column(0).into_owned();
                let kx_b = cross_spatial(&sspec, &ts.locations, &[*b.1]).column(0).into_owned();
                kronlin::kron_posterior_cov(l_f, l_x, prior, &kf_a, &kx_a, &kf_b, &kx_b)
            }
            (ModelState::Dense { l, .. }, TrainingSet::Dense(ds)) => {
                let obs = &ds.observations;
                let ka = DVector::from_iterator(obs.len(), obs.iter().map(|o| kf_a[o.scenario] * sspec.eval(&o.location, a.1)));
                let kb = DVector::from_iterator(obs.len(), obs.iter().map(|o| kf_b[o.scenario] * sspec.eval(&o.location, b.1)));
                Ok(prior - l.solve_lower(&ka)?.dot(&l.solve_lower(&kb)?))
            }
            _ => unreachable!("model state does not match its training layout"),
        }
    }

    /// Serializable description of the model. Factors are not stored; they
    /// are recomputed by [`from_document`](Self::from_document).
    pub fn to_document(&self, training_references: Vec<TrainingReference>) -> ModelDocument {
        ModelDocument {
            format_version: ModelDocument::FORMAT_VERSION,
            path: self.path(),
            hyperparameters: self.hyperparameters.clone(),
            noise_variance: self.training.noise_variance(),
            bases: self.training.inputs().bases().to_vec(),
            training: training_references,
            diagnostics: self.diagnostics.clone(),
        }
    }

    /// Rebuilds a model from its document and the re-read training data, and
    /// checks that the recomputed log-likelihood matches the stored one.
    pub fn from_document(doc: &ModelDocument, training: TrainingSet) -> Result<Self> {
        if training.path() != doc.path {
            return Err(Error::Data("training layout does not match the model document".into()));
        }
        if training.inputs().bases() != doc.bases.as_slice() {
            return Err(Error::Data("training inputs were not projected on the stored bases".into()));
        }
        if (training.noise_variance() - doc.noise_variance).abs() > 0.0 {
            return Err(Error::Data("noise variance differs from the model document".into()));
        }
        let rebuilt = Self::condition(training, doc.hyperparameters.clone())?;
        let ll = rebuilt.diagnostics.log_likelihood;
        let stored = doc.diagnostics.log_likelihood;
        if (ll - stored).abs() > 1e-8 * stored.abs().max(1.0) {
            return Err(Error::Numerical(format!(
                "recomputed log-likelihood {ll} differs from the stored {stored}"
            )));
        }
        Ok(Self {
            diagnostics: doc.diagnostics.clone(),
            ..rebuilt
        })
    }
}

fn jitter_of(state: &ModelState) -> Vec<f64> {
    match state {
        ModelState::Kronecker { l_f, l_x, .. } => vec![l_f.jitter_applied(), l_x.jitter_applied()],
        ModelState::Dense { l, .. } => vec![l.jitter_applied()],
    }
}

/// A file the model was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingReference {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

/// JSON model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub path: ModelPath,
    pub hyperparameters: Hyperparameters,
    pub noise_variance: f64,
    pub bases: Vec<crate::funspace::PcaBasis>,
    pub training: Vec<TrainingReference>,
    pub diagnostics: FitDiagnostics,
}

impl ModelDocument {
    pub const FORMAT_VERSION: u32 = 1;
}

/// Maximizes the log marginal likelihood over log-length-scales with
/// multi-start Nelder–Mead. The spatial variance is profiled out in closed
/// form unless a nugget is present (dense path), in which case it is searched
/// over as well.
pub fn fit_ml(training: TrainingSet, init: &Hyperparameters, cfg: &OptimizerConfig) -> Result<FittedModel> {
    check_training(init, &training)?;
    if cfg.restarts == 0 {
        return Err(Error::Parameter("at least one optimizer start is required".into()));
    }
    let noise = training.noise_variance();
    let profile = noise == 0.0;
    let distances = ScenarioDistances::new(training.inputs());
    let jitter = JitterPolicy::default();

    let mut theta0 = init.log_lengthscales();
    if !profile {
        theta0.push(init.spatial_variance.ln());
    }
    let n_len = theta0.len() - usize::from(!profile);

    let hyp_of = |theta: &[f64]| -> Hyperparameters {
        let mut h = init.with_log_lengthscales(&theta[..n_len]);
        h.spatial_variance = if profile { 1.0 } else { theta[n_len].exp() };
        h
    };
    // Returns (negative log-likelihood, profiled variance).
    let objective = |theta: &[f64]| -> Option<(f64, f64)> {
        if theta.iter().zip(&theta0).any(|(t, t0)| (t - t0).abs() > LOG_BOX) {
            return None;
        }
        let h = hyp_of(theta);
        let ev = evaluate(&h, &training, &distances, jitter).ok()?;
        if profile {
            if !(ev.quadratic > 0.0) {
                return None;
            }
            let (ll, var) = ev.profiled();
            ll.is_finite().then_some((-ll, var))
        } else {
            let ll = ev.log_likelihood();
            ll.is_finite().then_some((-ll, h.spatial_variance))
        }
    };

    let init_log_likelihood = evaluate(init, &training, &distances, jitter)
        .ok()
        .map(|e| e.log_likelihood())
        .filter(|v| v.is_finite());

    let opts = SimplexOptions {
        max_evaluations: cfg.max_evaluations,
        f_tolerance: cfg.tolerance,
        x_tolerance: 1e-4,
        initial_step: cfg.initial_step,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.restarts);
    let mut best: Option<(usize, Vec<f64>, f64, bool)> = None;
    let mut evaluations = 0;
    for i in 0..cfg.restarts {
        let start: Vec<f64> = if i == 0 {
            theta0.clone()
        } else {
            theta0
                .iter()
                .map(|t| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    t + cfg.restart_spread * z
                })
                .collect()
        };
        let res = nelder_mead(
            |theta| objective(theta).map_or(f64::INFINITY, |(f, _)| f),
            &start,
            &opts,
        );
        evaluations += res.evaluations;
        let ok = res.f.is_finite();
        records.push(RestartRecord {
            start,
            log_likelihood: ok.then_some(-res.f),
            evaluations: res.evaluations,
            converged: res.converged,
        });
        if ok && best.as_ref().is_none_or(|b| res.f < b.2) {
            best = Some((i, res.x, res.f, res.converged));
        }
    }

    let (best_restart, theta, _, converged) = best.ok_or_else(|| {
        Error::Fit(format!(
            "every optimizer start failed to factorize the covariance (init {init:?})"
        ))
    })?;
    let (_, variance) = objective(&theta).expect("best point was evaluated successfully");
    let mut hyp = hyp_of(&theta);
    hyp.spatial_variance = variance;

    let ev = evaluate(&hyp, &training, &distances, jitter).map_err(|e| fit_error(e, &hyp))?;
    let diagnostics = FitDiagnostics {
        log_likelihood: ev.log_likelihood(),
        init_log_likelihood,
        evaluations,
        converged,
        best_restart,
        restarts: records,
        jitter: jitter_of(&ev.state),
    };
    Ok(FittedModel::assemble(training, hyp, ev.state, diagnostics))
}

/// How hyperparameters are obtained in a leave-one-out sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperparameterMode {
    /// Fit on the `R − 1` remaining scenarios of every fold.
    RefitPerFold,
    /// Fit once on all scenarios and reuse for every fold.
    FitOnce,
    /// Use the given hyperparameters without fitting.
    Fixed(Hyperparameters),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LooConfig {
    pub mode: HyperparameterMode,
    /// Starting point for fits; defaults to [`Hyperparameters::default_init`].
    pub init: Option<Hyperparameters>,
    pub functional_kind: KernelKind,
    pub spatial_kind: KernelKind,
    pub optimizer: OptimizerConfig,
    pub clamp_negative: bool,
    pub ca_multipliers: Vec<f64>,
    /// Normalizer of the pooled Q²; defaults to [`eval::pooled_variance`] of
    /// the full observation matrix.
    pub pooled_variance: Option<f64>,
    /// Worker threads for folds (0 = rayon default).
    pub workers: usize,
}

impl Default for LooConfig {
    fn default() -> Self {
        Self {
            mode: HyperparameterMode::RefitPerFold,
            init: None,
            functional_kind: KernelKind::Matern52,
            spatial_kind: KernelKind::Matern52,
            optimizer: OptimizerConfig::default(),
            clamp_negative: false,
            ca_multipliers: vec![1.0, 2.0, 3.0],
            pooled_variance: None,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    /// Index of the held-out scenario.
    pub scenario: usize,
    pub hyperparameters: Option<Hyperparameters>,
    pub prediction: Option<MapPrediction>,
    pub metrics: Option<MetricReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub folds: Vec<FoldResult>,
    /// Number of likelihood fits performed.
    pub fits: usize,
    pub pooled_variance: Option<f64>,
    pub median_rmse: Option<f64>,
    pub median_q2: Option<f64>,
    pub median_q2_pooled: Option<f64>,
    /// `(c, median CA±cσ)`.
    pub median_ca: Vec<(f64, f64)>,
}

impl LooReport {
    pub fn median_ca_at(&self, c: f64) -> Option<f64> {
        self.median_ca.iter().find(|(k, _)| *k == c).map(|(_, v)| *v)
    }
}

/// Leave-one-scenario-out validation on a tensor design: every scenario is
/// forecast at all `S` locations from the other `R − 1`. Fold failures are
/// recorded without aborting the sweep.
pub fn loo(dataset: &TensorTrainingSet, config: &LooConfig) -> Result<LooReport> {
    let r = dataset.n_scenarios();
    if r < 2 {
        return Err(Error::Data("leave-one-out needs at least two scenarios".into()));
    }
    let pooled = config
        .pooled_variance
        .or_else(|| eval::pooled_variance(&dataset.observations));
    let init_for = |ts: &TensorTrainingSet| {
        config.init.clone().unwrap_or_else(|| {
            Hyperparameters::default_init(&ts.inputs, &ts.locations, config.functional_kind, config.spatial_kind)
        })
    };

    let (shared, fits) = match &config.mode {
        HyperparameterMode::Fixed(h) => (Some(h.clone()), 0),
        HyperparameterMode::FitOnce => {
            let m = fit_ml(dataset.clone().into(), &init_for(dataset), &config.optimizer)?;
            (Some(m.hyperparameters.clone()), 1)
        }
        HyperparameterMode::RefitPerFold => (None, r),
    };

    let run_fold = |fold: usize| -> FoldResult {
        let keep: Vec<usize> = (0..r).filter(|&i| i != fold).collect();
        let outcome = (|| -> Result<(Hyperparameters, MapPrediction, MetricReport)> {
            let train = dataset.select_scenarios(&keep)?;
            let model = match &shared {
                Some(h) => FittedModel::condition(train.into(), h.clone())?,
                None => {
                    let init = init_for(&train);
                    fit_ml(train.into(), &init, &config.optimizer)?
                }
            };
            let query = dataset.inputs.row(fold);
            let pred = model.predict_scenario(
                &query,
                &dataset.locations,
                PredictOptions {
                    clamp_negative: config.clamp_negative,
                },
            )?;
            let truth: Vec<f64> = dataset.observations.row(fold).iter().copied().collect();
            let metrics = MetricReport::compute(&truth, &pred.mean, &pred.sd(), &config.ca_multipliers, pooled)?;
            Ok((model.hyperparameters.clone(), pred, metrics))
        })();
        match outcome {
            Ok((h, p, m)) => FoldResult {
                scenario: fold,
                hyperparameters: Some(h),
                prediction: Some(p),
                metrics: Some(m),
                error: None,
            },
            Err(e) => FoldResult {
                scenario: fold,
                hyperparameters: None,
                prediction: None,
                metrics: None,
                error: Some(e.to_string()),
            },
        }
    };

    let folds: Vec<FoldResult> = if config.workers == 1 {
        (0..r).map(run_fold).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Parameter(format!("cannot start worker pool: {e}")))?;
        pool.install(|| (0..r).into_par_iter().map(run_fold).collect())
    };

    let metrics: Vec<&MetricReport> = folds.iter().filter_map(|f| f.metrics.as_ref()).collect();
    let collect = |f: &dyn Fn(&MetricReport) -> Option<f64>| -> Option<f64> {
        eval::median(&metrics.iter().filter_map(|m| f(m)).collect::<Vec<_>>())
    };
    let mut cs = config.ca_multipliers.clone();
    cs.sort_by(f64::total_cmp);
    let median_ca = cs
        .iter()
        .filter_map(|&c| collect(&|m| m.ca_at(c)).map(|v| (c, v)))
        .collect();
    Ok(LooReport {
        fits,
        pooled_variance: pooled,
        median_rmse: collect(&|m| Some(m.rmse)),
        median_q2: collect(&|m| m.q2),
        median_q2_pooled: collect(&|m| m.q2_pooled),
        median_ca,
        folds,
    })
}
