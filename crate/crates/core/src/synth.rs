//! Synthetic datasets: GP-sampled functional inputs and map stacks drawn
//! jointly under the separable kernel.
//!
//! All randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64`. [`generate`] uses three streams of the same seed: stream 0
//! for the inputs, 1 for the maps and 2 for the spatial layout. Within a
//! stream, draws are consumed channel by channel (mean curve first, then the
//! replicates in scenario order) and maps column-major.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::maximin_lhd;
use crate::error::{Error, Result};
use crate::funspace::{grid_distance_sq, lengthscale_for_grid, unit_grid, ScenarioInputs};
use crate::kernels::{gram_spatial, KernelKind, SpatialKernelSpec};
use crate::kronlin::{cholesky, kron_apply, JitterPolicy};
use crate::Point2;

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")))
    }
}

fn curve_factor(kind: KernelKind, variance: f64, lengthscale: f64, grid: &[f64]) -> Result<DMatrix<f64>> {
    check_positive("length-scale", lengthscale)?;
    let n = grid.len();
    let k = DMatrix::from_fn(n, n, |i, j| variance * kind.correlation((grid[i] - grid[j]).abs() / lengthscale));
    Ok(cholesky(&k, JitterPolicy::default(), "curve covariance")?.lower().clone())
}

fn standard_normal(n: usize, rng: &mut ChaCha20Rng) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

/// `count` independent draws `mean + Lξ` from a stationary GP on `grid`.
pub fn sample_gp_curves(
    kind: KernelKind,
    variance: f64,
    lengthscale: f64,
    grid: &[f64],
    mean_curve: &[f64],
    count: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<Vec<f64>>> {
    if mean_curve.len() != grid.len() {
        return Err(Error::Shape(format!(
            "mean curve of length {} on a grid of {}",
            mean_curve.len(),
            grid.len()
        )));
    }
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::Parameter(format!("variance must be nonnegative, got {variance}")));
    }
    if variance == 0.0 {
        return Ok(vec![mean_curve.to_vec(); count]);
    }
    let l = curve_factor(kind, variance, lengthscale, grid)?;
    let mean = DVector::from_column_slice(mean_curve);
    Ok((0..count)
        .map(|_| (&mean + &l * standard_normal(grid.len(), rng)).as_slice().to_vec())
        .collect())
}

/// One draw from a stationary GP on `grid`, seeded independently.
pub fn sample_gp_curve(
    kind: KernelKind,
    variance: f64,
    lengthscale: f64,
    grid: &[f64],
    mean_curve: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok(sample_gp_curves(kind, variance, lengthscale, grid, mean_curve, 1, &mut rng)?.remove(0))
}

/// How replicates of a channel are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum InputModel {
    /// A channel mean `μᵢ ~ GP(0, σ_μᵢ², ℓ_μᵢ)`, then replicates
    /// `f ~ GP(μᵢ, σ_o², ℓ_o)`.
    Hierarchical {
        replicate_variance: f64,
        replicate_lengthscale: f64,
    },
    /// Replicates drawn directly from `GP(0, σ_μᵢ², ℓ_μᵢ)`.
    Centered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub n_scenarios: usize,
    /// Time stamps on `[0, 1]`.
    pub tau: usize,
    pub kind: KernelKind,
    pub model: InputModel,
    /// Per channel; the channel count is their length.
    pub channel_variances: Vec<f64>,
    pub channel_lengthscales: Vec<f64>,
}

impl InputSpec {
    pub fn n_channels(&self) -> usize {
        self.channel_variances.len()
    }

    fn validate(&self) -> Result<()> {
        if self.n_scenarios == 0 || self.n_channels() == 0 {
            return Err(Error::Parameter("at least one scenario and one channel are required".into()));
        }
        if self.tau < 2 {
            return Err(Error::Parameter("at least two time stamps are required".into()));
        }
        if self.channel_lengthscales.len() != self.n_channels() {
            return Err(Error::Parameter(format!(
                "{} channel variances but {} length-scales",
                self.n_channels(),
                self.channel_lengthscales.len()
            )));
        }
        for (v, l) in self.channel_variances.iter().zip(&self.channel_lengthscales) {
            check_positive("channel variance", *v)?;
            check_positive("channel length-scale", *l)?;
        }
        if let InputModel::Hierarchical {
            replicate_variance,
            replicate_lengthscale,
        } = self.model
        {
            check_positive("replicate variance", replicate_variance)?;
            check_positive("replicate length-scale", replicate_lengthscale)?;
        }
        Ok(())
    }
}

/// Generates `Q` channels of `R` curves each on a uniform grid of `[0, 1]`.
pub fn gen_inputs(spec: &InputSpec, rng: &mut ChaCha20Rng) -> Result<ScenarioInputs> {
    spec.validate()?;
    let grid = unit_grid(spec.tau);
    let zero = vec![0.0; spec.tau];
    let mut channels = Vec::with_capacity(spec.n_channels());
    for i in 0..spec.n_channels() {
        let (var, ls) = (spec.channel_variances[i], spec.channel_lengthscales[i]);
        let curves = match spec.model {
            InputModel::Hierarchical {
                replicate_variance,
                replicate_lengthscale,
            } => {
                let mean = sample_gp_curves(spec.kind, var, ls, &grid, &zero, 1, rng)?.remove(0);
                sample_gp_curves(
                    spec.kind,
                    replicate_variance,
                    replicate_lengthscale,
                    &grid,
                    &mean,
                    spec.n_scenarios,
                    rng,
                )?
            }
            InputModel::Centered => sample_gp_curves(spec.kind, var, ls, &grid, &zero, spec.n_scenarios, rng)?,
        };
        let m = DMatrix::from_fn(spec.n_scenarios, spec.tau, |r, t| curves[r][t]);
        channels.push((format!("f{}", i + 1), m));
    }
    ScenarioInputs::new(grid, channels)
}

/// True kernel of the generated maps. Functional length-scales are expressed
/// on the continuous time axis and converted to grid units internally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub spatial_kind: KernelKind,
    pub spatial_variance: f64,
    pub spatial_lengthscales: [f64; 2],
    pub functional_kind: KernelKind,
    pub functional_lengthscales: Vec<f64>,
}

impl MapSpec {
    /// Functional length-scales in the grid units used by distance computations.
    pub fn grid_lengthscales(&self, grid: &[f64]) -> Result<Vec<f64>> {
        self.functional_lengthscales
            .iter()
            .map(|l| lengthscale_for_grid(*l, grid))
            .collect()
    }
}

/// Correlation matrix of the scenarios' raw curves.
pub fn raw_functional_gram(inputs: &ScenarioInputs, kind: KernelKind, grid_lengthscales: &[f64]) -> Result<DMatrix<f64>> {
    if grid_lengthscales.len() != inputs.n_channels() {
        return Err(Error::Shape(format!(
            "{} length-scales for {} channels",
            grid_lengthscales.len(),
            inputs.n_channels()
        )));
    }
    for l in grid_lengthscales {
        check_positive("functional length-scale", *l)?;
    }
    let r = inputs.n_scenarios();
    let curves: Vec<Vec<Vec<f64>>> = (0..r).map(|i| inputs.scenario_curves(i)).collect();
    let mut k = DMatrix::identity(r, r);
    for a in 0..r {
        for b in 0..a {
            let d2: f64 = curves[a]
                .iter()
                .zip(&curves[b])
                .zip(grid_lengthscales)
                .map(|((x, y), l)| grid_distance_sq(x, y) / (l * l))
                .sum();
            let v = kind.correlation_sq(d2);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    Ok(k)
}

/// Joint draw of all maps, `Y = L_f Ξ L_xᵀ` (`R × S`), with `K_f` from the
/// raw input curves and `K_x` from the spatial kernel.
pub fn gen_maps(inputs: &ScenarioInputs, locations: &[Point2], spec: &MapSpec, rng: &mut ChaCha20Rng) -> Result<DMatrix<f64>> {
    let k_f = raw_functional_gram(inputs, spec.functional_kind, &spec.grid_lengthscales(inputs.grid())?)?;
    let sspec = SpatialKernelSpec::new(spec.spatial_kind, spec.spatial_lengthscales, spec.spatial_variance)?;
    let k_x = gram_spatial(&sspec, locations)?;
    gen_maps_from_grams(&k_f, &k_x, rng)
}

/// Joint draw with covariance `K_x ⊗ K_f` on the column-major flattening of
/// the `R × S` result.
pub fn gen_maps_from_grams(k_f: &DMatrix<f64>, k_x: &DMatrix<f64>, rng: &mut ChaCha20Rng) -> Result<DMatrix<f64>> {
    let l_f = cholesky(k_f, JitterPolicy::default(), "K_f")?;
    let l_x = cholesky(k_x, JitterPolicy::default(), "K_x")?;
    let (r, s) = (k_f.nrows(), k_x.nrows());
    let xi = standard_normal(r * s, rng);
    let y = kron_apply(l_x.lower(), l_f.lower(), &xi)?;
    Ok(DMatrix::from_column_slice(r, s, y.as_slice()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "layout")]
pub enum SpatialLayout {
    /// `n1 × n2` equispaced points on `[0, 1]²`, first coordinate fastest.
    Grid { n1: usize, n2: usize },
    /// Maximin Latin hypercube of `n` points on `[0, 1]²`.
    Lhd { n: usize, restarts: usize },
}

impl SpatialLayout {
    pub fn locations(&self, seed: u64) -> Result<Vec<Point2>> {
        match *self {
            SpatialLayout::Grid { n1, n2 } => {
                if n1 == 0 || n2 == 0 {
                    return Err(Error::Parameter("grid dimensions must be positive".into()));
                }
                let axis = |n: usize, i: usize| if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
                Ok((0..n2)
                    .flat_map(|j| (0..n1).map(move |i| [axis(n1, i), axis(n2, j)]))
                    .collect())
            }
            SpatialLayout::Lhd { n, restarts } => {
                let d = maximin_lhd(n, 2, restarts, seed)?;
                Ok((0..n).map(|i| [d[(i, 0)], d[(i, 1)]]).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub inputs: InputSpec,
    pub maps: MapSpec,
    pub layout: SpatialLayout,
    pub seed: u64,
}

impl SynthConfig {
    /// `Q = 8` hierarchical channels (`σ_o² = 2.5·10⁻³`, `ℓ_o = 0.8`,
    /// `σ_μᵢ² = ½`, `ℓ_μᵢ = i/10`), Matérn 5/2 maps with `σ_x² = 1`,
    /// `ℓ_x = (0.2, 0.2)` and `ℓ_f,i = 2`.
    pub fn multioutput_preset(n_scenarios: usize, layout: SpatialLayout, seed: u64) -> Self {
        let q = 8;
        Self {
            inputs: InputSpec {
                n_scenarios,
                tau: 37,
                kind: KernelKind::Matern52,
                model: InputModel::Hierarchical {
                    replicate_variance: 2.5e-3,
                    replicate_lengthscale: 0.8,
                },
                channel_variances: vec![0.5; q],
                channel_lengthscales: (1..=q).map(|i| i as f64 / 10.0).collect(),
            },
            maps: MapSpec {
                spatial_kind: KernelKind::Matern52,
                spatial_variance: 1.0,
                spatial_lengthscales: [0.2, 0.2],
                functional_kind: KernelKind::Matern52,
                functional_lengthscales: vec![2.0; q],
            },
            layout,
            seed,
        }
    }

    /// The same kernels with centered channels (`f_i ~ GP(0, ½, i/10)`).
    pub fn forecast_preset(n_scenarios: usize, layout: SpatialLayout, seed: u64) -> Self {
        let mut c = Self::multioutput_preset(n_scenarios, layout, seed);
        c.inputs.model = InputModel::Centered;
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub inputs: ScenarioInputs,
    pub locations: Vec<Point2>,
    /// `R × S`.
    pub maps: DMatrix<f64>,
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    let inputs = gen_inputs(&config.inputs, &mut stream(config.seed, 0))?;
    let locations = config.layout.locations(config.seed.wrapping_add(2))?;
    let maps = gen_maps(&inputs, &locations, &config.maps, &mut stream(config.seed, 1))?;
    Ok(SynthDataset { inputs, locations, maps })
}

/// Nonnegative flood-like maps: `h = max(0, Y + offset − slope·x₁)` with `Y`
/// a separable-kernel draw, so the wet area shrinks inland and varies with
/// the forcing curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoastalConfig {
    pub base: SynthConfig,
    pub offset: f64,
    pub slope: f64,
}

impl CoastalConfig {
    pub fn preset(n_scenarios: usize, grid: usize, seed: u64) -> Self {
        let q = 3;
        Self {
            base: SynthConfig {
                inputs: InputSpec {
                    n_scenarios,
                    tau: 37,
                    kind: KernelKind::Matern52,
                    model: InputModel::Hierarchical {
                        replicate_variance: 0.05,
                        replicate_lengthscale: 0.3,
                    },
                    channel_variances: vec![0.5; q],
                    channel_lengthscales: vec![0.2, 0.3, 0.5],
                },
                maps: MapSpec {
                    spatial_kind: KernelKind::Matern52,
                    spatial_variance: 0.25,
                    spatial_lengthscales: [0.3, 0.3],
                    functional_kind: KernelKind::Matern52,
                    functional_lengthscales: vec![1.0; q],
                },
                layout: SpatialLayout::Grid { n1: grid, n2: grid },
                seed,
            },
            offset: 1.0,
            slope: 2.0,
        }
    }
}

pub fn generate_coastal(config: &CoastalConfig) -> Result<SynthDataset> {
    let mut d = generate(&config.base)?;
    for (s, loc) in d.locations.iter().enumerate() {
        for r in 0..d.maps.nrows() {
            let v = d.maps[(r, s)] + config.offset - config.slope * loc[0];
            d.maps[(r, s)] = v.max(0.0);
        }
    }
    Ok(d)
}
