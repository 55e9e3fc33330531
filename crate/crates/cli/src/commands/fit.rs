use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use fungp::funspace::ProjectedInputs;
use fungp::gp::{
    fit_ml, log_marginal_likelihood, Hyperparameters, ModelPath, OptimizerConfig, RestartRecord, TrainingReference,
};
use fungp::kernels::KernelKind;

use crate::commands::{set, DataArgs};
use crate::dataset::{DataPaths, Dataset};
use crate::error::CliResult;
use crate::io::{write_json, ObservationFormat};
use crate::run::{load_config, Run};

pub const MODEL_FILE: &str = "model.json";
pub const TRAINING_DIR: &str = "training";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitRun {
    pub dataset: DataPaths,
    /// Train on these scenario ids only.
    pub scenarios: Vec<String>,
    /// Train on the first `first` scenarios (ignored when `scenarios` is set).
    pub first: Option<usize>,
    pub inertia: f64,
    pub functional_kind: KernelKind,
    pub spatial_kind: KernelKind,
    pub init: Option<Hyperparameters>,
    pub optimizer: OptimizerConfig,
    /// Nugget variance; positive values force the dense path.
    pub noise_variance: f64,
    /// Use the dense path even on complete designs.
    pub dense: bool,
    pub out: Option<PathBuf>,
}

impl Default for FitRun {
    fn default() -> Self {
        Self {
            dataset: DataPaths::default(),
            scenarios: Vec::new(),
            first: None,
            inertia: 0.999,
            functional_kind: KernelKind::Matern52,
            spatial_kind: KernelKind::Matern52,
            init: None,
            optimizer: OptimizerConfig::default(),
            noise_variance: 0.0,
            dense: false,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// JSON run config; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated scenario ids to train on
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Vec<String>,
    /// Train on the first N scenarios
    #[arg(long)]
    pub first: Option<usize>,
    /// PCA inertia target per channel
    #[arg(long)]
    pub inertia: Option<f64>,
    #[arg(long)]
    pub functional_kernel: Option<KernelKind>,
    #[arg(long)]
    pub spatial_kernel: Option<KernelKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_evaluations: Option<usize>,
    #[arg(long)]
    pub noise_variance: Option<f64>,
    #[arg(long)]
    pub dense: bool,
}

impl FitRun {
    pub fn resolve(mut self, a: &FitArgs) -> Self {
        a.data.apply(&mut self.dataset);
        set(&mut self.out, a.out.clone().map(Some));
        if !a.scenarios.is_empty() {
            self.scenarios.clone_from(&a.scenarios);
        }
        set(&mut self.first, a.first.map(Some));
        set(&mut self.inertia, a.inertia);
        set(&mut self.functional_kind, a.functional_kernel);
        set(&mut self.spatial_kind, a.spatial_kernel);
        set(&mut self.optimizer.seed, a.seed);
        set(&mut self.optimizer.restarts, a.restarts);
        set(&mut self.optimizer.max_evaluations, a.max_evaluations);
        set(&mut self.noise_variance, a.noise_variance);
        self.dense |= a.dense;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub path: ModelPath,
    pub n_scenarios: usize,
    pub n_locations: usize,
    pub n_observations: usize,
    pub p_vector: Vec<usize>,
    pub log_likelihood: f64,
    /// Likelihood recomputed from scratch at the fitted hyperparameters.
    pub recomputed_log_likelihood: f64,
    pub init_log_likelihood: Option<f64>,
    pub hyperparameters: Hyperparameters,
    pub converged: bool,
    pub evaluations: usize,
    pub best_restart: usize,
    pub restarts: Vec<RestartRecord>,
    pub jitter: Vec<f64>,
}

/// Training references relative to the model file's directory.
fn references(records: &[crate::io::FileRecord], dir: &Path) -> Vec<TrainingReference> {
    records
        .iter()
        .map(|r| TrainingReference {
            role: r.role.clone(),
            path: Path::new(&r.path)
                .strip_prefix(dir)
                .map(|p| p.display().to_string())
                .unwrap_or_else(|_| r.path.clone()),
            sha256: r.sha256.clone(),
        })
        .collect()
}

pub fn run(args: &FitArgs) -> CliResult<String> {
    let cfg = load_config::<FitRun>(args.config.as_deref())?.resolve(args);
    let mut run = Run::start("fit", cfg.out.as_deref())?;
    let full = Dataset::load(&cfg.dataset, true)?;
    run.inputs(full.files.clone());
    let data = full.select(&full.scenario_indices(&cfg.scenarios, cfg.first)?)?;

    let projected = ProjectedInputs::fit(&data.inputs, cfg.inertia)?;
    let p_vector = projected.p_vector();
    let training = data.training_set(projected, cfg.dense, cfg.noise_variance)?;
    let init = cfg.init.clone().unwrap_or_else(|| {
        Hyperparameters::default_init(training.inputs(), &data.locations.points, cfg.functional_kind, cfg.spatial_kind)
    });
    let n_observations = training.n_observations();
    let model = fit_ml(training, &init, &cfg.optimizer)?;
    let recomputed = log_marginal_likelihood(model.hyperparameters(), model.training())?;

    let written = data.write(&run.dir().join(TRAINING_DIR), ObservationFormat::Dense)?;
    for r in &written {
        run.register(Path::new(&r.path));
    }
    let doc = model.to_document(references(&written, run.dir()));
    write_json(&run.output(MODEL_FILE), &doc)?;

    let d = model.diagnostics();
    let report = FitReport {
        path: model.path(),
        n_scenarios: data.n_scenarios(),
        n_locations: data.locations.ids.len(),
        n_observations,
        p_vector,
        log_likelihood: d.log_likelihood,
        recomputed_log_likelihood: recomputed,
        init_log_likelihood: d.init_log_likelihood,
        hyperparameters: model.hyperparameters().clone(),
        converged: d.converged,
        evaluations: d.evaluations,
        best_restart: d.best_restart,
        restarts: d.restarts.clone(),
        jitter: d.jitter.clone(),
    };
    write_json(&run.output("fit_report.json"), &report)?;
    let summary = format!(
        "fitted {:?} model on {} scenarios: log-likelihood {:.6}, spatial length-scales [{:.4}, {:.4}]",
        report.path,
        report.n_scenarios,
        report.log_likelihood,
        report.hyperparameters.spatial_lengthscales[0],
        report.hyperparameters.spatial_lengthscales[1]
    );
    run.finish(&cfg, Some(cfg.optimizer.seed))?;
    Ok(summary)
}
