use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use fungp::funspace::ProjectedInputs;
use fungp::gp::{loo, HyperparameterMode, Hyperparameters, LooConfig, TensorTrainingSet};

use crate::commands::{opt_str, set, DataArgs};
use crate::dataset::{DataPaths, Dataset};
use crate::error::{CliError, CliResult};
use crate::io::{fmt_f64, write_json, CsvOut};
use crate::run::{load_config, Run};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LooRun {
    pub dataset: DataPaths,
    pub scenarios: Vec<String>,
    pub first: Option<usize>,
    /// PCA inertia target; the bases are fitted once on all scenarios.
    pub inertia: f64,
    pub loo: LooConfig,
    pub out: Option<PathBuf>,
}

impl Default for LooRun {
    fn default() -> Self {
        Self {
            dataset: DataPaths::default(),
            scenarios: Vec::new(),
            first: None,
            inertia: 0.999,
            loo: LooConfig {
                clamp_negative: true,
                ..LooConfig::default()
            },
            out: None,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    /// Refit the hyperparameters on every fold
    Refit,
    /// Fit once on all scenarios and reuse
    FitOnce,
}

#[derive(Debug, Clone, Args)]
pub struct LooArgs {
    /// JSON run config; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Vec<String>,
    #[arg(long)]
    pub first: Option<usize>,
    #[arg(long)]
    pub inertia: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Fixed hyperparameters (JSON file); no fitting
    #[arg(long, conflicts_with = "mode")]
    pub hyperparameters: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Parallel folds (0 = all cores)
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub clamp_negative: Option<bool>,
    #[arg(long)]
    pub pooled_variance: Option<f64>,
    /// Comma-separated interval multipliers for CA
    #[arg(long, value_delimiter = ',')]
    pub ca: Vec<f64>,
}

impl LooRun {
    pub fn resolve(mut self, a: &LooArgs) -> CliResult<Self> {
        a.data.apply(&mut self.dataset);
        set(&mut self.out, a.out.clone().map(Some));
        if !a.scenarios.is_empty() {
            self.scenarios.clone_from(&a.scenarios);
        }
        set(&mut self.first, a.first.map(Some));
        set(&mut self.inertia, a.inertia);
        match a.mode {
            Some(ModeArg::Refit) => self.loo.mode = HyperparameterMode::RefitPerFold,
            Some(ModeArg::FitOnce) => self.loo.mode = HyperparameterMode::FitOnce,
            None => {}
        }
        if let Some(p) = &a.hyperparameters {
            let h: Hyperparameters = crate::io::read_json(p)?;
            self.loo.mode = HyperparameterMode::Fixed(h);
        }
        set(&mut self.loo.optimizer.seed, a.seed);
        set(&mut self.loo.optimizer.restarts, a.restarts);
        set(&mut self.loo.workers, a.workers);
        set(&mut self.loo.clamp_negative, a.clamp_negative);
        set(&mut self.loo.pooled_variance, a.pooled_variance.map(Some));
        if !a.ca.is_empty() {
            self.loo.ca_multipliers.clone_from(&a.ca);
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooSummary {
    pub n_folds: usize,
    pub failed_folds: Vec<String>,
    pub fits: usize,
    pub pooled_variance: Option<f64>,
    pub median_rmse: Option<f64>,
    pub median_q2: Option<f64>,
    pub median_q2_pooled: Option<f64>,
    pub median_ca: Vec<(f64, f64)>,
    pub fold_hyperparameters: Vec<Option<Hyperparameters>>,
}

pub fn run(args: &LooArgs) -> CliResult<String> {
    let cfg = load_config::<LooRun>(args.config.as_deref())?.resolve(args)?;
    let mut run = Run::start("loo", cfg.out.as_deref())?;
    let full = Dataset::load(&cfg.dataset, true)?;
    run.inputs(full.files.clone());
    let data = full.select(&full.scenario_indices(&cfg.scenarios, cfg.first)?)?;
    let projected = ProjectedInputs::fit(&data.inputs, cfg.inertia)?;
    let ts = TensorTrainingSet::new(projected, data.locations.points.clone(), data.tensor()?.clone())?;
    let report = loo(&ts, &cfg.loo)?;

    let mut cs = cfg.loo.ca_multipliers.clone();
    cs.sort_by(f64::total_cmp);
    let ca_cols: Vec<String> = cs.iter().map(|c| format!("ca_{c}")).collect();
    let mut header = vec!["scenario_id", "rmse", "q2", "q2_pooled"];
    header.extend(ca_cols.iter().map(String::as_str));
    header.push("error");
    let mut folds = CsvOut::create(&run.output("loo_folds.csv"), &header)?;
    let mut preds = CsvOut::create(
        &run.output("loo_predictions.csv"),
        &["scenario_id", "location_id", "truth", "mean", "sd", "clamped"],
    )?;
    let y = data.tensor()?;
    for f in &report.folds {
        let id = data.scenario_ids[f.scenario].clone();
        let mut row = vec![id.clone()];
        match &f.metrics {
            Some(m) => {
                row.push(fmt_f64(m.rmse));
                row.push(opt_str(m.q2));
                row.push(opt_str(m.q2_pooled));
                row.extend(cs.iter().map(|c| opt_str(m.ca_at(*c))));
            }
            None => row.extend(std::iter::repeat_n(String::new(), 3 + cs.len())),
        }
        row.push(f.error.clone().unwrap_or_default());
        folds.row(&row)?;
        if let Some(p) = &f.prediction {
            let sd = p.sd();
            for s in 0..p.len() {
                preds.row([
                    id.clone(),
                    data.locations.ids[s].clone(),
                    fmt_f64(y[(f.scenario, s)]),
                    fmt_f64(p.mean[s]),
                    fmt_f64(sd[s]),
                    u8::from(p.clamped[s]).to_string(),
                ])?;
            }
        }
    }
    folds.finish()?;
    preds.finish()?;

    let summary = LooSummary {
        n_folds: report.folds.len(),
        failed_folds: report
            .folds
            .iter()
            .filter(|f| f.error.is_some())
            .map(|f| data.scenario_ids[f.scenario].clone())
            .collect(),
        fits: report.fits,
        pooled_variance: report.pooled_variance,
        median_rmse: report.median_rmse,
        median_q2: report.median_q2,
        median_q2_pooled: report.median_q2_pooled,
        median_ca: report.median_ca.clone(),
        fold_hyperparameters: report.folds.iter().map(|f| f.hyperparameters.clone()).collect(),
    };
    write_json(&run.output("loo_summary.json"), &summary)?;
    run.finish(&cfg, Some(cfg.loo.optimizer.seed))?;
    if summary.failed_folds.len() == summary.n_folds {
        return Err(CliError::Numerical("every fold failed; see loo_folds.csv".into()));
    }
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    Ok(format!(
        "{} folds ({} failed): median Q² {}, median pooled Q² {}, median RMSE {}",
        summary.n_folds,
        summary.failed_folds.len(),
        fmt(summary.median_q2),
        fmt(summary.median_q2_pooled),
        fmt(summary.median_rmse)
    ))
}
