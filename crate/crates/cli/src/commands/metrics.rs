use std::collections::HashMap;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use fungp::eval::{category_proportions, median, MetricReport};

use crate::commands::{opt_str, set};
use crate::error::{CliError, CliResult};
use crate::io::{fmt_f64, read_observations, write_json, CsvOut, FileRecord};
use crate::run::{load_config, Run};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsRun {
    /// Observed values, long or dense observation format.
    pub truth: Option<PathBuf>,
    /// CSV with scenario_id, location_id, mean and sd columns.
    pub predictions: Option<PathBuf>,
    pub ca_multipliers: Vec<f64>,
    /// Normalizer of the pooled Q²; defaults to the variance of the truth at
    /// locations wet in at least one scenario.
    pub pooled_variance: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Default for MetricsRun {
    fn default() -> Self {
        Self {
            truth: None,
            predictions: None,
            ca_multipliers: vec![1.0, 2.0, 3.0],
            pooled_variance: None,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    /// JSON run config; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub ca: Vec<f64>,
    #[arg(long)]
    pub pooled_variance: Option<f64>,
}

impl MetricsRun {
    pub fn resolve(mut self, a: &MetricsArgs) -> Self {
        set(&mut self.out, a.out.clone().map(Some));
        set(&mut self.truth, a.truth.clone().map(Some));
        set(&mut self.predictions, a.predictions.clone().map(Some));
        if !a.ca.is_empty() {
            self.ca_multipliers.clone_from(&a.ca);
        }
        set(&mut self.pooled_variance, a.pooled_variance.map(Some));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n_scenarios: usize,
    pub n_values: usize,
    pub pooled_variance: Option<f64>,
    pub median_rmse: Option<f64>,
    pub median_q2: Option<f64>,
    pub median_q2_pooled: Option<f64>,
    pub median_ca: Vec<(f64, f64)>,
    /// All values of all scenarios taken together.
    pub overall: MetricReport,
    /// Minor, moderate, serious, severe; only for nonnegative values.
    pub truth_categories: Option<[f64; 4]>,
    pub predicted_categories: Option<[f64; 4]>,
}

struct PredictionRow {
    scenario: String,
    location: String,
    mean: f64,
    sd: f64,
    line: u64,
}

fn read_predictions(path: &std::path::Path) -> CliResult<Vec<PredictionRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let header = rdr.headers().map_err(|e| CliError::io(path, e))?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::data(format!("{}: missing column {name}", path.display())))
    };
    let (cs, cl, cm, cd) = (col("scenario_id")?, col("location_id")?, col("mean")?, col("sd")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |c: usize, name: &str| -> CliResult<f64> {
            let raw = rec.get(c).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::data(format!("{} line {line}: column {name}: {raw:?} is not a finite number", path.display())))
        };
        let sd = num(cd, "sd")?;
        if sd < 0.0 {
            return Err(CliError::data(format!("{} line {line}: negative sd", path.display())));
        }
        out.push(PredictionRow {
            scenario: rec[cs].to_string(),
            location: rec[cl].to_string(),
            mean: num(cm, "mean")?,
            sd,
            line,
        });
    }
    if out.is_empty() {
        return Err(CliError::data(format!("{}: no predictions", path.display())));
    }
    Ok(out)
}

/// Variance of all truth values at locations that are nonzero in at least
/// one scenario.
fn wet_variance(truth: &HashMap<(String, String), f64>) -> Option<f64> {
    let mut wet: HashMap<&str, bool> = HashMap::new();
    for ((_, l), v) in truth {
        *wet.entry(l.as_str()).or_default() |= *v != 0.0;
    }
    let vals: Vec<f64> = truth.iter().filter(|((_, l), _)| wet[l.as_str()]).map(|(_, v)| *v).collect();
    if vals.is_empty() {
        return None;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (var > 0.0).then_some(var)
}

pub fn run(args: &MetricsArgs) -> CliResult<String> {
    let cfg = load_config::<MetricsRun>(args.config.as_deref())?.resolve(args);
    let truth_path = cfg.truth.clone().ok_or_else(|| CliError::data("no truth file given"))?;
    let pred_path = cfg.predictions.clone().ok_or_else(|| CliError::data("no predictions file given"))?;
    let mut run = Run::start("metrics", cfg.out.as_deref())?;
    run.inputs([FileRecord::of("truth", &truth_path)?, FileRecord::of("predictions", &pred_path)?]);

    let truth: HashMap<(String, String), f64> = read_observations(&truth_path)?
        .into_iter()
        .map(|r| ((r.scenario_id, r.location_id), r.value))
        .collect();
    let preds = read_predictions(&pred_path)?;
    let pooled = cfg.pooled_variance.or_else(|| wet_variance(&truth));

    let mut order: Vec<String> = Vec::new();
    // truth, mean and sd per scenario
    type Columns = (Vec<f64>, Vec<f64>, Vec<f64>);
    let mut groups: HashMap<String, Columns> = HashMap::new();
    for p in &preds {
        let y = *truth.get(&(p.scenario.clone(), p.location.clone())).ok_or_else(|| {
            CliError::data(format!(
                "{} line {}: no truth value for scenario {:?} at location {:?}",
                pred_path.display(),
                p.line,
                p.scenario,
                p.location
            ))
        })?;
        let g = groups.entry(p.scenario.clone()).or_insert_with(|| {
            order.push(p.scenario.clone());
            Default::default()
        });
        g.0.push(y);
        g.1.push(p.mean);
        g.2.push(p.sd);
    }

    let mut cs = cfg.ca_multipliers.clone();
    cs.sort_by(f64::total_cmp);
    let ca_cols: Vec<String> = cs.iter().map(|c| format!("ca_{c}")).collect();
    let mut header = vec!["scenario_id", "n", "rmse", "q2", "q2_pooled"];
    header.extend(ca_cols.iter().map(String::as_str));
    let mut out = CsvOut::create(&run.output("metrics.csv"), &header)?;
    let mut reports = Vec::with_capacity(order.len());
    for id in &order {
        let (y, m, s) = &groups[id];
        let r = MetricReport::compute(y, m, s, &cs, pooled)?;
        let mut row = vec![id.clone(), r.n_test.to_string(), fmt_f64(r.rmse), opt_str(r.q2), opt_str(r.q2_pooled)];
        row.extend(cs.iter().map(|c| opt_str(r.ca_at(*c))));
        out.row(&row)?;
        reports.push(r);
    }
    out.finish()?;

    let all_y: Vec<f64> = order.iter().flat_map(|id| groups[id].0.clone()).collect();
    let all_m: Vec<f64> = order.iter().flat_map(|id| groups[id].1.clone()).collect();
    let all_s: Vec<f64> = order.iter().flat_map(|id| groups[id].2.clone()).collect();
    let overall = MetricReport::compute(&all_y, &all_m, &all_s, &cs, pooled)?;
    let med = |f: &dyn Fn(&MetricReport) -> Option<f64>| median(&reports.iter().filter_map(f).collect::<Vec<_>>());
    let summary = MetricsSummary {
        n_scenarios: order.len(),
        n_values: all_y.len(),
        pooled_variance: pooled,
        median_rmse: med(&|r| Some(r.rmse)),
        median_q2: med(&|r| r.q2),
        median_q2_pooled: med(&|r| r.q2_pooled),
        median_ca: cs.iter().filter_map(|&c| med(&|r| r.ca_at(c)).map(|v| (c, v))).collect(),
        truth_categories: category_proportions(&all_y).ok(),
        predicted_categories: category_proportions(&all_m).ok(),
        overall,
    };
    write_json(&run.output("metrics_summary.json"), &summary)?;
    run.finish(&cfg, None)?;
    Ok(format!(
        "{} scenarios, {} values: overall RMSE {:.6}",
        summary.n_scenarios, summary.n_values, summary.overall.rmse
    ))
}
