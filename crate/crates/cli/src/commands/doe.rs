use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use fungp::design::{compute_efp, scenario_features, select_doe, select_scenarios, DoeConfig};
use fungp::Point2;

use crate::commands::{set, DataArgs};
use crate::dataset::{DataPaths, Dataset};
use crate::error::{CliError, CliResult};
use crate::io::{fmt_f64, CsvOut};
use crate::run::{load_config, Run};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoeRun {
    /// Map stack (observations) on the candidate locations.
    pub dataset: DataPaths,
    /// A location is wet in a scenario when its value exceeds this.
    pub wet_threshold: f64,
    pub kappa1: usize,
    pub kappa2: usize,
    pub efp_split: f64,
    /// Location ids that must be in the design.
    pub mandatory: Vec<String>,
    /// Points whose nearest candidate location must be in the design.
    pub mandatory_points: Vec<Point2>,
    pub seed: u64,
    /// Also pick this many representative scenarios.
    pub scenario_count: Option<usize>,
    /// Scenario ids never picked (e.g. those chosen in an earlier round).
    pub exclude_scenarios: Vec<String>,
    pub out: Option<PathBuf>,
}

impl Default for DoeRun {
    fn default() -> Self {
        let d = DoeConfig::default();
        Self {
            dataset: DataPaths::default(),
            wet_threshold: 0.0,
            kappa1: d.kappa1,
            kappa2: d.kappa2,
            efp_split: d.efp_split,
            mandatory: Vec::new(),
            mandatory_points: Vec::new(),
            seed: 0,
            scenario_count: None,
            exclude_scenarios: Vec::new(),
            out: None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DoeArgs {
    /// JSON run config; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub wet_threshold: Option<f64>,
    #[arg(long)]
    pub kappa1: Option<usize>,
    #[arg(long)]
    pub kappa2: Option<usize>,
    #[arg(long)]
    pub efp_split: Option<f64>,
    /// Comma-separated location ids that must be selected
    #[arg(long, value_delimiter = ',')]
    pub mandatory: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub scenario_count: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub exclude_scenarios: Vec<String>,
}

impl DoeRun {
    pub fn resolve(mut self, a: &DoeArgs) -> Self {
        a.data.apply(&mut self.dataset);
        set(&mut self.out, a.out.clone().map(Some));
        set(&mut self.wet_threshold, a.wet_threshold);
        set(&mut self.kappa1, a.kappa1);
        set(&mut self.kappa2, a.kappa2);
        set(&mut self.efp_split, a.efp_split);
        if !a.mandatory.is_empty() {
            self.mandatory.clone_from(&a.mandatory);
        }
        set(&mut self.seed, a.seed);
        set(&mut self.scenario_count, a.scenario_count.map(Some));
        if !a.exclude_scenarios.is_empty() {
            self.exclude_scenarios.clone_from(&a.exclude_scenarios);
        }
        self
    }
}

fn nearest(points: &[Point2], p: &Point2) -> usize {
    let d = |q: &Point2| (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
    (0..points.len())
        .min_by(|&a, &b| d(&points[a]).total_cmp(&d(&points[b])))
        .unwrap_or(0)
}

pub fn run(args: &DoeArgs) -> CliResult<String> {
    let cfg = load_config::<DoeRun>(args.config.as_deref())?.resolve(args);
    let mut run = Run::start("doe", cfg.out.as_deref())?;
    let data = Dataset::load(&cfg.dataset, true)?;
    run.inputs(data.files.clone());
    let locs = &data.locations;
    let efp = compute_efp(data.tensor()?, cfg.wet_threshold)?;

    let index = locs.index();
    let mut mandatory = cfg
        .mandatory
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| CliError::data(format!("unknown mandatory location {id:?}")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    mandatory.extend(cfg.mandatory_points.iter().map(|p| nearest(&locs.points, p)));
    let doe = select_doe(
        &locs.points,
        &efp,
        &DoeConfig {
            kappa1: cfg.kappa1,
            kappa2: cfg.kappa2,
            efp_split: cfg.efp_split,
            mandatory,
            seed: cfg.seed,
        },
    )?;

    let mut e = CsvOut::create(&run.output("efp.csv"), &["location_id", "x1", "x2", "efp"])?;
    for (i, id) in locs.ids.iter().enumerate() {
        e.row([id.clone(), fmt_f64(locs.points[i][0]), fmt_f64(locs.points[i][1]), fmt_f64(efp[i])])?;
    }
    e.finish()?;
    let mut d = CsvOut::create(&run.output("doe.csv"), &["rank", "location_id", "x1", "x2", "efp", "class"])?;
    for (k, (&i, c)) in doe.indices.iter().zip(&doe.classes).enumerate() {
        d.row([
            (k + 1).to_string(),
            locs.ids[i].clone(),
            fmt_f64(locs.points[i][0]),
            fmt_f64(locs.points[i][1]),
            fmt_f64(efp[i]),
            c.to_string(),
        ])?;
    }
    d.finish()?;

    let mut msg = format!("selected {} of {} locations", doe.indices.len(), locs.ids.len());
    if let Some(k) = cfg.scenario_count {
        let exclude = data.scenario_indices(&cfg.exclude_scenarios, None)?;
        let exclude = if cfg.exclude_scenarios.is_empty() { Vec::new() } else { exclude };
        let chosen = select_scenarios(&scenario_features(&data.inputs)?, k, cfg.seed, &exclude)?;
        let mut s = CsvOut::create(&run.output("scenarios.csv"), &["rank", "scenario_id"])?;
        for (rank, i) in chosen.iter().enumerate() {
            s.row([(rank + 1).to_string(), data.scenario_ids[*i].clone()])?;
        }
        s.finish()?;
        msg.push_str(&format!(" and {k} scenarios"));
    }
    run.finish(&cfg, Some(cfg.seed))?;
    Ok(msg)
}
