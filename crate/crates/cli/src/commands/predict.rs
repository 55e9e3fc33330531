use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use fungp::funspace::ProjectedInputs;
use fungp::gp::{FittedModel, ModelDocument, ModelPath, PredictOptions};

use crate::commands::set;
use crate::dataset::{load_inputs, DataPaths, Dataset, PolarPair};
use crate::error::{CliError, CliResult};
use crate::io::{fmt_f64, read_json, read_locations, sha256_file, CsvOut, FileRecord, LocationsFile};
use crate::run::{load_config, Run};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictRun {
    pub model: Option<PathBuf>,
    /// Channel files of the scenarios to forecast (matched to the model's
    /// channels by file name).
    pub inputs: Vec<PathBuf>,
    /// Directory holding `inputs/*.csv`, used when `inputs` is empty.
    pub data: Option<PathBuf>,
    /// Same conversion as used when fitting.
    pub polar: Vec<PolarPair>,
    /// Forecast only these scenario ids.
    pub scenarios: Vec<String>,
    /// Prediction locations; defaults to the training locations.
    pub locations: Option<PathBuf>,
    pub clamp_negative: bool,
    pub out: Option<PathBuf>,
}

impl Default for PredictRun {
    fn default() -> Self {
        Self {
            model: None,
            inputs: Vec::new(),
            data: None,
            polar: Vec::new(),
            scenarios: Vec::new(),
            locations: None,
            clamp_negative: true,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// JSON run config; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// model.json written by `fit`
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Channel CSV file of the new scenarios; repeat for every channel
    #[arg(long = "input", value_name = "CSV")]
    pub inputs: Vec<PathBuf>,
    /// Directory holding inputs/*.csv
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Magnitude and direction (degrees) channel ids, as given to `fit`
    #[arg(long, value_name = "MAG:DIR")]
    pub polar: Vec<PolarPair>,
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Vec<String>,
    #[arg(long)]
    pub locations: Option<PathBuf>,
    /// Set negative means to zero and flag them
    #[arg(long)]
    pub clamp_negative: Option<bool>,
}

impl PredictRun {
    pub fn resolve(mut self, a: &PredictArgs) -> Self {
        set(&mut self.out, a.out.clone().map(Some));
        set(&mut self.model, a.model.clone().map(Some));
        if !a.inputs.is_empty() {
            self.inputs.clone_from(&a.inputs);
        }
        set(&mut self.data, a.data.clone().map(Some));
        if !a.polar.is_empty() {
            self.polar.clone_from(&a.polar);
        }
        if !a.scenarios.is_empty() {
            self.scenarios.clone_from(&a.scenarios);
        }
        set(&mut self.locations, a.locations.clone().map(Some));
        set(&mut self.clamp_negative, a.clamp_negative);
        self
    }
}

/// A model document together with the verified training data it refers to.
pub struct LoadedModel {
    pub model: FittedModel,
    pub training: Dataset,
    pub files: Vec<FileRecord>,
}

pub fn load_model(path: &Path) -> CliResult<LoadedModel> {
    let doc: ModelDocument = read_json(path)?;
    if doc.format_version != ModelDocument::FORMAT_VERSION {
        return Err(CliError::data(format!(
            "{}: model format {} is not supported",
            path.display(),
            doc.format_version
        )));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut paths = DataPaths::default();
    let mut files = vec![FileRecord::of("model", path)?];
    for r in &doc.training {
        let p = base.join(&r.path);
        let actual = sha256_file(&p)?;
        if actual != r.sha256 {
            return Err(CliError::data(format!(
                "{}: content hash differs from the one recorded in {}",
                p.display(),
                path.display()
            )));
        }
        match r.role.as_str() {
            "locations" => paths.locations = Some(p.clone()),
            "observations" => paths.observations = Some(p.clone()),
            role if role.starts_with("inputs:") => paths.inputs.push(p.clone()),
            role => return Err(CliError::data(format!("{}: unknown training role {role:?}", path.display()))),
        }
        files.push(FileRecord {
            role: format!("training:{}", r.role),
            path: p.display().to_string(),
            sha256: actual,
        });
    }
    let training = Dataset::load(&paths, true)?;
    let projected = ProjectedInputs::with_bases(doc.bases.clone(), &training.inputs)?;
    let set = training.training_set(projected, doc.path == ModelPath::Dense, doc.noise_variance)?;
    let model = FittedModel::from_document(&doc, set)?;
    Ok(LoadedModel { model, training, files })
}

pub fn run(args: &PredictArgs) -> CliResult<String> {
    let cfg = load_config::<PredictRun>(args.config.as_deref())?.resolve(args);
    let model_path = cfg.model.clone().ok_or_else(|| CliError::data("no model given (set model)"))?;
    let mut run = Run::start("predict", cfg.out.as_deref())?;
    let loaded = load_model(&model_path)?;
    run.inputs(loaded.files.clone());

    let input_paths = DataPaths {
        data: cfg.data.clone(),
        inputs: cfg.inputs.clone(),
        ..DataPaths::default()
    }
    .input_files()?;
    let (ids, inputs, records) = load_inputs(&input_paths, &cfg.polar)?;
    run.inputs(records);
    let train_grid = loaded.training.inputs.grid();
    let grid = inputs.grid();
    if grid.len() != train_grid.len() || grid.iter().zip(train_grid).any(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(1.0)) {
        return Err(CliError::data("the new scenarios are not on the training time grid"));
    }
    let bases = loaded.model.inputs().bases();
    let order = bases
        .iter()
        .map(|b| {
            inputs
                .channel_ids()
                .iter()
                .position(|c| *c == b.channel_id)
                .ok_or_else(|| CliError::data(format!("no input file for channel {:?}", b.channel_id)))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let locations: LocationsFile = match &cfg.locations {
        Some(p) => {
            run.inputs([FileRecord::of("locations", p)?]);
            read_locations(p)?
        }
        None => loaded.training.locations.clone(),
    };
    let selected: Vec<usize> = if cfg.scenarios.is_empty() {
        (0..ids.len()).collect()
    } else {
        cfg.scenarios
            .iter()
            .map(|s| ids.iter().position(|i| i == s).ok_or_else(|| CliError::data(format!("unknown scenario {s:?}"))))
            .collect::<CliResult<_>>()?
    };

    let opts = PredictOptions {
        clamp_negative: cfg.clamp_negative,
    };
    let mut out = CsvOut::create(
        &run.output("predictions.csv"),
        &["scenario_id", "location_id", "x1", "x2", "mean", "sd", "clamped"],
    )?;
    for &r in &selected {
        let curves: Vec<Vec<f64>> = order.iter().map(|&c| inputs.channel(c).row(r).iter().copied().collect()).collect();
        let pred = loaded.model.forecast_map(&curves, &locations.points, opts)?;
        let sd = pred.sd();
        for (s, (id, pt)) in locations.ids.iter().zip(&locations.points).enumerate() {
            out.row([
                ids[r].clone(),
                id.clone(),
                fmt_f64(pt[0]),
                fmt_f64(pt[1]),
                fmt_f64(pred.mean[s]),
                fmt_f64(sd[s]),
                u8::from(pred.clamped[s]).to_string(),
            ])?;
        }
    }
    out.finish()?;
    let msg = format!(
        "predicted {} scenarios at {} locations",
        selected.len(),
        locations.ids.len()
    );
    run.finish(&cfg, None)?;
    Ok(msg)
}
