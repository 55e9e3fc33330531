//! Scenario inputs, locations and observations loaded together and indexed.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use fungp::funspace::{cartesian_curves, ProjectedInputs, ScenarioInputs};
use fungp::gp::{DenseObservation, DenseTrainingSet, TensorTrainingSet, TrainingSet};

use crate::error::{CliError, CliResult};
use crate::io::{
    read_channel, read_locations, read_observations, write_channel, write_locations, write_observations, FileRecord,
    LocationsFile, ObservationFormat,
};

/// Where a dataset lives. `data` names a directory laid out as written by
/// `synth` (`inputs/*.csv`, `locations.csv`, `observations.csv`); explicit
/// paths take precedence over it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub data: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub locations: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    /// Channel pairs given as magnitude and direction in degrees, replaced
    /// by their Cartesian components on load.
    pub polar: Vec<PolarPair>,
}

/// Magnitude and direction channel ids. The pair becomes the channels
/// `<magnitude>_x` and `<magnitude>_y`, in the place of the magnitude.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarPair {
    pub magnitude: String,
    pub direction: String,
}

impl std::str::FromStr for PolarPair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            Some((m, d)) if !m.is_empty() && !d.is_empty() => Ok(Self {
                magnitude: m.to_string(),
                direction: d.to_string(),
            }),
            _ => Err(format!("expected MAGNITUDE:DIRECTION, got {s:?}")),
        }
    }
}

impl DataPaths {
    pub fn input_files(&self) -> CliResult<Vec<PathBuf>> {
        if !self.inputs.is_empty() {
            return Ok(self.inputs.clone());
        }
        let dir = self
            .data
            .as_ref()
            .map(|d| d.join("inputs"))
            .ok_or_else(|| CliError::data("no input channel files given (set inputs or data)"))?;
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| CliError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(CliError::data(format!("{}: no channel files", dir.display())));
        }
        Ok(files)
    }

    pub fn locations_file(&self) -> CliResult<PathBuf> {
        self.locations
            .clone()
            .or_else(|| self.data.as_ref().map(|d| d.join("locations.csv")))
            .ok_or_else(|| CliError::data("no locations file given (set locations or data)"))
    }

    pub fn observations_file(&self) -> CliResult<PathBuf> {
        self.observations
            .clone()
            .or_else(|| self.data.as_ref().map(|d| d.join("observations.csv")))
            .ok_or_else(|| CliError::data("no observations file given (set observations or data)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observations {
    /// Every scenario at every location, `R × S` in file order.
    Tensor(DMatrix<f64>),
    /// `(scenario index, location index, value)`.
    Scattered(Vec<(usize, usize, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scenario_ids: Vec<String>,
    pub inputs: ScenarioInputs,
    pub locations: LocationsFile,
    pub observations: Option<Observations>,
    pub files: Vec<FileRecord>,
}

/// Reads and cross-checks a set of channel files.
pub fn load_inputs(
    files: &[PathBuf],
    polar: &[PolarPair],
) -> CliResult<(Vec<String>, ScenarioInputs, Vec<FileRecord>)> {
    let mut channels = Vec::with_capacity(files.len());
    let mut records = Vec::with_capacity(files.len());
    let mut first: Option<(PathBuf, Vec<String>, Vec<f64>)> = None;
    for path in files {
        let ch = read_channel(path)?;
        if let Some((p0, ids, grid)) = &first {
            if &ch.scenario_ids != ids {
                return Err(CliError::data(format!(
                    "{} lists different scenarios than {}",
                    path.display(),
                    p0.display()
                )));
            }
            let same = grid.len() == ch.grid.len()
                && grid.iter().zip(&ch.grid).all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0));
            if !same {
                return Err(CliError::data(format!(
                    "{} has a different time grid than {}",
                    path.display(),
                    p0.display()
                )));
            }
        } else {
            first = Some((path.clone(), ch.scenario_ids.clone(), ch.grid.clone()));
        }
        records.push(FileRecord::of(format!("inputs:{}", ch.channel_id), path)?);
        channels.push((ch.channel_id, ch.values));
    }
    let (_, ids, grid) = first.ok_or_else(|| CliError::data("no input channel files"))?;
    let channels = to_cartesian(channels, polar)?;
    let inputs = ScenarioInputs::new(grid, channels)?;
    Ok((ids, inputs, records))
}

fn to_cartesian(
    mut channels: Vec<(String, DMatrix<f64>)>,
    polar: &[PolarPair],
) -> CliResult<Vec<(String, DMatrix<f64>)>> {
    for pair in polar {
        let find = |id: &str, chs: &[(String, DMatrix<f64>)]| {
            chs.iter()
                .position(|(c, _)| c == id)
                .ok_or_else(|| CliError::data(format!("polar pair names unknown channel {id:?}")))
        };
        if pair.magnitude == pair.direction {
            return Err(CliError::data(format!("polar pair uses {:?} twice", pair.magnitude)));
        }
        let d = find(&pair.direction, &channels)?;
        let (_, dir) = channels.remove(d);
        let m = find(&pair.magnitude, &channels)?;
        let (_, mag) = channels.remove(m);
        let mut x = DMatrix::zeros(mag.nrows(), mag.ncols());
        let mut y = x.clone();
        for r in 0..mag.nrows() {
            let (cx, cy) = cartesian_curves(
                &mag.row(r).iter().copied().collect::<Vec<_>>(),
                &dir.row(r).iter().copied().collect::<Vec<_>>(),
            )?;
            x.row_mut(r).copy_from_slice(&cx);
            y.row_mut(r).copy_from_slice(&cy);
        }
        channels.insert(m, (format!("{}_y", pair.magnitude), y));
        channels.insert(m, (format!("{}_x", pair.magnitude), x));
    }
    Ok(channels)
}

impl Dataset {
    pub fn load(paths: &DataPaths, with_observations: bool) -> CliResult<Self> {
        let (scenario_ids, inputs, mut files) = load_inputs(&paths.input_files()?, &paths.polar)?;
        let loc_path = paths.locations_file()?;
        let locations = read_locations(&loc_path)?;
        files.push(FileRecord::of("locations", &loc_path)?);
        let observations = if with_observations {
            let obs_path = paths.observations_file()?;
            let obs = index_observations(&obs_path, &scenario_ids, &locations)?;
            files.push(FileRecord::of("observations", &obs_path)?);
            Some(obs)
        } else {
            None
        };
        Ok(Self {
            scenario_ids,
            inputs,
            locations,
            observations,
            files,
        })
    }

    pub fn n_scenarios(&self) -> usize {
        self.scenario_ids.len()
    }

    pub fn tensor(&self) -> CliResult<&DMatrix<f64>> {
        match &self.observations {
            Some(Observations::Tensor(y)) => Ok(y),
            Some(Observations::Scattered(_)) => Err(CliError::data(
                "this command needs every scenario observed at every location",
            )),
            None => Err(CliError::data("no observations loaded")),
        }
    }

    /// Indices of the named scenarios, or of the first `first` scenarios.
    pub fn scenario_indices(&self, ids: &[String], first: Option<usize>) -> CliResult<Vec<usize>> {
        let r = self.n_scenarios();
        if !ids.is_empty() {
            let index: HashMap<&str, usize> =
                self.scenario_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
            return ids
                .iter()
                .map(|id| {
                    index
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| CliError::data(format!("unknown scenario {id:?}")))
                })
                .collect();
        }
        match first {
            Some(n) if n == 0 || n > r => Err(CliError::data(format!("cannot take the first {n} of {r} scenarios"))),
            Some(n) => Ok((0..n).collect()),
            None => Ok((0..r).collect()),
        }
    }

    /// The dataset restricted to the given scenarios, in the given order.
    pub fn select(&self, indices: &[usize]) -> CliResult<Self> {
        let mut position = vec![None; self.n_scenarios()];
        for (k, &i) in indices.iter().enumerate() {
            position[i] = Some(k);
        }
        let observations = match &self.observations {
            Some(Observations::Tensor(y)) => Some(Observations::Tensor(y.select_rows(indices.iter()))),
            Some(Observations::Scattered(v)) => Some(Observations::Scattered(
                v.iter()
                    .filter_map(|&(r, s, val)| position[r].map(|k| (k, s, val)))
                    .collect(),
            )),
            None => None,
        };
        Ok(Self {
            scenario_ids: indices.iter().map(|&i| self.scenario_ids[i].clone()).collect(),
            inputs: self.inputs.select(indices)?,
            locations: self.locations.clone(),
            observations,
            files: self.files.clone(),
        })
    }

    /// Writes the dataset in the `synth` layout under `dir` and returns the
    /// records of the files written.
    pub fn write(&self, dir: &Path, format: ObservationFormat) -> CliResult<Vec<FileRecord>> {
        let mut out = Vec::new();
        for (i, id) in self.inputs.channel_ids().iter().enumerate() {
            let path = dir.join("inputs").join(format!("{id}.csv"));
            write_channel(&path, &self.scenario_ids, self.inputs.grid(), self.inputs.channel(i))?;
            out.push(FileRecord::of(format!("inputs:{id}"), &path)?);
        }
        let loc = dir.join("locations.csv");
        write_locations(&loc, &self.locations.ids, &self.locations.points)?;
        out.push(FileRecord::of("locations", &loc)?);
        if let Some(obs) = &self.observations {
            let path = dir.join("observations.csv");
            match obs {
                Observations::Tensor(y) => {
                    write_observations(&path, format, &self.scenario_ids, &self.locations.ids, y)?;
                }
                Observations::Scattered(v) => {
                    let mut w = crate::io::CsvOut::create(&path, &["scenario_id", "location_id", "value"])?;
                    for &(r, s, val) in v {
                        w.row([
                            self.scenario_ids[r].clone(),
                            self.locations.ids[s].clone(),
                            crate::io::fmt_f64(val),
                        ])?;
                    }
                    w.finish()?;
                }
            }
            out.push(FileRecord::of("observations", &path)?);
        }
        Ok(out)
    }

    /// Training set on the given projection. Complete designs use the
    /// Kronecker path unless `dense` is set or a nugget is requested.
    pub fn training_set(&self, projected: ProjectedInputs, dense: bool, noise_variance: f64) -> CliResult<TrainingSet> {
        match &self.observations {
            Some(Observations::Tensor(y)) => {
                let ts = TensorTrainingSet::new(projected, self.locations.points.clone(), y.clone())?;
                if dense || noise_variance > 0.0 {
                    Ok(DenseTrainingSet::from_tensor(&ts, noise_variance)?.into())
                } else {
                    Ok(ts.into())
                }
            }
            Some(Observations::Scattered(v)) => {
                let obs = v
                    .iter()
                    .map(|&(r, s, value)| DenseObservation {
                        scenario: r,
                        location: self.locations.points[s],
                        value,
                    })
                    .collect();
                Ok(DenseTrainingSet::new(projected, obs, noise_variance)?.into())
            }
            None => Err(CliError::data("no observations loaded")),
        }
    }
}

fn index_observations(path: &Path, scenario_ids: &[String], locations: &LocationsFile) -> CliResult<Observations> {
    let records = read_observations(path)?;
    let scen: HashMap<&str, usize> = scenario_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let locs = locations.index();
    let (r, s) = (scenario_ids.len(), locations.ids.len());
    let mut seen: HashMap<(usize, usize), u64> = HashMap::with_capacity(records.len());
    let mut triples = Vec::with_capacity(records.len());
    for rec in &records {
        let i = *scen.get(rec.scenario_id.as_str()).ok_or_else(|| {
            CliError::data(format!(
                "{} line {}: unknown scenario {:?}",
                path.display(),
                rec.line,
                rec.scenario_id
            ))
        })?;
        let j = *locs.get(rec.location_id.as_str()).ok_or_else(|| {
            CliError::data(format!(
                "{} line {}: unknown location {:?}",
                path.display(),
                rec.line,
                rec.location_id
            ))
        })?;
        if let Some(prev) = seen.insert((i, j), rec.line) {
            return Err(CliError::data(format!(
                "{} line {}: scenario {:?} at location {:?} already given on line {prev}",
                path.display(),
                rec.line,
                rec.scenario_id,
                rec.location_id
            )));
        }
        triples.push((i, j, rec.value));
    }
    if triples.len() == r * s {
        let mut y = DMatrix::zeros(r, s);
        for (i, j, v) in triples {
            y[(i, j)] = v;
        }
        Ok(Observations::Tensor(y))
    } else {
        Ok(Observations::Scattered(triples))
    }
}
