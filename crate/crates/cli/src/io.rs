//! File formats.
//!
//! - Channel files: one CSV per input channel, header `scenario_id,t_1,...,t_τ`,
//!   one row per scenario.
//! - Locations: `id,x1,x2`.
//! - Observations, long form: `scenario_id,location_id,value`.
//! - Observations, dense form: `scenario_id,<location id>,...`, one row per
//!   scenario. The header decides which form a file is in.
//!
//! Floats are written with 17 significant digits.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fungp::Point2;

use crate::error::{CliError, CliResult};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

fn reader(path: &Path) -> CliResult<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))
}

fn writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))
}

/// Collects CSV rows, writing them on [`CsvOut::finish`].
pub struct CsvOut {
    path: PathBuf,
    inner: csv::Writer<fs::File>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> CliResult<Self> {
        let mut inner = writer(path)?;
        inner.write_record(header).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            inner,
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields).map_err(|e| CliError::io(&self.path, e))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.inner.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn parse_num(path: &Path, rec: &csv::StringRecord, col: usize, name: &str) -> CliResult<f64> {
    let raw = rec.get(col).unwrap_or("");
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::data(format!(
            "{} line {}: column {name}: {raw:?} is not a finite number",
            path.display(),
            line_of(rec)
        ))),
    }
}

fn records(path: &Path) -> CliResult<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| CliError::io(path, e))?.clone();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        if rec.len() != header.len() {
            return Err(CliError::data(format!(
                "{} line {}: {} fields, header has {}",
                path.display(),
                line_of(&rec),
                rec.len(),
                header.len()
            )));
        }
        rows.push(rec);
    }
    Ok((header, rows))
}

fn check_unique(path: &Path, what: &str, ids: &[String]) -> CliResult<()> {
    let mut seen = HashMap::new();
    for (i, id) in ids.iter().enumerate() {
        if let Some(j) = seen.insert(id.as_str(), i) {
            return Err(CliError::data(format!(
                "{}: {what} {id:?} appears in rows {} and {}",
                path.display(),
                j + 1,
                i + 1
            )));
        }
    }
    Ok(())
}

/// One input channel: scenarios × time stamps.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFile {
    pub channel_id: String,
    pub scenario_ids: Vec<String>,
    pub grid: Vec<f64>,
    pub values: DMatrix<f64>,
}

pub fn read_channel(path: &Path) -> CliResult<ChannelFile> {
    let (header, rows) = records(path)?;
    if header.len() < 3 || header.get(0) != Some("scenario_id") {
        return Err(CliError::data(format!(
            "{}: header must be scenario_id followed by at least two time stamps",
            path.display()
        )));
    }
    let grid = header
        .iter()
        .skip(1)
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::data(format!("{} line 1: time stamp {t:?} is not a number", path.display())))
        })
        .collect::<CliResult<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(CliError::data(format!("{}: no scenarios", path.display())));
    }
    let tau = grid.len();
    let mut values = DMatrix::zeros(rows.len(), tau);
    let mut scenario_ids = Vec::with_capacity(rows.len());
    for (i, rec) in rows.iter().enumerate() {
        scenario_ids.push(rec[0].to_string());
        for t in 0..tau {
            values[(i, t)] = parse_num(path, rec, t + 1, &header[t + 1])?;
        }
    }
    check_unique(path, "scenario", &scenario_ids)?;
    let channel_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(ChannelFile {
        channel_id,
        scenario_ids,
        grid,
        values,
    })
}

pub fn write_channel(path: &Path, scenario_ids: &[String], grid: &[f64], values: &DMatrix<f64>) -> CliResult<()> {
    let mut header = vec!["scenario_id".to_string()];
    header.extend(grid.iter().map(|t| fmt_f64(*t)));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = CsvOut::create(path, &header_refs)?;
    for (i, id) in scenario_ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(values.row(i).iter().map(|v| fmt_f64(*v)));
        out.row(&row)?;
    }
    out.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationsFile {
    pub ids: Vec<String>,
    pub points: Vec<Point2>,
}

impl LocationsFile {
    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }
}

pub fn read_locations(path: &Path) -> CliResult<LocationsFile> {
    let (header, rows) = records(path)?;
    if header.iter().collect::<Vec<_>>() != ["id", "x1", "x2"] {
        return Err(CliError::data(format!("{}: header must be id,x1,x2", path.display())));
    }
    let mut ids = Vec::with_capacity(rows.len());
    let mut points = Vec::with_capacity(rows.len());
    for rec in &rows {
        ids.push(rec[0].to_string());
        points.push([parse_num(path, rec, 1, "x1")?, parse_num(path, rec, 2, "x2")?]);
    }
    if ids.is_empty() {
        return Err(CliError::data(format!("{}: no locations", path.display())));
    }
    check_unique(path, "location", &ids)?;
    Ok(LocationsFile { ids, points })
}

pub fn write_locations(path: &Path, ids: &[String], points: &[Point2]) -> CliResult<()> {
    let mut out = CsvOut::create(path, &["id", "x1", "x2"])?;
    for (id, p) in ids.iter().zip(points) {
        out.row([id.clone(), fmt_f64(p[0]), fmt_f64(p[1])])?;
    }
    out.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub scenario_id: String,
    pub location_id: String,
    pub value: f64,
    pub line: u64,
}

pub fn read_observations(path: &Path) -> CliResult<Vec<ObservationRecord>> {
    let (header, rows) = records(path)?;
    if header.get(0) != Some("scenario_id") || header.len() < 2 {
        return Err(CliError::data(format!(
            "{}: header must start with scenario_id",
            path.display()
        )));
    }
    let long = header.len() == 3 && &header[1] == "location_id" && &header[2] == "value";
    let mut out = Vec::new();
    for rec in &rows {
        if long {
            out.push(ObservationRecord {
                scenario_id: rec[0].to_string(),
                location_id: rec[1].to_string(),
                value: parse_num(path, rec, 2, "value")?,
                line: line_of(rec),
            });
        } else {
            for c in 1..header.len() {
                out.push(ObservationRecord {
                    scenario_id: rec[0].to_string(),
                    location_id: header[c].to_string(),
                    value: parse_num(path, rec, c, &header[c])?,
                    line: line_of(rec),
                });
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::data(format!("{}: no observations", path.display())));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationFormat {
    #[default]
    Dense,
    Long,
}

pub fn write_observations(
    path: &Path,
    format: ObservationFormat,
    scenario_ids: &[String],
    location_ids: &[String],
    values: &DMatrix<f64>,
) -> CliResult<()> {
    match format {
        ObservationFormat::Dense => {
            let mut header = vec!["scenario_id"];
            header.extend(location_ids.iter().map(String::as_str));
            let mut out = CsvOut::create(path, &header)?;
            for (i, id) in scenario_ids.iter().enumerate() {
                let mut row = vec![id.clone()];
                row.extend(values.row(i).iter().map(|v| fmt_f64(*v)));
                out.row(&row)?;
            }
            out.finish()
        }
        ObservationFormat::Long => {
            let mut out = CsvOut::create(path, &["scenario_id", "location_id", "value"])?;
            for (i, sid) in scenario_ids.iter().enumerate() {
                for (j, lid) in location_ids.iter().enumerate() {
                    out.row([sid.clone(), lid.clone(), fmt_f64(values[(i, j)])])?;
                }
            }
            out.finish()
        }
    }
}

/// A file read or written by a run, with its content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(role: impl Into<String>, path: &Path) -> CliResult<Self> {
        Ok(Self {
            role: role.into(),
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}
