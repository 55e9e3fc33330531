pub mod doe;
pub mod fit;
pub mod loo;
pub mod metrics;
pub mod predict;
pub mod synth;

use std::path::PathBuf;

use clap::Args;

use crate::dataset::{DataPaths, PolarPair};

/// Dataset location flags shared by the commands that read one.
#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Dataset directory (inputs/*.csv, locations.csv, observations.csv)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Channel CSV file; repeat for every channel
    #[arg(long = "input", value_name = "CSV")]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub locations: Option<PathBuf>,
    #[arg(long)]
    pub observations: Option<PathBuf>,
    /// Magnitude and direction (degrees) channel ids to convert to
    /// Cartesian components; repeatable
    #[arg(long, value_name = "MAG:DIR")]
    pub polar: Vec<PolarPair>,
}

impl DataArgs {
    pub fn apply(&self, paths: &mut DataPaths) {
        if self.data.is_some() {
            paths.data.clone_from(&self.data);
        }
        if !self.inputs.is_empty() {
            paths.inputs.clone_from(&self.inputs);
        }
        if self.locations.is_some() {
            paths.locations.clone_from(&self.locations);
        }
        if self.observations.is_some() {
            paths.observations.clone_from(&self.observations);
        }
        if !self.polar.is_empty() {
            paths.polar.clone_from(&self.polar);
        }
    }
}

pub(crate) fn set<T>(target: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *target = v;
    }
}

pub(crate) fn opt_str(v: Option<f64>) -> String {
    v.map(crate::io::fmt_f64).unwrap_or_default()
}
