//! Output directories: every run leaves its resolved config and a manifest of
//! input and output hashes next to its results.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::{read_json, sha256_file, write_json, FileRecord};

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// The config document of `path`, or the defaults.
pub fn load_config<T: Default + DeserializeOwned>(path: Option<&Path>) -> CliResult<T> {
    match path {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: String,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub wall_time_seconds: f64,
    pub finished_unix_seconds: u64,
}

pub struct Run {
    command: &'static str,
    dir: PathBuf,
    started: Instant,
    inputs: Vec<FileRecord>,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn start(command: &'static str, dir: Option<&Path>) -> CliResult<Self> {
        let dir = dir
            .ok_or_else(|| CliError::data("no output directory given (set out)"))?
            .to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self {
            command,
            dir,
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Path of an output file, registered for the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    pub fn register(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn inputs(&mut self, records: impl IntoIterator<Item = FileRecord>) {
        for r in records {
            if !self.inputs.contains(&r) {
                self.inputs.push(r);
            }
        }
    }

    pub fn finish<C: Serialize>(mut self, config: &C, seed: Option<u64>) -> CliResult<PathBuf> {
        let cfg_path = self.output(CONFIG_FILE);
        write_json(&cfg_path, config)?;
        let mut outputs = Vec::with_capacity(self.outputs.len());
        self.outputs.sort();
        self.outputs.dedup();
        for p in &self.outputs {
            let rel = p.strip_prefix(&self.dir).unwrap_or(p);
            outputs.push(FileRecord {
                role: "output".into(),
                path: rel.display().to_string(),
                sha256: sha256_file(p)?,
            });
        }
        let manifest = Manifest {
            command: self.command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: CONFIG_FILE.into(),
            inputs: self.inputs,
            outputs,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
            finished_unix_seconds: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        };
        let path = self.dir.join(MANIFEST_FILE);
        write_json(&path, &manifest)?;
        Ok(path)
    }
}
