use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use fungp::synth::{generate, generate_coastal, CoastalConfig, SpatialLayout, SynthConfig, SynthDataset};

use crate::commands::set;
use crate::dataset::{Dataset, Observations};
use crate::error::CliResult;
use crate::io::{LocationsFile, ObservationFormat};
use crate::run::{load_config, Run};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Eight hierarchical channels around per-channel mean curves
    #[default]
    Multioutput,
    /// Eight centered channels
    Forecast,
    /// Three channels, nonnegative flood-like maps
    Coastal,
}

/// A fully specified generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Generator {
    Maps(SynthConfig),
    Coastal(CoastalConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthRun {
    pub preset: Preset,
    pub scenarios: usize,
    pub layout: SpatialLayout,
    pub seed: u64,
    pub format: ObservationFormat,
    /// Overrides the preset entirely when given.
    pub generator: Option<Generator>,
    pub out: Option<PathBuf>,
}

impl Default for SynthRun {
    fn default() -> Self {
        Self {
            preset: Preset::Multioutput,
            scenarios: 20,
            layout: SpatialLayout::Grid { n1: 10, n2: 10 },
            seed: 0,
            format: ObservationFormat::Dense,
            generator: None,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// JSON run config; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Number of scenarios R
    #[arg(long)]
    pub scenarios: Option<usize>,
    /// n × n equispaced grid on the unit square
    #[arg(long, conflicts_with = "lhd")]
    pub grid: Option<usize>,
    /// Maximin Latin hypercube with this many points
    #[arg(long)]
    pub lhd: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Dense,
    Long,
}

impl SynthRun {
    pub fn resolve(mut self, args: &SynthArgs) -> Self {
        set(&mut self.out, args.out.clone().map(Some));
        set(&mut self.preset, args.preset);
        set(&mut self.scenarios, args.scenarios);
        set(&mut self.seed, args.seed);
        if let Some(n) = args.grid {
            self.layout = SpatialLayout::Grid { n1: n, n2: n };
        }
        if let Some(n) = args.lhd {
            self.layout = SpatialLayout::Lhd { n, restarts: 50 };
        }
        if let Some(f) = args.format {
            self.format = match f {
                FormatArg::Dense => ObservationFormat::Dense,
                FormatArg::Long => ObservationFormat::Long,
            };
        }
        let explicit = args.scenarios.is_some() || args.seed.is_some() || args.grid.is_some() || args.lhd.is_some();
        let generator = match self.generator.take() {
            Some(g) if !explicit && args.preset.is_none() => g,
            Some(mut g) if args.preset.is_none() => {
                let base = match &mut g {
                    Generator::Maps(c) => c,
                    Generator::Coastal(c) => &mut c.base,
                };
                base.inputs.n_scenarios = self.scenarios;
                base.seed = self.seed;
                base.layout = self.layout.clone();
                g
            }
            _ => self.preset_generator(),
        };
        let base = match &generator {
            Generator::Maps(c) => c,
            Generator::Coastal(c) => &c.base,
        };
        self.scenarios = base.inputs.n_scenarios;
        self.seed = base.seed;
        self.layout = base.layout.clone();
        self.generator = Some(generator);
        self
    }

    fn preset_generator(&self) -> Generator {
        let (r, seed, layout) = (self.scenarios, self.seed, self.layout.clone());
        match self.preset {
            Preset::Multioutput => Generator::Maps(SynthConfig::multioutput_preset(r, layout, seed)),
            Preset::Forecast => Generator::Maps(SynthConfig::forecast_preset(r, layout, seed)),
            Preset::Coastal => {
                let mut c = CoastalConfig::preset(r, 1, seed);
                c.base.layout = layout;
                Generator::Coastal(c)
            }
        }
    }
}

fn ids(prefix: char, n: usize) -> Vec<String> {
    let width = n.to_string().len();
    (1..=n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

pub fn run(args: &SynthArgs) -> CliResult<String> {
    let cfg = load_config::<SynthRun>(args.config.as_deref())?.resolve(args);
    let mut run = Run::start("synth", cfg.out.as_deref())?;
    let data: SynthDataset = match cfg.generator.as_ref().expect("resolved") {
        Generator::Maps(c) => generate(c)?,
        Generator::Coastal(c) => generate_coastal(c)?,
    };
    let (r, s) = data.maps.shape();
    let dataset = Dataset {
        scenario_ids: ids('s', r),
        inputs: data.inputs,
        locations: LocationsFile {
            ids: ids('x', s),
            points: data.locations,
        },
        observations: Some(Observations::Tensor(data.maps)),
        files: Vec::new(),
    };
    for rec in dataset.write(run.dir(), cfg.format)? {
        run.register(std::path::Path::new(&rec.path));
    }
    let q = dataset.inputs.n_channels();
    let seed = cfg.seed;
    let dir = run.dir().display().to_string();
    run.finish(&cfg, Some(seed))?;
    Ok(format!("wrote {r} scenarios × {s} locations ({q} channels) to {dir}"))
}
