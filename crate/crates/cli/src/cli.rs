//! Command-line flags and how they override configuration keys.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{
    parse_fixed, parse_floats, parse_prior, parse_usizes, read_region, ExperimentConfig, FixtureName, Likelihood,
    LocationMode, MeshSource, ModelKind, PriorConfig, RectSpec,
};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "tbm",
    version,
    about = "Transparent barrier spatial models on triangulated domains"
)]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON experiment config; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled rectangle mesh and write it as JSON.
    Meshgen {
        #[command(flatten)]
        mesh: MeshArgs,
    },
    /// Correlation surfaces from reference nodes for one or more fraction settings.
    Correlate {
        #[command(flatten)]
        mesh: MeshArgs,
        #[command(flatten)]
        field: FieldArgs,
        /// Fraction values for the barrier labels, one panel row each.
        #[arg(long, value_name = "P1,P2,...")]
        sweep: Option<String>,
        #[command(flatten)]
        refs: RefArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Transparency calibration table over lists of c0 and t.
    Calibrate {
        #[command(flatten)]
        mesh: MeshArgs,
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        refs: RefArgs,
        #[arg(long, value_name = "C1,C2,...")]
        c0: Option<String>,
        #[arg(long, value_name = "T1,T2,...")]
        t: Option<String>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Draw a field and Gaussian observations or a point pattern.
    Simulate {
        #[command(flatten)]
        mesh: MeshArgs,
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        n_obs: Option<usize>,
        #[arg(long)]
        noise_sd: Option<f64>,
        #[arg(long, value_enum)]
        locations: Option<LocationMode>,
        /// Intercept of the log-intensity.
        #[arg(long, allow_negative_numbers = true)]
        beta0: Option<f64>,
    },
    /// Fit one model variant to simulated or supplied data.
    Fit {
        #[command(flatten)]
        mesh: MeshArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Observations (`x,y,value`) or events (`x,y`) CSV.
        #[arg(long = "data")]
        data_file: Option<PathBuf>,
        #[arg(long, value_enum)]
        model: Option<ModelKind>,
        /// Fractions for `--model tbm`; sigma and range set the optimizer start.
        #[command(flatten)]
        field: FieldArgs,
        /// Labels treated as impermeable by the barrier model.
        #[arg(long, value_name = "L1,L2,...")]
        barrier_labels: Option<String>,
        /// Range PC prior `r0,alpha`: P(range < r0) = alpha.
        #[arg(long, value_name = "R0,ALPHA")]
        range_prior: Option<String>,
        /// Sigma PC prior `s0,alpha`: P(sigma > s0) = alpha.
        #[arg(long, value_name = "S0,ALPHA")]
        sigma_prior: Option<String>,
        #[arg(long, value_name = "S0,ALPHA")]
        noise_prior: Option<String>,
        /// Start of the optimizer on the log scale.
        #[arg(long, value_name = "LOG_SIGMA,LOG_RANGE[,LOG_NOISE]", allow_hyphen_values = true)]
        init: Option<String>,
        /// Refit under the eight range priors of the sensitivity study.
        #[arg(long)]
        sensitivity: bool,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Summarize a directory of fit results as markdown tables.
    Report {
        /// Directory to scan; defaults to the output directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    /// Mesh JSON file.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Study rectangle to mesh.
    #[arg(long, value_name = "X0,X1,Y0,Y1", allow_hyphen_values = true)]
    pub rect: Option<String>,
    #[arg(long)]
    pub max_edge: Option<f64>,
    #[arg(long)]
    pub buffer: Option<f64>,
    /// Built-in geometry.
    #[arg(long, value_enum)]
    pub fixture: Option<FixtureName>,
    /// Region polygon file (JSON ring list) and its label.
    #[arg(long, value_name = "FILE:LABEL")]
    pub region: Vec<String>,
}

#[derive(Debug, Args)]
pub struct FieldArgs {
    /// One range fraction per subdomain label.
    #[arg(long, value_name = "P1,P2,...")]
    pub fractions: Option<String>,
    #[arg(long)]
    pub sigma_u: Option<f64>,
    #[arg(long)]
    pub range: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RefArgs {
    /// Reference node indices.
    #[arg(long, value_name = "I1,I2,...")]
    pub nodes: Option<String>,
    /// Reference point; the nearest node is used. Repeatable.
    #[arg(long, value_name = "X,Y", allow_hyphen_values = true)]
    pub point: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Lattice points per side.
    #[arg(long)]
    pub lattice: Option<usize>,
    /// Projection window; defaults to the study area.
    #[arg(long, value_name = "X0,X1,Y0,Y1", allow_hyphen_values = true)]
    pub window: Option<String>,
    /// Also write PNG heatmaps.
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long, value_enum)]
    pub likelihood: Option<Likelihood>,
    /// Labels where events can occur.
    #[arg(long, value_name = "L1,L2,...")]
    pub integration_labels: Option<String>,
}

impl Cli {
    /// Loads the config file, if any, and applies every flag on top.
    pub fn into_config(self) -> Result<(ExperimentConfig, Command)> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.out, self.out);
        set(&mut cfg.threads, self.threads);
        match &self.command {
            Command::Meshgen { mesh } => mesh.apply(&mut cfg)?,
            Command::Correlate {
                mesh,
                field,
                sweep,
                refs,
                grid,
            } => {
                mesh.apply(&mut cfg)?;
                field.apply(&mut cfg)?;
                set(
                    &mut cfg.sweep,
                    sweep.as_deref().map(|s| parse_floats(s, "--sweep")).transpose()?,
                );
                refs.apply(&mut cfg)?;
                grid.apply(&mut cfg)?;
            }
            Command::Calibrate {
                mesh,
                field,
                refs,
                c0,
                t,
                grid,
            } => {
                mesh.apply(&mut cfg)?;
                field.apply(&mut cfg)?;
                refs.apply(&mut cfg)?;
                set(&mut cfg.c0, c0.as_deref().map(|s| parse_floats(s, "--c0")).transpose()?);
                set(&mut cfg.t, t.as_deref().map(|s| parse_floats(s, "--t")).transpose()?);
                grid.apply(&mut cfg)?;
            }
            Command::Simulate {
                mesh,
                field,
                data,
                n_obs,
                noise_sd,
                locations,
                beta0,
            } => {
                mesh.apply(&mut cfg)?;
                field.apply(&mut cfg)?;
                data.apply(&mut cfg)?;
                set(&mut cfg.n_obs, *n_obs);
                set(&mut cfg.noise_sd, *noise_sd);
                set(&mut cfg.locations, *locations);
                set(&mut cfg.beta0, *beta0);
            }
            Command::Fit {
                mesh,
                data,
                data_file,
                model,
                field,
                barrier_labels,
                range_prior,
                sigma_prior,
                noise_prior,
                init,
                sensitivity,
                grid,
            } => {
                mesh.apply(&mut cfg)?;
                data.apply(&mut cfg)?;
                set(&mut cfg.data, data_file.clone());
                set(&mut cfg.model, *model);
                field.apply(&mut cfg)?;
                set(
                    &mut cfg.barrier_labels,
                    barrier_labels
                        .as_deref()
                        .map(|s| parse_usizes(s, "--barrier-labels"))
                        .transpose()?,
                );
                let priors = cfg.priors.get_or_insert_with(PriorConfig::default);
                set(
                    &mut priors.range,
                    range_prior
                        .as_deref()
                        .map(|s| parse_prior(s, "--range-prior"))
                        .transpose()?,
                );
                set(
                    &mut priors.sigma,
                    sigma_prior
                        .as_deref()
                        .map(|s| parse_prior(s, "--sigma-prior"))
                        .transpose()?,
                );
                set(
                    &mut priors.noise,
                    noise_prior
                        .as_deref()
                        .map(|s| parse_prior(s, "--noise-prior"))
                        .transpose()?,
                );
                if *priors == PriorConfig::default() {
                    cfg.priors = None;
                }
                set(
                    &mut cfg.init,
                    init.as_deref().map(|s| parse_floats(s, "--init")).transpose()?,
                );
                if *sensitivity {
                    cfg.sensitivity = Some(true);
                }
                grid.apply(&mut cfg)?;
            }
            Command::Report { input } => set(&mut cfg.input, input.clone()),
        }
        cfg.validate()?;
        Ok((cfg, self.command))
    }
}

fn set<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

impl MeshArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        let chosen = [self.mesh.is_some(), self.rect.is_some(), self.fixture.is_some()]
            .iter()
            .filter(|&&b| b)
            .count();
        if chosen > 1 {
            return Err(CliError::usage("--mesh, --rect and --fixture are mutually exclusive"));
        }
        if let Some(path) = &self.mesh {
            cfg.mesh = Some(MeshSource::File(path.clone()));
        } else if let Some(name) = self.fixture {
            cfg.mesh = Some(MeshSource::Fixture(name));
        } else if let Some(rect) = &self.rect {
            let [x0, x1, y0, y1] = parse_fixed::<4>(rect, "--rect")?;
            let previous = match &cfg.mesh {
                Some(MeshSource::Rect(r)) => Some((r.max_edge, r.buffer)),
                _ => None,
            };
            let max_edge = self
                .max_edge
                .or(previous.map(|p| p.0))
                .ok_or_else(|| CliError::usage("--rect needs --max-edge"))?;
            cfg.mesh = Some(MeshSource::Rect(RectSpec {
                x: [x0, x1],
                y: [y0, y1],
                max_edge,
                buffer: self.buffer.or(previous.map(|p| p.1)).unwrap_or(0.0),
            }));
        }
        if self.rect.is_none() && (self.max_edge.is_some() || self.buffer.is_some()) {
            match &mut cfg.mesh {
                Some(MeshSource::Rect(r)) => {
                    if let Some(e) = self.max_edge {
                        r.max_edge = e;
                    }
                    if let Some(b) = self.buffer {
                        r.buffer = b;
                    }
                }
                _ => {
                    return Err(CliError::usage(
                        "--max-edge and --buffer apply to rectangle meshes only",
                    ))
                }
            }
        }
        if !self.region.is_empty() {
            let regions = self
                .region
                .iter()
                .map(|spec| {
                    let (file, label) = spec
                        .rsplit_once(':')
                        .ok_or_else(|| CliError::usage(format!("--region expects FILE:LABEL, got '{spec}'")))?;
                    let label: usize = label
                        .parse()
                        .map_err(|_| CliError::usage(format!("--region label '{label}' is not an integer")))?;
                    read_region(std::path::Path::new(file), label)
                })
                .collect::<Result<Vec<_>>>()?;
            cfg.regions = Some(regions);
        }
        Ok(())
    }
}

impl FieldArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        set(
            &mut cfg.fractions,
            self.fractions
                .as_deref()
                .map(|s| parse_floats(s, "--fractions"))
                .transpose()?,
        );
        set(&mut cfg.sigma_u, self.sigma_u);
        set(&mut cfg.range, self.range);
        Ok(())
    }
}

impl RefArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        set(
            &mut cfg.nodes,
            self.nodes.as_deref().map(|s| parse_usizes(s, "--nodes")).transpose()?,
        );
        if !self.point.is_empty() {
            cfg.points = Some(
                self.point
                    .iter()
                    .map(|s| parse_fixed::<2>(s, "--point"))
                    .collect::<Result<_>>()?,
            );
        }
        Ok(())
    }
}

impl GridArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        set(&mut cfg.lattice, self.lattice);
        set(
            &mut cfg.window,
            self.window
                .as_deref()
                .map(|s| parse_fixed::<4>(s, "--window"))
                .transpose()?,
        );
        if self.png {
            cfg.png = Some(true);
        }
        Ok(())
    }
}

impl DataArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        set(&mut cfg.likelihood, self.likelihood);
        set(
            &mut cfg.integration_labels,
            self.integration_labels
                .as_deref()
                .map(|s| parse_usizes(s, "--integration-labels"))
                .transpose()?,
        );
        Ok(())
    }
}
