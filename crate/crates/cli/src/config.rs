//! Experiment configuration: one JSON document whose keys command-line flags
//! override.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tbm::fixtures::{self, Fixture};
use tbm::inference::PcPrior;
use tbm::mesh::{classify_triangles, generate_rect_mesh, load_mesh, Mesh, Point, RegionPolygon, SubdomainLabeling};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FixtureName {
    Canal,
    ThinBarrier,
    TwoBarrier,
    LgcpBarrier,
    Calibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectSpec {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub max_edge: f64,
    #[serde(default)]
    pub buffer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSource {
    File(PathBuf),
    Rect(RectSpec),
    Fixture(FixtureName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    Gaussian,
    Lgcp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Stationary,
    Barrier,
    Tbm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Stationary => "stationary",
            ModelKind::Barrier => "barrier",
            ModelKind::Tbm => "tbm",
        }
    }
}

/// Where simulated Gaussian observations are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LocationMode {
    /// Uniform over the study rectangle, barriers included.
    StudyArea,
    /// Uniform over the part of the study rectangle labelled 1.
    NormalArea,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub range: Option<PcPrior>,
    pub sigma: Option<PcPrior>,
    pub noise: Option<PcPrior>,
}

/// Every key is optional; commands read the keys they need and fall back to
/// documented defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,

    pub mesh: Option<MeshSource>,
    pub regions: Option<Vec<RegionPolygon>>,

    pub fractions: Option<Vec<f64>>,
    /// Fraction values applied to every barrier label, one panel row each.
    pub sweep: Option<Vec<f64>>,
    pub sigma_u: Option<f64>,
    pub range: Option<f64>,

    pub nodes: Option<Vec<usize>>,
    pub points: Option<Vec<Point>>,
    pub lattice: Option<usize>,
    /// Projection window `[x0, x1, y0, y1]`.
    pub window: Option<[f64; 4]>,
    pub png: Option<bool>,

    pub c0: Option<Vec<f64>>,
    pub t: Option<Vec<f64>>,

    pub likelihood: Option<Likelihood>,
    pub n_obs: Option<usize>,
    pub noise_sd: Option<f64>,
    pub locations: Option<LocationMode>,
    pub beta0: Option<f64>,
    pub integration_labels: Option<Vec<usize>>,

    pub data: Option<PathBuf>,
    pub model: Option<ModelKind>,
    pub barrier_labels: Option<Vec<usize>>,
    pub priors: Option<PriorConfig>,
    /// Starting point on the log scale: `[log σ_u, log r]` plus `log σ_y`
    /// for Gaussian data.
    pub init: Option<Vec<f64>>,
    pub sensitivity: Option<bool>,

    pub input: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Checks value ranges that do not need a mesh.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(CliError::usage(format!("{name} must be positive, got {x}"))),
            _ => Ok(()),
        };
        positive("sigma_u", self.sigma_u)?;
        positive("range", self.range)?;
        if let Some(v) = self.noise_sd {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CliError::usage(format!("noise_sd must be >= 0, got {v}")));
            }
        }
        if let Some(MeshSource::Rect(r)) = &self.mesh {
            if !(r.x[1] > r.x[0] && r.y[1] > r.y[0]) {
                return Err(CliError::usage("rect must satisfy x0 < x1 and y0 < y1"));
            }
            positive("max_edge", Some(r.max_edge))?;
            if !(r.buffer >= 0.0) {
                return Err(CliError::usage("buffer must be >= 0"));
            }
        }
        for f in self.fractions.iter().flatten().chain(self.sweep.iter().flatten()) {
            if !(*f > 0.0 && *f <= 1.0) {
                return Err(CliError::usage(format!("fractions must lie in (0, 1], got {f}")));
            }
        }
        if self.lattice == Some(0) || self.lattice == Some(1) {
            return Err(CliError::usage("lattice must have at least 2 points per side"));
        }
        if let Some(w) = self.window {
            if !(w[1] > w[0] && w[3] > w[2]) {
                return Err(CliError::usage("window must satisfy x0 < x1 and y0 < y1"));
            }
        }
        if self.threads == Some(0) {
            return Err(CliError::usage("threads must be at least 1"));
        }
        if let Some(p) = &self.priors {
            for prior in [p.range, p.sigma, p.noise].into_iter().flatten() {
                prior.validate()?;
            }
        }
        if let Some(regions) = &self.regions {
            for r in regions {
                r.clone().validated()?;
            }
        }
        Ok(())
    }

    /// Canonical JSON of the settings that determine the results: keys
    /// sorted, unset keys dropped, output location and thread count left out.
    pub fn canonical(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("out");
            map.remove("threads");
        }
        strip_nulls(v)
    }
}

fn strip_nulls(v: Value) -> Value {
    match v {
        Value::Object(map) => Value::Object(
            map.into_iter()
                .filter(|(_, v)| !v.is_null())
                .map(|(k, v)| (k, strip_nulls(v)))
                .collect(),
        ),
        Value::Array(a) => Value::Array(a.into_iter().map(strip_nulls).collect()),
        other => other,
    }
}

/// A labelled mesh together with the rectangle data are simulated in.
pub struct MeshContext {
    pub mesh: Mesh,
    pub labeling: SubdomainLabeling,
    pub study_area: ((f64, f64), (f64, f64)),
    /// Range used when none is configured: the fixture's own range, else 1.
    pub default_range: f64,
}

impl MeshContext {
    pub fn resolve(config: &ExperimentConfig) -> Result<Self> {
        let source = config
            .mesh
            .as_ref()
            .ok_or_else(|| CliError::usage("no mesh given: use --mesh, --rect or --fixture"))?;
        let regions: Vec<RegionPolygon> = config
            .regions
            .iter()
            .flatten()
            .map(|r| r.clone().validated())
            .collect::<tbm::Result<_>>()?;
        let mut ctx = match source {
            MeshSource::File(path) => {
                if !path.exists() {
                    return Err(CliError::usage(format!("mesh file not found: {}", path.display())));
                }
                let (mesh, labeling) = load_mesh(path)?;
                let (lo, hi) = mesh.bounding_box();
                MeshContext {
                    mesh,
                    labeling,
                    study_area: ((lo[0], hi[0]), (lo[1], hi[1])),
                    default_range: 1.0,
                }
            }
            MeshSource::Rect(r) => {
                let x = (r.x[0], r.x[1]);
                let y = (r.y[0], r.y[1]);
                let mesh = generate_rect_mesh(x, y, r.max_edge, r.buffer)?;
                let labeling = classify_triangles(&mesh, &regions);
                MeshContext {
                    mesh,
                    labeling,
                    study_area: (x, y),
                    default_range: 1.0,
                }
            }
            MeshSource::Fixture(name) => Self::from_fixture(build_fixture(*name)?),
        };
        if !regions.is_empty() && !matches!(source, MeshSource::Rect(_)) {
            ctx.labeling = classify_triangles(&ctx.mesh, &regions);
        }
        if let Some(w) = config.window {
            ctx.study_area = ((w[0], w[1]), (w[2], w[3]));
        }
        Ok(ctx)
    }

    fn from_fixture(f: Fixture) -> Self {
        MeshContext {
            mesh: f.mesh,
            labeling: f.labeling,
            study_area: f.study_area,
            default_range: f.range,
        }
    }

    pub fn k(&self) -> usize {
        self.labeling.k()
    }

    /// Resolves the fraction vector, padding with ones when only the normal
    /// label is implied.
    pub fn fractions(&self, given: Option<&[f64]>) -> Result<Vec<f64>> {
        match given {
            None => Ok(vec![1.0; self.k()]),
            Some(f) if f.len() == self.k() => Ok(f.to_vec()),
            Some(f) => Err(CliError::usage(format!(
                "expected {} fractions (one per subdomain), got {}",
                self.k(),
                f.len()
            ))),
        }
    }
}

pub fn build_fixture(name: FixtureName) -> Result<Fixture> {
    Ok(match name {
        FixtureName::Canal => fixtures::canal_fixture()?,
        FixtureName::ThinBarrier => fixtures::thin_barrier_fixture()?,
        FixtureName::TwoBarrier => fixtures::two_barrier_fixture(0.5)?,
        FixtureName::LgcpBarrier => fixtures::lgcp_barrier_fixture()?,
        FixtureName::Calibration => fixtures::calibration_fixture()?.0,
    })
}

/// Reads a region file: a JSON list of rings, or a single ring.
pub fn read_region(path: &Path, label: usize) -> Result<RegionPolygon> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read region file {}: {e}", path.display())))?;
    let rings: Vec<Vec<Point>> = match serde_json::from_str::<Vec<Vec<Point>>>(&text) {
        Ok(r) => r,
        Err(_) => vec![serde_json::from_str::<Vec<Point>>(&text)
            .map_err(|e| CliError::usage(format!("region file {} is not a JSON ring list: {e}", path.display())))?],
    };
    RegionPolygon::new(rings, label).map_err(|e| CliError::usage(format!("region file {}: {e}", path.display())))
}

pub fn parse_floats(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CliError::usage(format!("{what}: cannot parse '{t}' as a number")))
        })
        .collect()
}

pub fn parse_usizes(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| CliError::usage(format!("{what}: cannot parse '{t}' as an index")))
        })
        .collect()
}

pub fn parse_fixed<const N: usize>(s: &str, what: &str) -> Result<[f64; N]> {
    let v = parse_floats(s, what)?;
    v.try_into().map_err(|v: Vec<f64>| {
        CliError::usage(format!("{what}: expected {N} comma-separated numbers, got {}", v.len()))
    })
}

pub fn parse_prior(s: &str, what: &str) -> Result<PcPrior> {
    let [u, alpha] = parse_fixed::<2>(s, what)?;
    Ok(PcPrior::new(u, alpha)?)
}
