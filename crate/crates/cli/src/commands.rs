use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tbm::correlation::{correlation_panel, CorrelationEngine, DEFAULT_LATTICE_DIM};
use tbm::fem::{assemble, FemMatrices};
use tbm::gmrf::RandomSource;
use tbm::inference::{
    fit_gaussian, fit_lgcp, sample_field, simulate_gaussian, simulate_lgcp_events, FitResult, LgcpData, LgcpModel,
    NelderMeadOptions, ObservationSet, PcPrior, PcPriors, ThetaMap, ThetaSd, BETA0_PRIOR_SD, DEFAULT_NOISE_PRIOR,
    SENSITIVITY_RANGE_PRIORS, SENSITIVITY_SIGMA_PRIOR,
};
use tbm::mesh::{save_mesh, Point, PointLocator, Projector};
use tbm::precision::{assemble_q, barrier_fractions, HyperParams};
use tbm::transparency::{transparency_table, write_table_csv, TransparencyConfig};

use crate::cli::{Cli, Command};
use crate::config::{ExperimentConfig, FixtureName, Likelihood, LocationMode, MeshContext, MeshSource, ModelKind};
use crate::error::{CliError, Result};
use crate::heatmap::{symmetric_limit, write_png};
use crate::manifest::{collect_artifacts, config_hash, timestamp, RunManifest, MANIFEST_NAME};

pub const TABLE_T: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const TABLE_C0: [f64; 3] = [0.13, 0.5, 0.8];
const DEFAULT_SEED: u64 = 0;
const DEFAULT_N_OBS: usize = 300;
const DEFAULT_NOISE_SD: f64 = 0.1;
const DEFAULT_FIT_LATTICE: usize = 100;

/// Output directory bookkeeping shared by all commands.
struct Run {
    out: PathBuf,
    config: ExperimentConfig,
    seed: u64,
    command: &'static str,
    started: String,
}

impl Run {
    fn new(config: ExperimentConfig, command: &'static str) -> Result<Self> {
        let out = config.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out).map_err(|e| CliError::output(&out, e))?;
        Ok(Run {
            out,
            seed: config.seed.unwrap_or(DEFAULT_SEED),
            config,
            command,
            started: timestamp(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::output(&path, e))?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        self.write(name, text)
    }

    fn finish(self) -> Result<()> {
        let canonical = self.config.canonical();
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            scenario: self.config.scenario.clone(),
            seed: self.seed,
            config_hash: config_hash(&canonical),
            config: canonical,
            started: self.started,
            finished: timestamp(),
            artifacts: collect_artifacts(&self.out)?,
        };
        manifest.write(&self.out)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let (config, command) = cli.into_config()?;
    if let Some(n) = config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match command {
        Command::Meshgen { .. } => meshgen(Run::new(config, "meshgen")?),
        Command::Correlate { .. } => correlate(Run::new(config, "correlate")?),
        Command::Calibrate { .. } => calibrate(Run::new(config, "calibrate")?),
        Command::Simulate { .. } => simulate(Run::new(config, "simulate")?),
        Command::Fit { .. } => fit(Run::new(config, "fit")?),
        Command::Report { .. } => report(Run::new(config, "report")?),
    }
}

fn meshgen(run: Run) -> Result<()> {
    let ctx = MeshContext::resolve(&run.config)?;
    let path = run.path("mesh.json");
    save_mesh(&path, &ctx.mesh, &ctx.labeling)?;
    let areas = ctx.labeling.areas(&ctx.mesh);
    let areas: Vec<String> = areas.iter().map(|a| format!("{a:.4}")).collect();
    println!(
        "{}: {} nodes, {} triangles, {} subdomains, areas [{}]",
        path.display(),
        ctx.mesh.n_nodes(),
        ctx.mesh.n_triangles(),
        ctx.k(),
        areas.join(", ")
    );
    run.finish()
}

fn window_projector(run: &Run, ctx: &MeshContext, default_dim: usize) -> Result<Projector> {
    let n = run.config.lattice.unwrap_or(default_dim);
    let (x, y) = ctx.study_area;
    Ok(Projector::new(&ctx.mesh, n, n, x, y)?)
}

/// Reference nodes from explicit indices and from points snapped to the
/// nearest node.
fn reference_nodes(run: &Run, ctx: &MeshContext) -> Result<Vec<usize>> {
    let n = ctx.mesh.n_nodes();
    let mut nodes = run.config.nodes.clone().unwrap_or_default();
    if let Some(&bad) = nodes.iter().find(|&&v| v >= n) {
        return Err(CliError::usage(format!(
            "node {bad} out of range; valid node indices are 0..{n}"
        )));
    }
    let locator = PointLocator::new(&ctx.mesh);
    for &p in run.config.points.iter().flatten() {
        if locator.locate(p).is_none() {
            return Err(tbm::Error::OutsideMesh { x: p[0], y: p[1] }.into());
        }
        nodes.push(ctx.mesh.nearest_node(p));
    }
    Ok(nodes)
}

fn field_params(run: &Run, ctx: &MeshContext) -> (f64, f64) {
    (
        run.config.sigma_u.unwrap_or(1.0),
        run.config.range.unwrap_or(ctx.default_range),
    )
}

fn correlate(run: Run) -> Result<()> {
    let ctx = MeshContext::resolve(&run.config)?;
    let nodes = reference_nodes(&run, &ctx)?;
    if nodes.is_empty() {
        return Err(CliError::usage(format!(
            "no reference nodes given; pass --nodes with indices in 0..{} or --point X,Y",
            ctx.mesh.n_nodes()
        )));
    }
    let (sigma_u, range) = field_params(&run, &ctx);
    let rows: Vec<Vec<f64>> = match &run.config.sweep {
        Some(sweep) => sweep
            .iter()
            .map(|&p| (1..=ctx.k()).map(|q| if q == 1 { 1.0 } else { p }).collect())
            .collect(),
        None => vec![ctx.fractions(run.config.fractions.as_deref())?],
    };
    let hps = rows
        .iter()
        .map(|f| HyperParams::new(sigma_u, range, ctx.fractions(Some(f))?).map_err(CliError::from))
        .collect::<Result<Vec<_>>>()?;
    let fem = assemble(&ctx.mesh, &ctx.labeling)?;
    let proj = window_projector(&run, &ctx, DEFAULT_LATTICE_DIM)?;
    let cells = correlation_panel(&ctx.mesh, &fem, &hps, &nodes, &proj)?;

    let mut index = String::from("row,col,node,x,y,fractions,file\n");
    for cell in &cells {
        let name = format!("corr_{}_{}", cell.hp_index, cell.node_index);
        let node = nodes[cell.node_index];
        let p = ctx.mesh.vertex(node);
        let fr: Vec<String> = hps[cell.hp_index].fractions.iter().map(f64::to_string).collect();
        writeln!(
            index,
            "{},{},{},{},{},{},{name}.csv",
            cell.hp_index,
            cell.node_index,
            node,
            p[0],
            p[1],
            fr.join(";")
        )
        .expect("string write");
        let mut buf = Vec::new();
        cell.grid
            .write_csv(&mut buf)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        run.write(&format!("{name}.csv"), buf)?;
        if run.config.png == Some(true) {
            write_png(&run.path(&format!("{name}.png")), &cell.grid, proj.nx, proj.ny, 1.0)?;
        }
    }
    run.write("panel.csv", index)?;
    println!(
        "{} correlation surfaces ({} rows x {} nodes)",
        cells.len(),
        hps.len(),
        nodes.len()
    );
    run.finish()
}

fn calibrate(mut run: Run) -> Result<()> {
    if run.config.mesh.is_none() {
        run.config.mesh = Some(MeshSource::Fixture(FixtureName::Calibration));
    }
    let ctx = MeshContext::resolve(&run.config)?;
    let mut nodes = reference_nodes(&run, &ctx)?;
    if nodes.len() > 1 {
        return Err(CliError::usage("calibrate takes a single reference node"));
    }
    let ((x0, x1), (y0, y1)) = ctx.study_area;
    let node = nodes
        .pop()
        .unwrap_or_else(|| ctx.mesh.nearest_node([0.5 * (x0 + x1), 0.5 * (y0 + y1)]));
    let (sigma_u, range) = field_params(&run, &ctx);
    let hp = HyperParams::stationary(sigma_u, range, ctx.k())?;
    let c0 = run.config.c0.clone().unwrap_or_else(|| TABLE_C0.to_vec());
    let t = run.config.t.clone().unwrap_or_else(|| TABLE_T.to_vec());
    if c0.is_empty() || t.is_empty() {
        return Err(CliError::usage("the c0 and t lists must not be empty"));
    }
    let fem = assemble(&ctx.mesh, &ctx.labeling)?;
    let proj = window_projector(&run, &ctx, DEFAULT_LATTICE_DIM)?;
    let rows = transparency_table(
        &ctx.mesh,
        &fem,
        &ctx.labeling,
        &hp,
        node,
        &c0,
        &t,
        &proj,
        TransparencyConfig::default(),
    )?;
    let mut buf = Vec::new();
    write_table_csv(&rows, &mut buf).map_err(|e| CliError::Internal(e.to_string()))?;
    run.write("transparency_table.csv", buf)?;
    let ok = rows.iter().filter(|r| r.status == "ok").count();
    println!("{} cells calibrated, {} failed", ok, rows.len() - ok);
    run.finish()
}

fn write_nodal(run: &Run, ctx: &MeshContext, name: &str, values: &[f64]) -> Result<()> {
    let mut s = String::from("node,x,y,value\n");
    for (i, (p, v)) in ctx.mesh.vertices().iter().zip(values).enumerate() {
        writeln!(s, "{i},{},{},{v}", p[0], p[1]).expect("string write");
    }
    run.write(name, s)?;
    Ok(())
}

fn sample_locations(ctx: &MeshContext, n: usize, mode: LocationMode, rng: &mut RandomSource) -> Result<Vec<Point>> {
    let ((x0, x1), (y0, y1)) = ctx.study_area;
    let locator = PointLocator::new(&ctx.mesh);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * n.max(1) {
            return Err(CliError::usage(
                "the study area contains too little normal area to place observations",
            ));
        }
        let p = [x0 + (x1 - x0) * rng.uniform(), y0 + (y1 - y0) * rng.uniform()];
        let keep = match (mode, locator.locate(p)) {
            (_, None) => false,
            (LocationMode::StudyArea, Some(_)) => true,
            (LocationMode::NormalArea, Some(b)) => ctx.labeling.label(b.triangle) == 1,
        };
        if keep {
            out.push(p);
        }
    }
    Ok(out)
}

fn simulate(run: Run) -> Result<()> {
    let ctx = MeshContext::resolve(&run.config)?;
    let (sigma_u, range) = field_params(&run, &ctx);
    let hp = HyperParams::new(sigma_u, range, ctx.fractions(run.config.fractions.as_deref())?)?;
    let fem = assemble(&ctx.mesh, &ctx.labeling)?;
    let mut rng = RandomSource::new(run.seed);
    match run.config.likelihood.unwrap_or(Likelihood::Gaussian) {
        Likelihood::Gaussian => {
            let n = run.config.n_obs.unwrap_or(DEFAULT_N_OBS);
            let mode = run.config.locations.unwrap_or(LocationMode::StudyArea);
            let locations = sample_locations(&ctx, n, mode, &mut rng)?;
            let noise = run.config.noise_sd.unwrap_or(DEFAULT_NOISE_SD);
            let (obs, u) = simulate_gaussian(&ctx.mesh, &fem, &hp, noise, locations, &mut rng)?;
            let mut s = String::from("x,y,value\n");
            for (p, v) in obs.locations.iter().zip(obs.values.iter().flatten()) {
                writeln!(s, "{},{},{v}", p[0], p[1]).expect("string write");
            }
            run.write("observations.csv", s)?;
            write_nodal(&run, &ctx, "field.csv", &u)?;
            println!("{} observations", obs.len());
        }
        Likelihood::Lgcp => {
            let beta0 = run.config.beta0.unwrap_or(0.0);
            let labels = run.config.integration_labels.clone().unwrap_or_else(|| vec![1]);
            let u = sample_field(&fem, &hp, &mut rng)?;
            let eta: Vec<f64> = u.iter().map(|v| beta0 + v).collect();
            let events = simulate_lgcp_events(&ctx.mesh, &ctx.labeling, &eta, &labels, &mut rng)?;
            let mut s = String::from("x,y\n");
            for p in &events {
                writeln!(s, "{},{}", p[0], p[1]).expect("string write");
            }
            run.write("events.csv", s)?;
            write_nodal(&run, &ctx, "log_intensity.csv", &eta)?;
            println!("{} events", events.len());
        }
    }
    run.finish()
}

/// A fit result with the settings that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default)]
    pub model: Option<ModelKind>,
    #[serde(default)]
    pub likelihood: Option<Likelihood>,
    #[serde(default)]
    pub priors: Option<PcPriors>,
    #[serde(default)]
    pub n_data: Option<usize>,
    /// Set when there was nothing to fit and the prior was reported instead.
    #[serde(default)]
    pub prior_only: bool,
    #[serde(flatten)]
    pub result: FitResult,
}

struct DataSet {
    likelihood: Likelihood,
    locations: Vec<Point>,
    values: Option<Vec<f64>>,
}

fn read_data(path: &Path, likelihood: Option<Likelihood>) -> Result<DataSet> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let bad = |msg: String| CliError::usage(format!("{}: {msg}", path.display()));
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let detected = match headers.as_slice() {
        [x, y, v] if x == "x" && y == "y" && v == "value" => Likelihood::Gaussian,
        [x, y] if x == "x" && y == "y" => Likelihood::Lgcp,
        _ => {
            return Err(bad(format!(
                "expected header x,y,value or x,y, got {}",
                headers.join(",")
            )))
        }
    };
    if let Some(l) = likelihood {
        if l != detected {
            return Err(bad(format!("columns do not match the {l:?} likelihood")));
        }
    }
    let mut locations = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |j: usize| {
            rec.get(j)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| bad(format!("row {}: column {} is not a number", i + 1, j + 1)))
        };
        locations.push([num(0)?, num(1)?]);
        if detected == Likelihood::Gaussian {
            values.push(num(2)?);
        }
    }
    Ok(DataSet {
        likelihood: detected,
        locations,
        values: (detected == Likelihood::Gaussian).then_some(values),
    })
}

fn default_data_path(run: &Run) -> Result<PathBuf> {
    let candidates = match run.config.likelihood {
        Some(Likelihood::Gaussian) => vec!["observations.csv"],
        Some(Likelihood::Lgcp) => vec!["events.csv"],
        None => vec!["observations.csv", "events.csv"],
    };
    candidates
        .iter()
        .map(|c| run.path(c))
        .find(|p| p.exists())
        .ok_or_else(|| {
            CliError::usage(format!(
                "no --data given and no {} in {}",
                candidates.join(" or "),
                run.out.display()
            ))
        })
}

fn model_fractions(run: &Run, ctx: &MeshContext, model: ModelKind) -> Result<Vec<f64>> {
    match model {
        ModelKind::Stationary => Ok(vec![1.0; ctx.k()]),
        ModelKind::Barrier => {
            let labels = run
                .config
                .barrier_labels
                .clone()
                .unwrap_or_else(|| (2..=ctx.k()).collect());
            Ok(barrier_fractions(ctx.k(), &labels))
        }
        ModelKind::Tbm => match &run.config.fractions {
            Some(f) => ctx.fractions(Some(f)),
            None => Err(CliError::usage("--model tbm needs --fractions")),
        },
    }
}

fn priors_for(run: &Run, likelihood: Likelihood, range_prior: Option<PcPrior>) -> Result<PcPriors> {
    let cfg = run.config.priors.clone().unwrap_or_default();
    let default_sigma = match likelihood {
        Likelihood::Gaussian => PcPrior::new(3.0, 0.1)?,
        Likelihood::Lgcp => PcPrior::new(1.0, 0.1)?,
    };
    let priors = PcPriors::new(
        range_prior.or(cfg.range).map_or_else(|| PcPrior::new(1.0, 0.1), Ok)?,
        cfg.sigma.unwrap_or(default_sigma),
    )?;
    Ok(priors.with_noise(
        cfg.noise
            .map_or_else(|| PcPrior::new(DEFAULT_NOISE_PRIOR.0, DEFAULT_NOISE_PRIOR.1), Ok)?,
    )?)
}

struct FitInputs<'a> {
    ctx: &'a MeshContext,
    fem: &'a FemMatrices,
    data: &'a DataSet,
    fractions: &'a [f64],
    labels: &'a [usize],
    init: Vec<f64>,
}

fn run_fit(inputs: &FitInputs, priors: &PcPriors) -> Result<(FitResult, bool)> {
    let FitInputs {
        ctx,
        fem,
        data,
        fractions,
        labels,
        ..
    } = inputs;
    let opts = NelderMeadOptions::default();
    match data.likelihood {
        Likelihood::Gaussian => {
            let obs = ObservationSet::new(&ctx.mesh, data.locations.clone(), data.values.clone())?;
            Ok((fit_gaussian(fem, fractions, &obs, priors, &inputs.init, opts)?, false))
        }
        Likelihood::Lgcp => {
            let lgcp = LgcpData::new(&ctx.mesh, &ctx.labeling, data.locations.clone(), labels)?;
            if lgcp.n_events() == 0 {
                return Ok((prior_only_fit(fem, fractions, lgcp, &inputs.init)?, true));
            }
            Ok((fit_lgcp(fem, fractions, lgcp, priors, &inputs.init, opts)?, false))
        }
    }
}

/// Prior mean and sd of the log-intensity at the starting hyperparameters.
fn prior_only_fit(fem: &FemMatrices, fractions: &[f64], data: LgcpData, theta: &[f64]) -> Result<FitResult> {
    let hp = HyperParams::new(theta[0].exp(), theta[1].exp(), fractions.to_vec())?;
    let q = assemble_q(fem, &hp)?;
    let sd_u = CorrelationEngine::new(&q)?.sd().to_vec();
    let evidence = LgcpModel::new(fem, fractions, data)?
        .laplace_mode(theta, None)?
        .log_evidence;
    Ok(FitResult {
        theta_map: ThetaMap::from_theta(theta),
        theta_sd: ThetaSd {
            log_sigma_u: None,
            log_range: None,
            log_sigma_y: None,
        },
        log_evidence: evidence,
        log_posterior_at_map: evidence,
        converged: true,
        iterations: 0,
        trace: vec![],
        fractions: fractions.to_vec(),
        beta0: Some((0.0, BETA0_PRIOR_SD)),
        newton_converged: None,
        posterior_mean: vec![0.0; sd_u.len()],
        posterior_sd: sd_u
            .iter()
            .map(|s| (s * s + BETA0_PRIOR_SD * BETA0_PRIOR_SD).sqrt())
            .collect(),
    })
}

fn fit(run: Run) -> Result<()> {
    let ctx = MeshContext::resolve(&run.config)?;
    let model = run
        .config
        .model
        .ok_or_else(|| CliError::usage("--model stationary|barrier|tbm is required"))?;
    let data_path = match &run.config.data {
        Some(p) => p.clone(),
        None => default_data_path(&run)?,
    };
    let data = read_data(&data_path, run.config.likelihood)?;
    let fractions = model_fractions(&run, &ctx, model)?;
    let labels = run.config.integration_labels.clone().unwrap_or_else(|| vec![1]);
    let (sigma_u, range) = field_params(&run, &ctx);
    let init = match &run.config.init {
        Some(v) => v.clone(),
        None => match data.likelihood {
            Likelihood::Gaussian => vec![sigma_u.ln(), range.ln(), 0.5f64.ln()],
            Likelihood::Lgcp => vec![sigma_u.ln(), range.ln()],
        },
    };
    let want = if data.likelihood == Likelihood::Gaussian { 3 } else { 2 };
    if init.len() != want {
        return Err(CliError::usage(format!(
            "--init needs {want} values for this likelihood, got {}",
            init.len()
        )));
    }
    let fem = assemble(&ctx.mesh, &ctx.labeling)?;
    let inputs = FitInputs {
        ctx: &ctx,
        fem: &fem,
        data: &data,
        fractions: &fractions,
        labels: &labels,
        init,
    };
    let record = |result: FitResult, priors: PcPriors, prior_only: bool| FitRecord {
        scenario: run.config.scenario.clone(),
        model: Some(model),
        likelihood: Some(data.likelihood),
        priors: Some(priors),
        n_data: Some(data.locations.len()),
        prior_only,
        result,
    };
    let name = model.name();

    if run.config.sensitivity == Some(true) {
        let sigma = PcPrior::new(SENSITIVITY_SIGMA_PRIOR.0, SENSITIVITY_SIGMA_PRIOR.1)?;
        let fits = SENSITIVITY_RANGE_PRIORS
            .par_iter()
            .map(|&(r0, a)| {
                let mut priors = priors_for(&run, data.likelihood, Some(PcPrior::new(r0, a)?))?;
                priors.sigma = sigma;
                let (res, prior_only) = run_fit(&inputs, &priors)?;
                Ok((res, priors, prior_only))
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, (res, priors, prior_only)) in fits.into_iter().enumerate() {
            run.write_json(&format!("fit_{name}_prior{i}.json"), &record(res, priors, prior_only))?;
        }
        println!("{} sensitivity fits written", SENSITIVITY_RANGE_PRIORS.len());
        return run.finish();
    }

    let priors = priors_for(&run, data.likelihood, None)?;
    let (result, prior_only) = run_fit(&inputs, &priors)?;
    if prior_only {
        eprintln!("warning: no events to fit; writing the prior mean field");
    }
    write_nodal(&run, &ctx, &format!("mean_{name}.csv"), &result.posterior_mean)?;
    write_nodal(&run, &ctx, &format!("sd_{name}.csv"), &result.posterior_sd)?;
    let proj = window_projector(&run, &ctx, DEFAULT_FIT_LATTICE)?;
    for (tag, values) in [("mean", &result.posterior_mean), ("sd", &result.posterior_sd)] {
        let grid = proj.project(values)?;
        let mut buf = Vec::new();
        grid.write_csv(&mut buf)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        run.write(&format!("{tag}_grid_{name}.csv"), buf)?;
        if run.config.png == Some(true) {
            write_png(
                &run.path(&format!("{tag}_{name}.png")),
                &grid,
                proj.nx,
                proj.ny,
                symmetric_limit(&grid),
            )?;
        }
    }
    let t = &result.theta_map;
    println!(
        "{name}: range {:.4}, sigma_u {:.4}{}, log evidence {:.4}",
        t.range,
        t.sigma_u,
        t.sigma_y.map(|s| format!(", sigma_y {s:.4}")).unwrap_or_default(),
        result.log_evidence
    );
    run.write_json(&format!("fit_{name}.json"), &record(result, priors, prior_only))?;
    run.finish()
}

/// Log-scale mode, its sd and the prior of one hyperparameter.
type Pick = dyn Fn(&FitRecord) -> Option<(f64, Option<f64>, Option<PcPrior>)>;

/// Log-normal summary of a parameter whose logarithm has a Gaussian
/// approximation `N(m, s²)`.
struct Summary {
    mean: f64,
    mode: f64,
    quantiles: Option<[f64; 3]>,
}

fn summarize(m: f64, s: Option<f64>) -> Summary {
    match s {
        Some(s) => Summary {
            mean: (m + 0.5 * s * s).exp(),
            mode: (m - s * s).exp(),
            quantiles: Some([(m - 1.959964 * s).exp(), m.exp(), (m + 1.959964 * s).exp()]),
        },
        None => Summary {
            mean: m.exp(),
            mode: m.exp(),
            quantiles: None,
        },
    }
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn summary_cells(s: &Summary) -> String {
    let q = match s.quantiles {
        Some(q) => q.map(fmt4).join(" | "),
        None => "n/a | n/a | n/a".into(),
    };
    format!("{} | {} | {q}", fmt4(s.mean), fmt4(s.mode))
}

fn report(run: Run) -> Result<()> {
    let input = run.config.input.clone().unwrap_or_else(|| run.out.clone());
    if !input.is_dir() {
        return Err(CliError::usage(format!(
            "report input {} is not a directory",
            input.display()
        )));
    }
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(&input)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != MANIFEST_NAME))
        .collect();
    files.sort();
    let mut fits = Vec::new();
    for path in &files {
        let parsed = std::fs::read_to_string(path)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<FitRecord>(&t).map_err(|e| e.to_string()));
        match parsed {
            Ok(r) => fits.push((path.strip_prefix(&input).unwrap_or(path).display().to_string(), r)),
            Err(e) => eprintln!("warning: skipping {}: {e}", path.display()),
        }
    }
    if fits.is_empty() {
        return Err(CliError::usage(format!("no fit results found in {}", input.display())));
    }

    let prior = |p: Option<PcPrior>| p.map(|p| format!("{}, {}", p.u, p.alpha)).unwrap_or_else(|| "-".into());
    let mut md = String::from("# Fit summary\n\n");
    let mut csv = String::from("fit,model,parameter,prior_u,prior_alpha,mean,mode,q025,q50,q975\n");
    let mut section = |title: &str, pick: &Pick, key: &str| {
        let rows: Vec<_> = fits.iter().filter_map(|(f, r)| pick(r).map(|v| (f, r, v))).collect();
        if rows.is_empty() {
            return;
        }
        writeln!(md, "## {title}\n").unwrap();
        md.push_str("| Fit | Model | Fractions | Prior (u, α) | Mean | Mode | 0.025q | 0.5q | 0.975q |\n");
        md.push_str("|---|---|---|---|---|---|---|---|---|\n");
        for (file, r, (m, s, p)) in rows {
            let summary = summarize(m, s);
            let model = r.model.map(ModelKind::name).unwrap_or("-");
            let fr: Vec<String> = r.result.fractions.iter().map(|v| v.to_string()).collect();
            writeln!(
                md,
                "| {file} | {model} | {} | {} | {} |",
                fr.join(", "),
                prior(p),
                summary_cells(&summary)
            )
            .unwrap();
            let q = summary
                .quantiles
                .map(|q| q.map(fmt4).join(","))
                .unwrap_or_else(|| ",,".into());
            let (pu, pa) = p.map(|p| (p.u.to_string(), p.alpha.to_string())).unwrap_or_default();
            writeln!(
                csv,
                "{file},{model},{key},{pu},{pa},{},{},{q}",
                fmt4(summary.mean),
                fmt4(summary.mode)
            )
            .unwrap();
        }
        md.push('\n');
    };
    section(
        "Spatial range",
        &|r| {
            Some((
                r.result.theta_map.log_range,
                r.result.theta_sd.log_range,
                r.priors.map(|p| p.range),
            ))
        },
        "range",
    );
    section(
        "Field standard deviation",
        &|r| {
            Some((
                r.result.theta_map.log_sigma_u,
                r.result.theta_sd.log_sigma_u,
                r.priors.map(|p| p.sigma),
            ))
        },
        "sigma_u",
    );
    section(
        "Observation noise",
        &|r| {
            r.result
                .theta_map
                .log_sigma_y
                .map(|m| (m, r.result.theta_sd.log_sigma_y, r.priors.map(|p| p.noise)))
        },
        "sigma_y",
    );
    md.push_str("## Evidence\n\n| Fit | Model | Log evidence | Converged | Iterations |\n|---|---|---|---|---|\n");
    for (file, r) in &fits {
        let ev = if r.prior_only {
            "prior only".to_string()
        } else {
            fmt4(r.result.log_evidence)
        };
        let model = r.model.map(ModelKind::name).unwrap_or("-");
        writeln!(
            md,
            "| {file} | {model} | {ev} | {} | {} |",
            r.result.converged, r.result.iterations
        )
        .unwrap();
    }
    run.write("report.md", md)?;
    run.write("report.csv", csv)?;
    println!("{} fit results summarized", fits.len());
    run.finish()
}
