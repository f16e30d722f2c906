use std::cell::RefCell;

use rand_distr::{Distribution, Poisson};

use super::{pc_prior_logdensity, summarize_mode, FitResult, NelderMeadOptions, ObservationSet, PcPriors, ThetaMap};
use crate::error::{Error, Result};
use crate::fem::FemMatrices;
use crate::gmrf::{nested_dissection_ordering, Factorization, RandomSource};
use crate::mesh::{Mesh, Point, SubdomainLabeling};
use crate::precision::FractionBasis;
use crate::sparse::CscMatrix;

/// Prior standard deviation of the intercept.
pub const BETA0_PRIOR_SD: f64 = 10.0;
const MAX_NEWTON: usize = 100;
const MAX_HALVINGS: usize = 50;
const NEWTON_RTOL: f64 = 1e-8;
const GRADIENT_TOL: f64 = 1e-6;

/// Dual-mesh integration weights: a third of the area of every incident
/// triangle whose label is in `integration_labels`.
pub fn lgcp_weights(mesh: &Mesh, labeling: &SubdomainLabeling, integration_labels: &[usize]) -> Vec<f64> {
    let mut w = vec![0.0; mesh.n_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        if integration_labels.contains(&labeling.label(t)) {
            let a = mesh.area(t) / 3.0;
            for &v in tri {
                w[v] += a;
            }
        }
    }
    w
}

/// Draws a Poisson process whose log-intensity is linear on each triangle
/// with the given nodal values, restricted to `integration_labels`.
pub fn simulate_lgcp_events(
    mesh: &Mesh,
    labeling: &SubdomainLabeling,
    log_intensity: &[f64],
    integration_labels: &[usize],
    rng: &mut RandomSource,
) -> Result<Vec<Point>> {
    if log_intensity.len() != mesh.n_nodes() {
        return Err(Error::LengthMismatch {
            expected: mesh.n_nodes(),
            got: log_intensity.len(),
        });
    }
    let mut events = Vec::new();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        if !integration_labels.contains(&labeling.label(t)) {
            continue;
        }
        let eta = tri.map(|v| log_intensity[v]);
        let top = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = mesh.area(t) * top.exp();
        if !mean.is_finite() {
            return Err(Error::NonFinite("simulated intensity"));
        }
        let count = if mean > 0.0 {
            Poisson::new(mean)
                .map_err(|e| Error::Internal(e.to_string()))?
                .sample(rng.rng()) as usize
        } else {
            0
        };
        let c = mesh.corners(t);
        for _ in 0..count {
            let (mut r1, mut r2) = (rng.uniform(), rng.uniform());
            if r1 + r2 > 1.0 {
                r1 = 1.0 - r1;
                r2 = 1.0 - r2;
            }
            let b = [1.0 - r1 - r2, r1, r2];
            let e: f64 = (0..3).map(|k| b[k] * eta[k]).sum();
            if rng.uniform() < (e - top).exp() {
                events.push([
                    b[0] * c[0][0] + b[1] * c[1][0] + b[2] * c[2][0],
                    b[0] * c[0][1] + b[1] * c[1][1] + b[2] * c[2][1],
                ]);
            }
        }
    }
    Ok(events)
}

/// Events with their barycentric rows and the integration weights.
#[derive(Debug, Clone)]
pub struct LgcpData {
    pub events: ObservationSet,
    pub weights: Vec<f64>,
    /// `Aᵀ 1`: how much each node contributes to the summed event log-intensity.
    event_load: Vec<f64>,
}

impl LgcpData {
    pub fn new(
        mesh: &Mesh,
        labeling: &SubdomainLabeling,
        events: Vec<Point>,
        integration_labels: &[usize],
    ) -> Result<Self> {
        let events = ObservationSet::new(mesh, events, None)?;
        if let Some((i, b)) = events
            .rows
            .iter()
            .enumerate()
            .find(|(_, b)| !integration_labels.contains(&labeling.label(b.triangle)))
        {
            return Err(Error::Validation(format!(
                "event {i} at ({}, {}) lies in subdomain {} outside the integration domain",
                events.locations[i][0],
                events.locations[i][1],
                labeling.label(b.triangle)
            )));
        }
        let weights = lgcp_weights(mesh, labeling, integration_labels);
        let event_load = events.a.mul_vec_transpose(&vec![1.0; events.len()]);
        Ok(LgcpData {
            events,
            weights,
            event_load,
        })
    }

    pub fn n_events(&self) -> usize {
        self.events.len()
    }
}

/// Converged inner optimization for one θ.
#[derive(Debug, Clone)]
pub struct LaplaceMode {
    /// Latent mode: field values at the nodes followed by the intercept.
    pub x: Vec<f64>,
    pub log_evidence: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_inf_norm: f64,
    factor: Factorization,
}

impl LaplaceMode {
    pub fn beta0(&self) -> f64 {
        *self.x.last().unwrap()
    }

    /// Posterior mean and sd of the log-intensity `β0 + u_i` at every node.
    pub fn log_intensity(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.x.len() - 1;
        let mut e = vec![0.0; n + 1];
        e[n] = 1.0;
        let cov_beta = self.factor.solve(&e)?;
        let var = self.factor.marginal_variances();
        let mean = (0..n).map(|i| self.x[i] + self.x[n]).collect();
        let sd = (0..n)
            .map(|i| (var[i] + var[n] + 2.0 * cov_beta[i]).max(0.0).sqrt())
            .collect();
        Ok((mean, sd))
    }

    pub fn beta0_sd(&self) -> f64 {
        self.factor.marginal_variances().last().unwrap().sqrt()
    }
}

/// Latent Gaussian point-process model with fixed range fractions.
#[derive(Debug, Clone)]
pub struct LgcpModel {
    basis: FractionBasis,
    data: LgcpData,
    perm: Vec<usize>,
}

impl LgcpModel {
    pub fn new(fem: &FemMatrices, fractions: &[f64], data: LgcpData) -> Result<Self> {
        if data.weights.len() != fem.n() {
            return Err(Error::LengthMismatch {
                expected: fem.n(),
                got: data.weights.len(),
            });
        }
        let basis = FractionBasis::new(fem, fractions)?;
        // The intercept couples to every integrated node; pivot it last.
        let mut perm = nested_dissection_ordering(&basis.assemble(1.0, 1.0)?);
        perm.push(fem.n());
        Ok(LgcpModel { basis, data, perm })
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    pub fn data(&self) -> &LgcpData {
        &self.data
    }

    /// Block-diagonal prior precision of `(u, β0)`.
    pub fn prior_precision(&self, theta: &[f64]) -> Result<CscMatrix> {
        if theta.len() != 2 || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::HyperParams(format!(
                "expected finite (log sigma_u, log range), got {theta:?}"
            )));
        }
        let q = self.basis.assemble(theta[0].exp(), theta[1].exp())?;
        let n = self.n();
        let mut trip = Vec::with_capacity(q.nnz() + 1);
        for j in 0..n {
            let (rows, vals) = q.col(j);
            trip.extend(rows.iter().zip(vals).map(|(&i, &v)| (i, j, v)));
        }
        trip.push((n, n, 1.0 / (BETA0_PRIOR_SD * BETA0_PRIOR_SD)));
        Ok(CscMatrix::from_triplets(n + 1, n + 1, &trip))
    }

    fn intensity_terms(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n).map(|i| self.data.weights[i] * (x[i] + x[n]).exp()).collect()
    }

    /// Poisson log-likelihood minus half the prior quadratic form.
    pub fn objective(&self, q_prior: &CscMatrix, x: &[f64]) -> f64 {
        let n = self.n();
        let events: f64 =
            self.data.n_events() as f64 * x[n] + self.data.event_load.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        let integral: f64 = self.intensity_terms(x).iter().sum();
        let qx = q_prior.mul_vec(x);
        let quad: f64 = x.iter().zip(&qx).map(|(a, b)| a * b).sum();
        events - integral - 0.5 * quad
    }

    pub fn gradient(&self, q_prior: &CscMatrix, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let lam = self.intensity_terms(x);
        let qx = q_prior.mul_vec(x);
        let mut g: Vec<f64> = (0..n).map(|i| self.data.event_load[i] - lam[i] - qx[i]).collect();
        g.push(self.data.n_events() as f64 - lam.iter().sum::<f64>() - qx[n]);
        g
    }

    /// Negative Hessian of the objective.
    pub fn neg_hessian(&self, q_prior: &CscMatrix, x: &[f64]) -> CscMatrix {
        let n = self.n();
        let lam = self.intensity_terms(x);
        let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(3 * n + 1);
        for (i, &l) in lam.iter().enumerate() {
            if self.data.weights[i] > 0.0 {
                trip.push((i, i, l));
                trip.push((i, n, l));
                trip.push((n, i, l));
            }
        }
        trip.push((n, n, lam.iter().sum()));
        q_prior.add_scaled(1.0, &CscMatrix::from_triplets(n + 1, n + 1, &trip), 1.0)
    }

    /// Newton iterations with step halving from `x0` (or a flat start).
    pub fn laplace_mode(&self, theta: &[f64], x0: Option<&[f64]>) -> Result<LaplaceMode> {
        let q_prior = self.prior_precision(theta)?;
        let q_factor = Factorization::with_permutation(&q_prior, self.perm.clone())?;
        let n = self.n();
        let mut x = match x0 {
            Some(v) if v.len() == n + 1 => v.to_vec(),
            _ => {
                let area: f64 = self.data.weights.iter().sum();
                let mut v = vec![0.0; n + 1];
                v[n] = ((self.data.n_events() as f64).max(1.0) / area.max(f64::MIN_POSITIVE)).ln();
                v
            }
        };
        let mut phi = self.objective(&q_prior, &x);
        let mut rel_change = f64::INFINITY;
        let mut converged = false;
        let mut iterations = 0;
        let mut g = self.gradient(&q_prior, &x);
        let inf_norm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        while iterations < MAX_NEWTON {
            if rel_change <= NEWTON_RTOL && inf_norm(&g) <= GRADIENT_TOL {
                converged = true;
                break;
            }
            iterations += 1;
            let h = self.neg_hessian(&q_prior, &x);
            let dx = Factorization::with_permutation(&h, self.perm.clone())?.solve(&g)?;
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let cand: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + step * d).collect();
                let phi_new = self.objective(&q_prior, &cand);
                if phi_new.is_finite() && phi_new >= phi - 1e-12 * (1.0 + phi.abs()) {
                    rel_change = (phi_new - phi).abs() / (1.0 + phi.abs());
                    x = cand;
                    phi = phi_new;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            g = self.gradient(&q_prior, &x);
            if !accepted {
                converged = inf_norm(&g) <= GRADIENT_TOL;
                break;
            }
        }
        if !phi.is_finite() {
            return Err(Error::NonFinite("point-process objective"));
        }
        let h = self.neg_hessian(&q_prior, &x);
        let factor = Factorization::with_permutation(&h, self.perm.clone())?;
        let log_evidence = phi + 0.5 * q_factor.log_det() - 0.5 * factor.log_det();
        Ok(LaplaceMode {
            gradient_inf_norm: inf_norm(&g),
            x,
            log_evidence,
            iterations,
            converged,
            factor,
        })
    }
}

/// Maximizes the Laplace evidence plus log prior over θ = (log σ_u, log r).
pub fn fit_lgcp(
    fem: &FemMatrices,
    fractions: &[f64],
    data: LgcpData,
    priors: &PcPriors,
    init: &[f64],
    opts: NelderMeadOptions,
) -> Result<FitResult> {
    priors.validate()?;
    if init.len() != 2 {
        return Err(Error::HyperParams(format!(
            "expected (log sigma_u, log range), got {init:?}"
        )));
    }
    let model = LgcpModel::new(fem, fractions, data)?;
    let warm: RefCell<Option<Vec<f64>>> = RefCell::new(None);
    let objective = |t: &[f64]| {
        let start = warm.borrow().clone();
        match model.laplace_mode(t, start.as_deref()) {
            Ok(mode) => {
                let v = mode.log_evidence + pc_prior_logdensity(priors, t);
                *warm.borrow_mut() = Some(mode.x);
                -v
            }
            Err(_) => f64::INFINITY,
        }
    };
    let opt = super::nelder_mead(objective, init, opts);
    if !opt.f.is_finite() {
        return Err(Error::NoConvergence("no finite Laplace evidence found"));
    }
    let (theta_sd, log_evidence) = summarize_mode(objective, &opt);
    let mode = model.laplace_mode(&opt.x, warm.borrow().as_deref())?;
    let (mean, sd) = mode.log_intensity()?;
    Ok(FitResult {
        theta_map: ThetaMap::from_theta(&opt.x),
        theta_sd,
        log_evidence,
        log_posterior_at_map: -opt.f,
        converged: opt.converged,
        iterations: opt.iterations,
        trace: opt.trace.iter().map(|v| -v).collect(),
        fractions: fractions.to_vec(),
        beta0: Some((mode.beta0(), mode.beta0_sd())),
        newton_converged: Some(mode.converged),
        posterior_mean: mean,
        posterior_sd: sd,
    })
}
