use std::f64::consts::PI;

use super::{pc_prior_logdensity, summarize_mode, FitResult, NelderMeadOptions, ObservationSet, PcPriors, ThetaMap};
use crate::error::{Error, Result};
use crate::fem::FemMatrices;
use crate::gmrf::{nested_dissection_ordering, Factorization, RandomSource};
use crate::mesh::{Mesh, Point};
use crate::precision::{FractionBasis, HyperParams};
use crate::sparse::CscMatrix;

/// Exact draw of the latent field.
pub fn sample_field(fem: &FemMatrices, hp: &HyperParams, rng: &mut RandomSource) -> Result<Vec<f64>> {
    hp.validate(Some(fem.k()))?;
    let q = FractionBasis::new(fem, &hp.fractions)?.assemble(hp.sigma_u, hp.range)?;
    let f = Factorization::new(&q, Default::default())?;
    Ok(f.color(&rng.normals(fem.n())))
}

/// Draws a field and noisy observations of it at `locations`. Returns the
/// observations together with the latent field at the nodes.
pub fn simulate_gaussian(
    mesh: &Mesh,
    fem: &FemMatrices,
    hp: &HyperParams,
    noise_sd: f64,
    locations: Vec<Point>,
    rng: &mut RandomSource,
) -> Result<(ObservationSet, Vec<f64>)> {
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::HyperParams(format!("noise sd must be >= 0, got {noise_sd}")));
    }
    let obs = ObservationSet::new(mesh, locations, None)?;
    let u = sample_field(fem, hp, rng)?;
    let mut y = obs.a.mul_vec(&u);
    for v in y.iter_mut() {
        *v += noise_sd * rng.normal();
    }
    Ok((obs.with_values(y)?, u))
}

/// Gaussian observations of a field with fixed range fractions, with the
/// data-dependent pieces precomputed.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    basis: FractionBasis,
    ata: CscMatrix,
    aty: Vec<f64>,
    yty: f64,
    m: usize,
    perm: Vec<usize>,
}

impl GaussianModel {
    pub fn new(fem: &FemMatrices, fractions: &[f64], obs: &ObservationSet) -> Result<Self> {
        let y = obs
            .values
            .as_ref()
            .ok_or_else(|| Error::Validation("Gaussian observations need values".into()))?;
        if obs.a.ncols() != fem.n() {
            return Err(Error::LengthMismatch {
                expected: fem.n(),
                got: obs.a.ncols(),
            });
        }
        let basis = FractionBasis::new(fem, fractions)?;
        let at = obs.a.transpose();
        let ata = at.mul(&obs.a);
        let aty = at.mul_vec(y);
        let yty = y.iter().map(|v| v * v).sum();
        let q = basis.assemble(1.0, 1.0)?.add_scaled(1.0, &ata, 1.0);
        let perm = nested_dissection_ordering(&q);
        Ok(GaussianModel {
            basis,
            ata,
            aty,
            yty,
            m: y.len(),
            perm,
        })
    }

    pub fn fractions(&self) -> &[f64] {
        self.basis.fractions()
    }

    fn check_theta(theta: &[f64]) -> Result<()> {
        if theta.len() != 3 || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::HyperParams(format!(
                "expected finite (log sigma_u, log range, log sigma_y), got {theta:?}"
            )));
        }
        Ok(())
    }

    fn factors(&self, theta: &[f64]) -> Result<(Factorization, Factorization, f64)> {
        Self::check_theta(theta)?;
        let q = self.basis.assemble(theta[0].exp(), theta[1].exp())?;
        let tau = (-2.0 * theta[2]).exp();
        let q_post = q.add_scaled(1.0, &self.ata, tau);
        let fq = Factorization::with_permutation(&q, self.perm.clone())?;
        let fp = Factorization::with_permutation(&q_post, self.perm.clone())?;
        Ok((fq, fp, tau))
    }

    /// `log p(y | θ)` with the latent field integrated out.
    pub fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        let (fq, fp, tau) = self.factors(theta)?;
        let b: Vec<f64> = self.aty.iter().map(|v| v * tau).collect();
        let mu = fp.solve(&b)?;
        let quad = tau * self.yty - b.iter().zip(&mu).map(|(x, y)| x * y).sum::<f64>();
        let m = self.m as f64;
        Ok(-0.5 * m * (2.0 * PI).ln() - m * theta[2] + 0.5 * fq.log_det() - 0.5 * fp.log_det() - 0.5 * quad)
    }

    pub fn log_posterior(&self, theta: &[f64], priors: &PcPriors) -> Result<f64> {
        Ok(self.log_likelihood(theta)? + pc_prior_logdensity(priors, theta))
    }

    /// Conditional posterior mean and marginal sd of the field at the nodes.
    pub fn posterior(&self, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (_, fp, tau) = self.factors(theta)?;
        let b: Vec<f64> = self.aty.iter().map(|v| v * tau).collect();
        Ok((fp.solve(&b)?, fp.marginal_sd()))
    }

    /// Posterior precision `Q + AᵀA / σ_y²`.
    pub fn posterior_precision(&self, theta: &[f64]) -> Result<CscMatrix> {
        Self::check_theta(theta)?;
        let q = self.basis.assemble(theta[0].exp(), theta[1].exp())?;
        Ok(q.add_scaled(1.0, &self.ata, (-2.0 * theta[2]).exp()))
    }

    /// `Aᵀ y / σ_y²`.
    pub fn posterior_rhs(&self, theta: &[f64]) -> Vec<f64> {
        let tau = (-2.0 * theta[2]).exp();
        self.aty.iter().map(|v| v * tau).collect()
    }
}

/// `log p(y | θ)` plus the log prior of θ when priors are given.
pub fn log_marginal_gaussian(
    fem: &FemMatrices,
    fractions: &[f64],
    theta: &[f64],
    obs: &ObservationSet,
    priors: Option<&PcPriors>,
) -> Result<f64> {
    let model = GaussianModel::new(fem, fractions, obs)?;
    match priors {
        Some(p) => model.log_posterior(theta, p),
        None => model.log_likelihood(theta),
    }
}

/// Maximizes the log posterior of θ = (log σ_u, log r, log σ_y) from `init`.
pub fn fit_gaussian(
    fem: &FemMatrices,
    fractions: &[f64],
    obs: &ObservationSet,
    priors: &PcPriors,
    init: &[f64],
    opts: NelderMeadOptions,
) -> Result<FitResult> {
    priors.validate()?;
    GaussianModel::check_theta(init)?;
    let model = GaussianModel::new(fem, fractions, obs)?;
    let objective = |t: &[f64]| model.log_posterior(t, priors).map(|v| -v).unwrap_or(f64::INFINITY);
    let opt = super::nelder_mead(objective, init, opts);
    if !opt.f.is_finite() {
        return Err(Error::NoConvergence("no finite log posterior found"));
    }
    let (theta_sd, log_evidence) = summarize_mode(objective, &opt);
    let (mean, sd) = model.posterior(&opt.x)?;
    Ok(FitResult {
        theta_map: ThetaMap::from_theta(&opt.x),
        theta_sd,
        log_evidence,
        log_posterior_at_map: -opt.f,
        converged: opt.converged,
        iterations: opt.iterations,
        trace: opt.trace.iter().map(|v| -v).collect(),
        fractions: fractions.to_vec(),
        beta0: None,
        newton_converged: None,
        posterior_mean: mean,
        posterior_sd: sd,
    })
}
