//! Empirical-Bayes fitting: exact Gaussian marginal likelihoods and Laplace
//! approximations for log-Gaussian Cox processes, with PC priors on the
//! hyperparameters and Nelder–Mead over their logarithms.

mod gaussian;
mod lgcp;
mod optimize;
mod prior;

pub use gaussian::{fit_gaussian, log_marginal_gaussian, sample_field, simulate_gaussian, GaussianModel};
pub use lgcp::{fit_lgcp, lgcp_weights, simulate_lgcp_events, LaplaceMode, LgcpData, LgcpModel, BETA0_PRIOR_SD};
pub use optimize::{dense_cholesky, dense_spd_inverse, hessian_fd, nelder_mead, NelderMeadOptions, OptimResult};
pub use prior::{
    pc_prior_logdensity, PcPrior, PcPriors, DEFAULT_NOISE_PRIOR, SENSITIVITY_RANGE_PRIORS, SENSITIVITY_SIGMA_PRIOR,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Barycentric, Mesh, Point, PointLocator};
use crate::sparse::CscMatrix;

/// Point locations linked to the mesh by barycentric weights.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    pub locations: Vec<Point>,
    /// Responses for Gaussian data; `None` for event patterns.
    pub values: Option<Vec<f64>>,
    pub rows: Vec<Barycentric>,
    /// Observation matrix, one row per location.
    pub a: CscMatrix,
}

impl ObservationSet {
    pub fn new(mesh: &Mesh, locations: Vec<Point>, values: Option<Vec<f64>>) -> Result<Self> {
        if let Some(v) = &values {
            if v.len() != locations.len() {
                return Err(Error::LengthMismatch {
                    expected: locations.len(),
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("observation values"));
            }
        }
        let locator = PointLocator::new(mesh);
        let rows = locations
            .iter()
            .map(|&p| locator.locate(p).ok_or(Error::OutsideMesh { x: p[0], y: p[1] }))
            .collect::<Result<Vec<_>>>()?;
        let trip: Vec<(usize, usize, f64)> = rows
            .iter()
            .enumerate()
            .flat_map(|(r, b)| (0..3).map(move |c| (r, b.nodes[c], b.weights[c])))
            .collect();
        let a = CscMatrix::from_triplets(locations.len(), mesh.n_nodes(), &trip);
        Ok(ObservationSet {
            locations,
            values,
            rows,
            a,
        })
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn with_values(mut self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: values.len(),
            });
        }
        self.values = Some(values);
        Ok(self)
    }
}

/// Hyperparameters on their natural and log scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaMap {
    pub log_sigma_u: f64,
    pub log_range: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_sigma_y: Option<f64>,
    pub sigma_u: f64,
    pub range: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_y: Option<f64>,
}

impl ThetaMap {
    pub fn from_theta(theta: &[f64]) -> Self {
        ThetaMap {
            log_sigma_u: theta[0],
            log_range: theta[1],
            log_sigma_y: theta.get(2).copied(),
            sigma_u: theta[0].exp(),
            range: theta[1].exp(),
            sigma_y: theta.get(2).map(|v| v.exp()),
        }
    }
}

/// Curvature-based standard deviations of the log hyperparameters; `None`
/// when the finite-difference Hessian is not positive definite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSd {
    pub log_sigma_u: Option<f64>,
    pub log_range: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_sigma_y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_map: ThetaMap,
    pub theta_sd: ThetaSd,
    /// Laplace approximation of the log marginal likelihood over θ.
    pub log_evidence: f64,
    /// Log posterior density of θ at the mode, up to the normalizing constant.
    pub log_posterior_at_map: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<f64>,
    pub fractions: Vec<f64>,
    /// Intercept mode and sd for point-pattern fits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta0: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub newton_converged: Option<bool>,
    /// Posterior mean of the field (or of the log-intensity) at every node.
    #[serde(skip)]
    pub posterior_mean: Vec<f64>,
    #[serde(skip)]
    pub posterior_sd: Vec<f64>,
}

/// Shared tail of the Gaussian and LGCP fits: curvature at the mode and the
/// Laplace evidence over θ.
pub(crate) fn summarize_mode(neg_log_post: impl FnMut(&[f64]) -> f64, opt: &OptimResult) -> (ThetaSd, f64) {
    let d = opt.x.len();
    let h = hessian_fd(neg_log_post, &opt.x, 1e-3);
    let (sd, log_det) = match (dense_spd_inverse(&h), dense_cholesky(&h)) {
        (Some(inv), Some(l)) => (
            (0..d).map(|i| Some(inv[i][i].sqrt())).collect::<Vec<_>>(),
            (0..d).map(|i| 2.0 * l[i][i].ln()).sum::<f64>(),
        ),
        _ => (vec![None; d], f64::NAN),
    };
    let log_evidence = if log_det.is_finite() {
        -opt.f + 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det
    } else {
        -opt.f
    };
    (
        ThetaSd {
            log_sigma_u: sd[0],
            log_range: sd[1],
            log_sigma_y: sd.get(2).copied().flatten(),
        },
        log_evidence,
    )
}
