//! Penalized-complexity priors for the range and standard deviations,
//! expressed as densities of the log-scale hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An exceedance statement. For the range it reads `P(r < u) = alpha`, for
/// standard deviations `P(σ > u) = alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcPrior {
    pub u: f64,
    pub alpha: f64,
}

impl PcPrior {
    pub fn new(u: f64, alpha: f64) -> Result<Self> {
        let p = PcPrior { u, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u > 0.0 && self.u.is_finite()) {
            return Err(Error::Validation(format!(
                "prior threshold must be positive, got {}",
                self.u
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Validation(format!(
                "prior probability must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Rate of the range prior in two dimensions.
    pub fn range_rate(&self) -> f64 {
        -self.alpha.ln() * self.u
    }

    /// Rate of the exponential prior on a standard deviation.
    pub fn sd_rate(&self) -> f64 {
        -self.alpha.ln() / self.u
    }

    /// `π(r) = λ r⁻² exp(−λ / r)`.
    pub fn range_density(&self, r: f64) -> f64 {
        let l = self.range_rate();
        l / (r * r) * (-l / r).exp()
    }

    /// `π(σ) = λ exp(−λ σ)`.
    pub fn sd_density(&self, s: f64) -> f64 {
        let l = self.sd_rate();
        l * (-l * s).exp()
    }

    /// Log density of `log r`.
    pub fn log_range_logdensity(&self, log_r: f64) -> f64 {
        let l = self.range_rate();
        l.ln() - log_r - l * (-log_r).exp()
    }

    /// Log density of `log σ`.
    pub fn log_sd_logdensity(&self, log_s: f64) -> f64 {
        let l = self.sd_rate();
        l.ln() - l * log_s.exp() + log_s
    }
}

/// Range prior settings of the prior-sensitivity study, as `(r0, alpha)`.
pub const SENSITIVITY_RANGE_PRIORS: [(f64, f64); 8] = [
    (21.0, 0.5),
    (21.0, 0.9),
    (41.0, 0.5),
    (41.0, 0.9),
    (10.0, 0.5),
    (10.0, 0.9),
    (6.0, 0.5),
    (6.0, 0.9),
];

/// Sigma prior used throughout the prior-sensitivity study.
pub const SENSITIVITY_SIGMA_PRIOR: (f64, f64) = (1.0, 0.1);

/// Default prior on the observation noise standard deviation.
pub const DEFAULT_NOISE_PRIOR: (f64, f64) = (1.0, 0.1);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcPriors {
    pub range: PcPrior,
    pub sigma: PcPrior,
    /// Observation noise prior; used only with Gaussian likelihoods.
    #[serde(default = "default_noise")]
    pub noise: PcPrior,
}

fn default_noise() -> PcPrior {
    PcPrior {
        u: DEFAULT_NOISE_PRIOR.0,
        alpha: DEFAULT_NOISE_PRIOR.1,
    }
}

impl PcPriors {
    pub fn new(range: PcPrior, sigma: PcPrior) -> Result<Self> {
        let p = PcPriors {
            range,
            sigma,
            noise: default_noise(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_noise(mut self, noise: PcPrior) -> Result<Self> {
        noise.validate()?;
        self.noise = noise;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.range.validate()?;
        self.sigma.validate()?;
        self.noise.validate()
    }
}

/// Log prior density of `theta = (log σ_u, log r[, log σ_y])`, including the
/// Jacobians of the log transforms.
pub fn pc_prior_logdensity(priors: &PcPriors, theta: &[f64]) -> f64 {
    let mut lp = priors.sigma.log_sd_logdensity(theta[0]) + priors.range.log_range_logdensity(theta[1]);
    if let Some(&ls) = theta.get(2) {
        lp += priors.noise.log_sd_logdensity(ls);
    }
    lp
}
