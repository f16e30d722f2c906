//! Precision matrix of the transparent barrier field:
//! `Q = σ⁻² R C̃_r⁻¹ R`, `R = C + (r²/8) Σ p_q² G_q`, `C̃_r = (π r²/2) Σ p_q² C̃_q`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fem::FemMatrices;
use crate::sparse::{CscMatrix, ProductPattern};

/// Symmetric sparse matrix with both triangles stored.
pub type SparseSymmetric = CscMatrix;

/// Range fraction used for impermeable barriers.
pub const BARRIER_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub sigma_u: f64,
    pub range: f64,
    /// `fractions[q - 1]` is the range fraction of subdomain q; the first is 1.
    pub fractions: Vec<f64>,
}

impl HyperParams {
    pub fn new(sigma_u: f64, range: f64, fractions: Vec<f64>) -> Result<Self> {
        let hp = HyperParams {
            sigma_u,
            range,
            fractions,
        };
        hp.validate(None)?;
        Ok(hp)
    }

    pub fn stationary(sigma_u: f64, range: f64, k: usize) -> Result<Self> {
        Self::new(sigma_u, range, vec![1.0; k.max(1)])
    }

    pub fn validate(&self, k: Option<usize>) -> Result<()> {
        if !(self.sigma_u > 0.0 && self.sigma_u.is_finite()) {
            return Err(Error::HyperParams(format!(
                "sigma_u must be positive, got {}",
                self.sigma_u
            )));
        }
        if !(self.range > 0.0 && self.range.is_finite()) {
            return Err(Error::HyperParams(format!(
                "range must be positive, got {}",
                self.range
            )));
        }
        validate_fractions(&self.fractions, k)
    }
}

pub fn validate_fractions(fractions: &[f64], k: Option<usize>) -> Result<()> {
    if fractions.first() != Some(&1.0) {
        return Err(Error::HyperParams("the normal-area fraction p_1 must equal 1".into()));
    }
    if let Some(q) = fractions.iter().position(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::HyperParams(format!(
            "range fraction p_{} = {} is outside (0, 1]",
            q + 1,
            fractions[q]
        )));
    }
    if let Some(k) = k {
        if fractions.len() != k {
            return Err(Error::HyperParams(format!(
                "{} range fractions given for {k} subdomains",
                fractions.len()
            )));
        }
    }
    Ok(())
}

/// Fraction-weighted sums `Σ p_q² C̃_q` and `Σ p_q² G_q`, cached so that Q can
/// be re-assembled for many (σ_u, r) with fixed fractions.
#[derive(Debug, Clone)]
pub struct FractionBasis {
    fractions: Vec<f64>,
    c: CscMatrix,
    c_tilde_p: Vec<f64>,
    g_p: CscMatrix,
    pattern: ProductPattern,
}

impl FractionBasis {
    pub fn new(fem: &FemMatrices, fractions: &[f64]) -> Result<Self> {
        validate_fractions(fractions, Some(fem.k()))?;
        let weights: Vec<f64> = fractions.iter().map(|p| p * p).collect();
        let (g_p, c_tilde_p) = fem.weighted_sums(&weights)?;
        if let Some(i) = c_tilde_p.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::Internal(format!("lumped mass vanishes at node {i}")));
        }
        let r = fem.c.add_scaled(1.0, &g_p, 1.0);
        let pattern = ProductPattern::new(&r.transpose(), &r);
        Ok(FractionBasis {
            fractions: fractions.to_vec(),
            c: fem.c.clone(),
            c_tilde_p,
            g_p,
            pattern,
        })
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn n(&self) -> usize {
        self.c_tilde_p.len()
    }

    /// `C̃_p = Σ p_q² C̃_q` (diagonal).
    pub fn c_tilde_p(&self) -> &[f64] {
        &self.c_tilde_p
    }

    /// `G̃_p = Σ p_q² G_q`.
    pub fn g_p(&self) -> &CscMatrix {
        &self.g_p
    }

    /// Q for the given marginal sd and base range.
    pub fn assemble(&self, sigma_u: f64, range: f64) -> Result<SparseSymmetric> {
        if !(sigma_u > 0.0 && range > 0.0 && sigma_u.is_finite() && range.is_finite()) {
            return Err(Error::HyperParams(format!(
                "sigma_u and range must be positive and finite, got {sigma_u}, {range}"
            )));
        }
        let r = self.c.add_scaled(1.0, &self.g_p, range * range / 8.0);
        // Q = Tᵀ T with T = C̃_r^{-1/2} R, which is bit-symmetric by construction.
        let half = PI * range * range / 2.0;
        let scale: Vec<f64> = self
            .c_tilde_p
            .iter()
            .map(|&d| 1.0 / (sigma_u * (half * d).sqrt()))
            .collect();
        let t = scale_rows(&r, &scale);
        let mut q = self.pattern.empty();
        self.pattern.fill(&t.transpose(), &t, &mut q);
        if q.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("precision matrix"));
        }
        Ok(q)
    }
}

fn scale_rows(a: &CscMatrix, d: &[f64]) -> CscMatrix {
    let mut out = a.clone();
    let col_ptr = a.col_ptr().to_vec();
    let rows = a.row_idx().to_vec();
    let vals = out.values_mut();
    for j in 0..a.ncols() {
        for p in col_ptr[j]..col_ptr[j + 1] {
            vals[p] *= d[rows[p]];
        }
    }
    out
}

pub fn precompute_fraction_basis(fem: &FemMatrices, fractions: &[f64]) -> Result<FractionBasis> {
    FractionBasis::new(fem, fractions)
}

pub fn assemble_q(fem: &FemMatrices, hp: &HyperParams) -> Result<SparseSymmetric> {
    hp.validate(Some(fem.k()))?;
    FractionBasis::new(fem, &hp.fractions)?.assemble(hp.sigma_u, hp.range)
}

/// Fractions with `BARRIER_FRACTION` on the given labels and 1 elsewhere.
pub fn barrier_fractions(k: usize, impermeable_labels: &[usize]) -> Vec<f64> {
    (1..=k)
        .map(|q| {
            if q > 1 && impermeable_labels.contains(&q) {
                BARRIER_FRACTION
            } else {
                1.0
            }
        })
        .collect()
}

pub fn barrier_limit_q(
    fem: &FemMatrices,
    sigma_u: f64,
    range: f64,
    impermeable_labels: &[usize],
) -> Result<SparseSymmetric> {
    let hp = HyperParams::new(sigma_u, range, barrier_fractions(fem.k(), impermeable_labels))?;
    assemble_q(fem, &hp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble;
    use crate::mesh::{classify_triangles, generate_rect_mesh, RegionPolygon, SubdomainLabeling};

    fn split_fem() -> (FemMatrices, FemMatrices) {
        let m = generate_rect_mesh((0.0, 2.0), (0.0, 2.0), 0.25, 0.5).unwrap();
        let reg = RegionPolygon::rectangle((0.9, 1.3), (-1.0, 3.0), 2).unwrap();
        let lab = classify_triangles(&m, &[reg]);
        (
            assemble(&m, &lab).unwrap(),
            assemble(&m, &SubdomainLabeling::uniform(m.n_triangles())).unwrap(),
        )
    }

    #[test]
    fn fraction_validation() {
        assert!(HyperParams::new(1.0, 1.0, vec![0.5]).is_err());
        assert!(HyperParams::new(1.0, 1.0, vec![1.0, 0.0]).is_err());
        assert!(HyperParams::new(1.0, 1.0, vec![1.0, 1.5]).is_err());
        assert!(HyperParams::new(0.0, 1.0, vec![1.0]).is_err());
        let (fem, _) = split_fem();
        let hp = HyperParams::new(1.0, 1.0, vec![1.0]).unwrap();
        assert!(assemble_q(&fem, &hp).is_err());
    }

    #[test]
    fn basis_combines_fractions() {
        let (fem, _) = split_fem();
        let b = precompute_fraction_basis(&fem, &[1.0, 0.5]).unwrap();
        for i in 0..fem.n() {
            let want = fem.c_tilde[0][i] + 0.25 * fem.c_tilde[1][i];
            assert!((b.c_tilde_p()[i] - want).abs() < 1e-15);
        }
        let ones = precompute_fraction_basis(&fem, &[1.0, 1.0]).unwrap();
        let g = fem.global_stiffness();
        assert_eq!(ones.g_p(), &g);
    }

    #[test]
    fn unit_fractions_match_single_subdomain() {
        let (split, whole) = split_fem();
        let a = assemble_q(&split, &HyperParams::new(1.3, 0.7, vec![1.0, 1.0]).unwrap()).unwrap();
        let b = assemble_q(&whole, &HyperParams::new(1.3, 0.7, vec![1.0]).unwrap()).unwrap();
        assert!(a.same_pattern(&b));
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn sigma_scaling_and_symmetry() {
        let (fem, _) = split_fem();
        let b = precompute_fraction_basis(&fem, &[1.0, 0.3]).unwrap();
        let q1 = b.assemble(1.0, 0.8).unwrap();
        let q2 = b.assemble(2.0, 0.8).unwrap();
        for (x, y) in q1.values().iter().zip(q2.values()) {
            assert!((x / 4.0 - y).abs() <= 1e-15 * x.abs());
        }
        assert!(q1.is_symmetric(0.0));
    }

    #[test]
    fn pattern_is_variant_independent() {
        let (fem, _) = split_fem();
        let stat = assemble_q(&fem, &HyperParams::new(1.0, 1.0, vec![1.0, 1.0]).unwrap()).unwrap();
        let barrier = barrier_limit_q(&fem, 1.0, 1.0, &[2]).unwrap();
        let tbm = assemble_q(&fem, &HyperParams::new(1.0, 1.0, vec![1.0, 0.4]).unwrap()).unwrap();
        assert!(stat.same_pattern(&barrier) && stat.same_pattern(&tbm));
        let none = barrier_limit_q(&fem, 1.0, 1.0, &[]).unwrap();
        assert_eq!(none, stat);
    }
}
