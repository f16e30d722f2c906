//! Transparency calibration: converts a target ratio of barrier to normal-area
//! distances at a reference correlation into a range fraction.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::correlation::{dist_corr_curve, CorrelationEngine, DistCorrCurve};
use crate::error::{Error, Result};
use crate::fem::FemMatrices;
use crate::mesh::{Mesh, Projector, SubdomainLabeling};
use crate::precision::{assemble_q, HyperParams};
use crate::spline::{fit_smoothing_spline, Lambda, SmoothingSpline};

/// Correlation at a distance equal to the range.
pub const RANGE_CORRELATION: f64 = 0.13;
/// Reference correlation used when only a transparency is given.
pub const DEFAULT_C0: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransparencyConfig {
    /// Points beyond the first distance where correlation falls to this
    /// level, and points with correlation ≤ 0, are dropped before fitting.
    pub trim_level: f64,
    pub bracket: (f64, f64),
    pub tol: f64,
    pub max_iter: usize,
    pub lambda: Lambda,
}

impl Default for TransparencyConfig {
    fn default() -> Self {
        TransparencyConfig {
            trim_level: 0.01,
            bracket: (1.01, 20.0),
            tol: 1e-6,
            max_iter: 200,
            lambda: Lambda::Gcv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransparencySpec {
    pub c0: f64,
    pub t: f64,
    /// Scaling factor on the correlation axis.
    pub s: f64,
    /// Range fraction.
    pub p_b: f64,
    /// Achieved distance ratio at `c0`.
    pub ratio: f64,
    pub iterations: usize,
}

/// Returns `(correlations, distances)` after trimming.
pub fn trim_curve(curve: &DistCorrCurve, level: f64) -> (Vec<f64>, Vec<f64>) {
    let cut = curve
        .distances
        .iter()
        .zip(&curve.correlations)
        .filter(|(_, &c)| c <= level)
        .map(|(&d, _)| d)
        .fold(f64::INFINITY, f64::min);
    curve
        .distances
        .iter()
        .zip(&curve.correlations)
        .filter(|(&d, &c)| c > 0.0 && d <= cut)
        .map(|(&d, &c)| (c, d))
        .unzip()
}

/// Spline of distance as a function of correlation, fitted once and reused
/// for every (c0, t) pair.
#[derive(Debug, Clone)]
pub struct Calibrator {
    spline: SmoothingSpline,
    config: TransparencyConfig,
}

impl Calibrator {
    pub fn new(curve: &DistCorrCurve, config: TransparencyConfig) -> Result<Self> {
        let (corr, dist) = trim_curve(curve, config.trim_level);
        let spline = fit_smoothing_spline(&corr, &dist, config.lambda)?;
        Ok(Calibrator { spline, config })
    }

    pub fn spline(&self) -> &SmoothingSpline {
        &self.spline
    }

    /// Distance at which the fitted curve reaches correlation `c`.
    pub fn distance_at(&self, c: f64) -> Result<f64> {
        self.spline.eval(c)
    }

    /// Spline fitted to `(corr / s, dist)`.
    pub fn scaled(&self, s: f64) -> SmoothingSpline {
        self.spline.rescaled_abscissa(s)
    }

    /// `f_s(c0) / f(c0)`.
    pub fn ratio(&self, s: f64, c0: f64) -> Result<f64> {
        Ok(self.scaled(s).eval(c0)? / self.distance_at(c0)?)
    }

    pub fn calibrate(&self, c0: f64, t: f64) -> Result<TransparencySpec> {
        for (name, v) in [("c0", c0), ("t", t)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Validation(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        let (_, x_max) = self.spline.range();
        // The scaled spline is only defined up to x_max / s, so c0 bounds s.
        let mut lo = self.config.bracket.0;
        let mut hi = self.config.bracket.1.min(x_max / c0 * (1.0 - 1e-12));
        if !(hi > lo) {
            return Err(Error::NoBracket {
                lo,
                hi,
                ratio_lo: f64::NAN,
                ratio_hi: f64::NAN,
            });
        }
        let g_lo = self.ratio(lo, c0)? - t;
        let g_hi = self.ratio(hi, c0)? - t;
        if g_lo.signum() == g_hi.signum() {
            return Err(Error::NoBracket {
                lo,
                hi,
                ratio_lo: g_lo + t,
                ratio_hi: g_hi + t,
            });
        }
        let mut sign_lo = g_lo.signum();
        let mut iterations = 0;
        let s = loop {
            if iterations >= self.config.max_iter {
                return Err(Error::NoConvergence("transparency root finder"));
            }
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            let g = self.ratio(mid, c0)? - t;
            if g.abs() <= self.config.tol || hi - lo <= 1e-14 * mid {
                break mid;
            }
            if g.signum() == sign_lo {
                lo = mid;
                sign_lo = g.signum();
            } else {
                hi = mid;
            }
        };
        let ratio = self.ratio(s, c0)?;
        let p_b = self.scaled(s).eval(RANGE_CORRELATION)? / self.distance_at(RANGE_CORRELATION)?;
        Ok(TransparencySpec {
            c0,
            t,
            s,
            p_b,
            ratio,
            iterations,
        })
    }
}

pub fn calibrate(curve: &DistCorrCurve, c0: f64, t: f64) -> Result<TransparencySpec> {
    calibrate_with(curve, c0, t, TransparencyConfig::default())
}

pub fn calibrate_with(curve: &DistCorrCurve, c0: f64, t: f64, config: TransparencyConfig) -> Result<TransparencySpec> {
    Calibrator::new(curve, config)?.calibrate(c0, t)
}

/// One cell of a transparency table. Failed cells carry the error message.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub t: f64,
    pub c0: f64,
    pub s: Option<f64>,
    pub p_b: Option<f64>,
    pub status: String,
}

/// Distance/correlation curve of a stationary field with the normal-area
/// range over the whole domain, seen from `node`.
pub fn calibration_curve(
    mesh: &Mesh,
    fem: &FemMatrices,
    labeling: &SubdomainLabeling,
    sigma_u: f64,
    range: f64,
    node: usize,
    projector: &Projector,
) -> Result<DistCorrCurve> {
    let hp = HyperParams::stationary(sigma_u, range, fem.k())?;
    let q = assemble_q(fem, &hp)?;
    let field = CorrelationEngine::new(&q)?.field(mesh, node)?;
    let restrict = labeling.areas(mesh)[0] > 0.0;
    dist_corr_curve(&field, projector, restrict.then_some((labeling, 1)))
}

/// Calibrates every (c0, t) pair; rows are ordered by t, then c0.
#[allow(clippy::too_many_arguments)]
pub fn transparency_table(
    mesh: &Mesh,
    fem: &FemMatrices,
    labeling: &SubdomainLabeling,
    hp: &HyperParams,
    node: usize,
    c0_list: &[f64],
    t_list: &[f64],
    projector: &Projector,
    config: TransparencyConfig,
) -> Result<Vec<TableRow>> {
    if c0_list.is_empty() || t_list.is_empty() {
        return Err(Error::Validation("c0 and t lists must be non-empty".into()));
    }
    let curve = calibration_curve(mesh, fem, labeling, hp.sigma_u, hp.range, node, projector)?;
    let cal = Calibrator::new(&curve, config)?;
    let cells: Vec<(f64, f64)> = t_list
        .iter()
        .flat_map(|&t| c0_list.iter().map(move |&c0| (t, c0)))
        .collect();
    Ok(cells
        .par_iter()
        .map(|&(t, c0)| match cal.calibrate(c0, t) {
            Ok(spec) => TableRow {
                t,
                c0,
                s: Some(spec.s),
                p_b: Some(spec.p_b),
                status: "ok".into(),
            },
            Err(e) => TableRow {
                t,
                c0,
                s: None,
                p_b: None,
                status: e.to_string().replace(',', ";"),
            },
        })
        .collect())
}

pub fn write_table_csv<W: Write>(rows: &[TableRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,c0,s,p_b,status")?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.t, r.c0, opt(r.s), opt(r.p_b), r.status)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exponential correlation `exp(-d)` sampled on a fine radial grid.
    fn exp_curve() -> DistCorrCurve {
        let distances: Vec<f64> = (0..2000).map(|i| i as f64 * 0.004).collect();
        let correlations = distances.iter().map(|d: &f64| (-d).exp()).collect();
        DistCorrCurve {
            distances,
            correlations,
        }
    }

    #[test]
    fn trimming_drops_far_field() {
        let curve = DistCorrCurve {
            distances: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            correlations: vec![1.0, 0.5, 0.005, 0.02, -0.01],
        };
        let (c, d) = trim_curve(&curve, 0.01);
        assert_eq!(c, vec![1.0, 0.5, 0.005]);
        assert_eq!(d, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn exponential_curve_has_closed_form() {
        // For d = -ln c: f(s c0) / f(c0) = ln(s c0) / ln(c0).
        let cfg = TransparencyConfig {
            lambda: Lambda::Fixed(0.0),
            ..Default::default()
        };
        let cal = Calibrator::new(&exp_curve(), cfg).unwrap();
        let (c0, t) = (0.5f64, 0.2f64);
        let spec = cal.calibrate(c0, t).unwrap();
        let s_true = c0.powf(t - 1.0);
        assert!((spec.s - s_true).abs() < 1e-4, "{} vs {s_true}", spec.s);
        assert!((spec.ratio - t).abs() <= 1e-6);
        let p_true = (s_true * RANGE_CORRELATION).ln() / RANGE_CORRELATION.ln();
        assert!((spec.p_b - p_true).abs() < 1e-4);
    }

    #[test]
    fn reference_at_range_correlation_returns_t() {
        let cal = Calibrator::new(&exp_curve(), TransparencyConfig::default()).unwrap();
        for t in [0.1, 0.4, 0.9] {
            let spec = cal.calibrate(RANGE_CORRELATION, t).unwrap();
            assert!((spec.p_b - t).abs() < 1e-3);
        }
    }

    #[test]
    fn distance_rescaling_leaves_results_unchanged() {
        let curve = exp_curve();
        let a = calibrate(&curve, 0.5, 0.3).unwrap();
        let b = calibrate(&curve.rescaled(7.5), 0.5, 0.3).unwrap();
        assert!((a.s - b.s).abs() < 1e-6);
        assert!((a.p_b - b.p_b).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cal = Calibrator::new(&exp_curve(), TransparencyConfig::default()).unwrap();
        assert!(matches!(cal.calibrate(0.5, 1.0), Err(Error::Validation(_))));
        assert!(matches!(cal.calibrate(0.0, 0.5), Err(Error::Validation(_))));
        // With s confined near 1 the ratio cannot fall to 0.2.
        let narrow = Calibrator::new(
            &exp_curve(),
            TransparencyConfig {
                bracket: (1.01, 1.02),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(matches!(narrow.calibrate(0.5, 0.2), Err(Error::NoBracket { .. })));
    }

    #[test]
    fn csv_layout() {
        let rows = vec![
            TableRow {
                t: 0.2,
                c0: 0.5,
                s: Some(1.5),
                p_b: Some(0.75),
                status: "ok".into(),
            },
            TableRow {
                t: 0.9,
                c0: 0.8,
                s: None,
                p_b: None,
                status: "no bracket".into(),
            },
        ];
        let mut buf = Vec::new();
        write_table_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,c0,s,p_b,status\n0.2,0.5,1.500000,0.750000,ok\n0.9,0.8,,,no bracket\n"
        );
    }
}
