//! Prior correlation surfaces from a reference node, and distance/correlation
//! curves over projected lattices.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::FemMatrices;
use crate::gmrf::Factorization;
use crate::mesh::{LatticeGrid, Mesh, Point, Projector, SubdomainLabeling};
use crate::precision::{FractionBasis, HyperParams, SparseSymmetric};

/// Default lattice resolution per axis for projected correlation surfaces.
pub const DEFAULT_LATTICE_DIM: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationField {
    pub node: usize,
    pub coord: Point,
    /// Correlation of every mesh node with the reference node.
    pub values: Vec<f64>,
}

/// A factorized precision together with its marginal standard deviations,
/// reusable across reference nodes.
#[derive(Debug, Clone)]
pub struct CorrelationEngine {
    factor: Factorization,
    sd: Vec<f64>,
}

impl CorrelationEngine {
    pub fn new(q: &SparseSymmetric) -> Result<Self> {
        let factor = crate::gmrf::factorize(q)?;
        let sd = factor.marginal_sd();
        Ok(CorrelationEngine { factor, sd })
    }

    pub fn sd(&self) -> &[f64] {
        &self.sd
    }

    pub fn factor(&self) -> &Factorization {
        &self.factor
    }

    /// `corr_j = (Q⁻¹ e_node)_j / (sd_j sd_node)`.
    pub fn field(&self, mesh: &Mesh, node: usize) -> Result<CorrelationField> {
        let n = self.factor.n();
        if node >= n {
            return Err(Error::IndexOutOfRange { index: node, len: n });
        }
        let mut e = vec![0.0; n];
        e[node] = 1.0;
        let col = self.factor.solve(&e)?;
        let mut values: Vec<f64> = col.iter().zip(&self.sd).map(|(c, s)| c / (s * self.sd[node])).collect();
        values[node] = 1.0;
        Ok(CorrelationField {
            node,
            coord: mesh.vertex(node),
            values,
        })
    }
}

pub fn correlation_from_node(mesh: &Mesh, q: &SparseSymmetric, node: usize) -> Result<CorrelationField> {
    if node >= q.ncols() {
        return Err(Error::IndexOutOfRange {
            index: node,
            len: q.ncols(),
        });
    }
    CorrelationEngine::new(q)?.field(mesh, node)
}

/// Distance from the reference point paired with projected correlation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistCorrCurve {
    pub distances: Vec<f64>,
    pub correlations: Vec<f64>,
}

impl DistCorrCurve {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    /// Multiplies every distance by `c`.
    pub fn rescaled(&self, c: f64) -> Self {
        DistCorrCurve {
            distances: self.distances.iter().map(|d| d * c).collect(),
            correlations: self.correlations.clone(),
        }
    }

    /// Mean correlation in consecutive distance bins of the given width;
    /// returns `(bin centre, mean)` for non-empty bins.
    pub fn binned(&self, width: f64) -> Vec<(f64, f64)> {
        let max = self.distances.iter().fold(0.0f64, |m, &d| m.max(d));
        let nb = (max / width).floor() as usize + 1;
        let mut sum = vec![0.0; nb];
        let mut cnt = vec![0usize; nb];
        for (&d, &c) in self.distances.iter().zip(&self.correlations) {
            let b = ((d / width).floor() as usize).min(nb - 1);
            sum[b] += c;
            cnt[b] += 1;
        }
        (0..nb)
            .filter(|&b| cnt[b] > 0)
            .map(|b| ((b as f64 + 0.5) * width, sum[b] / cnt[b] as f64))
            .collect()
    }

    /// First distance at which the binned mean drops below `level`, linearly
    /// interpolated between bin centres.
    pub fn crossing_distance(&self, level: f64, width: f64) -> Option<f64> {
        let bins = self.binned(width);
        bins.windows(2).find_map(|w| {
            let ((d0, c0), (d1, c1)) = (w[0], w[1]);
            (c0 >= level && c1 < level).then(|| d0 + (c0 - level) / (c0 - c1) * (d1 - d0))
        })
    }
}

/// Pairs every unmasked lattice point with its distance from the reference
/// coordinates. With `restrict_to`, only points whose containing triangle
/// carries that label are kept.
pub fn dist_corr_curve(
    field: &CorrelationField,
    projector: &Projector,
    restrict_to: Option<(&SubdomainLabeling, usize)>,
) -> Result<DistCorrCurve> {
    let mut curve = DistCorrCurve::default();
    for idx in 0..projector.len() {
        let Some(b) = projector.entry(idx) else { continue };
        if let Some((labeling, q)) = restrict_to {
            if labeling.label(b.triangle) != q {
                continue;
            }
        }
        let p = projector.point(idx);
        curve
            .distances
            .push(((p[0] - field.coord[0]).powi(2) + (p[1] - field.coord[1]).powi(2)).sqrt());
        curve.correlations.push(b.interpolate(&field.values));
    }
    Ok(curve)
}

/// One cell of a correlation panel.
#[derive(Debug, Clone)]
pub struct PanelCell {
    pub hp_index: usize,
    pub node_index: usize,
    pub field: CorrelationField,
    pub grid: LatticeGrid,
}

/// Correlation surfaces for every (hyperparameter setting, reference node)
/// pair, projected on `projector`. Cells are ordered row-major by setting.
pub fn correlation_panel(
    mesh: &Mesh,
    fem: &FemMatrices,
    hp_list: &[HyperParams],
    nodes: &[usize],
    projector: &Projector,
) -> Result<Vec<PanelCell>> {
    if let Some(&bad) = nodes.iter().find(|&&v| v >= mesh.n_nodes()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: mesh.n_nodes(),
        });
    }
    let rows: Vec<Result<Vec<PanelCell>>> = hp_list
        .par_iter()
        .enumerate()
        .map(|(h, hp)| {
            hp.validate(Some(fem.k()))?;
            let q = FractionBasis::new(fem, &hp.fractions)?.assemble(hp.sigma_u, hp.range)?;
            let engine = CorrelationEngine::new(&q)?;
            nodes
                .iter()
                .enumerate()
                .map(|(v, &node)| {
                    let field = engine.field(mesh, node)?;
                    let grid = projector.project(&field.values)?;
                    Ok(PanelCell {
                        hp_index: h,
                        node_index: v,
                        field,
                        grid,
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}
