//! Piecewise-linear finite element matrices on a labelled mesh: the global
//! mass matrix, and per-subdomain stiffness and lumped-mass matrices.

use crate::error::{Error, Result};
use crate::mesh::{Mesh, SubdomainLabeling};
use crate::sparse::CscMatrix;

#[derive(Debug, Clone)]
pub struct FemMatrices {
    /// Consistent mass matrix over the whole domain.
    pub c: CscMatrix,
    /// Stiffness matrix restricted to each subdomain, indexed by `label - 1`.
    pub g: Vec<CscMatrix>,
    /// Diagonal of the lumped mass matrix restricted to each subdomain.
    pub c_tilde: Vec<Vec<f64>>,
    elements: Vec<Element>,
}

/// Per-triangle contributions, kept so that fraction-weighted sums can be
/// accumulated in triangle order.
#[derive(Debug, Clone)]
struct Element {
    subdomain: usize,
    nodes: [usize; 3],
    stiffness: [[f64; 3]; 3],
    lumped: f64,
}

impl FemMatrices {
    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    pub fn k(&self) -> usize {
        self.g.len()
    }

    /// Σ_q G_q.
    pub fn global_stiffness(&self) -> CscMatrix {
        let mut acc = self.g[0].clone();
        for g in &self.g[1..] {
            acc = acc.add_scaled(1.0, g, 1.0);
        }
        acc
    }

    /// Σ_q C̃_q.
    pub fn global_lumped_mass(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n()];
        for d in &self.c_tilde {
            acc.iter_mut().zip(d).for_each(|(a, b)| *a += b);
        }
        acc
    }

    /// `(Σ_q w_q G_q, Σ_q w_q C̃_q)`, summed element by element in triangle
    /// order. With all weights 1 the result is bit-identical to a
    /// single-subdomain assembly of the same mesh.
    pub fn weighted_sums(&self, weights: &[f64]) -> Result<(CscMatrix, Vec<f64>)> {
        if weights.len() != self.k() {
            return Err(Error::LengthMismatch {
                expected: self.k(),
                got: weights.len(),
            });
        }
        let n = self.n();
        let mut trip = Vec::with_capacity(18 * self.elements.len());
        let mut diag = vec![0.0; n];
        for e in &self.elements {
            let w = weights[e.subdomain];
            for a in 0..3 {
                for b in 0..3 {
                    trip.push((e.nodes[a], e.nodes[b], w * e.stiffness[a][b]));
                }
                diag[e.nodes[a]] += w * e.lumped;
            }
        }
        trip.extend(self.pattern_triplets());
        Ok((CscMatrix::from_triplets(n, n, &trip), diag))
    }

    fn pattern_triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.elements
            .iter()
            .flat_map(|e| (0..9).map(move |ab| (e.nodes[ab / 3], e.nodes[ab % 3], 0.0)))
    }

    /// Trace of each C̃_q, i.e. the area of every subdomain.
    pub fn total_area_per_subdomain(&self) -> Vec<f64> {
        self.c_tilde.iter().map(|d| d.iter().sum()).collect()
    }
}

pub fn total_area_per_subdomain(fem: &FemMatrices) -> Vec<f64> {
    fem.total_area_per_subdomain()
}

/// Local P1 stiffness matrix of a counter-clockwise triangle with the given area.
fn local_stiffness(p: [[f64; 2]; 3], area: f64) -> [[f64; 3]; 3] {
    // Edge opposite vertex i, as a vector.
    let e = |i: usize| {
        let a = p[(i + 1) % 3];
        let b = p[(i + 2) % 3];
        [b[0] - a[0], b[1] - a[1]]
    };
    let edges = [e(0), e(1), e(2)];
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (edges[i][0] * edges[j][0] + edges[i][1] * edges[j][1]) / (4.0 * area);
        }
    }
    k
}

/// Accumulates per-triangle contributions. Triplets are compiled in a sorted,
/// deterministic order so the result does not depend on traversal order.
pub fn assemble(mesh: &Mesh, labeling: &SubdomainLabeling) -> Result<FemMatrices> {
    if labeling.len() != mesh.n_triangles() {
        return Err(Error::LengthMismatch {
            expected: mesh.n_triangles(),
            got: labeling.len(),
        });
    }
    let n = mesh.n_nodes();
    let k = labeling.k();
    let (lo, hi) = mesh.bounding_box();
    let bbox_area = (hi[0] - lo[0]) * (hi[1] - lo[1]);

    let mut c_trip = Vec::with_capacity(9 * mesh.n_triangles());
    let mut g_trip: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); k];
    let mut c_tilde = vec![vec![0.0; n]; k];
    let mut elements = Vec::with_capacity(mesh.n_triangles());

    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.area(t);
        if area < crate::mesh::DEGENERATE_AREA_RTOL * bbox_area {
            return Err(Error::DegenerateTriangle { triangle: t, area });
        }
        let q = labeling.label(t) - 1;
        let ks = local_stiffness(mesh.corners(t), area);
        for a in 0..3 {
            for b in 0..3 {
                let m = if a == b { area / 6.0 } else { area / 12.0 };
                c_trip.push((tri[a], tri[b], m));
                g_trip[q].push((tri[a], tri[b], ks[a][b]));
            }
            c_tilde[q][tri[a]] += area / 3.0;
        }
        elements.push(Element {
            subdomain: q,
            nodes: *tri,
            stiffness: ks,
            lumped: area / 3.0,
        });
    }

    let c = CscMatrix::from_triplets(n, n, &c_trip);
    // Every G_q shares the full adjacency pattern so that weighted sums of
    // them have a fixed structure.
    let pattern: Vec<(usize, usize, f64)> = c_trip.iter().map(|&(i, j, _)| (i, j, 0.0)).collect();
    let g = g_trip
        .into_iter()
        .map(|mut trip| {
            trip.extend_from_slice(&pattern);
            CscMatrix::from_triplets(n, n, &trip)
        })
        .collect();
    Ok(FemMatrices {
        c,
        g,
        c_tilde,
        elements,
    })
}
