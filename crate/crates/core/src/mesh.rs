//! Triangulated domains, subdomain labels, region polygons and barycentric
//! projection onto regular lattices.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Default cap on generated mesh size.
pub const DEFAULT_MAX_NODES: usize = 2_000_000;

/// Relative area below which a triangle is rejected as degenerate.
pub const DEGENERATE_AREA_RTOL: f64 = 1e-14;

const BARY_EPS: f64 = 1e-12;

/// A planar triangulation with counter-clockwise triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
}

impl Mesh {
    /// Validates and orients a triangulation. Fails on out-of-range indices,
    /// degenerate triangles, unused vertices or a disconnected triangle set.
    pub fn new(vertices: Vec<Point>, mut triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if triangles.is_empty() {
            return Err(Error::Validation("mesh has no triangles".into()));
        }
        if let Some(i) = vertices.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Validation(format!("vertex {i} has non-finite coordinates")));
        }
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= n {
                    return Err(Error::Validation(format!(
                        "triangle {t} references vertex {v} but the mesh has {n} vertices"
                    )));
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::Validation(format!("triangle {t} repeats a vertex")));
            }
        }

        let (lo, hi) = bounding_box(&vertices);
        let bbox_area = ((hi[0] - lo[0]) * (hi[1] - lo[1])).max(f64::MIN_POSITIVE);
        for (t, tri) in triangles.iter_mut().enumerate() {
            let a = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if a.abs() < DEGENERATE_AREA_RTOL * bbox_area {
                return Err(Error::DegenerateTriangle {
                    triangle: t,
                    area: a.abs(),
                });
            }
            if a < 0.0 {
                tri.swap(1, 2);
            }
        }

        let mut used = vec![false; n];
        triangles.iter().flatten().for_each(|&v| used[v] = true);
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(Error::Validation(format!("vertex {v} is not used by any triangle")));
        }

        let mesh = Mesh { vertices, triangles };
        if let Some(t) = mesh.first_disconnected_triangle() {
            return Err(Error::Validation(format!(
                "mesh is not edge-connected: triangle {t} is unreachable from triangle 0"
            )));
        }
        Ok(mesh)
    }

    pub fn n_nodes(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn vertex(&self, i: usize) -> Point {
        self.vertices[i]
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Positive area of triangle `t`.
    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        signed_area(a, b, c)
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.corners(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.area(t)).sum()
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        bounding_box(&self.vertices)
    }

    /// Index of the vertex closest to `p` (lowest index on ties).
    pub fn nearest_node(&self, p: Point) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, v) in self.vertices.iter().enumerate() {
            let d = (v[0] - p[0]).powi(2) + (v[1] - p[1]).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Unique undirected edges, each as `(min, max)`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    fn first_disconnected_triangle(&self) -> Option<usize> {
        let mut by_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for (a, b) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])] {
                by_edge.entry((a.min(b), a.max(b))).or_default().push(t);
            }
        }
        let mut neighbours = vec![Vec::new(); self.n_triangles()];
        for tris in by_edge.values() {
            for &a in tris {
                for &b in tris {
                    if a != b {
                        neighbours[a].push(b);
                    }
                }
            }
        }
        let mut seen = vec![false; self.n_triangles()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(t) = stack.pop() {
            for &u in &neighbours[t] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.iter().position(|s| !s)
    }
}

/// Per-triangle subdomain labels. Label 1 is the normal area; 2..=k are barriers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubdomainLabeling {
    labels: Vec<usize>,
    k: usize,
}

impl SubdomainLabeling {
    /// `k` is taken as the largest label present (at least 1).
    pub fn new(labels: Vec<usize>, n_triangles: usize) -> Result<Self> {
        let k = labels.iter().copied().max().unwrap_or(1).max(1);
        Self::with_k(labels, n_triangles, k)
    }

    pub fn with_k(labels: Vec<usize>, n_triangles: usize, k: usize) -> Result<Self> {
        if labels.len() != n_triangles {
            return Err(Error::Validation(format!(
                "{} labels given for {} triangles",
                labels.len(),
                n_triangles
            )));
        }
        if let Some(t) = labels.iter().position(|&q| q < 1 || q > k) {
            return Err(Error::Validation(format!(
                "triangle {t} has label {} outside 1..={k}",
                labels[t]
            )));
        }
        Ok(SubdomainLabeling { labels, k })
    }

    pub fn uniform(n_triangles: usize) -> Self {
        SubdomainLabeling {
            labels: vec![1; n_triangles],
            k: 1,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, t: usize) -> usize {
        self.labels[t]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Geometric area of each subdomain, indexed by `label - 1`.
    pub fn areas(&self, mesh: &Mesh) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for (t, &q) in self.labels.iter().enumerate() {
            out[q - 1] += mesh.area(t);
        }
        out
    }
}

/// A polygon with optional holes, tagged with the subdomain label it assigns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPolygon {
    /// Outer ring first, holes after. Rings are stored open (no repeated
    /// closing vertex); outer rings counter-clockwise, holes clockwise.
    pub rings: Vec<Vec<Point>>,
    pub label: usize,
}

impl RegionPolygon {
    pub fn new(rings: Vec<Vec<Point>>, label: usize) -> Result<Self> {
        if label < 2 {
            return Err(Error::Validation(format!("region label must be >= 2, got {label}")));
        }
        if rings.is_empty() {
            return Err(Error::Validation("region has no rings".into()));
        }
        let mut out = Vec::with_capacity(rings.len());
        for (r, mut ring) in rings.into_iter().enumerate() {
            if ring.len() > 1 && ring.first() == ring.last() {
                ring.pop();
            }
            if ring.len() < 3 {
                return Err(Error::Validation(format!("ring {r} has fewer than 3 vertices")));
            }
            if let Some((a, b)) = first_self_intersection(&ring) {
                return Err(Error::Validation(format!(
                    "ring {r} is not simple: edges {a} and {b} intersect"
                )));
            }
            let area = ring_signed_area(&ring);
            let want_ccw = r == 0;
            if (area > 0.0) != want_ccw {
                ring.reverse();
            }
            out.push(ring);
        }
        Ok(RegionPolygon { rings: out, label })
    }

    pub fn rectangle(x: (f64, f64), y: (f64, f64), label: usize) -> Result<Self> {
        Self::new(vec![vec![[x.0, y.0], [x.1, y.0], [x.1, y.1], [x.0, y.1]]], label)
    }

    /// Re-runs validation, for polygons deserialized from user files.
    pub fn validated(self) -> Result<Self> {
        Self::new(self.rings, self.label)
    }

    /// Even-odd containment over all rings.
    pub fn contains(&self, p: Point) -> bool {
        self.rings.iter().filter(|r| ring_contains(r, p)).count() % 2 == 1
    }

    /// Outer area minus holes.
    pub fn area(&self) -> f64 {
        self.rings.iter().map(|r| ring_signed_area(r)).sum::<f64>().abs()
    }
}

/// Labels each triangle by the last region containing its centroid; triangles
/// in no region get label 1.
pub fn classify_triangles(mesh: &Mesh, regions: &[RegionPolygon]) -> SubdomainLabeling {
    let labels: Vec<usize> = (0..mesh.n_triangles())
        .into_par_iter()
        .map(|t| {
            let c = mesh.centroid(t);
            regions.iter().rev().find(|r| r.contains(c)).map_or(1, |r| r.label)
        })
        .collect();
    let k = regions.iter().map(|r| r.label).max().unwrap_or(1).max(1);
    SubdomainLabeling { labels, k }
}

/// Structured triangulation of `x_range × y_range` extended by `buffer` on
/// every side. Grid lines are anchored on the interior rectangle so interior
/// vertices do not move with the buffer width; axis-aligned edges are at most
/// `max_edge` long and quad diagonals alternate direction.
pub fn generate_rect_mesh(x_range: (f64, f64), y_range: (f64, f64), max_edge: f64, buffer: f64) -> Result<Mesh> {
    generate_rect_mesh_capped(x_range, y_range, max_edge, buffer, DEFAULT_MAX_NODES)
}

pub fn generate_rect_mesh_capped(
    x_range: (f64, f64),
    y_range: (f64, f64),
    max_edge: f64,
    buffer: f64,
    max_nodes: usize,
) -> Result<Mesh> {
    if !(max_edge > 0.0) || !max_edge.is_finite() {
        return Err(Error::Validation(format!("max_edge must be positive, got {max_edge}")));
    }
    if !(buffer >= 0.0) || !buffer.is_finite() {
        return Err(Error::Validation(format!("buffer must be non-negative, got {buffer}")));
    }
    let wx = x_range.1 - x_range.0;
    let wy = y_range.1 - y_range.0;
    if !(wx > 0.0 && wy > 0.0) {
        return Err(Error::Validation("rectangle has non-positive extent".into()));
    }
    let nx = (wx / max_edge - 1e-9).ceil().max(1.0) as i64;
    let ny = (wy / max_edge - 1e-9).ceil().max(1.0) as i64;
    let hx = wx / nx as f64;
    let hy = wy / ny as f64;
    let bx = (buffer / hx - 1e-9).ceil().max(0.0) as i64;
    let by = (buffer / hy - 1e-9).ceil().max(0.0) as i64;

    let cols = (nx + 2 * bx + 1) as usize;
    let rows = (ny + 2 * by + 1) as usize;
    let nodes = cols.saturating_mul(rows);
    if nodes > max_nodes {
        return Err(Error::Resolution { nodes, cap: max_nodes });
    }

    let mut vertices = Vec::with_capacity(nodes);
    for j in -by..=ny + by {
        for i in -bx..=nx + bx {
            vertices.push([x_range.0 + i as f64 * hx, y_range.0 + j as f64 * hy]);
        }
    }
    let id = |i: usize, j: usize| j * cols + i;
    let mut triangles = Vec::with_capacity(2 * (cols - 1) * (rows - 1));
    for j in 0..rows - 1 {
        for i in 0..cols - 1 {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            // Parity taken on interior-anchored indices so the pattern is
            // buffer-independent.
            let gi = i as i64 - bx;
            let gj = j as i64 - by;
            if (gi + gj).rem_euclid(2) == 0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
        }
    }
    Mesh::new(vertices, triangles)
}

/// On-disk mesh document: 0-based indices, one label per triangle.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshFile {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub labels: Vec<usize>,
}

impl MeshFile {
    pub fn from_parts(mesh: &Mesh, labeling: &SubdomainLabeling) -> Self {
        MeshFile {
            vertices: mesh.vertices.clone(),
            triangles: mesh.triangles.clone(),
            labels: labeling.labels.clone(),
        }
    }

    pub fn into_parts(self) -> Result<(Mesh, SubdomainLabeling)> {
        let mesh = Mesh::new(self.vertices, self.triangles)?;
        let labeling = SubdomainLabeling::new(self.labels, mesh.n_triangles())?;
        Ok((mesh, labeling))
    }
}

pub fn load_mesh(path: &Path) -> Result<(Mesh, SubdomainLabeling)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mesh(&text)
}

pub fn parse_mesh(text: &str) -> Result<(Mesh, SubdomainLabeling)> {
    let file: MeshFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.into_parts()
}

pub fn save_mesh(path: &Path, mesh: &Mesh, labeling: &SubdomainLabeling) -> Result<()> {
    let text =
        serde_json::to_string(&MeshFile::from_parts(mesh, labeling)).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Location of a point inside the mesh: containing triangle, its nodes and
/// the barycentric weights (nonnegative, summing to one).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Barycentric {
    pub triangle: usize,
    pub nodes: [usize; 3],
    pub weights: [f64; 3],
}

impl Barycentric {
    pub fn interpolate(&self, values: &[f64]) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&i, &w)| w * values[i]).sum()
    }
}

/// Bucket grid over triangle bounding boxes for point location.
#[derive(Debug, Clone)]
pub struct PointLocator<'a> {
    mesh: &'a Mesh,
    lo: Point,
    cell: Point,
    dims: (usize, usize),
    buckets: Vec<Vec<usize>>,
}

impl<'a> PointLocator<'a> {
    pub fn new(mesh: &'a Mesh) -> Self {
        let (lo, hi) = mesh.bounding_box();
        let side = ((mesh.n_triangles() as f64).sqrt().ceil() as usize).max(1);
        let w = (hi[0] - lo[0]).max(f64::MIN_POSITIVE);
        let h = (hi[1] - lo[1]).max(f64::MIN_POSITIVE);
        let cell = [w / side as f64, h / side as f64];
        let mut buckets = vec![Vec::new(); side * side];
        for t in 0..mesh.n_triangles() {
            let c = mesh.corners(t);
            let (tlo, thi) = bounding_box(&c);
            let (i0, j0) = Self::cell_of(lo, cell, side, tlo);
            let (i1, j1) = Self::cell_of(lo, cell, side, thi);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * side + i].push(t);
                }
            }
        }
        PointLocator {
            mesh,
            lo,
            cell,
            dims: (side, side),
            buckets,
        }
    }

    fn cell_of(lo: Point, cell: Point, side: usize, p: Point) -> (usize, usize) {
        let fx = ((p[0] - lo[0]) / cell[0]).floor();
        let fy = ((p[1] - lo[1]) / cell[1]).floor();
        let clamp = |f: f64| (f.max(0.0) as usize).min(side - 1);
        (clamp(fx), clamp(fy))
    }

    /// Lowest-index triangle containing `p`, or `None` outside the mesh.
    pub fn locate(&self, p: Point) -> Option<Barycentric> {
        let (lo, hi) = (
            self.lo,
            [
                self.lo[0] + self.cell[0] * self.dims.0 as f64,
                self.lo[1] + self.cell[1] * self.dims.1 as f64,
            ],
        );
        let slack = 1e-9 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
        if p[0] < lo[0] - slack || p[1] < lo[1] - slack || p[0] > hi[0] + slack || p[1] > hi[1] + slack {
            return None;
        }
        let (i, j) = Self::cell_of(self.lo, self.cell, self.dims.0, p);
        for &t in &self.buckets[j * self.dims.0 + i] {
            if let Some(w) = barycentric_weights(self.mesh.corners(t), p) {
                return Some(Barycentric {
                    triangle: t,
                    nodes: self.mesh.triangles[t],
                    weights: w,
                });
            }
        }
        None
    }
}

/// Barycentric weights of `p` in the triangle, if it lies inside (with a
/// small tolerance); tiny negative weights are clipped and renormalized.
pub fn barycentric_weights(c: [Point; 3], p: Point) -> Option<[f64; 3]> {
    let area = signed_area(c[0], c[1], c[2]);
    let mut w = [
        signed_area(p, c[1], c[2]) / area,
        signed_area(c[0], p, c[2]) / area,
        signed_area(c[0], c[1], p) / area,
    ];
    if w.iter().any(|&x| x < -BARY_EPS) {
        return None;
    }
    for x in &mut w {
        *x = x.max(0.0);
    }
    let s: f64 = w.iter().sum();
    Some([w[0] / s, w[1] / s, w[2] / s])
}

/// A regular lattice and the barycentric coordinates of each lattice point.
/// Points are ordered with x varying fastest.
#[derive(Debug, Clone)]
pub struct Projector {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    entries: Vec<Option<Barycentric>>,
    n_nodes: usize,
}

impl Projector {
    pub fn new(mesh: &Mesh, nx: usize, ny: usize, x_range: (f64, f64), y_range: (f64, f64)) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Validation(format!("lattice needs nx, ny >= 2, got {nx}x{ny}")));
        }
        let locator = PointLocator::new(mesh);
        let entries = (0..nx * ny)
            .into_par_iter()
            .map(|idx| locator.locate(lattice_point(x_range, y_range, nx, ny, idx)))
            .collect();
        Ok(Projector {
            x_range,
            y_range,
            nx,
            ny,
            entries,
            n_nodes: mesh.n_nodes(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn point(&self, idx: usize) -> Point {
        lattice_point(self.x_range, self.y_range, self.nx, self.ny, idx)
    }

    pub fn entry(&self, idx: usize) -> Option<&Barycentric> {
        self.entries[idx].as_ref()
    }

    pub fn is_masked(&self, idx: usize) -> bool {
        self.entries[idx].is_none()
    }

    pub fn project(&self, nodal_values: &[f64]) -> Result<LatticeGrid> {
        if nodal_values.len() != self.n_nodes {
            return Err(Error::LengthMismatch {
                expected: self.n_nodes,
                got: nodal_values.len(),
            });
        }
        let values = self
            .entries
            .iter()
            .map(|e| e.as_ref().map(|b| b.interpolate(nodal_values)))
            .collect();
        Ok(LatticeGrid {
            points: (0..self.len()).map(|i| self.point(i)).collect(),
            values,
        })
    }
}

pub fn build_projector(
    mesh: &Mesh,
    nx: usize,
    ny: usize,
    x_range: (f64, f64),
    y_range: (f64, f64),
) -> Result<Projector> {
    Projector::new(mesh, nx, ny, x_range, y_range)
}

pub fn project_field(projector: &Projector, nodal_values: &[f64]) -> Result<LatticeGrid> {
    projector.project(nodal_values)
}

fn lattice_point(x: (f64, f64), y: (f64, f64), nx: usize, ny: usize, idx: usize) -> Point {
    let i = idx % nx;
    let j = idx / nx;
    [
        x.0 + (x.1 - x.0) * i as f64 / (nx - 1) as f64,
        y.0 + (y.1 - y.0) * j as f64 / (ny - 1) as f64,
    ]
}

/// Projected values on a lattice; `None` marks points outside the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeGrid {
    pub points: Vec<Point>,
    pub values: Vec<Option<f64>>,
}

impl LatticeGrid {
    /// CSV with header `x,y,value`; masked points have an empty value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,value")?;
        for (p, v) in self.points.iter().zip(&self.values) {
            match v {
                Some(v) => writeln!(w, "{},{},{}", p[0], p[1], v)?,
                None => writeln!(w, "{},{},", p[0], p[1])?,
            }
        }
        Ok(())
    }
}

pub(crate) fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn bounding_box(points: &[Point]) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        lo = [lo[0].min(p[0]), lo[1].min(p[1])];
        hi = [hi[0].max(p[0]), hi[1].max(p[1])];
    }
    (lo, hi)
}

fn ring_signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
}

fn ring_contains(ring: &[Point], p: Point) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn first_self_intersection(ring: &[Point]) -> Option<(usize, usize)> {
    let n = ring.len();
    for i in 0..n {
        for j in i + 1..n {
            // Adjacent edges share a vertex.
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_intersect(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n]) {
                return Some((i, j));
            }
        }
    }
    None
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = signed_area(q1, q2, p1);
    let d2 = signed_area(q1, q2, p2);
    let d3 = signed_area(p1, p2, q1);
    let d4 = signed_area(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |a: Point, b: Point, p: Point, d: f64| {
        d == 0.0 && p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_triangle() -> Mesh {
        Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn minimal_mesh_file() {
        let (mesh, lab) = parse_mesh(r#"{"vertices":[[0,0],[1,0],[0,1]],"triangles":[[0,1,2]],"labels":[1]}"#).unwrap();
        assert_eq!(mesh.n_nodes(), 3);
        assert_eq!(mesh.n_triangles(), 1);
        assert_eq!(lab.k(), 1);
    }

    #[test]
    fn out_of_range_index_names_triangle() {
        let err = parse_mesh(r#"{"vertices":[[0,0],[1,0],[0,1]],"triangles":[[0,1,3]],"labels":[1]}"#).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Validation(_)));
        assert!(msg.contains("triangle 0"), "{msg}");
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(parse_mesh("{\"vertices\": ["), Err(Error::Parse(_))));
        assert!(matches!(
            parse_mesh(r#"{"vertices":[],"triangles":[],"labels":[],"extra":1}"#),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn degenerate_and_disconnected_rejected() {
        let err = Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], vec![[0, 1, 2]]).unwrap_err();
        assert!(matches!(err, Error::DegenerateTriangle { triangle: 0, .. }));

        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0], [6.0, 5.0], [5.0, 6.0]];
        let err = Mesh::new(v, vec![[0, 1, 2], [3, 4, 5]]).unwrap_err();
        assert!(err.to_string().contains("triangle 1"), "{err}");

        // Sharing only a vertex is not edge-connectivity.
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        assert!(Mesh::new(v, vec![[0, 1, 2], [0, 3, 4]]).is_err());
    }

    #[test]
    fn orientation_is_normalized() {
        let m = Mesh::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        assert!(signed_area(m.corners(0)[0], m.corners(0)[1], m.corners(0)[2]) > 0.0);
    }

    #[test]
    fn unit_square_grid() {
        let m = generate_rect_mesh((0.0, 1.0), (0.0, 1.0), 0.5, 0.0).unwrap();
        assert_eq!(m.n_nodes(), 9);
        assert_eq!(m.n_triangles(), 8);
        assert!((m.total_area() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn buffered_mesh_covers_extended_rectangle() {
        let m = generate_rect_mesh((0.0, 10.0), (0.0, 10.0), 0.5, 3.0).unwrap();
        let (lo, hi) = m.bounding_box();
        assert!(lo[0] <= -3.0 + 1e-12 && lo[1] <= -3.0 + 1e-12);
        assert!(hi[0] >= 13.0 - 1e-12 && hi[1] >= 13.0 - 1e-12);
        for (a, b) in m.edges() {
            let (p, q) = (m.vertex(a), m.vertex(b));
            let (dx, dy) = ((p[0] - q[0]).abs(), (p[1] - q[1]).abs());
            // Axis-aligned grid edges obey the bound; diagonals are sqrt(2) longer.
            if dx < 1e-12 || dy < 1e-12 {
                assert!(dx.max(dy) <= 0.5 + 1e-12);
            } else {
                assert!((dx * dx + dy * dy).sqrt() <= 0.5 * 2f64.sqrt() + 1e-12);
            }
        }
    }

    #[test]
    fn buffer_does_not_move_interior_vertices() {
        let a = generate_rect_mesh((0.0, 10.0), (0.0, 10.0), 0.7, 0.0).unwrap();
        let b = generate_rect_mesh((0.0, 10.0), (0.0, 10.0), 0.7, 3.0).unwrap();
        let inside = |p: &Point| p[0] >= 0.0 && p[0] <= 10.0 && p[1] >= 0.0 && p[1] <= 10.0;
        let mut va: Vec<Point> = a.vertices().iter().copied().filter(inside).collect();
        let mut vb: Vec<Point> = b.vertices().iter().copied().filter(inside).collect();
        let key = |p: &Point| (p[1].to_bits(), p[0].to_bits());
        va.sort_by_key(key);
        vb.sort_by_key(key);
        assert_eq!(va, vb);
    }

    #[test]
    fn resolution_cap() {
        let err = generate_rect_mesh_capped((0.0, 1.0), (0.0, 1.0), 0.01, 0.0, 100).unwrap_err();
        assert!(matches!(err, Error::Resolution { cap: 100, .. }));
    }

    #[test]
    fn classification_rules() {
        let m = generate_rect_mesh((0.0, 4.0), (0.0, 4.0), 1.0, 0.0).unwrap();
        assert!(classify_triangles(&m, &[]).labels().iter().all(|&q| q == 1));

        let all = RegionPolygon::rectangle((-1.0, 5.0), (-1.0, 5.0), 2).unwrap();
        assert!(classify_triangles(&m, &[all]).labels().iter().all(|&q| q == 2));

        let a = RegionPolygon::rectangle((0.0, 3.0), (0.0, 4.0), 2).unwrap();
        let b = RegionPolygon::rectangle((2.0, 4.0), (0.0, 4.0), 3).unwrap();
        let lab = classify_triangles(&m, &[a, b]);
        assert_eq!(lab.k(), 3);
        for t in 0..m.n_triangles() {
            let c = m.centroid(t);
            let want = if c[0] > 2.0 { 3 } else { 2 };
            assert_eq!(lab.label(t), want);
        }
    }

    #[test]
    fn polygon_validation() {
        let bow = vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(RegionPolygon::new(vec![bow], 2).is_err());
        assert!(RegionPolygon::rectangle((0.0, 1.0), (0.0, 1.0), 1).is_err());
        let holed = RegionPolygon::new(
            vec![
                vec![[0.0, 0.0], [0.0, 4.0], [4.0, 4.0], [4.0, 0.0], [0.0, 0.0]],
                vec![[1.0, 1.0], [3.0, 1.0], [3.0, 3.0], [1.0, 3.0]],
            ],
            2,
        )
        .unwrap();
        assert!((holed.area() - 12.0).abs() < 1e-12);
        assert!(holed.contains([0.5, 0.5]));
        assert!(!holed.contains([2.0, 2.0]));
        assert!(ring_signed_area(&holed.rings[0]) > 0.0);
        assert!(ring_signed_area(&holed.rings[1]) < 0.0);
    }

    #[test]
    fn projector_identities() {
        let m = unit_triangle();
        let b = PointLocator::new(&m).locate([0.0, 0.0]).unwrap();
        assert_eq!(b.weights, [1.0, 0.0, 0.0]);
        let b = PointLocator::new(&m).locate([1.0 / 3.0, 1.0 / 3.0]).unwrap();
        for w in b.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(PointLocator::new(&m).locate([0.8, 0.8]).is_none());
    }

    #[test]
    fn projection_reproduces_linear_functions() {
        let m = generate_rect_mesh((0.0, 2.0), (0.0, 1.0), 0.3, 0.0).unwrap();
        let p = Projector::new(&m, 17, 11, (-0.5, 2.5), (0.0, 1.0)).unwrap();
        let xs: Vec<f64> = m.vertices().iter().map(|v| v[0]).collect();
        let g = p.project(&xs).unwrap();
        let mut masked = 0;
        for (pt, v) in g.points.iter().zip(&g.values) {
            match v {
                Some(v) => assert!((v - pt[0]).abs() < 1e-12),
                None => {
                    masked += 1;
                    assert!(pt[0] < 0.0 || pt[0] > 2.0);
                }
            }
        }
        assert!(masked > 0);
        assert!(matches!(p.project(&[1.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn csv_masks_are_empty() {
        let g = LatticeGrid {
            points: vec![[0.0, 0.0], [1.0, 0.0]],
            values: vec![Some(0.5), None],
        };
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,y,value\n0,0,0.5\n1,0,\n");
    }
}
