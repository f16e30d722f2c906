//! Synthetic barrier geometries on structured rectangle meshes.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::fem::{assemble, FemMatrices};
use crate::gmrf::RandomSource;
use crate::mesh::{classify_triangles, generate_rect_mesh, Mesh, Point, Projector, RegionPolygon, SubdomainLabeling};

/// A labelled mesh with the regions and study window it was built from.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub mesh: Mesh,
    pub labeling: SubdomainLabeling,
    pub regions: Vec<RegionPolygon>,
    /// Rectangle of interest, excluding the buffer.
    pub study_area: ((f64, f64), (f64, f64)),
    /// Intended normal-area range.
    pub range: f64,
}

impl Fixture {
    pub fn build(
        x: (f64, f64),
        y: (f64, f64),
        max_edge: f64,
        buffer: f64,
        regions: Vec<RegionPolygon>,
        range: f64,
    ) -> Result<Self> {
        let mesh = generate_rect_mesh(x, y, max_edge, buffer)?;
        let labeling = classify_triangles(&mesh, &regions);
        Ok(Fixture {
            mesh,
            labeling,
            regions,
            study_area: (x, y),
            range,
        })
    }

    pub fn fem(&self) -> Result<FemMatrices> {
        assemble(&self.mesh, &self.labeling)
    }

    pub fn node_near(&self, p: Point) -> usize {
        self.mesh.nearest_node(p)
    }

    pub fn k(&self) -> usize {
        self.labeling.k()
    }
}

/// Reference point just below the canal mouth and a probe straight across.
pub const CANAL_REFERENCE: Point = [5.0, 4.0];
pub const CANAL_PROBE: Point = [5.0, 6.0];

/// Study area [0, 10]² split by a horizontal barrier (y in [4.5, 5.5]) with
/// a canal at x in [4.5, 5.5]. Both barrier pieces carry label 2 and reach
/// through the buffer. Range 2.
pub fn canal_fixture() -> Result<Fixture> {
    let buffer = 3.0;
    let regions = vec![
        RegionPolygon::rectangle((-buffer - 1.0, 4.5), (4.5, 5.5), 2)?,
        RegionPolygon::rectangle((5.5, 10.0 + buffer + 1.0), (4.5, 5.5), 2)?,
    ];
    Fixture::build((0.0, 10.0), (0.0, 10.0), 0.25, buffer, regions, 2.0)
}

/// Probes on opposite sides of the thin barrier.
pub const THIN_REFERENCE: Point = [5.0, 4.5];
pub const THIN_PROBE: Point = [5.0, 5.5];

/// Study area [0, 10]² fully divided by a thin barrier, y in [4.75, 5.25],
/// label 2. Range 2. The barrier is four elements wide; narrower barriers
/// let the interface nodes couple directly as the fraction goes to zero.
pub fn thin_barrier_fixture() -> Result<Fixture> {
    let buffer = 2.0;
    let regions = vec![RegionPolygon::rectangle(
        (-buffer - 1.0, 10.0 + buffer + 1.0),
        (4.75, 5.25),
        2,
    )?];
    Fixture::build((0.0, 10.0), (0.0, 10.0), 0.125, buffer, regions, 2.0)
}

/// Study area [0, 20] × [0, 10] divided by two connected barriers at
/// y in [4, 6]: label 2 on the left half and label 3 on the right half.
/// Range 4.
pub fn two_barrier_fixture(max_edge: f64) -> Result<Fixture> {
    let buffer = 4.0;
    let regions = vec![
        RegionPolygon::rectangle((-buffer - 1.0, 10.0), (4.0, 6.0), 2)?,
        RegionPolygon::rectangle((10.0, 20.0 + buffer + 1.0), (4.0, 6.0), 3)?,
    ];
    Fixture::build((0.0, 20.0), (0.0, 10.0), max_edge, buffer, regions, 4.0)
}

/// `n` points drawn uniformly over the study area, barriers included.
pub fn uniform_locations(f: &Fixture, n: usize, rng: &mut RandomSource) -> Vec<Point> {
    let ((x0, x1), (y0, y1)) = f.study_area;
    (0..n)
        .map(|_| [x0 + (x1 - x0) * rng.uniform(), y0 + (y1 - y0) * rng.uniform()])
        .collect()
}

/// Unbuffered [0, 10]² split by a barrier at y in [4.5, 5.5] (label 2),
/// meshed at 0.25. Used for point-pattern scenarios where events can only
/// occur in label 1.
pub fn lgcp_barrier_fixture() -> Result<Fixture> {
    let regions = vec![RegionPolygon::rectangle((-1.0, 11.0), (4.5, 5.5), 2)?];
    Fixture::build((0.0, 10.0), (0.0, 10.0), 0.25, 0.0, regions, 2.0)
}

/// Stationary calibration setting: range 1 meshed at 1/20 over [-1.5, 1.5]²
/// with a 1.5 buffer, observed on a 300 × 300 lattice over the unbuffered
/// square. Returns the fixture, the centre node and the projector.
pub fn calibration_fixture() -> Result<(Fixture, usize, Projector)> {
    let f = stationary_fixture(1.0, 20.0, 1.5, 1.5)?;
    let node = f.node_near([0.0, 0.0]);
    let proj = Projector::new(&f.mesh, 300, 300, (-1.5, 1.5), (-1.5, 1.5))?;
    Ok((f, node, proj))
}

/// Location of the shipped canal fixture mesh file.
pub fn canal_fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join("canal.json")
}

/// Unlabelled square of half-width `half` centred at the origin with a
/// buffer, meshed at `range / divisions`.
pub fn stationary_fixture(range: f64, divisions: f64, half: f64, buffer: f64) -> Result<Fixture> {
    Fixture::build((-half, half), (-half, half), range / divisions, buffer, vec![], range)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn barrier_areas_match_region_geometry() {
        let f = canal_fixture().unwrap();
        assert_eq!(f.k(), 2);
        let areas = f.fem().unwrap().total_area_per_subdomain();
        // Barrier pieces clipped to the meshed rectangle [-3, 13]².
        let want = (4.5 + 3.0) * 1.0 + (13.0 - 5.5) * 1.0;
        assert!((areas[1] - want).abs() < 1e-10);
        assert!((areas[0] + areas[1] - 256.0).abs() < 1e-9);

        let f = two_barrier_fixture(0.5).unwrap();
        let a = f.fem().unwrap().total_area_per_subdomain();
        assert_eq!(a.len(), 3);
        assert!((a[1] - 14.0 * 2.0).abs() < 1e-10 && (a[2] - 14.0 * 2.0).abs() < 1e-10);
    }

    #[test]
    fn shipped_canal_matches_construction() {
        let (mesh, labeling) = crate::mesh::load_mesh(&canal_fixture_path()).unwrap();
        let f = canal_fixture().unwrap();
        assert_eq!(mesh, f.mesh);
        assert_eq!(labeling, f.labeling);
    }
}
