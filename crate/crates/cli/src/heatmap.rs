//! Diverging-colormap PNG rendering of lattice grids.

use std::io::BufWriter;
use std::path::Path;

use tbm::mesh::LatticeGrid;

use crate::error::{CliError, Result};

const MASKED: [u8; 3] = [160, 160, 160];
const LOW: [f64; 3] = [33.0, 102.0, 172.0];
const MID: [f64; 3] = [247.0, 247.0, 247.0];
const HIGH: [f64; 3] = [178.0, 24.0, 43.0];

/// Blue at `-limit`, white at zero, red at `+limit`.
fn color(v: f64, limit: f64) -> [u8; 3] {
    let x = if limit > 0.0 { (v / limit).clamp(-1.0, 1.0) } else { 0.0 };
    let end = if x < 0.0 { LOW } else { HIGH };
    let a = x.abs();
    std::array::from_fn(|c| (MID[c] + a * (end[c] - MID[c])).round() as u8)
}

/// Limit that makes the colour scale symmetric about zero for `grid`.
pub fn symmetric_limit(grid: &LatticeGrid) -> f64 {
    grid.values.iter().flatten().fold(0.0, |m: f64, v| m.max(v.abs()))
}

/// Writes `grid` (x fastest, `nx` by `ny`) with north up.
pub fn write_png(path: &Path, grid: &LatticeGrid, nx: usize, ny: usize, limit: f64) -> Result<()> {
    let mut data = Vec::with_capacity(nx * ny * 3);
    for row in (0..ny).rev() {
        for col in 0..nx {
            let px = match grid.values[row * nx + col] {
                Some(v) => color(v, limit),
                None => MASKED,
            };
            data.extend_from_slice(&px);
        }
    }
    let file = std::fs::File::create(path).map_err(|e| CliError::output(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), nx as u32, ny as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let internal =
        |e: png::EncodingError| CliError::Internal(format!("png encoding failed for {}: {e}", path.display()));
    let mut w = enc.write_header().map_err(internal)?;
    w.write_image_data(&data).map_err(internal)?;
    w.finish().map_err(internal)
}
