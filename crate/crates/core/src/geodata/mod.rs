//! Raster ingestion and preprocessing.
//!
//! The same chain is applied to the prior DEM and to the onboard local map:
//! point samples (or a DEM file) are binned into a [`HeightGrid`] holding the
//! maximum height above terrain per cell, reduced to a gradient magnitude
//! raster, and thresholded into a binary [`EdgeMap`].
//!
//! Grids are row-major with row 0 at the southern edge: cell `(i, j)` covers
//! `x ∈ [ox + i·r, ox + (i+1)·r)` and `y ∈ [oy + j·r, oy + (j+1)·r)`.
//!
//! Monocular-depth DEMs estimated from aerial imagery enter through the same
//! door as any other DEM: write them as an ASCII grid and use [`load_dem`].

mod asc;

pub use asc::{load_dem, save_dem};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bin size for both the prior and the local heightmaps.
pub const DEFAULT_RESOLUTION: f64 = 1.0;

/// Gradients must exceed this many meters to count as an edge.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 5.0;

/// Axis-aligned rectangle in world coordinates (m).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self { min_x, min_y, max_x, max_y }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.width() > 0.0 && self.height() > 0.0) || !self.width().is_finite() || !self.height().is_finite()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }
}

/// Georeference shared by every raster in the crate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    /// World coordinates of the outer corner of cell (0, 0).
    pub origin: [f64; 2],
    /// Cell edge length in meters.
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
}

impl GridGeometry {
    pub fn new(origin: [f64; 2], resolution: f64, width: usize, height: usize) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::invalid(format!("resolution must be positive, got {resolution}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("grid dimensions must be >= 1, got {width}x{height}")));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(Self { origin, resolution, width, height })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    /// World coordinates of the center of cell `(i, j)`.
    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.resolution,
            self.origin[1] + (j as f64 + 0.5) * self.resolution,
        ]
    }

    /// Cell containing world point `(x, y)`, if any.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.origin[0]) / self.resolution).floor();
        let fy = ((y - self.origin[1]) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || !fx.is_finite() || !fy.is_finite() {
            return None;
        }
        let (i, j) = (fx as usize, fy as usize);
        (i < self.width && j < self.height).then_some((i, j))
    }

    /// Index of the cell treated as the grid center for rotations and for
    /// placing a local map around the vehicle: `(width / 2, height / 2)`.
    pub fn center_cell(&self) -> (usize, usize) {
        (self.width / 2, self.height / 2)
    }

    pub fn bounds(&self) -> Bounds {
        Bounds::new(
            self.origin[0],
            self.origin[1],
            self.origin[0] + self.width as f64 * self.resolution,
            self.origin[1] + self.height as f64 * self.resolution,
        )
    }
}

/// A post-ground-removal point: world position and height above terrain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSample {
    pub x: f64,
    pub y: f64,
    pub h: f64,
}

/// Real-valued raster with a nodata mask.
///
/// Used for heights above terrain (max per cell) and for gradient
/// magnitudes. Nodata cells store `0.0` and must never be read as data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightGrid {
    pub geometry: GridGeometry,
    cells: Vec<f64>,
    nodata: Vec<bool>,
}

/// Raster of gradient magnitudes (m per one-cell step).
pub type GradientGrid = HeightGrid;

impl HeightGrid {
    /// Grid with every cell unobserved.
    pub fn empty(geometry: GridGeometry) -> Self {
        let n = geometry.len();
        Self { geometry, cells: vec![0.0; n], nodata: vec![true; n] }
    }

    /// Fully observed grid holding `value` everywhere.
    pub fn filled(geometry: GridGeometry, value: f64) -> Self {
        let n = geometry.len();
        Self { geometry, cells: vec![value; n], nodata: vec![false; n] }
    }

    /// Builds a grid from row-major values; `None` marks nodata.
    pub fn from_cells(geometry: GridGeometry, values: &[Option<f64>]) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::invalid(format!(
                "expected {} cells, got {}",
                geometry.len(),
                values.len()
            )));
        }
        let mut grid = Self::empty(geometry);
        for (k, v) in values.iter().enumerate() {
            if let Some(h) = *v {
                if !h.is_finite() || h < 0.0 {
                    return Err(Error::invalid(format!("cell {k} holds invalid height {h}")));
                }
                grid.cells[k] = h;
                grid.nodata[k] = false;
            }
        }
        Ok(grid)
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn resolution(&self) -> f64 {
        self.geometry.resolution
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = self.geometry.index(i, j);
        (!self.nodata[k]).then_some(self.cells[k])
    }

    pub fn set(&mut self, i: usize, j: usize, value: Option<f64>) {
        let k = self.geometry.index(i, j);
        match value {
            Some(v) => {
                debug_assert!(v.is_finite() && v >= 0.0);
                self.cells[k] = v;
                self.nodata[k] = false;
            }
            None => {
                self.cells[k] = 0.0;
                self.nodata[k] = true;
            }
        }
    }

    pub fn is_nodata(&self, i: usize, j: usize) -> bool {
        self.nodata[self.geometry.index(i, j)]
    }

    /// Row-major raw values; entries under the nodata mask are meaningless.
    pub fn raw_cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn nodata_mask(&self) -> &[bool] {
        &self.nodata
    }

    pub fn observed_count(&self) -> usize {
        self.nodata.iter().filter(|n| !**n).count()
    }

    /// Value at the cell containing world point `(x, y)`.
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        let (i, j) = self.geometry.cell_of(x, y)?;
        self.get(i, j)
    }

    /// Copy with a constant added to every observed cell.
    pub fn offset_by(&self, c: f64) -> Self {
        let mut out = self.clone();
        for (v, nd) in out.cells.iter_mut().zip(&out.nodata) {
            if !nd {
                *v += c;
            }
        }
        out
    }
}

/// Binary raster marking strong height gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeMap {
    pub geometry: GridGeometry,
    cells: Vec<u8>,
    nodata: Vec<bool>,
}

impl EdgeMap {
    /// Builds an edge map from row-major `{0,1}` cells and a nodata mask.
    pub fn from_parts(geometry: GridGeometry, cells: Vec<u8>, nodata: Vec<bool>) -> Result<Self> {
        if cells.len() != geometry.len() || nodata.len() != geometry.len() {
            return Err(Error::invalid("edge map buffers do not match geometry"));
        }
        if let Some(k) = cells.iter().zip(&nodata).position(|(c, nd)| *c > 1 || (*nd && *c != 0)) {
            return Err(Error::invalid(format!("edge cell {k} is not binary or is set under nodata")));
        }
        Ok(Self { geometry, cells, nodata })
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.cells[self.geometry.index(i, j)]
    }

    pub fn is_nodata(&self, i: usize, j: usize) -> bool {
        self.nodata[self.geometry.index(i, j)]
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn nodata_mask(&self) -> &[bool] {
        &self.nodata
    }

    pub fn edge_count(&self) -> usize {
        self.cells.iter().filter(|c| **c == 1).count()
    }

    pub fn observed_count(&self) -> usize {
        self.nodata.iter().filter(|n| !**n).count()
    }
}

/// Bins points into a max-height raster covering `bounds`.
///
/// Cells without samples are nodata. Points outside `bounds` are ignored;
/// points on the upper edge fall into the last row/column.
pub fn rasterize_points(points: &[PointSample], bounds: Bounds, resolution: f64) -> Result<HeightGrid> {
    if bounds.is_degenerate() {
        return Err(Error::invalid(format!("degenerate bounds {bounds:?}")));
    }
    let width = (bounds.width() / resolution).ceil().max(1.0) as usize;
    let height = (bounds.height() / resolution).ceil().max(1.0) as usize;
    let geometry = GridGeometry::new([bounds.min_x, bounds.min_y], resolution, width, height)?;
    let mut grid = HeightGrid::empty(geometry);

    for (n, p) in points.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite() && p.h.is_finite()) {
            return Err(Error::invalid(format!("point {n} is not finite: {p:?}")));
        }
        if !bounds.contains(p.x, p.y) {
            continue;
        }
        let i = (((p.x - bounds.min_x) / resolution) as usize).min(width - 1);
        let j = (((p.y - bounds.min_y) / resolution) as usize).min(height - 1);
        let k = geometry.index(i, j);
        // Heights below terrain are clamped: the grid stores clearance above ground.
        let h = p.h.max(0.0);
        if grid.nodata[k] || h > grid.cells[k] {
            grid.cells[k] = h;
            grid.nodata[k] = false;
        }
    }
    Ok(grid)
}

/// Max absolute height difference to the 4-neighborhood.
///
/// Only pairs with both cells observed contribute; a cell with no such pair
/// is nodata in the output.
pub fn gradient_magnitude(grid: &HeightGrid) -> GradientGrid {
    let geo = grid.geometry;
    let (w, h) = (geo.width, geo.height);
    let mut out = HeightGrid::empty(geo);
    for j in 0..h {
        for i in 0..w {
            let k = geo.index(i, j);
            if grid.nodata[k] {
                continue;
            }
            let here = grid.cells[k];
            let mut best: Option<f64> = None;
            let neighbors = [
                (i > 0).then(|| k - 1),
                (i + 1 < w).then(|| k + 1),
                (j > 0).then(|| k - w),
                (j + 1 < h).then(|| k + w),
            ];
            for n in neighbors.into_iter().flatten() {
                if grid.nodata[n] {
                    continue;
                }
                let d = (here - grid.cells[n]).abs();
                best = Some(best.map_or(d, |b: f64| b.max(d)));
            }
            if let Some(g) = best {
                out.cells[k] = g;
                out.nodata[k] = false;
            }
        }
    }
    out
}

/// Marks cells whose gradient strictly exceeds `threshold`.
pub fn binarize_edges(gradients: &GradientGrid, threshold: f64) -> EdgeMap {
    assert!(threshold > 0.0 && threshold.is_finite(), "edge threshold must be positive, got {threshold}");
    let cells = gradients
        .cells
        .iter()
        .zip(&gradients.nodata)
        .map(|(g, nd)| u8::from(!nd && *g > threshold))
        .collect();
    EdgeMap { geometry: gradients.geometry, cells, nodata: gradients.nodata.clone() }
}

/// Resamples a body-frame grid into the north-aligned frame.
///
/// `heading` is the yaw of the grid's +x axis, counter-clockwise from world
/// east. The output cell at offset `o` from the center cell takes the value
/// of the source cell nearest to `R(-heading)·o`; sources outside the grid
/// yield nodata. The georeference is kept, so a local map whose origin was
/// set around the vehicle position becomes correctly georeferenced.
pub fn rotate_to_north(grid: &HeightGrid, heading: f64) -> HeightGrid {
    assert!(heading.is_finite(), "heading must be finite");
    if heading == 0.0 {
        return grid.clone();
    }
    let geo = grid.geometry;
    let (ci, cj) = geo.center_cell();
    let (s, c) = heading.sin_cos();
    let mut out = HeightGrid::empty(geo);
    for j in 0..geo.height {
        let oy = j as f64 - cj as f64;
        for i in 0..geo.width {
            let ox = i as f64 - ci as f64;
            // R(-heading) · o
            let bx = c * ox + s * oy;
            let by = -s * ox + c * oy;
            let si = (ci as f64 + bx).round();
            let sj = (cj as f64 + by).round();
            if si < 0.0 || sj < 0.0 || si >= geo.width as f64 || sj >= geo.height as f64 {
                continue;
            }
            let src = geo.index(si as usize, sj as usize);
            if !grid.nodata[src] {
                let dst = geo.index(i, j);
                out.cells[dst] = grid.cells[src];
                out.nodata[dst] = false;
            }
        }
    }
    out
}
