//! Deterministic procedural 2.5D world.
//!
//! Obstacles are axis-aligned boxes (buildings) and discs (tree crowns)
//! standing on flat ground. The world stores its own ground-truth height
//! raster, from which both the prior DEM and the simulated LiDAR local map
//! are derived.

mod errors;
mod sensor;

pub use errors::{compass_bias, emit_compass, emit_odometry, CompassSource, ErrorModel, OdometrySource, MAX_COMPASS_BIAS};
pub use sensor::{sense_local, SensorConfig};

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{Bounds, GridGeometry, HeightGrid, DEFAULT_RESOLUTION};

/// Default top speed of the simulated vehicle (m/s).
pub const DEFAULT_MAX_SPEED: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainClass {
    Urban,
    Forest,
    OpenField,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub class: TerrainClass,
    pub bounds: Bounds,
    /// Obstacles per square meter.
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub extent: Bounds,
    #[serde(default)]
    pub regions: Vec<RegionSpec>,
    /// Set by the scenario seed, not read from config files.
    #[serde(skip)]
    pub seed: u64,
    /// Cell size of the ground-truth raster.
    #[serde(default = "default_resolution")]
    pub resolution: f64,
}

fn default_resolution() -> f64 {
    DEFAULT_RESOLUTION
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Obstacle {
    Box { min: [f64; 2], max: [f64; 2], height: f64 },
    Disc { center: [f64; 2], radius: f64, height: f64 },
}

impl Obstacle {
    pub fn height(&self) -> f64 {
        match *self {
            Obstacle::Box { height, .. } | Obstacle::Disc { height, .. } => height,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Obstacle::Box { min, max, .. } => x >= min[0] && x <= max[0] && y >= min[1] && y <= max[1],
            Obstacle::Disc { center, radius, .. } => (x - center[0]).hypot(y - center[1]) <= radius,
        }
    }

    fn footprint(&self) -> Bounds {
        match *self {
            Obstacle::Box { min, max, .. } => Bounds::new(min[0], min[1], max[0], max[1]),
            Obstacle::Disc { center, radius, .. } => {
                Bounds::new(center[0] - radius, center[1] - radius, center[0] + radius, center[1] + radius)
            }
        }
    }

    /// Whether the footprint shares positive area with the rectangle.
    fn overlaps_cell(&self, cell: &Bounds) -> bool {
        match *self {
            Obstacle::Box { min, max, .. } => {
                min[0] < cell.max_x && max[0] > cell.min_x && min[1] < cell.max_y && max[1] > cell.min_y
            }
            Obstacle::Disc { center, radius, .. } => {
                let dx = (cell.min_x - center[0]).max(0.0).max(center[0] - cell.max_x);
                let dy = (cell.min_y - center[1]).max(0.0).max(center[1] - cell.max_y);
                dx.hypot(dy) < radius
            }
        }
    }
}

/// Immutable world: obstacle list, terrain classes and the truth raster.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldModel {
    pub extent: Bounds,
    pub obstacles: Vec<Obstacle>,
    pub regions: Vec<RegionSpec>,
    pub seed: u64,
    truth: HeightGrid,
}

impl WorldModel {
    /// World from an explicit obstacle list (used by tests and tools).
    pub fn from_obstacles(extent: Bounds, obstacles: Vec<Obstacle>, resolution: f64) -> Result<Self> {
        if extent.is_degenerate() {
            return Err(Error::invalid(format!("zero-area world extent {extent:?}")));
        }
        for o in &obstacles {
            let f = o.footprint();
            if !(o.height() > 0.0 && o.height().is_finite()) {
                return Err(Error::invalid(format!("obstacle height must be positive: {o:?}")));
            }
            if f.min_x < extent.min_x || f.min_y < extent.min_y || f.max_x > extent.max_x || f.max_y > extent.max_y {
                return Err(Error::invalid(format!("obstacle outside world extent: {o:?}")));
            }
        }
        let truth = rasterize_obstacles(extent, &obstacles, resolution)?;
        Ok(Self { extent, obstacles, regions: Vec::new(), seed: 0, truth })
    }

    /// Ground-truth max-height raster at the world's native resolution.
    pub fn truth(&self) -> &HeightGrid {
        &self.truth
    }

    /// Terrain class at a point; later regions take precedence.
    pub fn terrain_at(&self, x: f64, y: f64) -> TerrainClass {
        self.regions.iter().rev().find(|r| r.bounds.contains(x, y)).map_or(TerrainClass::OpenField, |r| r.class)
    }
}

fn snap(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Generates a world from its spec; identical seeds give identical worlds.
///
/// Urban regions receive boxes 5–20 m tall with 8–25 m footprints, forest
/// regions discs 8–25 m tall with 1.5–4 m radii, open field nothing. Every
/// urban or forest region of at least 50×50 m gets at least one obstacle.
/// Geometry is snapped to 0.1 m.
pub fn build_world(spec: &WorldSpec) -> Result<WorldModel> {
    if spec.extent.is_degenerate() {
        return Err(Error::invalid(format!("zero-area world extent {:?}", spec.extent)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut obstacles = Vec::new();
    for region in &spec.regions {
        if !(region.density >= 0.0 && region.density.is_finite()) {
            return Err(Error::invalid(format!("region density must be >= 0, got {}", region.density)));
        }
        let b = clip(region.bounds, spec.extent);
        if b.is_degenerate() {
            continue;
        }
        let area = b.width() * b.height();
        let mut count = (region.density * area).round() as usize;
        if region.class != TerrainClass::OpenField && b.width() >= 50.0 && b.height() >= 50.0 {
            count = count.max(1);
        }
        for _ in 0..count {
            let o = match region.class {
                TerrainClass::OpenField => break,
                TerrainClass::Urban => {
                    let w = snap(rng.random_range(8.0..=25.0f64).min(b.width()));
                    let h = snap(rng.random_range(8.0..=25.0f64).min(b.height()));
                    let x0 = snap(rng.random_range(b.min_x..=(b.max_x - w).max(b.min_x))).max(b.min_x);
                    let y0 = snap(rng.random_range(b.min_y..=(b.max_y - h).max(b.min_y))).max(b.min_y);
                    let height = 20.0 - 15.0 * rng.random::<f64>();
                    Obstacle::Box {
                        min: [x0, y0],
                        max: [(x0 + w).min(b.max_x), (y0 + h).min(b.max_y)],
                        height,
                    }
                }
                TerrainClass::Forest => {
                    let r = snap(rng.random_range(1.5..=4.0f64)).min(b.width() / 2.0).min(b.height() / 2.0);
                    let cx = snap(rng.random_range((b.min_x + r)..=(b.max_x - r))).clamp(b.min_x + r, b.max_x - r);
                    let cy = snap(rng.random_range((b.min_y + r)..=(b.max_y - r))).clamp(b.min_y + r, b.max_y - r);
                    let height = 25.0 - 17.0 * rng.random::<f64>();
                    Obstacle::Disc { center: [cx, cy], radius: r, height }
                }
            };
            obstacles.push(o);
        }
    }
    let mut world = WorldModel::from_obstacles(spec.extent, obstacles, spec.resolution)?;
    world.regions = spec.regions.clone();
    world.seed = spec.seed;
    Ok(world)
}

fn clip(a: Bounds, b: Bounds) -> Bounds {
    Bounds::new(a.min_x.max(b.min_x), a.min_y.max(b.min_y), a.max_x.min(b.max_x), a.max_y.min(b.max_y))
}

fn rasterize_obstacles(extent: Bounds, obstacles: &[Obstacle], resolution: f64) -> Result<HeightGrid> {
    let width = (extent.width() / resolution).ceil().max(1.0) as usize;
    let height = (extent.height() / resolution).ceil().max(1.0) as usize;
    let geo = GridGeometry::new([extent.min_x, extent.min_y], resolution, width, height)?;
    let mut grid = HeightGrid::filled(geo, 0.0);
    for o in obstacles {
        let f = o.footprint();
        let i0 = ((f.min_x - geo.origin[0]) / resolution).floor().max(0.0) as usize;
        let j0 = ((f.min_y - geo.origin[1]) / resolution).floor().max(0.0) as usize;
        let i1 = (((f.max_x - geo.origin[0]) / resolution).ceil() as usize).min(width);
        let j1 = (((f.max_y - geo.origin[1]) / resolution).ceil() as usize).min(height);
        for j in j0..j1 {
            for i in i0..i1 {
                let [cx, cy] = geo.cell_center(i, j);
                let half = resolution / 2.0;
                let cell = Bounds::new(cx - half, cy - half, cx + half, cy + half);
                if o.overlaps_cell(&cell) && grid.get(i, j).is_some_and(|h| o.height() > h) {
                    grid.set(i, j, Some(o.height()));
                }
            }
        }
    }
    Ok(grid)
}

/// Exact per-cell maximum obstacle height over the world extent; free
/// ground is 0 and every cell is observed.
pub fn sample_prior_dem(world: &WorldModel, resolution: f64) -> Result<HeightGrid> {
    if (resolution - world.truth.resolution()).abs() < 1e-12 {
        return Ok(world.truth.clone());
    }
    rasterize_obstacles(world.extent, &world.obstacles, resolution)
}

/// Ground-truth vehicle pose; `heading` is counter-clockwise from east.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruePose {
    pub position: Vector2<f64>,
    pub heading: f64,
}

impl TruePose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { position: Vector2::new(x, y), heading }
    }
}

/// Point-mass kinematics with a speed clamp; heading follows the direction
/// of travel and is kept while hovering.
pub fn step_motion(pose: TruePose, velocity: Vector2<f64>, dt: f64, max_speed: f64) -> TruePose {
    let speed = velocity.norm();
    if speed == 0.0 || dt == 0.0 {
        return pose;
    }
    let v = if speed > max_speed { velocity * (max_speed / speed) } else { velocity };
    TruePose { position: pose.position + v * dt, heading: v.y.atan2(v.x) }
}
