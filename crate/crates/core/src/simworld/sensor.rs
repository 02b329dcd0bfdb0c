//! Simulated LiDAR local heightmap.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{TruePose, WorldModel};
use crate::error::{Error, Result};
use crate::geodata::{GridGeometry, HeightGrid, DEFAULT_RESOLUTION};

const MIN_EXTENT: f64 = 30.0;
const MAX_EXTENT: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    /// Side length of the square local map (m).
    pub extent: f64,
    pub resolution: f64,
    /// Height noise standard deviation (m).
    pub height_noise: f64,
    /// Per-cell dropout probability.
    pub dropout: f64,
    /// Horizontal sensing range (m).
    pub range: f64,
    /// Hide cells whose line of sight from the sensor is blocked.
    pub occlusion: bool,
    /// Sensor height above ground (m).
    pub altitude: f64,
    /// Accept extents outside 30–60 m.
    pub allow_any_extent: bool,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            extent: 40.0,
            resolution: DEFAULT_RESOLUTION,
            height_noise: 0.0,
            dropout: 0.0,
            range: 40.0,
            occlusion: false,
            altitude: 30.0,
            allow_any_extent: false,
            seed: 0,
        }
    }
}

impl SensorConfig {
    /// Noiseless, full-range, occlusion-free sensor of the given extent.
    pub fn perfect(extent: f64) -> Self {
        Self { extent, range: f64::INFINITY, allow_any_extent: true, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extent > 0.0 && self.extent.is_finite()) || !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::Config("sensor extent and resolution must be positive".into()));
        }
        if !self.allow_any_extent && !(MIN_EXTENT..=MAX_EXTENT).contains(&self.extent) {
            return Err(Error::Config(format!(
                "sensor extent {} m outside {MIN_EXTENT}–{MAX_EXTENT} m (set allow_any_extent to override)",
                self.extent
            )));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout probability {} outside [0, 1]", self.dropout)));
        }
        if !(self.height_noise >= 0.0) || !(self.range >= 0.0) || !(self.altitude >= 0.0) {
            return Err(Error::Config("sensor noise, range and altitude must be >= 0".into()));
        }
        Ok(())
    }

    /// Cells per side of the local map.
    pub fn cells(&self) -> usize {
        (self.extent / self.resolution).round().max(1.0) as usize
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn pose_seed(seed: u64, pose: &TruePose) -> u64 {
    [pose.position.x, pose.position.y, pose.heading].iter().fold(mix(seed), |acc, v| mix(acc ^ v.to_bits()))
}

/// Local heightmap around `pose` in the body frame.
///
/// Cell `(i, j)` sits at body offset `((i - c)·r, (j - c)·r)` from the
/// vehicle, `c` being the center cell, and is mapped to the world through
/// `R(heading)`. With heading 0 the grid is georeferenced in the world.
/// Outside the world, beyond `range`, behind an obstacle (when occlusion
/// is on) or dropped, a cell is nodata. Noise and dropout are drawn from a
/// stream keyed on `(seed, pose)`.
pub fn sense_local(world: &WorldModel, pose: &TruePose, cfg: &SensorConfig) -> Result<HeightGrid> {
    cfg.validate()?;
    let n = cfg.cells();
    let r = cfg.resolution;
    let c = (n / 2) as f64;
    let p = pose.position;
    let geo = GridGeometry::new([p.x - (c + 0.5) * r, p.y - (c + 0.5) * r], r, n, n)?;
    let mut out = HeightGrid::empty(geo);
    let truth = world.truth();
    let (s, co) = pose.heading.sin_cos();
    let sensor_z = cfg.altitude.max(truth.sample(p.x, p.y).unwrap_or(0.0) + 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(pose_seed(cfg.seed, pose));
    for j in 0..n {
        for i in 0..n {
            let b = Vector2::new((i as f64 - c) * r, (j as f64 - c) * r);
            let wpt = p + Vector2::new(co * b.x - s * b.y, s * b.x + co * b.y);
            // Draw both variates for every cell so the stream layout does not
            // depend on which cells are visible.
            let drop = rng.random::<f64>() < cfg.dropout;
            let noise: f64 = rng.sample(StandardNormal);
            if b.norm() > cfg.range || drop {
                continue;
            }
            let Some(h) = truth.sample(wpt.x, wpt.y) else { continue };
            if cfg.occlusion && occluded(truth, p, sensor_z, wpt, h) {
                continue;
            }
            out.set(i, j, Some((h + cfg.height_noise * noise).max(0.0)));
        }
    }
    Ok(out)
}

/// Whether the sight line from the sensor to the top of the target passes
/// below any other cell's height. Walks every cell the line crosses; cells
/// it only touches at a corner or edge are ignored.
pub(crate) fn occluded(truth: &HeightGrid, from: Vector2<f64>, z0: f64, to: Vector2<f64>, z1: f64) -> bool {
    const EPS: f64 = 1e-9;
    let geo = &truth.geometry;
    let r = geo.resolution;
    let d = to - from;
    let rel = (from - Vector2::new(geo.origin[0], geo.origin[1])) / r;
    let (mut ix, mut iy) = (rel.x.floor() as i64, rel.y.floor() as i64);
    let target = geo.cell_of(to.x, to.y);
    let axis = |pos: f64, delta: f64, cell: i64| -> (i64, f64, f64) {
        if delta > 0.0 {
            (1, ((cell + 1) as f64 - pos) * r / delta, r / delta)
        } else if delta < 0.0 {
            (-1, (cell as f64 - pos) * r / delta, -r / delta)
        } else {
            (0, f64::INFINITY, f64::INFINITY)
        }
    };
    let (sx, mut tx, dtx) = axis(rel.x, d.x, ix);
    let (sy, mut ty, dty) = axis(rel.y, d.y, iy);
    let mut t0 = 0.0;
    loop {
        let t1 = tx.min(ty).min(1.0);
        let inside = ix >= 0 && iy >= 0 && (ix as usize) < geo.width && (iy as usize) < geo.height;
        if inside && t1 - t0 > EPS && target != Some((ix as usize, iy as usize)) {
            let line = z0 + (z1 - z0) * if z1 < z0 { t1 } else { t0 };
            if truth.get(ix as usize, iy as usize).is_some_and(|h| h > line + EPS) {
                return true;
            }
        }
        if t1 >= 1.0 {
            return false;
        }
        if tx < ty {
            ix += sx;
            t0 = tx;
            tx += dtx;
        } else if ty < tx {
            iy += sy;
            t0 = ty;
            ty += dty;
        } else {
            ix += sx;
            iy += sy;
            t0 = tx;
            tx += dtx;
            ty += dty;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{rotate_to_north, Bounds};
    use crate::simworld::{build_world, Obstacle, RegionSpec, TerrainClass, WorldSpec};

    fn urban(seed: u64) -> WorldModel {
        let extent = Bounds::new(0.0, 0.0, 200.0, 200.0);
        build_world(&WorldSpec {
            extent,
            regions: vec![RegionSpec { class: TerrainClass::Urban, bounds: extent, density: 0.003 }],
            seed,
            resolution: 1.0,
        })
        .unwrap()
    }

    fn patch(world: &WorldModel, ci: usize, cj: usize, n: usize) -> Vec<Option<f64>> {
        let c = n / 2;
        let mut v = Vec::new();
        for j in 0..n {
            for i in 0..n {
                v.push(world.truth().get(ci + i - c, cj + j - c));
            }
        }
        v
    }

    fn cells(g: &HeightGrid) -> Vec<Option<f64>> {
        (0..g.height()).flat_map(|j| (0..g.width()).map(move |i| g.get(i, j))).collect()
    }

    #[test]
    fn perfect_sensor_is_the_prior_patch() {
        let w = urban(3);
        let pose = TruePose::new(100.5, 80.5, 0.0);
        let local = sense_local(&w, &pose, &SensorConfig::perfect(40.0)).unwrap();
        assert_eq!(local.width(), 40);
        assert_eq!(cells(&local), patch(&w, 100, 80, 40));
        // georeferenced when heading is 0
        assert_eq!(local.geometry.cell_center(20, 20), [100.5, 80.5]);
    }

    #[test]
    fn quarter_turn_sensing_rotates_back() {
        let w = urban(4);
        let pose = TruePose::new(90.5, 110.5, std::f64::consts::FRAC_PI_2);
        let local = sense_local(&w, &pose, &SensorConfig::perfect(41.0)).unwrap();
        let north = rotate_to_north(&local, pose.heading);
        assert_eq!(cells(&north), patch(&w, 90, 110, 41));
    }

    #[test]
    fn full_dropout_is_all_nodata() {
        let w = urban(5);
        let cfg = SensorConfig { dropout: 1.0, ..Default::default() };
        let local = sense_local(&w, &TruePose::new(100.0, 100.0, 0.4), &cfg).unwrap();
        assert_eq!(local.observed_count(), 0);
    }

    #[test]
    fn range_and_world_edge() {
        let w = urban(6);
        let cfg = SensorConfig { range: 10.0, ..SensorConfig::perfect(40.0) };
        let local = sense_local(&w, &TruePose::new(5.5, 100.5, 0.0), &cfg).unwrap();
        for j in 0..40 {
            for i in 0..40 {
                let (dx, dy) = (i as f64 - 20.0, j as f64 - 20.0);
                let inside_world = i >= 15;
                let expect = dx.hypot(dy) <= 10.0 && inside_world;
                assert_eq!(!local.is_nodata(i, j), expect, "({i},{j})");
            }
        }
    }

    #[test]
    fn deterministic_per_pose() {
        let w = urban(7);
        let cfg = SensorConfig { height_noise: 0.3, dropout: 0.2, seed: 11, ..Default::default() };
        let pose = TruePose::new(100.2, 99.7, 1.0);
        assert_eq!(sense_local(&w, &pose, &cfg).unwrap(), sense_local(&w, &pose, &cfg).unwrap());
        let other = TruePose::new(100.2, 99.7, 1.0001);
        assert_ne!(sense_local(&w, &pose, &cfg).unwrap(), sense_local(&w, &other, &cfg).unwrap());
    }

    /// Brute force over every cell: clip the sight line to the cell square
    /// (slab method) and compare the lower end of the line with the height.
    fn clip_oracle(truth: &HeightGrid, from: [f64; 2], z0: f64, to: [f64; 2]) -> bool {
        let g = truth.geometry;
        let z1 = truth.sample(to[0], to[1]).unwrap();
        let target = g.cell_of(to[0], to[1]).unwrap();
        for j in 0..g.height {
            for i in 0..g.width {
                if (i, j) == target {
                    continue;
                }
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                for k in 0..2 {
                    let min = g.origin[k] + [i, j][k] as f64 * g.resolution;
                    let max = min + g.resolution;
                    let dk = to[k] - from[k];
                    if dk == 0.0 {
                        if from[k] < min || from[k] >= max {
                            hi = -1.0;
                        }
                    } else {
                        let (a, b) = ((min - from[k]) / dk, (max - from[k]) / dk);
                        lo = lo.max(a.min(b));
                        hi = hi.min(a.max(b));
                    }
                }
                if hi - lo > 1e-9 {
                    let line = (z0 + (z1 - z0) * lo).min(z0 + (z1 - z0) * hi);
                    if truth.get(i, j).unwrap() > line + 1e-9 {
                        return true;
                    }
                }
            }
        }
        false
    }

    #[test]
    fn wall_hides_what_is_behind_it() {
        // 20 m wall 5 m east of the vehicle, sensor at 10 m.
        let wall = Obstacle::Box { min: [55.0, 30.0], max: [57.0, 70.0], height: 20.0 };
        let w = WorldModel::from_obstacles(Bounds::new(0.0, 0.0, 100.0, 100.0), vec![wall], 1.0).unwrap();
        let cfg = SensorConfig { occlusion: true, altitude: 10.0, ..SensorConfig::perfect(40.0) };
        let pose = TruePose::new(50.5, 50.5, 0.0);
        let local = sense_local(&w, &pose, &cfg).unwrap();
        let truth = w.truth();
        for j in 0..40 {
            for i in 0..40 {
                let [x, y] = local.geometry.cell_center(i, j);
                let blocked = clip_oracle(truth, [50.5, 50.5], 10.0, [x, y]);
                assert_eq!(local.is_nodata(i, j), blocked, "({i},{j})");
            }
        }
        // the wall itself is visible, the ground right behind it is not
        assert_eq!(local.get(25, 20), Some(20.0));
        assert!(local.is_nodata(30, 20));
        assert_eq!(local.get(10, 20), Some(0.0));
    }

    #[test]
    fn occlusion_matches_oracle_in_a_random_town() {
        let w = urban(9);
        let cfg = SensorConfig { occlusion: true, altitude: 12.0, ..SensorConfig::perfect(30.0) };
        let pose = TruePose::new(101.3, 98.6, 0.7);
        let local = sense_local(&w, &pose, &cfg).unwrap();
        let z0 = 12.0f64.max(w.truth().sample(101.3, 98.6).unwrap() + 1.0);
        let (s, c) = pose.heading.sin_cos();
        let mut hidden = 0;
        for j in 0..30 {
            for i in 0..30 {
                let (bx, by) = (i as f64 - 15.0, j as f64 - 15.0);
                let to = [101.3 + c * bx - s * by, 98.6 + s * bx + c * by];
                let blocked = clip_oracle(w.truth(), [101.3, 98.6], z0, to);
                assert_eq!(local.is_nodata(i, j), blocked, "({i},{j})");
                hidden += usize::from(blocked);
            }
        }
        assert!(hidden > 0);
    }

    #[test]
    fn extent_limits() {
        let w = urban(8);
        let cfg = SensorConfig { extent: 80.0, ..Default::default() };
        assert!(sense_local(&w, &TruePose::new(100.0, 100.0, 0.0), &cfg).is_err());
        let cfg = SensorConfig { extent: 80.0, allow_any_extent: true, ..Default::default() };
        assert!(sense_local(&w, &TruePose::new(100.0, 100.0, 0.0), &cfg).is_ok());
        assert!(SensorConfig { dropout: 1.5, ..Default::default() }.validate().is_err());
    }
}
