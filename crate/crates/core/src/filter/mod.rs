//! Clustered particle filter over 2D world positions.
//!
//! Heading is not part of the state: the compass value is applied when
//! propagating and passed through to the estimate. Particles are translated
//! by compass-rotated odometry, weighted by a normalized similarity map,
//! and resampled (systematic, with Gaussian jitter) once enough odometry
//! distance has accumulated. The estimate is the weighted centroid of the
//! heaviest K-means cluster.
//!
//! Angles are counter-clockwise from world +x (east); body-frame vectors are
//! rotated into the world frame by `R(heading)`.

mod kmeans;

pub use kmeans::{kmeans, Clustering, KMeansConfig};

use std::io::Write;

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::SimilarityMap;

pub const DEFAULT_PARTICLES: usize = 2000;
pub const DEFAULT_CLUSTERS: usize = 3;
/// Odometry distance between resampling steps (m).
pub const DEFAULT_RESAMPLE_DISTANCE: f64 = 10.0;
/// Isotropic jitter standard deviation per resample interval (m).
pub const DEFAULT_ODOMETRY_STDDEV: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: Vector2<f64>,
    pub weight: f64,
}

/// Odometry translation in the body frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OdometryDelta {
    pub dx: f64,
    pub dy: f64,
}

impl OdometryDelta {
    pub fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }

    pub fn norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    /// The increment expressed in the world frame for a given heading.
    pub fn rotated(&self, heading: f64) -> Vector2<f64> {
        let (s, c) = heading.sin_cos();
        Vector2::new(c * self.dx - s * self.dy, s * self.dx + c * self.dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub position: Vector2<f64>,
    pub heading: f64,
    /// Fraction of the total weight in the selected cluster.
    pub cluster_share: f64,
}

/// 2x2 covariance with its lower Cholesky-style factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Covariance2 {
    matrix: Matrix2<f64>,
    factor: Matrix2<f64>,
}

impl Covariance2 {
    pub fn new(m: [[f64; 2]; 2]) -> Result<Self> {
        let [[a, b], [b2, d]] = m;
        let scale = a.abs().max(d.abs()).max(1e-300);
        let finite = m.iter().flatten().all(|v| v.is_finite());
        let psd = a >= 0.0 && d >= 0.0 && a * d - b * b >= -1e-12 * scale * scale;
        if !finite || (b - b2).abs() > 1e-12 * scale || !psd {
            return Err(Error::NotPsd(m));
        }
        let factor = if a > 0.0 {
            let l11 = a.sqrt();
            let l21 = b / l11;
            Matrix2::new(l11, 0.0, l21, (d - l21 * l21).max(0.0).sqrt())
        } else {
            if b != 0.0 {
                return Err(Error::NotPsd(m));
            }
            Matrix2::new(0.0, 0.0, 0.0, d.sqrt())
        };
        Ok(Self { matrix: Matrix2::new(a, b, b2, d), factor })
    }

    pub fn isotropic(stddev: f64) -> Result<Self> {
        let v = stddev * stddev;
        Self::new([[v, 0.0], [0.0, v]])
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        self.matrix
    }

    fn sample(&self, rng: &mut impl Rng) -> Vector2<f64> {
        let z = Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
        self.factor * z
    }
}

/// Offspring indices of systematic resampling.
///
/// `u0 ∈ [0, 1)` is the single uniform draw; the pointers are
/// `(u0 + m) / n_out` for `m = 0..n_out` over the cumulative normalized
/// weights. Each index appears `⌊n_out·w_i⌋` or `⌈n_out·w_i⌉` times.
pub fn systematic_indices(weights: &[f64], n_out: usize, u0: f64) -> Vec<usize> {
    assert!(!weights.is_empty(), "no weights to resample");
    let total: f64 = weights.iter().sum();
    assert!(total > 0.0 && total.is_finite(), "weights must have a positive finite sum");
    let mut out = Vec::with_capacity(n_out);
    let mut cumulative = weights[0] / total;
    let mut i = 0;
    for m in 0..n_out {
        let u = (u0 + m as f64) / n_out as f64;
        while u >= cumulative && i + 1 < weights.len() {
            i += 1;
            cumulative += weights[i] / total;
        }
        out.push(i);
    }
    out
}

/// Weighted position hypotheses plus resampling bookkeeping.
#[derive(Clone, Debug)]
pub struct ParticleSet {
    particles: Vec<Particle>,
    distance_since_resample: f64,
    resample_distance: f64,
    last_heading: f64,
    rng: ChaCha8Rng,
}

impl ParticleSet {
    /// `n` particles from an isotropic Gaussian around `center`, equal weights.
    pub fn init(center: Vector2<f64>, stddev: f64, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("particle count must be >= 1"));
        }
        if !(stddev >= 0.0 && stddev.is_finite()) || !center.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("initial center and stddev must be finite, stddev >= 0"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = 1.0 / n as f64;
        let particles = (0..n)
            .map(|_| {
                let z = Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
                Particle { position: center + z * stddev, weight: w }
            })
            .collect();
        Ok(Self {
            particles,
            distance_since_resample: 0.0,
            resample_distance: DEFAULT_RESAMPLE_DISTANCE,
            last_heading: 0.0,
            rng,
        })
    }

    pub fn with_resample_distance(mut self, distance: f64) -> Self {
        self.resample_distance = distance;
        self
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn distance_since_resample(&self) -> f64 {
        self.distance_since_resample
    }

    /// Translates every particle by the compass-rotated odometry increment.
    pub fn propagate(&mut self, delta: OdometryDelta, compass: f64) {
        assert!(compass.is_finite(), "compass heading must be finite");
        self.last_heading = compass;
        let shift = delta.rotated(compass);
        for p in &mut self.particles {
            p.position += shift;
        }
        self.distance_since_resample += delta.norm();
    }

    /// Sets each weight to the similarity at the particle's cell.
    pub fn weight_update(&mut self, sim: &SimilarityMap) {
        for p in &mut self.particles {
            p.weight = sim.lookup(p.position.x, p.position.y);
        }
    }

    pub fn should_resample(&self) -> bool {
        self.distance_since_resample >= self.resample_distance
    }

    /// Systematic resampling followed by jitter drawn from `odo_cov`.
    pub fn resample(&mut self, odo_cov: &Covariance2) {
        let n = self.particles.len();
        let weights: Vec<f64> = self.particles.iter().map(|p| p.weight).collect();
        let u0: f64 = self.rng.random();
        let idx = systematic_indices(&weights, n, u0);
        let w = 1.0 / n as f64;
        let next = idx
            .into_iter()
            .map(|i| Particle { position: self.particles[i].position + odo_cov.sample(&mut self.rng), weight: w })
            .collect();
        self.particles = next;
        self.distance_since_resample = 0.0;
    }

    /// Weighted centroid of the heaviest of `k` clusters.
    pub fn estimate(&self, k: usize) -> PoseEstimate {
        let points: Vec<Vector2<f64>> = self.particles.iter().map(|p| p.position).collect();
        let clustering = kmeans(&points, KMeansConfig::new(k));
        let kk = clustering.centroids.len();
        let mut mass = vec![0.0; kk];
        let mut moment = vec![Vector2::zeros(); kk];
        for (p, c) in self.particles.iter().zip(&clustering.assignment) {
            mass[*c] += p.weight;
            moment[*c] += p.position * p.weight;
        }
        let total: f64 = mass.iter().sum();
        let mut best = 0;
        for c in 1..kk {
            if mass[c] > mass[best] {
                best = c;
            }
        }
        let (position, share) = if mass[best] > 0.0 {
            (moment[best] / mass[best], mass[best] / total)
        } else {
            (clustering.centroids[best], 1.0)
        };
        PoseEstimate { position, heading: self.last_heading, cluster_share: share }
    }

    /// Weighted mean of all particles.
    pub fn weighted_mean(&self) -> Vector2<f64> {
        let total: f64 = self.particles.iter().map(|p| p.weight).sum();
        self.particles.iter().map(|p| p.position * p.weight).sum::<Vector2<f64>>() / total
    }

    /// One `x,y,weight` row per particle.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "x,y,weight")?;
        for p in &self.particles {
            writeln!(out, "{},{},{}", p.position.x, p.position.y, p.weight)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    pub particles: usize,
    pub clusters: usize,
    pub resample_distance: f64,
    /// Resampling jitter covariance (m²).
    pub odometry_cov: [[f64; 2]; 2],
}

impl Default for FilterParams {
    fn default() -> Self {
        let v = DEFAULT_ODOMETRY_STDDEV * DEFAULT_ODOMETRY_STDDEV;
        Self {
            particles: DEFAULT_PARTICLES,
            clusters: DEFAULT_CLUSTERS,
            resample_distance: DEFAULT_RESAMPLE_DISTANCE,
            odometry_cov: [[v, 0.0], [0.0, v]],
        }
    }
}

/// A particle set bound to its tuning.
#[derive(Clone, Debug)]
pub struct ParticleFilter {
    set: ParticleSet,
    cov: Covariance2,
    clusters: usize,
}

impl ParticleFilter {
    pub fn new(center: Vector2<f64>, init_stddev: f64, params: &FilterParams, seed: u64) -> Result<Self> {
        if params.clusters == 0 || params.clusters > params.particles {
            return Err(Error::invalid(format!(
                "cluster count {} must lie in 1..={}",
                params.clusters, params.particles
            )));
        }
        if !(params.resample_distance > 0.0) {
            return Err(Error::invalid("resample distance must be positive"));
        }
        let cov = Covariance2::new(params.odometry_cov)?;
        let set = ParticleSet::init(center, init_stddev, params.particles, seed)?
            .with_resample_distance(params.resample_distance);
        Ok(Self { set, cov, clusters: params.clusters })
    }

    pub fn set(&self) -> &ParticleSet {
        &self.set
    }

    /// Propagate; weight if a similarity map is available; resample when due.
    pub fn step(&mut self, delta: OdometryDelta, compass: f64, sim: Option<&SimilarityMap>) -> PoseEstimate {
        self.set.propagate(delta, compass);
        if let Some(sim) = sim {
            self.set.weight_update(sim);
        }
        if self.set.should_resample() {
            self.set.resample(&self.cov);
        }
        self.set.estimate(self.clusters)
    }

    pub fn estimate(&self) -> PoseEstimate {
        self.set.estimate(self.clusters)
    }
}
