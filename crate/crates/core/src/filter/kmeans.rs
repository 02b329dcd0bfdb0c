//! Lloyd's K-means on 2D points with k-means++ seeding.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iterations: usize,
    /// Stop once no centroid moves farther than this (m).
    pub tolerance: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        Self { k, max_iterations: 50, tolerance: 1e-6, seed: 0x6b6d_6561_6e73 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vector2<f64>>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

fn nearest(p: &Vector2<f64>, centroids: &[Vector2<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, q) in centroids.iter().enumerate() {
        let d = (p - q).norm_squared();
        // strict: ties keep the lower index
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centroids(points: &[Vector2<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vector2<f64>> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| (p - centroids[0]).norm_squared()).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            // every point coincides with a chosen centroid
            0
        };
        let c = points[pick];
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - c).norm_squared());
        }
    }
    centroids
}

/// Clusters `points`; `k` is clamped to `1..=points.len()`.
pub fn kmeans(points: &[Vector2<f64>], config: KMeansConfig) -> Clustering {
    assert!(!points.is_empty(), "kmeans needs at least one point");
    let k = config.k.clamp(1, points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignment = vec![0usize; points.len()];
    let mut iterations = 0;

    for _ in 0..config.max_iterations {
        iterations += 1;
        for (a, p) in assignment.iter_mut().zip(points) {
            *a = nearest(p, &centroids).0;
        }
        let mut sums = vec![Vector2::zeros(); k];
        let mut counts = vec![0usize; k];
        for (a, p) in assignment.iter().zip(points) {
            sums[*a] += p;
            counts[*a] += 1;
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] > 0 {
                let next = sums[c] / counts[c] as f64;
                shift = shift.max((next - centroids[c]).norm());
                centroids[c] = next;
            }
        }
        if shift <= config.tolerance {
            break;
        }
    }
    for (a, p) in assignment.iter_mut().zip(points) {
        *a = nearest(p, &centroids).0;
    }
    Clustering { centroids, assignment, iterations }
}
