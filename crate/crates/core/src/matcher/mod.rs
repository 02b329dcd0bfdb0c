//! Registration of a local edge map against the prior edge map.
//!
//! The score of a placement `(x, y)` is the zero-mean correlation
//!
//! ```text
//! R(x,y) = Σ_{x',y'} (T(x',y') - T̄) · (I(x+x', y+y') - Ī_{x,y})
//! ```
//!
//! where `T̄` is the template mean and `Ī_{x,y}` the mean of the prior patch
//! under the template. Unobserved template cells are excluded from the sum
//! and from both means. Only placements where the template fits entirely
//! inside the prior are scored.
//!
//! A score is stored at the prior cell under the template's center cell, so
//! the resulting [`SimilarityMap`] shares the prior's georeference and can be
//! looked up directly at a world position.

mod fft;

pub use fft::PriorSpectrum;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{binarize_edges, gradient_magnitude, rotate_to_north, EdgeMap, GridGeometry, HeightGrid};

/// Probability floor applied after min-max normalization.
pub const SIMILARITY_FLOOR: f64 = 1e-3;

/// Default Gaussian blur width in cells.
pub const DEFAULT_BLUR_SIGMA: f64 = 2.0;

/// Above this many multiply-adds the spectral route is used.
const DIRECT_WORK_LIMIT: usize = 4_000_000;

/// Which evaluation route [`match_template_with`] takes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchRoute {
    /// Pick by problem size.
    Auto,
    /// Literal per-placement evaluation.
    Direct,
    /// Exact integer counts through a 2D FFT.
    Spectral,
}

/// Rectangle of cells holding a full template placement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidRegion {
    pub i0: usize,
    pub j0: usize,
    pub width: usize,
    pub height: usize,
}

impl ValidRegion {
    /// The whole grid.
    pub fn full(geometry: &GridGeometry) -> Self {
        Self { i0: 0, j0: 0, width: geometry.width, height: geometry.height }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.i0 && j >= self.j0 && i < self.i0 + self.width && j < self.j0 + self.height
    }
}

/// Match scores over prior-map cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMap {
    pub geometry: GridGeometry,
    pub valid: ValidRegion,
    scores: Vec<f64>,
}

impl SimilarityMap {
    /// Wraps precomputed row-major scores.
    pub fn from_scores(geometry: GridGeometry, valid: ValidRegion, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != geometry.len() {
            return Err(Error::invalid("score buffer does not match geometry"));
        }
        if valid.width == 0 || valid.height == 0 || valid.i0 + valid.width > geometry.width || valid.j0 + valid.height > geometry.height {
            return Err(Error::invalid(format!("valid region {valid:?} outside the grid")));
        }
        Ok(Self { geometry, valid, scores })
    }

    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.scores[self.geometry.index(i, j)]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.valid.contains(i, j)
    }

    pub fn valid_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let v = self.valid;
        (v.j0..v.j0 + v.height).flat_map(move |j| (v.i0..v.i0 + v.width).map(move |i| (i, j)))
    }

    /// Valid cell with the highest score; ties go to the first in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (self.valid.i0, self.valid.j0);
        let mut best_v = f64::NEG_INFINITY;
        for (i, j) in self.valid_cells() {
            let v = self.score(i, j);
            if v > best_v {
                best_v = v;
                best = (i, j);
            }
        }
        best
    }

    /// Sum of scores over the valid region.
    pub fn valid_mass(&self) -> f64 {
        self.valid_cells().map(|(i, j)| self.score(i, j)).sum()
    }

    /// Score at the cell containing world point `(x, y)`; the floor value
    /// outside the map.
    pub fn lookup(&self, x: f64, y: f64) -> f64 {
        match self.geometry.cell_of(x, y) {
            Some((i, j)) => self.score(i, j),
            None => SIMILARITY_FLOOR,
        }
    }

    /// Scores as a grid for export through the ASCII grid format. Negative
    /// raw scores cannot be stored as heights, so only normalized maps are
    /// meaningful here.
    pub fn to_grid(&self) -> HeightGrid {
        let values: Vec<Option<f64>> = self.scores.iter().map(|v| Some(v.max(0.0))).collect();
        HeightGrid::from_cells(self.geometry, &values).expect("geometry matches")
    }
}

/// Scores every full placement of `template` inside `prior`.
pub fn match_template(template: &EdgeMap, prior: &EdgeMap) -> Result<SimilarityMap> {
    match_template_with(template, prior, MatchRoute::Auto)
}

pub fn match_template_with(template: &EdgeMap, prior: &EdgeMap, route: MatchRoute) -> Result<SimilarityMap> {
    check_shapes(template, prior)?;
    let route = match route {
        MatchRoute::Auto => {
            let placements = (prior.width() - template.width() + 1) * (prior.height() - template.height() + 1);
            if placements * template.observed_count() > DIRECT_WORK_LIMIT {
                MatchRoute::Spectral
            } else {
                MatchRoute::Direct
            }
        }
        r => r,
    };
    match route {
        MatchRoute::Spectral => {
            let spectrum = PriorSpectrum::new(prior);
            match_with_spectrum(template, prior, &spectrum)
        }
        _ => Ok(match_direct(template, prior)),
    }
}

/// Spectral route against a precomputed prior spectrum.
pub fn match_with_spectrum(template: &EdgeMap, prior: &EdgeMap, spectrum: &PriorSpectrum) -> Result<SimilarityMap> {
    check_shapes(template, prior)?;
    if spectrum.dims() != (prior.width(), prior.height()) {
        return Err(Error::invalid("prior spectrum was computed for a different prior"));
    }
    let mut sim = empty_map(template, prior);
    let observed = template.observed_count();
    if observed == 0 {
        return Ok(sim);
    }
    let mean = template.edge_count() as f64 / observed as f64;
    let (a, b) = spectrum.counts(template);
    let v = sim.valid;
    for y in 0..v.height {
        for x in 0..v.width {
            let k = y * v.width + x;
            let cell = sim.geometry.index(v.i0 + x, v.j0 + y);
            sim.scores[cell] = a[k] as f64 - mean * b[k] as f64;
        }
    }
    Ok(sim)
}

fn check_shapes(template: &EdgeMap, prior: &EdgeMap) -> Result<()> {
    if template.width() > prior.width() || template.height() > prior.height() {
        return Err(Error::Dimension {
            template_w: template.width(),
            template_h: template.height(),
            prior_w: prior.width(),
            prior_h: prior.height(),
        });
    }
    let (rt, rp) = (template.geometry.resolution, prior.geometry.resolution);
    if ((rt - rp) / rp).abs() > 1e-9 {
        return Err(Error::ResolutionMismatch { template: rt, prior: rp });
    }
    Ok(())
}

fn empty_map(template: &EdgeMap, prior: &EdgeMap) -> SimilarityMap {
    let (ci, cj) = template.geometry.center_cell();
    SimilarityMap {
        geometry: prior.geometry,
        valid: ValidRegion {
            i0: ci,
            j0: cj,
            width: prior.width() - template.width() + 1,
            height: prior.height() - template.height() + 1,
        },
        scores: vec![0.0; prior.geometry.len()],
    }
}

fn match_direct(template: &EdgeMap, prior: &EdgeMap) -> SimilarityMap {
    let mut sim = empty_map(template, prior);
    let (tw, th) = (template.width(), template.height());
    let taps: Vec<(usize, usize, f64)> = (0..th)
        .flat_map(|j| (0..tw).map(move |i| (i, j)))
        .filter(|&(i, j)| !template.is_nodata(i, j))
        .map(|(i, j)| (i, j, f64::from(template.get(i, j))))
        .collect();
    if taps.is_empty() {
        return sim;
    }
    let n = taps.len() as f64;
    let t_mean = taps.iter().map(|t| t.2).sum::<f64>() / n;
    let pw = prior.width();
    let pc = prior.cells();
    let v = sim.valid;
    for y in 0..v.height {
        for x in 0..v.width {
            let at = |i: usize, j: usize| f64::from(pc[(y + j) * pw + x + i]);
            let i_mean = taps.iter().map(|&(i, j, _)| at(i, j)).sum::<f64>() / n;
            let r: f64 = taps.iter().map(|&(i, j, t)| (t - t_mean) * (at(i, j) - i_mean)).sum();
            let cell = sim.geometry.index(v.i0 + x, v.j0 + y);
            sim.scores[cell] = r;
        }
    }
    sim
}

/// Reflected index for a half-sample symmetric boundary of length `n`.
fn reflect(k: isize, n: usize) -> usize {
    let n = n as isize;
    let m = k.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur of the valid region.
///
/// The kernel is truncated at `⌈3σ⌉` and normalized; at the valid-region
/// border the signal is mirrored, which keeps both constants and the total
/// mass of the region unchanged. Invalid cells are left as they are.
pub fn blur(sim: &SimilarityMap, sigma: f64) -> SimilarityMap {
    assert!(sigma >= 0.0 && sigma.is_finite(), "blur sigma must be >= 0, got {sigma}");
    if sigma == 0.0 {
        return sim.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = kernel.len() / 2;
    let v = sim.valid;
    let (w, h) = (v.width, v.height);
    let mut region: Vec<f64> = Vec::with_capacity(w * h);
    for y in 0..h {
        let start = sim.geometry.index(v.i0, v.j0 + y);
        region.extend_from_slice(&sim.scores[start..start + w]);
    }

    // Horizontal pass over a mirrored copy of each row.
    let mut padded = vec![0.0; w + 2 * radius];
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &region[y * w..(y + 1) * w];
        for (k, p) in padded.iter_mut().enumerate() {
            *p = row[reflect(k as isize - radius as isize, w)];
        }
        let out = &mut tmp[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            *o = kernel.iter().zip(&padded[x..x + kernel.len()]).map(|(a, b)| a * b).sum();
        }
    }
    // Vertical pass, accumulating whole rows for cache-friendly access.
    for y in 0..h {
        let out = &mut region[y * w..(y + 1) * w];
        out.iter_mut().for_each(|o| *o = 0.0);
        for (t, kv) in kernel.iter().enumerate() {
            let src = reflect(y as isize + t as isize - radius as isize, h);
            for (o, s) in out.iter_mut().zip(&tmp[src * w..(src + 1) * w]) {
                *o += kv * s;
            }
        }
    }

    let mut out = sim.clone();
    for y in 0..h {
        for x in 0..w {
            let cell = out.geometry.index(v.i0 + x, v.j0 + y);
            out.scores[cell] = region[y * w + x];
        }
    }
    out
}

/// Min-max rescale of the valid region to `[0, 1]`, floored at
/// [`SIMILARITY_FLOOR`]. Invalid cells get the floor; a constant map
/// becomes uniformly 1.
pub fn normalize(sim: &SimilarityMap) -> SimilarityMap {
    let (lo, hi) = sim
        .valid_cells()
        .map(|(i, j)| sim.score(i, j))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    let span = hi - lo;
    let mut out = sim.clone();
    out.scores.iter_mut().for_each(|s| *s = SIMILARITY_FLOOR);
    for (i, j) in sim.valid_cells() {
        let k = sim.geometry.index(i, j);
        out.scores[k] = if span > 0.0 { ((sim.scores[k] - lo) / span).max(SIMILARITY_FLOOR) } else { 1.0 };
    }
    out
}

/// Parameters of the local-map preprocessing and matching chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    /// Edge threshold in meters.
    pub edge_threshold: f64,
    /// Blur width in cells.
    pub blur_sigma: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self { edge_threshold: crate::geodata::DEFAULT_EDGE_THRESHOLD, blur_sigma: DEFAULT_BLUR_SIGMA }
    }
}

/// Full chain: north alignment, gradients, edges, matching, blur and
/// normalization of one local heightmap.
pub fn localize_once(
    local: &HeightGrid,
    prior_edges: &EdgeMap,
    compass: f64,
    threshold: f64,
    sigma: f64,
) -> Result<SimilarityMap> {
    let edges = local_edges(local, compass, threshold);
    let raw = match_template(&edges, prior_edges)?;
    Ok(normalize(&blur(&raw, sigma)))
}

fn local_edges(local: &HeightGrid, compass: f64, threshold: f64) -> EdgeMap {
    binarize_edges(&gradient_magnitude(&rotate_to_north(local, compass)), threshold)
}

/// Prior edge map with its cached spectrum, for repeated localization
/// against the same prior.
#[derive(Debug)]
pub struct Localizer {
    prior: EdgeMap,
    spectrum: PriorSpectrum,
    params: MatchParams,
}

impl Localizer {
    /// Builds a localizer from a prior DEM, extracting its edges with the
    /// same threshold used for local maps.
    pub fn from_dem(prior_dem: &HeightGrid, params: MatchParams) -> Self {
        let prior = binarize_edges(&gradient_magnitude(prior_dem), params.edge_threshold);
        Self::new(prior, params)
    }

    pub fn new(prior: EdgeMap, params: MatchParams) -> Self {
        let spectrum = PriorSpectrum::new(&prior);
        Self { prior, spectrum, params }
    }

    pub fn prior(&self) -> &EdgeMap {
        &self.prior
    }

    pub fn params(&self) -> MatchParams {
        self.params
    }

    /// Same result as [`localize_once`], reusing the prior spectrum.
    pub fn localize(&self, local: &HeightGrid, compass: f64) -> Result<SimilarityMap> {
        let edges = local_edges(local, compass, self.params.edge_threshold);
        let raw = match_with_spectrum(&edges, &self.prior, &self.spectrum)?;
        Ok(normalize(&blur(&raw, self.params.blur_sigma)))
    }
}
