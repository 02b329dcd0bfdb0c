//! Spectral route for binary template correlation.
//!
//! With a binary prior `I`, template edges `E` and template observation mask
//! `O`, the masked zero-mean correlation at placement `p` reduces to
//! `A(p) - T̄·B(p)` where `A = Σ_t E(t)·I(p+t)` and `B = Σ_t O(t)·I(p+t)` are
//! integer counts. Both counts come out of a single complex correlation of
//! `I` with `E + iO`; rounding the result recovers them exactly.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::geodata::EdgeMap;

/// Smallest 5-smooth integer `>= n`.
pub(crate) fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for f in [2, 3, 5] {
            while r.is_multiple_of(f) {
                r /= f;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Spectrum of a prior edge map, reusable across many templates.
pub struct PriorSpectrum {
    nx: usize,
    ny: usize,
    prior_w: usize,
    prior_h: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    /// Column-major (transposed) spectrum of the prior: index `kx * ny + ky`.
    spectrum: Vec<Complex<f64>>,
}

impl std::fmt::Debug for PriorSpectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PriorSpectrum").field("nx", &self.nx).field("ny", &self.ny).finish_non_exhaustive()
    }
}

impl PriorSpectrum {
    pub fn new(prior: &EdgeMap) -> Self {
        let (pw, ph) = (prior.width(), prior.height());
        let nx = fast_len(pw);
        let ny = fast_len(ph);
        let mut planner = FftPlanner::new();
        let row_fwd = planner.plan_fft_forward(nx);
        let col_fwd = planner.plan_fft_forward(ny);
        let row_inv = planner.plan_fft_inverse(nx);
        let col_inv = planner.plan_fft_inverse(ny);
        let mut buf = vec![Complex::new(0.0, 0.0); nx * ph];
        let cells = prior.cells();
        for j in 0..ph {
            for i in 0..pw {
                buf[j * nx + i].re = f64::from(cells[j * pw + i]);
            }
        }
        let mut this =
            Self { nx, ny, prior_w: pw, prior_h: ph, row_fwd, col_fwd, row_inv, col_inv, spectrum: Vec::new() };
        this.spectrum = this.forward(buf, ph);
        this
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.prior_w, self.prior_h)
    }

    /// Row FFTs over the first `rows` rows (the rest are zero), transpose,
    /// column FFTs. Output is in transposed layout.
    fn forward(&self, mut buf: Vec<Complex<f64>>, rows: usize) -> Vec<Complex<f64>> {
        let (nx, ny) = (self.nx, self.ny);
        self.row_fwd.process(&mut buf[..rows * nx]);
        let mut t = vec![Complex::new(0.0, 0.0); nx * ny];
        transpose_into(&buf[..rows * nx], nx, rows, &mut t, ny);
        self.col_fwd.process(&mut t);
        t
    }

    /// Edge and observation counts `(A, B)` for every valid placement,
    /// row-major over `(W - w + 1) x (H - h + 1)` placements.
    pub fn counts(&self, template: &EdgeMap) -> (Vec<i64>, Vec<i64>) {
        let (tw, th) = (template.width(), template.height());
        let (nx, ny) = (self.nx, self.ny);
        let mut buf = vec![Complex::new(0.0, 0.0); nx * th];
        let (cells, nodata) = (template.cells(), template.nodata_mask());
        for j in 0..th {
            for i in 0..tw {
                let k = j * tw + i;
                buf[j * nx + i] = Complex::new(f64::from(cells[k]), if nodata[k] { 0.0 } else { 1.0 });
            }
        }
        let mut g = self.forward(buf, th);
        // Correlating with a complex kernel g is convolving with g(-t):
        // multiply by G(-k) rather than conj(G(k)). Done pairwise in place.
        let spec = &self.spectrum;
        for kx in 0..nx {
            let mx = (nx - kx) % nx;
            for ky in 0..ny {
                let my = (ny - ky) % ny;
                let (a, b) = (kx * ny + ky, mx * ny + my);
                match a.cmp(&b) {
                    std::cmp::Ordering::Less => {
                        let (ga, gb) = (g[a], g[b]);
                        g[a] = spec[a] * gb;
                        g[b] = spec[b] * ga;
                    }
                    std::cmp::Ordering::Equal => g[a] *= spec[a],
                    std::cmp::Ordering::Greater => {}
                }
            }
        }
        let (px, py) = (self.prior_w - tw + 1, self.prior_h - th + 1);
        self.col_inv.process(&mut g);
        let mut rows = vec![Complex::new(0.0, 0.0); nx * py];
        for x in 0..nx {
            let col = &g[x * ny..x * ny + py];
            for (y, v) in col.iter().enumerate() {
                rows[y * nx + x] = *v;
            }
        }
        self.row_inv.process(&mut rows);
        let scale = 1.0 / (nx * ny) as f64;
        let mut a = Vec::with_capacity(px * py);
        let mut b = Vec::with_capacity(px * py);
        for y in 0..py {
            for v in &rows[y * nx..y * nx + px] {
                a.push((v.re * scale).round() as i64);
                b.push((v.im * scale).round() as i64);
            }
        }
        (a, b)
    }
}

/// Writes the transpose of a `rows x cols` row-major block into `dst`,
/// whose rows have length `dst_stride`.
fn transpose_into(src: &[Complex<f64>], cols: usize, rows: usize, dst: &mut [Complex<f64>], dst_stride: usize) {
    const TILE: usize = 32;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * dst_stride + r] = src[r * cols + c];
                }
            }
        }
    }
}
