//! Cross-correlation of exemplar and search embeddings, and response
//! post-processing.

use std::cell::RefCell;
use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::branches::{BranchId, FeatureMap};
use crate::error::{Error, Result};

/// Upsampling factor applied before peak localization.
pub const DEFAULT_UPSAMPLE_FACTOR: usize = 16;
/// Blend weight of the cosine window.
pub const DEFAULT_WINDOW_INFLUENCE: f64 = 0.176;

/// Row-major similarity surface.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
    pub scale_index: usize,
    pub branch_id: BranchId,
}

impl ResponseMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "response data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite response value".into()));
        }
        Ok(Self {
            height,
            width,
            data,
            scale_index: 0,
            branch_id: 0,
        })
    }

    pub fn tagged(mut self, branch_id: BranchId, scale_index: usize) -> Self {
        self.branch_id = branch_id;
        self.scale_index = scale_index;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// First maximum in row-major order: `(row, col, value)`.
    pub fn argmax(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.data.iter().enumerate() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, v)| (i / self.width, i % self.width, v))
    }

    pub fn max(&self) -> Option<f64> {
        self.data.iter().copied().reduce(f64::max)
    }

    pub fn min(&self) -> Option<f64> {
        self.data.iter().copied().reduce(f64::min)
    }

    fn with_data(&self, height: usize, width: usize, data: Vec<f64>) -> Self {
        Self {
            height,
            width,
            data,
            scale_index: self.scale_index,
            branch_id: self.branch_id,
        }
    }
}

fn check_pair(z: &FeatureMap, x: &FeatureMap) -> Result<(usize, usize)> {
    if z.channels() != x.channels() {
        return Err(Error::ChannelMismatch {
            exemplar: z.channels(),
            search: x.channels(),
        });
    }
    if z.height() > x.height() || z.width() > x.width() {
        return Err(Error::ExemplarTooLarge {
            exemplar_h: z.height(),
            exemplar_w: z.width(),
            search_h: x.height(),
            search_w: x.width(),
        });
    }
    Ok((x.height() - z.height() + 1, x.width() - z.width() + 1))
}

/// Sliding dot product: `out[u,v] = sum_{i,j,c} z[i,j,c] * x[u+i, v+j, c]`.
pub fn xcorr(exemplar: &FeatureMap, search: &FeatureMap) -> Result<ResponseMap> {
    let (oh, ow) = check_pair(exemplar, search)?;
    let (zh, zw, ch) = (exemplar.height(), exemplar.width(), exemplar.channels());
    let (zd, xd) = (exemplar.data(), search.data());
    let xw = search.width();
    let row_len = zw * ch;
    let mut out = Vec::with_capacity(oh * ow);
    for u in 0..oh {
        for v in 0..ow {
            let mut acc = 0.0f64;
            for i in 0..zh {
                let zrow = &zd[i * row_len..(i + 1) * row_len];
                let start = ((u + i) * xw + v) * ch;
                let xrow = &xd[start..start + row_len];
                for (a, b) in zrow.iter().zip(xrow) {
                    acc += (*a as f64) * (*b as f64);
                }
            }
            out.push(acc);
        }
    }
    ResponseMap::new(oh, ow, out)
}

struct FftPlans {
    real: RealFftPlanner<f64>,
    complex: FftPlanner<f64>,
}

thread_local! {
    // Planners cache plans by length; one per thread keeps calls lock-free.
    static PLANS: RefCell<FftPlans> = RefCell::new(FftPlans {
        real: RealFftPlanner::new(),
        complex: FftPlanner::new(),
    });
}

struct Plan2d {
    rows: usize,
    cols: usize,
    spec_cols: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Plan2d {
    fn new(rows: usize, cols: usize) -> Self {
        PLANS.with(|p| {
            let mut p = p.borrow_mut();
            let r2c = p.real.plan_fft_forward(cols);
            let c2r = p.real.plan_fft_inverse(cols);
            let col_fwd = p.complex.plan_fft_forward(rows);
            let col_inv = p.complex.plan_fft_inverse(rows);
            Plan2d {
                rows,
                cols,
                spec_cols: cols / 2 + 1,
                r2c,
                c2r,
                col_fwd,
                col_inv,
            }
        })
    }

    /// Spectrum of one channel of `map`, zero-padded to `rows x cols`,
    /// stored row-major as `rows x spec_cols`.
    fn forward(&self, map: &FeatureMap, channel: usize, out: &mut [Complex64]) {
        let (h, w, ch) = (map.height(), map.width(), map.channels());
        let mut line = vec![0.0f64; self.cols];
        let mut spec_line = vec![Complex64::default(); self.spec_cols];
        for r in 0..self.rows {
            let dst = &mut out[r * self.spec_cols..(r + 1) * self.spec_cols];
            if r >= h {
                dst.fill(Complex64::default());
                continue;
            }
            line.fill(0.0);
            for c in 0..w {
                line[c] = map.get(r, c, channel % ch) as f64;
            }
            self.r2c
                .process(&mut line, &mut spec_line)
                .expect("buffer sizes match the plan");
            dst.copy_from_slice(&spec_line);
        }
        self.columns(out, &self.col_fwd);
    }

    fn columns(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let mut col = vec![Complex64::default(); self.rows];
        for c in 0..self.spec_cols {
            for r in 0..self.rows {
                col[r] = data[r * self.spec_cols + c];
            }
            fft.process(&mut col);
            for r in 0..self.rows {
                data[r * self.spec_cols + c] = col[r];
            }
        }
    }

    /// In-place inverse of a `rows x spec_cols` spectrum; returns the real
    /// `rows x cols` plane, unnormalized.
    fn inverse(&self, spec: &mut [Complex64]) -> Vec<f64> {
        self.columns(spec, &self.col_inv);
        let mut out = vec![0.0f64; self.rows * self.cols];
        let mut line = vec![Complex64::default(); self.spec_cols];
        for r in 0..self.rows {
            line.copy_from_slice(&spec[r * self.spec_cols..(r + 1) * self.spec_cols]);
            // Round-off leaves tiny imaginary parts in the DC and Nyquist
            // bins; the real inverse requires them to be zero.
            line[0].im = 0.0;
            if self.cols % 2 == 0 {
                line[self.spec_cols - 1].im = 0.0;
            }
            self.c2r
                .process(&mut line, &mut out[r * self.cols..(r + 1) * self.cols])
                .expect("buffer sizes match the plan");
        }
        out
    }
}

/// Same contract as [`xcorr`], computed per channel in the frequency domain
/// (`X * conj(Z)`, summed over channels, one inverse transform). Transform
/// sizes are the next powers of two covering the search map.
pub fn xcorr_fft(exemplar: &FeatureMap, search: &FeatureMap) -> Result<ResponseMap> {
    let (oh, ow) = check_pair(exemplar, search)?;
    let rows = search.height().next_power_of_two();
    let cols = search.width().next_power_of_two().max(2);
    let plan = Plan2d::new(rows, cols);
    let n = rows * plan.spec_cols;
    let mut acc = vec![Complex64::default(); n];
    let mut zs = vec![Complex64::default(); n];
    let mut xs = vec![Complex64::default(); n];
    for c in 0..exemplar.channels() {
        plan.forward(exemplar, c, &mut zs);
        plan.forward(search, c, &mut xs);
        for ((a, x), z) in acc.iter_mut().zip(&xs).zip(&zs) {
            *a += x * z.conj();
        }
    }
    let plane = plan.inverse(&mut acc);
    let scale = 1.0 / (rows * cols) as f64;
    let mut out = Vec::with_capacity(oh * ow);
    for u in 0..oh {
        for v in 0..ow {
            out.push(plane[u * cols + v] * scale);
        }
    }
    ResponseMap::new(oh, ow, out)
}

/// Keys cubic convolution kernel (a = -0.5).
fn cubic(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Tap indices and weights mapping `(n-1)*factor+1` outputs onto `n` inputs
/// with aligned corners. Border taps are clamped.
fn cubic_taps(n: usize, factor: usize) -> Vec<([usize; 4], [f64; 4])> {
    let out = (n - 1) * factor + 1;
    (0..out)
        .map(|k| {
            let base = k / factor;
            let t = (k % factor) as f64 / factor as f64;
            let mut idx = [0usize; 4];
            let mut w = [0.0f64; 4];
            for (j, off) in (-1i64..=2).enumerate() {
                idx[j] = (base as i64 + off).clamp(0, n as i64 - 1) as usize;
                w[j] = cubic(t - off as f64);
            }
            (idx, w)
        })
        .collect()
}

/// Bicubic upsampling to `((H-1)*factor+1) x ((W-1)*factor+1)`, with input
/// samples landing exactly on every `factor`-th output sample.
pub fn upsample_response(map: &ResponseMap, factor: usize) -> Result<ResponseMap> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
    }
    if factor == 1 || map.is_empty() {
        return Ok(map.clone());
    }
    let (h, w) = (map.height, map.width);
    let rows = cubic_taps(h, factor);
    let cols = cubic_taps(w, factor);
    let (oh, ow) = (rows.len(), cols.len());
    // Columns first: h x ow.
    let mut tmp = vec![0.0f64; h * ow];
    for r in 0..h {
        let src = &map.data[r * w..(r + 1) * w];
        for (c, (idx, wt)) in cols.iter().enumerate() {
            tmp[r * ow + c] = (0..4).map(|j| src[idx[j]] * wt[j]).sum();
        }
    }
    let mut out = vec![0.0f64; oh * ow];
    for (r, (idx, wt)) in rows.iter().enumerate() {
        let dst = &mut out[r * ow..(r + 1) * ow];
        for j in 0..4 {
            let src = &tmp[idx[j] * ow..(idx[j] + 1) * ow];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s * wt[j];
            }
        }
    }
    Ok(map.with_data(oh, ow, out))
}

/// Hann window of length `n`, peaking at 1 in the middle.
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Blends the response with a centered Hann prior:
/// `(1 - influence) * norm(map) + influence * hann2d`, where `norm` shifts the
/// map to a zero minimum and scales it to unit sum, and `hann2d` is the outer
/// product of Hann windows scaled to unit sum.
pub fn apply_cosine_window(map: &ResponseMap, influence: f64) -> Result<ResponseMap> {
    if !(0.0..=1.0).contains(&influence) {
        return Err(Error::InvalidArgument(format!("window influence {influence} outside [0, 1]")));
    }
    let (h, w) = (map.height, map.width);
    let (hy, hx) = (hann(h), hann(w));
    let hsum: f64 = hy.iter().sum::<f64>() * hx.iter().sum::<f64>();
    let lo = map.min().unwrap_or(0.0);
    let total: f64 = map.data.iter().map(|v| v - lo).sum();
    let inv_total = if total > 0.0 { 1.0 / total } else { 0.0 };
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let norm = (map.get(r, c) - lo) * inv_total;
            out.push((1.0 - influence) * norm + influence * hy[r] * hx[c] / hsum);
        }
    }
    Ok(map.with_data(h, w, out))
}
