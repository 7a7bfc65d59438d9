//! Image buffers, context-aware cropping and the multi-scale search pyramid.
//!
//! Coordinates are continuous: pixel `(i, j)` covers `[j, j+1) x [i, i+1)`,
//! so a box `(x, y, w, h)` is centered at `(x + w/2, y + h/2)`.

use std::cell::OnceCell;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default scale factors of the three-level search pyramid.
pub const DEFAULT_SCALE_STEP: f64 = 1.0375;

/// Row-major, channel-interleaved image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("zero-sized image {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidImage("non-finite pixel value".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds an image by evaluating `f(x, y, channel)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn channel_means(&self) -> Vec<f32> {
        let mut sums = vec![0.0f64; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += v as f64;
            }
        }
        let n = (self.width * self.height) as f64;
        sums.into_iter().map(|s| (s / n) as f32).collect()
    }

    /// Luminance as the unweighted mean of the channels.
    pub fn grayscale(&self) -> Vec<f32> {
        if self.channels == 1 {
            return self.data.clone();
        }
        let inv = 1.0 / self.channels as f32;
        self.data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f32>() * inv)
            .collect()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Reads an 8-bit PNG or JPEG frame, scaling values by 1/255.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let decoded = image::open(path).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, raw) = match decoded.color() {
        image::ColorType::L8 | image::ColorType::La8 | image::ColorType::L16 | image::ColorType::La16 => {
            (1, decoded.into_luma8().into_raw())
        }
        _ => (3, decoded.into_rgb8().into_raw()),
    };
    let data = raw.into_iter().map(|v| v as f32 / 255.0).collect();
    ImageBuffer::new(width, height, channels, data)
}

/// Writes an 8-bit PNG (or any format inferred from the extension).
pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let result = if img.channels == 1 {
        image::GrayImage::from_raw(w, h, bytes).map(|b| b.save(path))
    } else {
        image::RgbImage::from_raw(w, h, bytes).map(|b| b.save(path))
    };
    match result {
        Some(Ok(())) => Ok(()),
        Some(Err(source)) => Err(Error::Decode {
            path: path.to_path_buf(),
            source,
        }),
        None => Err(Error::InvalidImage("buffer size mismatch".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned box with its top-left corner at `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_center(center: Point, w: f64, h: f64) -> Self {
        Self::new(center.x - w / 2.0, center.y - h / 2.0, w, h)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        if finite && self.w > 0.0 && self.h > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidBox {
                x: self.x,
                y: self.y,
                w: self.w,
                h: self.h,
            })
        }
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// A square window resampled from a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub image: ImageBuffer,
    /// Frame pixels per patch pixel.
    pub source_scale: f64,
    /// Center of the window in frame coordinates.
    pub center: Point,
    /// Whether any sample fell outside the frame and took the pad value.
    pub padded: bool,
}

impl Patch {
    pub fn side(&self) -> usize {
        self.image.width
    }
}

/// Side of the square context crop around a target of size `w x h`:
/// a margin `p = (w + h) / 4` on each side, squared to the same area.
pub fn context_crop_side(w: f64, h: f64) -> f64 {
    let p = (w + h) / 4.0;
    ((w + 2.0 * p) * (h + 2.0 * p)).sqrt()
}

/// Crops the context window around `bbox` and resamples it to `out_side`.
pub fn crop_context(frame: &ImageBuffer, bbox: &BoundingBox, out_side: usize) -> Result<Patch> {
    bbox.validate()?;
    if out_side < 8 {
        return Err(Error::InvalidArgument(format!("out_side {out_side} < 8")));
    }
    let side = context_crop_side(bbox.w, bbox.h);
    crop_square(frame, bbox.center(), side, out_side)
}

/// Resamples the `side x side` window centered at `center` to `out_side x out_side`
/// with bilinear interpolation. Samples outside the frame take the frame's
/// per-channel mean.
pub fn crop_square(frame: &ImageBuffer, center: Point, side: f64, out_side: usize) -> Result<Patch> {
    crop_square_cached(frame, center, side, out_side, &OnceCell::new())
}

/// [`crop_square`] with the frame's channel means computed at most once
/// across calls sharing `means`.
fn crop_square_cached(
    frame: &ImageBuffer,
    center: Point,
    side: f64,
    out_side: usize,
    means: &OnceCell<Vec<f32>>,
) -> Result<Patch> {
    if !(side.is_finite() && side > 0.0) {
        return Err(Error::InvalidArgument(format!("crop side {side} must be positive")));
    }
    if !(center.x.is_finite() && center.y.is_finite()) {
        return Err(Error::InvalidArgument("non-finite crop center".into()));
    }
    if out_side == 0 {
        return Err(Error::InvalidArgument("out_side must be positive".into()));
    }
    let step = side / out_side as f64;
    let mut xs = sample_axis(center.x - side / 2.0, step, out_side);
    let mut ys = sample_axis(center.y - side / 2.0, step, out_side);
    let (w, h) = (frame.width as i64, frame.height as i64);
    let patch = |image, padded| Patch {
        image,
        source_scale: step,
        center,
        padded,
    };

    let strictly_inside = |t: &[AxisSample], n: i64| t.iter().all(|t| t.index >= 0 && t.index + 1 < n);
    if strictly_inside(&xs, w) && strictly_inside(&ys, h) {
        return Ok(patch(sample_interior(frame, &xs, &ys), false));
    }

    // A sample reads outside when a neighbour with non-zero weight is
    // outside. Every row visits every column, so one axis suffices.
    let reads_outside =
        |t: &[AxisSample], n: i64| t.iter().any(|t| t.index < 0 || t.index >= n || (t.frac > 0.0 && t.index + 1 >= n));
    let padded = reads_outside(&xs, w) || reads_outside(&ys, h);
    let mean = means.get_or_init(|| frame.channel_means());

    // Gather the source rows and columns the taps read into a buffer padded
    // with the mean, then sample it like an interior crop.
    let xsrc = gather_axis(&mut xs);
    let ysrc = gather_axis(&mut ys);
    let ch = frame.channels;
    let mut region = Vec::with_capacity(xsrc.len() * ysrc.len() * ch);
    for &y in &ysrc {
        let row = (0..h).contains(&y).then(|| y as usize * frame.width);
        for &x in &xsrc {
            match row {
                Some(r) if (0..w).contains(&x) => {
                    let i = (r + x as usize) * ch;
                    region.extend_from_slice(&frame.data[i..i + ch]);
                }
                _ => region.extend_from_slice(mean),
            }
        }
    }
    let region = ImageBuffer {
        width: xsrc.len(),
        height: ysrc.len(),
        channels: ch,
        data: region,
    };
    Ok(patch(sample_interior(&region, &xs, &ys), padded))
}

/// Bilinear sampling when every 2x2 neighbourhood lies inside the frame.
fn sample_interior(frame: &ImageBuffer, xs: &[AxisSample], ys: &[AxisSample]) -> ImageBuffer {
    // Images have one or three channels.
    let data = match frame.channels {
        1 => sample_rows::<1>(frame, xs, ys),
        _ => sample_rows::<3>(frame, xs, ys),
    };
    ImageBuffer {
        width: xs.len(),
        height: ys.len(),
        channels: frame.channels,
        data,
    }
}

fn sample_rows<const C: usize>(frame: &ImageBuffer, xs: &[AxisSample], ys: &[AxisSample]) -> Vec<f32> {
    let row_len = frame.width * C;
    let cols: Vec<(usize, f32)> = xs.iter().map(|t| (t.index as usize * C, t.frac as f32)).collect();
    let mut data = vec![0.0f32; xs.len() * ys.len() * C];
    for (ty, out_row) in ys.iter().zip(data.chunks_exact_mut(xs.len() * C)) {
        let start = ty.index as usize * row_len;
        let r0 = &frame.data[start..start + row_len];
        let r1 = &frame.data[start + row_len..start + 2 * row_len];
        let fy = ty.frac as f32;
        for (&(i, fx), out) in cols.iter().zip(out_row.chunks_exact_mut(C)) {
            let a = &r0[i..i + 2 * C];
            let b = &r1[i..i + 2 * C];
            for c in 0..C {
                let top = a[c] + (a[c + C] - a[c]) * fx;
                let bottom = b[c] + (b[c + C] - b[c]) * fx;
                out[c] = top + (bottom - top) * fy;
            }
        }
    }
    data
}

/// Source indices a crop reads along one axis, with the taps rewritten to
/// index into that list. Small windows keep every index between the first
/// and the last tap; large ones keep only each tap's pair.
fn gather_axis(taps: &mut [AxisSample]) -> Vec<i64> {
    let first = taps[0].index;
    let span = (taps[taps.len() - 1].index - first + 2) as usize;
    if span <= 2 * taps.len() {
        taps.iter_mut().for_each(|t| t.index -= first);
        (first..first + span as i64).collect()
    } else {
        let mut src = Vec::with_capacity(2 * taps.len());
        for (k, t) in taps.iter_mut().enumerate() {
            src.extend([t.index, t.index + 1]);
            t.index = 2 * k as i64;
        }
        src
    }
}

#[derive(Debug, Clone, Copy)]
struct AxisSample {
    index: i64,
    frac: f64,
}

/// Sample positions along one axis, split into integer index and fraction.
/// The integer part of `origin` is kept apart so that translating the crop by
/// whole pixels shifts indices without perturbing the interpolation weights.
fn sample_axis(origin: f64, step: f64, n: usize) -> Vec<AxisSample> {
    let base = origin.floor();
    let offset = origin - base;
    (0..n)
        .map(|k| {
            let t = offset + (k as f64 + 0.5) * step - 0.5;
            let ti = t.floor();
            AxisSample {
                index: base as i64 + ti as i64,
                frac: t - ti,
            }
        })
        .collect()
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    if t == 0.0 || a == b {
        return a;
    }
    let v = a + (b - a) * t;
    v.clamp(a.min(b), a.max(b))
}

/// Default three-level pyramid `{1/step, 1, step}`.
pub fn default_scale_factors() -> Vec<f64> {
    vec![1.0 / DEFAULT_SCALE_STEP, 1.0, DEFAULT_SCALE_STEP]
}

/// One search patch per scale factor, each covering `base_crop_side * factor`
/// frame pixels and resampled to `out_side`.
pub fn build_search_pyramid(
    frame: &ImageBuffer,
    center: Point,
    base_crop_side: f64,
    scale_factors: &[f64],
    out_side: usize,
) -> Result<Vec<Patch>> {
    if scale_factors.is_empty() {
        return Err(Error::Empty("scale factors"));
    }
    if let Some(bad) = scale_factors.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
        return Err(Error::InvalidArgument(format!("scale factor {bad} must be positive")));
    }
    let means = OnceCell::new();
    scale_factors
        .iter()
        .map(|f| crop_square_cached(frame, center, base_crop_side * f, out_side, &means))
        .collect()
}

/// Bilinear resize with the align-corners convention: output corners map
/// exactly onto input corners.
pub fn resize_bilinear(img: &ImageBuffer, out_w: usize, out_h: usize) -> Result<ImageBuffer> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!("output size {out_w}x{out_h}")));
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        (0..n_out)
            .map(|k| {
                let pos = if n_out == 1 {
                    (n_in - 1) as f64 / 2.0
                } else {
                    k as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
                };
                let i0 = (pos.floor() as usize).min(n_in - 1);
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (pos - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = axis(img.width, out_w);
    let ys = axis(img.height, out_h);
    let ch = img.channels;
    let mut data = Vec::with_capacity(out_w * out_h * ch);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..ch {
                let top = lerp(img.get(x0, y0, c), img.get(x1, y0, c), fx);
                let bottom = lerp(img.get(x0, y1, c), img.get(x1, y1, c), fx);
                data.push(lerp(top, bottom, fy));
            }
        }
    }
    ImageBuffer::new(out_w, out_h, ch, data)
}
