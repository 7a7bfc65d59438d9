//! Per-pixel votes of the built-in branches and their cell aggregation.

use std::f32::consts::PI;
use std::ops::Range;

use super::GridLayout;
use crate::imaging::ImageBuffer;

/// Unsigned orientation bins of the gradient histogram.
pub const GRADIENT_BINS: usize = 8;

const HUE_BINS: usize = 4;
const SAT_BINS: usize = 2;
const VAL_BINS: usize = 2;
/// 4 hue x 2 saturation x 2 value bins.
pub const COLOR_BINS: usize = HUE_BINS * SAT_BINS * VAL_BINS;

/// Magnitude-weighted, linearly interpolated orientation votes of the
/// grayscale image, `GRADIENT_BINS` values per pixel. Orientations are
/// unsigned; bin 0 is centered on horizontal gradients (vertical edges).
pub fn gradient_votes(img: &ImageBuffer) -> Vec<f32> {
    gradient_votes_in(img, 0..img.width(), 0..img.height())
}

/// [`gradient_votes`] of the pixels in `xr x yr` only; differences still
/// use neighbours outside the window.
pub(crate) fn gradient_votes_in(img: &ImageBuffer, xr: Range<usize>, yr: Range<usize>) -> Vec<f32> {
    let (w, h) = (img.width(), img.height());
    let gray = img.grayscale();
    let mut votes = vec![0.0f32; xr.len() * yr.len() * GRADIENT_BINS];
    let bin_width = PI / GRADIENT_BINS as f32;
    let mut base = 0;
    for y in yr {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(h - 1);
        for x in xr.clone() {
            let left = x.saturating_sub(1);
            let right = (x + 1).min(w - 1);
            let gx = (gray[y * w + right] - gray[y * w + left]) * 0.5;
            let gy = (gray[down * w + x] - gray[up * w + x]) * 0.5;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag > 0.0 {
                let theta = orientation(gx, gy);
                let pos = theta / bin_width;
                let b0 = (pos as usize).min(GRADIENT_BINS - 1);
                let frac = (pos - b0 as f32).clamp(0.0, 1.0);
                let b1 = (b0 + 1) % GRADIENT_BINS;
                votes[base + b0] += mag * (1.0 - frac);
                votes[base + b1] += mag * frac;
            }
            base += GRADIENT_BINS;
        }
    }
    votes
}

/// Unsigned orientation of `(gx, gy)` in `[0, pi)`, from a minimax
/// polynomial for atan on `[0, 1]` (absolute error below 1e-5 rad).
fn orientation(gx: f32, gy: f32) -> f32 {
    let (ax, ay) = (gx.abs(), gy.abs());
    let (num, den) = if ay > ax { (ax, ay) } else { (ay, ax) };
    let z = num / den;
    let z2 = z * z;
    let mut a = z * (0.999_866 + z2 * (-0.330_299_5 + z2 * (0.180_141 + z2 * (-0.085_133 + z2 * 0.020_835_1))));
    if num == den {
        a = PI / 4.0;
    } else if ay > ax {
        a = PI / 2.0 - a;
    }
    // Fold into [0, pi): the two half-planes give the same orientation.
    let theta = if (gx >= 0.0) == (gy >= 0.0) { a } else { PI - a };
    if theta >= PI {
        0.0
    } else {
        theta
    }
}

/// Soft HSV histogram votes, `COLOR_BINS` values per pixel summing to 1.
/// Hue bins are circular and centered on 0, 1/4, 1/2, 3/4; saturation and
/// value bins are centered on 1/4 and 3/4 and clamp outside that range.
pub fn color_hist_votes(img: &ImageBuffer) -> Vec<f32> {
    color_hist_votes_in(img, 0..img.width(), 0..img.height())
}

/// [`color_hist_votes`] of the pixels in `xr x yr` only.
pub(crate) fn color_hist_votes_in(img: &ImageBuffer, xr: Range<usize>, yr: Range<usize>) -> Vec<f32> {
    let ch = img.channels();
    let row_len = img.width() * ch;
    let mut votes = vec![0.0f32; xr.len() * yr.len() * COLOR_BINS];
    let mut cells = votes.chunks_exact_mut(COLOR_BINS);
    let two_bin = |v: f32| {
        let t = ((v - 0.25) * 2.0).clamp(0.0, 1.0);
        [1.0 - t, t]
    };
    const PER_HUE: usize = SAT_BINS * VAL_BINS;
    for y in yr {
        let row = &img.data()[y * row_len + xr.start * ch..y * row_len + xr.end * ch];
        for (px, cell) in row.chunks_exact(ch).zip(&mut cells) {
            let (r, g, b) = if ch == 3 { (px[0], px[1], px[2]) } else { (px[0], px[0], px[0]) };
            let (hue, sat, val) = rgb_to_hsv(r, g, b);

            // hue >= 0, so truncation is floor.
            let hp = hue * HUE_BINS as f32;
            let h0 = (hp as usize).min(HUE_BINS - 1);
            let hf = hp - h0 as f32;
            let h1 = (h0 + 1) % HUE_BINS;

            let [s0, s1] = two_bin(sat);
            let [v0, v1] = two_bin(val);
            // Saturation-major, value-minor within each hue bin.
            let sv = [s0 * v0, s0 * v1, s1 * v0, s1 * v1];
            for (j, &w) in sv.iter().enumerate() {
                cell[h0 * PER_HUE + j] += (1.0 - hf) * w;
                cell[h1 * PER_HUE + j] += hf * w;
            }
        }
    }
    votes
}

/// Hue in `[0, 1)`, saturation and value in `[0, 1]`.
pub(crate) fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let sat = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return (0.0, sat, max);
    }
    let sector = if max == r {
        let t = (g - b) / delta;
        if t < 0.0 {
            t + 6.0
        } else {
            t
        }
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let hue = sector / 6.0;
    (if hue >= 1.0 { 0.0 } else { hue }, sat, max)
}

/// Window of `side`-pixel patches that the grid cells cover.
pub(crate) fn grid_span(layout: &GridLayout, cells: usize) -> Range<usize> {
    layout.margin..layout.cell_origin(cells - 1) + layout.window
}

/// Mean of each channel of `votes` over the `layout.window`-sized square of
/// every grid cell, from running sums along rows and then along columns.
/// `votes` is row-major `span x span x channels` over [`grid_span`].
pub(crate) fn cell_means(votes: &[f32], channels: usize, layout: &GridLayout, cells: usize) -> Vec<f32> {
    let win = layout.window;
    let lo = layout.margin;
    let span = grid_span(layout, cells).len();
    debug_assert_eq!(votes.len(), span * span * channels);

    // hsum[y][k][c]: sum over the window of cell column k in row lo + y.
    let mut hsum = vec![0.0f64; span * cells * channels];
    let mut prefix = vec![0.0f64; (span + 1) * channels];
    for y in 0..span {
        let row = &votes[y * span * channels..(y + 1) * span * channels];
        for i in 0..row.len() {
            prefix[i + channels] = prefix[i] + row[i] as f64;
        }
        for k in 0..cells {
            let x0 = layout.cell_origin(k) - lo;
            let dst = &mut hsum[(y * cells + k) * channels..(y * cells + k + 1) * channels];
            for c in 0..channels {
                dst[c] = prefix[(x0 + win) * channels + c] - prefix[x0 * channels + c];
            }
        }
    }

    // Running sums down the columns of hsum.
    let stride = cells * channels;
    let mut vprefix = vec![0.0f64; (span + 1) * stride];
    for y in 0..span {
        for i in 0..stride {
            vprefix[(y + 1) * stride + i] = vprefix[y * stride + i] + hsum[y * stride + i];
        }
    }
    let area = (win * win) as f64;
    let mut out = Vec::with_capacity(cells * stride);
    for r in 0..cells {
        let y0 = layout.cell_origin(r) - lo;
        for i in 0..stride {
            out.push(((vprefix[(y0 + win) * stride + i] - vprefix[y0 * stride + i]) / area) as f32);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_of_primaries() {
        assert_eq!(rgb_to_hsv(1.0, 0.0, 0.0), (0.0, 1.0, 1.0));
        let (h, s, v) = rgb_to_hsv(0.0, 0.5, 0.0);
        assert!((h - 1.0 / 3.0).abs() < 1e-6 && s == 1.0 && v == 0.5);
        let (h, _, _) = rgb_to_hsv(0.0, 0.0, 1.0);
        assert!((h - 2.0 / 3.0).abs() < 1e-6);
        assert_eq!(rgb_to_hsv(0.3, 0.3, 0.3), (0.0, 0.0, 0.3));
        assert_eq!(rgb_to_hsv(0.0, 0.0, 0.0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn color_votes_sum_to_one() {
        let img = ImageBuffer::from_fn(5, 5, 3, |x, y, c| ((x * 3 + y * 5 + c * 7) % 11) as f32 / 10.0).unwrap();
        let votes = color_hist_votes(&img);
        for px in votes.chunks_exact(COLOR_BINS) {
            assert!((px.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            assert!(px.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn color_value_binning_is_mean_preserving_inside_range() {
        // Values at the two bin centers average to the same histogram as
        // their mean value.
        let pair = ImageBuffer::new(2, 1, 3, vec![0.25, 0.0, 0.0, 0.75, 0.0, 0.0]).unwrap();
        let mid = ImageBuffer::new(1, 1, 3, vec![0.5, 0.0, 0.0]).unwrap();
        let a = color_hist_votes(&pair);
        let b = color_hist_votes(&mid);
        for bin in 0..COLOR_BINS {
            assert!(((a[bin] + a[COLOR_BINS + bin]) / 2.0 - b[bin]).abs() < 1e-6);
        }
    }

    #[test]
    fn orientation_matches_atan2() {
        for k in 0..2000 {
            let a = k as f32 * 0.0031 - 3.1;
            let (gx, gy) = (a.cos() * 0.7, a.sin() * 0.7);
            let want = gy.atan2(gx).rem_euclid(PI);
            let got = orientation(gx, gy);
            let diff = (got - want).abs();
            assert!(diff.min(PI - diff) < 2e-5, "{a}: {got} vs {want}");
        }
    }

    #[test]
    fn diagonal_gradient_splits_between_bins() {
        let img = ImageBuffer::from_fn(9, 9, 1, |x, y, _| (x + y) as f32 / 20.0).unwrap();
        let votes = gradient_votes(&img);
        let center = &votes[(4 * 9 + 4) * GRADIENT_BINS..(4 * 9 + 5) * GRADIENT_BINS];
        // 45 degrees sits exactly on bin 2.
        assert!(center[2] > 0.0);
        assert!(center.iter().enumerate().all(|(b, &v)| b == 2 || v.abs() < 1e-6));
    }
}
