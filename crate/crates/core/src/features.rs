//! Histogram-of-oriented-gradient descriptors and Harris corners.
//!
//! HOG uses 9 unsigned orientation bins with linear vote splitting, square
//! cells, 2x2-cell blocks at a stride of one cell and L2-hys block
//! normalisation. Cell histograms come from per-bin integral images, so any
//! window at any pixel offset costs O(cells).

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;

use thiserror::Error;

use crate::raster::Raster;

pub const ORIENTATION_BINS: usize = 9;
pub const BLOCK_LEN: usize = 4 * ORIENTATION_BINS;
const L2HYS_CLIP: f64 = 0.2;
const L2HYS_EPS: f64 = 1e-6;
/// Harris sensitivity.
pub const HARRIS_K: f64 = 0.04;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("no keypoints above the response threshold")]
    NoKeypoints,
    #[error("raster ({width}x{height}) is smaller than the largest patch ({patch})")]
    RasterTooSmall {
        width: usize,
        height: usize,
        patch: usize,
    },
    #[error("patch size {0} must be a positive multiple of 4")]
    InvalidPatchSize(usize),
}

impl FeatureError {
    pub fn code(&self) -> &'static str {
        match self {
            FeatureError::NoKeypoints => "NoKeypoints",
            FeatureError::RasterTooSmall { .. } => "RasterTooSmall",
            FeatureError::InvalidPatchSize(_) => "InvalidPatchSize",
        }
    }
}

/// Central-difference gradient with one-sided differences at the border;
/// nodata neighbours contribute a zero gradient.
fn gradient(r: &Raster, x: usize, y: usize) -> (f64, f64) {
    let (w, h) = (r.width(), r.height());
    let xl = x.saturating_sub(1);
    let xr = (x + 1).min(w - 1);
    let yu = y.saturating_sub(1);
    let yd = (y + 1).min(h - 1);
    let gx = if xr > xl {
        (r.get(xr, y) - r.get(xl, y)) / (xr - xl) as f64
    } else {
        0.0
    };
    let gy = if yd > yu {
        (r.get(x, yd) - r.get(x, yu)) / (yd - yu) as f64
    } else {
        0.0
    };
    (
        if gx.is_finite() { gx } else { 0.0 },
        if gy.is_finite() { gy } else { 0.0 },
    )
}

/// Per-bin integral images of gradient-magnitude votes.
#[derive(Debug, Clone)]
pub struct OrientationIntegral {
    width: usize,
    height: usize,
    /// `(width + 1) * (height + 1)` prefix sums, one array of bins per entry.
    sums: Vec<[f64; ORIENTATION_BINS]>,
}

impl OrientationIntegral {
    pub fn new(raster: &Raster) -> Self {
        let (w, h) = (raster.width(), raster.height());
        let stride = w + 1;
        let mut sums = vec![[0.0; ORIENTATION_BINS]; stride * (h + 1)];
        let bin_width = PI / ORIENTATION_BINS as f64;
        for y in 0..h {
            let mut row_acc = [0.0; ORIENTATION_BINS];
            for x in 0..w {
                let (gx, gy) = gradient(raster, x, y);
                let mag = gx.hypot(gy);
                if mag > 0.0 {
                    let theta = crate::math::rem_euclid(gy.atan2(gx), PI);
                    let pos = theta / bin_width - 0.5;
                    let lower = pos.floor();
                    let frac = pos - lower;
                    let lo = (lower as isize).rem_euclid(ORIENTATION_BINS as isize) as usize;
                    let hi = (lo + 1) % ORIENTATION_BINS;
                    row_acc[lo] += mag * (1.0 - frac);
                    row_acc[hi] += mag * frac;
                }
                let above = sums[y * stride + x + 1];
                let cell = &mut sums[(y + 1) * stride + x + 1];
                for b in 0..ORIENTATION_BINS {
                    cell[b] = above[b] + row_acc[b];
                }
            }
        }
        Self {
            width: w,
            height: h,
            sums,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Orientation histogram of the `w x h` window at `(x0, y0)`.
    pub fn histogram(&self, x0: usize, y0: usize, w: usize, h: usize) -> [f64; ORIENTATION_BINS] {
        debug_assert!(x0 + w <= self.width && y0 + h <= self.height);
        let s = self.width + 1;
        let a = &self.sums[y0 * s + x0];
        let b = &self.sums[y0 * s + x0 + w];
        let c = &self.sums[(y0 + h) * s + x0];
        let d = &self.sums[(y0 + h) * s + x0 + w];
        let mut out = [0.0; ORIENTATION_BINS];
        for i in 0..ORIENTATION_BINS {
            // Clamp away cancellation noise.
            out[i] = (d[i] - b[i] - c[i] + a[i]).max(0.0);
        }
        out
    }

    /// HOG descriptor of a `cells_x x cells_y` grid of `cell`-sized cells at
    /// `(x0, y0)`: all overlapping 2x2 blocks, L2-hys normalised, row-major.
    pub fn grid_descriptor(
        &self,
        x0: usize,
        y0: usize,
        cells_x: usize,
        cells_y: usize,
        cell: usize,
    ) -> Vec<f64> {
        let mut hists = Vec::with_capacity(cells_x * cells_y);
        for cy in 0..cells_y {
            for cx in 0..cells_x {
                hists.push(self.histogram(x0 + cx * cell, y0 + cy * cell, cell, cell));
            }
        }
        let mut out =
            Vec::with_capacity(cells_x.saturating_sub(1) * cells_y.saturating_sub(1) * BLOCK_LEN);
        for by in 0..cells_y.saturating_sub(1) {
            for bx in 0..cells_x.saturating_sub(1) {
                let mut block = [0.0; BLOCK_LEN];
                for (k, (dx, dy)) in [(0, 0), (1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
                    block[k * ORIENTATION_BINS..(k + 1) * ORIENTATION_BINS]
                        .copy_from_slice(&hists[(by + dy) * cells_x + bx + dx]);
                }
                l2_hys(&mut block);
                out.extend_from_slice(&block);
            }
        }
        out
    }
}

/// L2 normalisation, clipping at 0.2 and renormalisation. A zero block stays zero.
pub fn l2_hys(v: &mut [f64]) {
    let norm = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() + L2HYS_EPS * L2HYS_EPS).sqrt();
    if v.iter().all(|&x| x == 0.0) {
        return;
    }
    let n = norm(v);
    for x in v.iter_mut() {
        *x = (*x / n).min(L2HYS_CLIP);
    }
    let n = norm(v);
    for x in v.iter_mut() {
        *x /= n;
    }
}

/// Pearson correlation of two equally long vectors; 0 when either has no
/// variance.
pub fn normalized_correlation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "descriptor length mismatch");
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// HOG of a square patch centred on `(cx, cy)`: 4x4 cells of `patch / 4`
/// pixels, 3x3 blocks, 324 values. `None` when the patch leaves the raster.
pub fn patch_descriptor(
    integral: &OrientationIntegral,
    cx: usize,
    cy: usize,
    patch: usize,
) -> Option<Vec<f64>> {
    let half = patch / 2;
    if cx < half
        || cy < half
        || cx + patch - half > integral.width()
        || cy + patch - half > integral.height()
    {
        return None;
    }
    let cell = patch / 4;
    Some(integral.grid_descriptor(cx - half, cy - half, 4, 4, cell))
}

/// Harris response `det(M) - k trace(M)^2` with `M` summed over a
/// `(2 radius + 1)²` box.
pub fn harris_response(raster: &Raster, radius: usize, k: f64) -> Raster {
    let (w, h) = (raster.width(), raster.height());
    let mut ixx = Raster::new(w, h, 0.0);
    let mut iyy = Raster::new(w, h, 0.0);
    let mut ixy = Raster::new(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (gx, gy) = gradient(raster, x, y);
            ixx.set(x, y, gx * gx);
            iyy.set(x, y, gy * gy);
            ixy.set(x, y, gx * gy);
        }
    }
    let r = radius as isize;
    let box_sum = |img: &Raster, x: usize, y: usize| {
        let mut acc = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let xx = x as isize + dx;
                let yy = y as isize + dy;
                if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                    acc += img.get(xx as usize, yy as usize);
                }
            }
        }
        acc
    };
    Raster::from_fn(w, h, |x, y| {
        let a = box_sum(&ixx, x, y);
        let b = box_sum(&iyy, x, y);
        let c = box_sum(&ixy, x, y);
        a * b - c * c - k * (a + b) * (a + b)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub x: usize,
    pub y: usize,
    pub response: f64,
}

/// Local maxima of the Harris response above `threshold`, strongest first.
pub fn detect_corners(raster: &Raster, threshold: f64, nms_radius: usize) -> Vec<Corner> {
    let resp = harris_response(raster, 2, HARRIS_K);
    let (w, h) = (raster.width(), raster.height());
    let r = nms_radius as isize;
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = resp.get(x, y);
            if !(v > threshold) {
                continue;
            }
            let mut is_max = true;
            'nbh: for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let xx = x as isize + dx;
                    let yy = y as isize + dy;
                    if xx < 0 || yy < 0 || xx as usize >= w || yy as usize >= h {
                        continue;
                    }
                    let n = resp.get(xx as usize, yy as usize);
                    // Plateaus keep their first pixel in raster order.
                    let earlier = (dy, dx) < (0, 0);
                    if n > v || (earlier && n == v) {
                        is_max = false;
                        break 'nbh;
                    }
                }
            }
            if is_max {
                out.push(Corner { x, y, response: v });
            }
        }
    }
    out.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then((a.y, a.x).cmp(&(b.y, b.x)))
    });
    out
}

/// Keypoint with a multi-scale HOG descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub x: f64,
    pub y: f64,
    pub response: f64,
    pub descriptor: Vec<f64>,
}

/// Harris corners above `threshold` described by concatenated patch HOGs at
/// every patch size in `scales`. Corners whose largest patch would leave the
/// raster are dropped.
pub fn detect_and_describe(
    raster: &Raster,
    scales: &[usize],
    threshold: f64,
) -> Result<Vec<Feature>, FeatureError> {
    let largest = scales.iter().copied().max().unwrap_or(0);
    for &s in scales {
        if s == 0 || s % 4 != 0 {
            return Err(FeatureError::InvalidPatchSize(s));
        }
    }
    if scales.is_empty() {
        return Err(FeatureError::InvalidPatchSize(0));
    }
    if raster.width() <= largest || raster.height() <= largest {
        return Err(FeatureError::RasterTooSmall {
            width: raster.width(),
            height: raster.height(),
            patch: largest,
        });
    }
    let integral = OrientationIntegral::new(raster);
    let mut out = Vec::new();
    for c in detect_corners(raster, threshold, 2) {
        let mut descriptor = Vec::new();
        let mut complete = true;
        for &s in scales {
            match patch_descriptor(&integral, c.x, c.y, s) {
                Some(d) => descriptor.extend(d),
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if complete {
            out.push(Feature {
                x: c.x as f64,
                y: c.y as f64,
                response: c.response,
                descriptor,
            });
        }
    }
    if out.is_empty() {
        return Err(FeatureError::NoKeypoints);
    }
    Ok(out)
}
