//! Single-band floating point raster.
//!
//! Pixel `(x, y)` sits at continuous coordinate `(x, y)`: integer
//! coordinates are pixel centres and pixel `x` covers `[x - 0.5, x + 0.5]`.
//! NaN marks nodata.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    /// Wraps row-major data. Panics if the length does not match.
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "raster data length mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Bilinear sample at continuous coordinates. Returns `None` outside
    /// `[0, w-1] x [0, h-1]` or when any contributing pixel is nodata.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if self.width == 0 || self.height == 0 {
            return None;
        }
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = x - x0 as f64;
        let ty = y - y0 as f64;
        let v = bilerp(
            self.get(x0, y0),
            self.get(x1, y0),
            self.get(x0, y1),
            self.get(x1, y1),
            tx,
            ty,
        );
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    /// Cuts out the window starting at `(x0, y0)`. Panics when it does not fit.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Raster {
        assert!(
            x0 + width <= self.width && y0 + height <= self.height,
            "crop out of bounds"
        );
        Raster::from_fn(width, height, |x, y| self.get(x0 + x, y0 + y))
    }

    /// Separable box mean with the given radius; borders are clamped.
    pub fn box_blur(&self, radius: usize) -> Raster {
        if radius == 0 || self.is_empty() {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        let r = radius as isize;
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dx in -r..=r {
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    acc += self.data[y * w + xx];
                }
                tmp[y * w + x] = acc / (2 * radius + 1) as f64;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -r..=r {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    acc += tmp[yy * w + x];
                }
                out[y * w + x] = acc / (2 * radius + 1) as f64;
            }
        }
        Raster::from_vec(w, h, out)
    }

    /// Minimum and maximum over finite pixels.
    pub fn finite_range(&self) -> Option<(f64, f64)> {
        let mut it = self.data.iter().copied().filter(|v| v.is_finite());
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}

#[inline]
pub(crate) fn bilerp(v00: f64, v10: f64, v01: f64, v11: f64, tx: f64, ty: f64) -> f64 {
    let top = v00 + (v10 - v00) * tx;
    let bottom = v01 + (v11 - v01) * tx;
    top + (bottom - top) * ty
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_center_of_cell() {
        let r = Raster::from_vec(2, 2, vec![0.0, 0.0, 0.0, 4.0]);
        assert_eq!(r.sample_bilinear(0.5, 0.5), Some(1.0));
        assert_eq!(r.sample_bilinear(1.0, 1.0), Some(4.0));
        assert_eq!(r.sample_bilinear(1.01, 1.0), None);
    }

    #[test]
    fn blur_preserves_constant() {
        let r = Raster::new(7, 5, 3.0).box_blur(2);
        assert!(r.data().iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }
}
