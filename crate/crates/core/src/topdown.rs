//! Ground panorama to bird's-eye view, registration against an aerial tile,
//! and per-tile change scoring.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI, TAU};
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{DMatrix, Matrix3, Point2, Vector3, SVD};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::math::{median, wrap_two_pi};
use crate::raster::Raster;

pub use crate::features::{detect_and_describe, Feature};

/// Default square extent of a top-down view, meters.
pub const DEFAULT_EXTENT_M: f64 = 150.0;
/// Depression below which panorama rows are too distorted to use.
pub const DEFAULT_MIN_DEPRESSION_DEG: f64 = 5.0;
pub const DEFAULT_KNN_RATIO: f64 = 0.8;
/// Scale factor from MAD to a normal standard deviation.
pub const MAD_SCALE: f64 = 1.4826;
const MAD_FLOOR: f64 = 1e-9;
/// Minimum share of the footprint that must land on the aerial tile.
pub const MIN_COVERAGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopDownError {
    #[error("camera height {0} m must be positive")]
    NonPositiveHeight(f64),
    #[error("panorama is {width}x{height}, width must be twice the height")]
    NotEquirectangular { width: usize, height: usize },
    #[error("invalid top-down grid: {0}")]
    InvalidGrid(&'static str),
    #[error("{count} matches, at least 4 required")]
    TooFewMatches { count: usize },
    #[error("best consensus set has {best} inliers, at least 4 required")]
    NoConsensus { best: usize },
    #[error("homography is singular")]
    SingularHomography,
    #[error("footprint covers {coverage:.3} of itself inside the aerial tile")]
    FootprintOutsideAerial { coverage: f64 },
    #[error("regions differ in size: {a:?} vs {b:?}")]
    SizeMismatch {
        a: (usize, usize),
        b: (usize, usize),
    },
    #[error("tile size {tile} does not divide the {width}x{height} region")]
    TileDoesNotDivide {
        tile: usize,
        width: usize,
        height: usize,
    },
    #[error("every tile is degenerate")]
    NoValidTiles,
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
}

impl TopDownError {
    pub fn code(&self) -> &'static str {
        match self {
            TopDownError::NonPositiveHeight(_) => "NonPositiveHeight",
            TopDownError::NotEquirectangular { .. } => "NotEquirectangular",
            TopDownError::InvalidGrid(_) => "InvalidGrid",
            TopDownError::TooFewMatches { .. } => "TooFewMatches",
            TopDownError::NoConsensus { .. } => "NoConsensus",
            TopDownError::SingularHomography => "SingularHomography",
            TopDownError::FootprintOutsideAerial { .. } => "FootprintOutsideAerial",
            TopDownError::SizeMismatch { .. } => "SizeMismatch",
            TopDownError::TileDoesNotDivide { .. } => "TileDoesNotDivide",
            TopDownError::NoValidTiles => "NoValidTiles",
            TopDownError::Feature(e) => e.code(),
        }
    }
}

/// Equirectangular panorama. Column `x` looks at azimuth
/// `heading0 + x·2π/W`, row `y` at elevation `π/2 − (y + 0.5)·π/H`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanoramaImage {
    pub raster: Raster,
    pub heading0: f64,
    pub camera_height: f64,
}

impl PanoramaImage {
    pub fn new(raster: Raster, heading0: f64, camera_height: f64) -> Result<Self, TopDownError> {
        if raster.width() != 2 * raster.height() || raster.height() == 0 {
            return Err(TopDownError::NotEquirectangular {
                width: raster.width(),
                height: raster.height(),
            });
        }
        if !(camera_height > 0.0) {
            return Err(TopDownError::NonPositiveHeight(camera_height));
        }
        Ok(Self {
            raster,
            heading0,
            camera_height,
        })
    }

    /// Fractional pixel coordinates looking at (`azimuth`, `elevation`).
    pub fn pixel_of(&self, azimuth: f64, elevation: f64) -> (f64, f64) {
        let w = self.raster.width() as f64;
        let h = self.raster.height() as f64;
        (
            wrap_two_pi(azimuth - self.heading0) * w / TAU,
            (FRAC_PI_2 - elevation) * h / PI - 0.5,
        )
    }

    /// Bilinear sample, wrapping horizontally and clamping vertically.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let (w, h) = (self.raster.width(), self.raster.height());
        let y = y.clamp(0.0, (h - 1) as f64);
        let x0f = x.floor();
        let tx = x - x0f;
        let y0 = (y.floor() as usize).min(h - 1);
        let ty = y - y0 as f64;
        let y1 = (y0 + 1).min(h - 1);
        let x0 = crate::math::rem_euclid(x0f, w as f64) as usize % w;
        let x1 = (x0 + 1) % w;
        let r = &self.raster;
        let top = r.get(x0, y0) * (1.0 - tx) + r.get(x1, y0) * tx;
        let bottom = r.get(x0, y1) * (1.0 - tx) + r.get(x1, y1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// Panorama sampling coordinates for a ground point at (`dx` east, `dy`
/// north) of the camera, or `None` when it is seen shallower than
/// `min_depression`.
pub fn ground_sample_coordinates(
    pano: &PanoramaImage,
    dx: f64,
    dy: f64,
    min_depression: f64,
) -> Option<(f64, f64)> {
    let dist = (dx * dx + dy * dy).sqrt();
    let depression = pano.camera_height.atan2(dist);
    if depression < min_depression {
        return None;
    }
    let azimuth = dx.atan2(dy);
    Some(pano.pixel_of(azimuth, -depression))
}

/// North-up ground raster centred on the camera; NaN marks nodata.
#[derive(Debug, Clone, PartialEq)]
pub struct TopDownView {
    pub raster: Raster,
    pub gsd: f64,
    pub extent: f64,
    pub north_up: bool,
}

impl TopDownView {
    /// Ground offset (east, north) of the centre of cell (`col`, `row`).
    pub fn cell_offset(&self, col: usize, row: usize) -> (f64, f64) {
        cell_offset(self.raster.width(), self.gsd, col, row)
    }
}

fn cell_offset(n: usize, gsd: f64, col: usize, row: usize) -> (f64, f64) {
    let half = 0.5 * n as f64;
    (
        (col as f64 + 0.5 - half) * gsd,
        (half - row as f64 - 0.5) * gsd,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopDownParams {
    pub gsd: f64,
    pub extent: f64,
    pub min_depression: f64,
}

impl Default for TopDownParams {
    fn default() -> Self {
        Self {
            gsd: 0.5,
            extent: DEFAULT_EXTENT_M,
            min_depression: DEFAULT_MIN_DEPRESSION_DEG.to_radians(),
        }
    }
}

/// Number of cells along each side for `params`.
pub fn topdown_size(params: &TopDownParams) -> Result<usize, TopDownError> {
    if !(params.gsd > 0.0) || !params.extent.is_finite() || params.extent / 2.0 < params.gsd {
        return Err(TopDownError::InvalidGrid("need extent/2 >= gsd > 0"));
    }
    Ok((params.extent / params.gsd).round() as usize)
}

/// One row of the top-down view.
pub fn topdown_row(pano: &PanoramaImage, params: &TopDownParams, row: usize) -> Vec<f64> {
    let n = (params.extent / params.gsd).round() as usize;
    (0..n)
        .map(|col| {
            let (dx, dy) = cell_offset(n, params.gsd, col, row);
            match ground_sample_coordinates(pano, dx, dy, params.min_depression) {
                Some((x, y)) => pano.sample(x, y),
                None => f64::NAN,
            }
        })
        .collect()
}

/// Assembles rows from [`topdown_row`].
pub fn assemble_topdown(params: &TopDownParams, rows: Vec<Vec<f64>>) -> TopDownView {
    let n = rows.len();
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    TopDownView {
        raster: Raster::from_vec(n, n, data),
        gsd: params.gsd,
        extent: n as f64 * params.gsd,
        north_up: true,
    }
}

/// Inverse perspective mapping of the panorama onto flat ground.
pub fn pano_to_topdown(
    pano: &PanoramaImage,
    params: &TopDownParams,
) -> Result<TopDownView, TopDownError> {
    if !(pano.camera_height > 0.0) {
        return Err(TopDownError::NonPositiveHeight(pano.camera_height));
    }
    let n = topdown_size(params)?;
    let rows = (0..n).map(|r| topdown_row(pano, params, r)).collect();
    Ok(assemble_topdown(params, rows))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnMatch {
    pub a: usize,
    pub b: usize,
    pub d1: f64,
    pub d2: f64,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Two nearest B descriptors for every A descriptor by exhaustive search;
/// kept when `d1 < ratio·d2`. A single B descriptor has `d2 = ∞`.
pub fn match_knn(a: &[Vec<f64>], b: &[Vec<f64>], ratio: f64) -> Vec<KnnMatch> {
    let mut out = Vec::new();
    for (i, da) in a.iter().enumerate() {
        let (mut best, mut d1, mut d2) = (usize::MAX, f64::INFINITY, f64::INFINITY);
        for (j, db) in b.iter().enumerate() {
            let d = euclidean(da, db);
            if d < d1 {
                d2 = d1;
                d1 = d;
                best = j;
            } else if d < d2 {
                d2 = d;
            }
        }
        if best != usize::MAX && d1 < ratio * d2 {
            out.push(KnnMatch {
                a: i,
                b: best,
                d1,
                d2,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    pub matrix: Matrix3<f64>,
}

impl Homography {
    /// Scales so the bottom-right entry is 1 when it is not ~0.
    pub fn new(matrix: Matrix3<f64>) -> Result<Self, TopDownError> {
        let m = if matrix[(2, 2)].abs() > 1e-12 {
            matrix / matrix[(2, 2)]
        } else {
            matrix / matrix.norm()
        };
        if !m.iter().all(|v| v.is_finite()) || m.determinant().abs() <= 1e-12 {
            return Err(TopDownError::SingularHomography);
        }
        Ok(Self { matrix: m })
    }

    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
        }
    }

    pub fn apply(&self, p: &Point2<f64>) -> Option<Point2<f64>> {
        let v = self.matrix * Vector3::new(p.x, p.y, 1.0);
        if v.z.abs() <= 1e-15 {
            return None;
        }
        Some(Point2::new(v.x / v.z, v.y / v.z))
    }

    pub fn inverse(&self) -> Result<Self, TopDownError> {
        Self::new(
            self.matrix
                .try_inverse()
                .ok_or(TopDownError::SingularHomography)?,
        )
    }

    /// `other ∘ self`: apply `self` first.
    pub fn then(&self, other: &Homography) -> Result<Self, TopDownError> {
        Self::new(other.matrix * self.matrix)
    }

    pub fn row_major(&self) -> [f64; 9] {
        let m = &self.matrix;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self, TopDownError> {
        Self::new(Matrix3::from_row_slice(v))
    }
}

/// Point pair `source → target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMatch {
    pub source: Point2<f64>,
    pub target: Point2<f64>,
}

fn similarity_normalizer(
    points: impl Iterator<Item = Point2<f64>> + Clone,
) -> Option<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points
        .clone()
        .fold((0.0, 0.0), |a, p| (a.0 + p.x, a.1 + p.y));
    let (mx, my) = (sx / n, sy / n);
    let d = points
        .map(|p| ((p.x - mx).powi(2) + (p.y - my).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(d > 0.0) {
        return None;
    }
    let s = core::f64::consts::SQRT_2 / d;
    Some(Matrix3::new(
        s,
        0.0,
        -s * mx,
        0.0,
        s,
        -s * my,
        0.0,
        0.0,
        1.0,
    ))
}

/// Normalised DLT homography from at least four matches.
pub fn homography_dlt(matches: &[PointMatch]) -> Option<Homography> {
    if matches.len() < 4 {
        return None;
    }
    let ts = similarity_normalizer(matches.iter().map(|m| m.source))?;
    let tt = similarity_normalizer(matches.iter().map(|m| m.target))?;
    let rows = (2 * matches.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, m) in matches.iter().enumerate() {
        let s = ts * Vector3::new(m.source.x, m.source.y, 1.0);
        let t = tt * Vector3::new(m.target.x, m.target.y, 1.0);
        let (x, y) = (s.x / s.z, s.y / s.z);
        let (u, v) = (t.x / t.z, t.y / t.z);
        let r = 2 * i;
        a[(r, 0)] = -x;
        a[(r, 1)] = -y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = u * x;
        a[(r, 7)] = u * y;
        a[(r, 8)] = u;
        a[(r + 1, 3)] = -x;
        a[(r + 1, 4)] = -y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = v * x;
        a[(r + 1, 7)] = v * y;
        a[(r + 1, 8)] = v;
    }
    let svd = SVD::new(a, false, true);
    let v_t = svd.v_t?;
    let (imin, _) = svd.singular_values.argmin();
    let h = v_t.row(imin);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let m = tt.try_inverse()? * hn * ts;
    Homography::new(m).ok()
}

/// Squared symmetric transfer error `|t − H s|² + |s − H⁻¹ t|²`.
pub fn symmetric_transfer_sq(h: &Homography, inverse: &Homography, m: &PointMatch) -> f64 {
    match (h.apply(&m.source), inverse.apply(&m.target)) {
        (Some(f), Some(b)) => (f - m.target).norm_squared() + (b - m.source).norm_squared(),
        _ => f64::INFINITY,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomographyFit {
    pub homography: Homography,
    pub inliers: Vec<usize>,
}

fn inliers_of(h: &Homography, matches: &[PointMatch], tol: f64) -> Vec<usize> {
    let Ok(inv) = h.inverse() else {
        return Vec::new();
    };
    (0..matches.len())
        .filter(|&i| symmetric_transfer_sq(h, &inv, &matches[i]) < tol * tol)
        .collect()
}

fn collinear(a: &Point2<f64>, b: &Point2<f64>, c: &Point2<f64>) -> bool {
    let cross = (b - a).perp(&(c - a));
    cross.abs() <= 1e-9 * (1.0 + (b - a).norm_squared() + (c - a).norm_squared())
}

fn sample_degenerate(s: &[PointMatch]) -> bool {
    for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
        if collinear(&s[i].source, &s[j].source, &s[k].source)
            || collinear(&s[i].target, &s[j].target, &s[k].target)
        {
            return true;
        }
    }
    false
}

/// RANSAC over minimal samples of four with normalised DLT; the largest
/// consensus set (earliest on ties) is re-fitted on all its inliers.
pub fn ransac_homography(
    matches: &[PointMatch],
    iterations: usize,
    tol_px: f64,
    seed: u64,
) -> Result<HomographyFit, TopDownError> {
    if matches.len() < 4 {
        return Err(TopDownError::TooFewMatches {
            count: matches.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Vec<usize> = Vec::new();
    let mut s = [PointMatch {
        source: Point2::origin(),
        target: Point2::origin(),
    }; 4];
    for _ in 0..iterations {
        for (slot, i) in s
            .iter_mut()
            .zip(sample(&mut rng, matches.len(), 4))
        {
            *slot = matches[i];
        }
        if sample_degenerate(&s) {
            continue;
        }
        let Some(h) = homography_dlt(&s) else {
            continue;
        };
        let inliers = inliers_of(&h, matches, tol_px);
        if inliers.len() > best.len() {
            best = inliers;
        }
    }
    if best.len() < 4 {
        return Err(TopDownError::NoConsensus { best: best.len() });
    }
    let set: Vec<PointMatch> = best.iter().map(|&i| matches[i]).collect();
    let homography = homography_dlt(&set).ok_or(TopDownError::NoConsensus { best: best.len() })?;
    let inliers = inliers_of(&homography, matches, tol_px);
    Ok(HomographyFit {
        homography,
        inliers,
    })
}

/// Polygon area by the shoelace formula (absolute value).
pub fn polygon_area(poly: &[Point2<f64>]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += a.x * b.y - b.x * a.y;
    }
    0.5 * s.abs()
}

/// Sutherland-Hodgman clip of `poly` against an axis-aligned rectangle.
pub fn clip_to_rect(poly: &[Point2<f64>], min: Point2<f64>, max: Point2<f64>) -> Vec<Point2<f64>> {
    // Each edge: keep points where `inside(p) >= 0`.
    let edges: [(usize, f64, f64); 4] = [
        (0, min.x, 1.0),
        (0, max.x, -1.0),
        (1, min.y, 1.0),
        (1, max.y, -1.0),
    ];
    let mut out: Vec<Point2<f64>> = poly.to_vec();
    for (axis, bound, sign) in edges {
        if out.is_empty() {
            break;
        }
        let inside = |p: &Point2<f64>| sign * (p[axis] - bound);
        let input = core::mem::take(&mut out);
        let n = input.len();
        for i in 0..n {
            let (cur, next) = (input[i], input[(i + 1) % n]);
            let (ic, inx) = (inside(&cur), inside(&next));
            if ic >= 0.0 {
                out.push(cur);
            }
            if (ic >= 0.0) != (inx >= 0.0) {
                let t = ic / (ic - inx);
                out.push(cur + (next - cur) * t);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegisteredCrop {
    pub crop: Raster,
    /// Aerial pixel of the crop's top-left pixel.
    pub origin: (usize, usize),
    /// Top-down footprint corners in aerial pixel coordinates, clockwise
    /// from the top-left.
    pub footprint: [Point2<f64>; 4],
    /// Share of the footprint area inside the aerial tile.
    pub coverage: f64,
    pub gsd: f64,
}

/// Outline of a `width`×`height` raster; pixel centres sit on integers.
pub fn raster_outline(width: usize, height: usize) -> [Point2<f64>; 4] {
    let (w, h) = (width as f64 - 0.5, height as f64 - 0.5);
    [
        Point2::new(-0.5, -0.5),
        Point2::new(w, -0.5),
        Point2::new(w, h),
        Point2::new(-0.5, h),
    ]
}

/// Maps the top-down outline into the aerial tile with `h` (top-down pixel
/// → aerial pixel) and cuts out the bounding crop.
pub fn register_crop(
    topdown: &TopDownView,
    aerial: &Raster,
    aerial_gsd: f64,
    h: &Homography,
) -> Result<RegisteredCrop, TopDownError> {
    if h.matrix.determinant().abs() <= 1e-12 {
        return Err(TopDownError::SingularHomography);
    }
    let outline = raster_outline(topdown.raster.width(), topdown.raster.height());
    let mut footprint = [Point2::origin(); 4];
    for (f, c) in footprint.iter_mut().zip(outline.iter()) {
        *f = h.apply(c).ok_or(TopDownError::SingularHomography)?;
    }
    let area = polygon_area(&footprint);
    let [min, max] = [
        Point2::new(-0.5, -0.5),
        Point2::new(aerial.width() as f64 - 0.5, aerial.height() as f64 - 0.5),
    ];
    let clipped = clip_to_rect(&footprint, min, max);
    let coverage = if area > 0.0 {
        polygon_area(&clipped) / area
    } else {
        0.0
    };
    if coverage < MIN_COVERAGE || clipped.len() < 3 {
        return Err(TopDownError::FootprintOutsideAerial { coverage });
    }
    let (mut lo, mut hi) = (
        Point2::new(f64::INFINITY, f64::INFINITY),
        Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
    );
    for p in &clipped {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let x0 = ((lo.x + 0.5).floor().max(0.0) as usize).min(aerial.width() - 1);
    let y0 = ((lo.y + 0.5).floor().max(0.0) as usize).min(aerial.height() - 1);
    let x1 = ((hi.x - 0.5).ceil().max(0.0) as usize)
        .min(aerial.width() - 1)
        .max(x0);
    let y1 = ((hi.y - 0.5).ceil().max(0.0) as usize)
        .min(aerial.height() - 1)
        .max(y0);
    let crop = aerial.crop(x0, y0, x1 - x0 + 1, y1 - y0 + 1);
    Ok(RegisteredCrop {
        crop,
        origin: (x0, y0),
        footprint,
        coverage,
        gsd: aerial_gsd,
    })
}

/// Resamples the aerial tile onto the top-down pixel grid through `h`
/// (top-down pixel → aerial pixel); NaN outside the tile.
pub fn warp_aerial_to_topdown(
    aerial: &Raster,
    h: &Homography,
    width: usize,
    height: usize,
) -> Raster {
    Raster::from_fn(width, height, |x, y| {
        h.apply(&Point2::new(x as f64, y as f64))
            .and_then(|p| aerial.sample_bilinear(p.x, p.y))
            .unwrap_or(f64::NAN)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneClass {
    Urban,
    Rural,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangeThresholds {
    pub r_min: f64,
    pub z_min: f64,
    /// Flagged-tile fraction above which the scene counts as changed.
    pub fraction: f64,
}

impl ChangeThresholds {
    pub fn for_class(class: SceneClass) -> Self {
        let r_min = match class {
            SceneClass::Rural => 0.35,
            SceneClass::Urban => 0.20,
        };
        Self {
            r_min,
            z_min: -2.5,
            fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileScore {
    pub row: usize,
    pub col: usize,
    pub r: f64,
    pub z: f64,
    pub flag: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChangeReport {
    pub class: SceneClass,
    pub tiles: Vec<TileScore>,
    /// Tiles with zero variance (or too few valid pixels) on either side.
    pub degenerate: Vec<(usize, usize)>,
    pub changed_fraction: f64,
    pub changed: bool,
}

/// Zero-mean normalised cross-correlation over pixels finite in both;
/// `None` when either side has no variance.
pub fn ncc(a: &[f64], b: &[f64]) -> Option<f64> {
    let pairs = || {
        a.iter()
            .zip(b)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
    };
    let n = pairs().count();
    if n < 2 {
        return None;
    }
    let (ma, mb) = pairs().fold((0.0, 0.0), |s, (x, y)| (s.0 + x, s.1 + y));
    let (ma, mb) = (ma / n as f64, mb / n as f64);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in pairs() {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn tile(r: &Raster, col: usize, row: usize, size: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(size * size);
    for y in row * size..(row + 1) * size {
        v.extend_from_slice(&r.row(y)[col * size..(col + 1) * size]);
    }
    v
}

/// Per-tile NCC, robust z-scores against the region median/MAD, flags and
/// scene verdict.
pub fn change_zscore(
    topdown: &Raster,
    aerial: &Raster,
    tile_size: usize,
    class: SceneClass,
    thresholds: &ChangeThresholds,
) -> Result<ChangeReport, TopDownError> {
    let (w, h) = (topdown.width(), topdown.height());
    if (w, h) != (aerial.width(), aerial.height()) {
        return Err(TopDownError::SizeMismatch {
            a: (w, h),
            b: (aerial.width(), aerial.height()),
        });
    }
    if tile_size == 0 || w % tile_size != 0 || h % tile_size != 0 || w == 0 || h == 0 {
        return Err(TopDownError::TileDoesNotDivide {
            tile: tile_size,
            width: w,
            height: h,
        });
    }
    let mut scored = Vec::new();
    let mut degenerate = Vec::new();
    for row in 0..h / tile_size {
        for col in 0..w / tile_size {
            match ncc(
                &tile(topdown, col, row, tile_size),
                &tile(aerial, col, row, tile_size),
            ) {
                Some(r) => scored.push((row, col, r)),
                None => degenerate.push((row, col)),
            }
        }
    }
    if scored.is_empty() {
        return Err(TopDownError::NoValidTiles);
    }
    let rs: Vec<f64> = scored.iter().map(|t| t.2).collect();
    let med = median(&rs);
    let dev: Vec<f64> = rs.iter().map(|r| (r - med).abs()).collect();
    let scale = MAD_SCALE * median(&dev).max(MAD_FLOOR);
    let tiles: Vec<TileScore> = scored
        .into_iter()
        .map(|(row, col, r)| {
            let z = (r - med) / scale;
            TileScore {
                row,
                col,
                r,
                z,
                flag: r < thresholds.r_min || z < thresholds.z_min,
            }
        })
        .collect();
    let changed_fraction = tiles.iter().filter(|t| t.flag).count() as f64 / tiles.len() as f64;
    Ok(ChangeReport {
        class,
        tiles,
        degenerate,
        changed_fraction,
        changed: changed_fraction > thresholds.fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn north_cell_at_camera_height() {
        let pano = PanoramaImage::new(Raster::new(360, 180, 0.0), 0.0, 10.0).unwrap();
        let (x, y) = ground_sample_coordinates(&pano, 0.0, 10.0, 0.0).unwrap();
        assert!(x.abs() < 1e-12);
        // Elevation −45° is three quarters of the way down.
        assert!((y - (135.0 - 0.5)).abs() < 1e-9);
        assert!(ground_sample_coordinates(&pano, 0.0, 1000.0, 5f64.to_radians()).is_none());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(
            PanoramaImage::new(Raster::new(10, 10, 0.0), 0.0, 1.0)
                .unwrap_err()
                .code(),
            "NotEquirectangular"
        );
        assert_eq!(
            PanoramaImage::new(Raster::new(20, 10, 0.0), 0.0, 0.0)
                .unwrap_err()
                .code(),
            "NonPositiveHeight"
        );
        let p = TopDownParams {
            gsd: 10.0,
            extent: 15.0,
            ..TopDownParams::default()
        };
        assert!(topdown_size(&p).is_err());
    }

    #[test]
    fn default_extent() {
        let p = TopDownParams::default();
        assert_eq!(p.extent, 150.0);
        assert_eq!(topdown_size(&p).unwrap(), 300);
    }

    #[test]
    fn knn_examples() {
        let a = alloc::vec![
            alloc::vec![0.0, 0.0],
            alloc::vec![1.0, 0.0],
            alloc::vec![5.0, 5.0]
        ];
        let m = match_knn(&a, &a, 0.8);
        assert_eq!(m.len(), 3);
        assert!(m.iter().all(|k| k.a == k.b && k.d1 == 0.0));
        let b = alloc::vec![alloc::vec![-1.0, 0.0], alloc::vec![1.0, 0.0]];
        assert!(match_knn(&[alloc::vec![0.0, 0.0]], &b, 0.8).is_empty());
    }

    #[test]
    fn clip_keeps_inner_square() {
        let sq = [
            Point2::new(1.0, 1.0),
            Point2::new(3.0, 1.0),
            Point2::new(3.0, 3.0),
            Point2::new(1.0, 3.0),
        ];
        let c = clip_to_rect(&sq, Point2::new(2.0, 0.0), Point2::new(10.0, 10.0));
        assert!((polygon_area(&c) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_regions_are_unchanged() {
        let r = Raster::from_fn(32, 32, |x, y| ((x * 7 + y * 13) % 11) as f64);
        let rep = change_zscore(
            &r,
            &r,
            8,
            SceneClass::Rural,
            &ChangeThresholds::for_class(SceneClass::Rural),
        )
        .unwrap();
        assert!(rep
            .tiles
            .iter()
            .all(|t| (t.r - 1.0).abs() < 1e-12 && !t.flag));
        assert!(!rep.changed);
        let flat = Raster::new(32, 32, 1.0);
        let rep = change_zscore(
            &flat,
            &r,
            16,
            SceneClass::Urban,
            &ChangeThresholds::for_class(SceneClass::Urban),
        );
        assert_eq!(rep.unwrap_err(), TopDownError::NoValidTiles);
    }
}
