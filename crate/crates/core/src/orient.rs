//! Heading, tilt and roll of a located query image.
//!
//! Two methods: subsequence dynamic time warping of the image skyline
//! against a 360° reference horizon, and multi-scale HOG correlation of the
//! image against a rendered cylindrical strip.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::Vector3;
use thiserror::Error;

use crate::camera::{Angles, CameraIntrinsics, CameraPose};
use crate::features::{normalized_correlation, OrientationIntegral};
use crate::math::{circular_mean, wrap_pi, wrap_two_pi};
use crate::panorama::{PanoramaError, PanoramaStrip, SyntheticPanorama, ViewJob};
use crate::raster::Raster;

/// Weight of the slope term in the DTW local cost.
pub const DEFAULT_SLOPE_WEIGHT: f64 = 0.5;
pub const MIN_VALID_COLUMNS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrientError {
    #[error("no column contains a skyline edge")]
    AllColumnsInvalid,
    #[error("{valid} valid skyline columns, at least {MIN_VALID_COLUMNS} required")]
    TooFewValidColumns { valid: usize },
    #[error("alignment pairs do not span two columns")]
    DegenerateFit,
    #[error("query of {width}x{height} px holds fewer than 2x2 cells of {cell} px")]
    QueryTooSmallForScale {
        width: usize,
        height: usize,
        cell: usize,
    },
    #[error("invalid orientation parameter: {0}")]
    InvalidParameter(&'static str),
    #[error(transparent)]
    Panorama(#[from] PanoramaError),
}

impl OrientError {
    pub fn code(&self) -> &'static str {
        match self {
            OrientError::AllColumnsInvalid => "AllColumnsInvalid",
            OrientError::TooFewValidColumns { .. } => "TooFewValidColumns",
            OrientError::DegenerateFit => "DegenerateFit",
            OrientError::QueryTooSmallForScale { .. } => "QueryTooSmallForScale",
            OrientError::InvalidParameter(_) => "InvalidParameter",
            OrientError::Panorama(e) => e.code(),
        }
    }
}

/// 360° horizon sampled at a uniform azimuth step starting at north.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSkyline {
    pub azimuth_step: f64,
    pub elevations: Vec<f64>,
}

impl ReferenceSkyline {
    pub fn new(elevations: Vec<f64>) -> Result<Self, OrientError> {
        if elevations.len() < 4 || elevations.iter().any(|e| !e.is_finite()) {
            return Err(OrientError::InvalidParameter(
                "reference needs >= 4 finite samples",
            ));
        }
        Ok(Self {
            azimuth_step: TAU / elevations.len() as f64,
            elevations,
        })
    }

    pub fn from_panorama(pano: &SyntheticPanorama) -> Self {
        Self {
            azimuth_step: pano.azimuth_step,
            elevations: pano.elevations(),
        }
    }

    pub fn len(&self) -> usize {
        self.elevations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elevations.is_empty()
    }

    /// Rotated copy: sample `j` of the result is sample `j - shift` of `self`.
    pub fn rotated(&self, shift: usize) -> Self {
        let n = self.len();
        let elevations = (0..n)
            .map(|j| self.elevations[(j + n - shift % n) % n])
            .collect();
        Self {
            azimuth_step: self.azimuth_step,
            elevations,
        }
    }

    /// Central-difference slope per azimuth step, circular.
    fn slopes(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|j| 0.5 * (self.elevations[(j + 1) % n] - self.elevations[(j + n - 1) % n]))
            .collect()
    }
}

/// Skyline row per image column, `None` where no edge was found.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySkyline {
    pub rows: Vec<Option<f64>>,
}

impl QuerySkyline {
    pub fn valid_count(&self) -> usize {
        self.rows.iter().filter(|r| r.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkylineParams {
    /// Minimum vertical gradient magnitude, in intensity units per pixel.
    pub threshold: f64,
    pub smoothing_radius: usize,
}

impl Default for SkylineParams {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            smoothing_radius: 1,
        }
    }
}

/// Topmost vertical edge per column. The edge is the gradient maximum of the
/// first run of rows above the threshold, refined with a parabola fit.
pub fn extract_image_skyline(
    image: &Raster,
    params: SkylineParams,
) -> Result<QuerySkyline, OrientError> {
    if image.is_empty() {
        return Err(OrientError::InvalidParameter("empty image"));
    }
    if !(params.threshold > 0.0) {
        return Err(OrientError::InvalidParameter("threshold must be positive"));
    }
    let blurred = image.box_blur(params.smoothing_radius);
    let (w, h) = (blurred.width(), blurred.height());
    let mut rows = vec![None; w];
    if h >= 3 {
        let grad = |x: usize, y: usize| {
            let g = 0.5 * (blurred.get(x, y + 1) - blurred.get(x, y - 1)).abs();
            if g.is_finite() {
                g
            } else {
                0.0
            }
        };
        for (x, slot) in rows.iter_mut().enumerate() {
            let Some(start) = (1..h - 1).find(|&y| grad(x, y) > params.threshold) else {
                continue;
            };
            let mut best = start;
            let mut y = start;
            while y < h - 1 && grad(x, y) > params.threshold {
                if grad(x, y) > grad(x, best) {
                    best = y;
                }
                y += 1;
            }
            let g0 = grad(x, best);
            let gm = if best > 1 { grad(x, best - 1) } else { g0 };
            let gp = if best + 2 < h { grad(x, best + 1) } else { g0 };
            let denom = gm - 2.0 * g0 + gp;
            let delta = if denom < 0.0 {
                (0.5 * (gm - gp) / denom).clamp(-0.5, 0.5)
            } else {
                0.0
            };
            *slot = Some(best as f64 + delta);
        }
    }
    let skyline = QuerySkyline { rows };
    if skyline.valid_count() == 0 {
        return Err(OrientError::AllColumnsInvalid);
    }
    Ok(skyline)
}

/// Sky/ground boundary of a rendered view per column, found by bisection on
/// the continuous row coordinate. Columns that are all sky or all ground
/// are `None`.
pub fn render_query_skyline(job: &ViewJob<'_>, tolerance_px: f64) -> QuerySkyline {
    let h = job.height() as f64;
    let rows = (0..job.width())
        .map(|u| {
            let u = u as f64;
            let (mut sky, mut ground) = (-0.5, h - 0.5);
            if job.hit(u, sky).is_some() || job.hit(u, ground).is_none() {
                return None;
            }
            while ground - sky > tolerance_px {
                let mid = 0.5 * (sky + ground);
                if job.hit(u, mid).is_some() {
                    ground = mid;
                } else {
                    sky = mid;
                }
            }
            Some(0.5 * (sky + ground))
        })
        .collect();
    QuerySkyline { rows }
}

/// Valid skyline columns converted to azimuth offsets (relative to the
/// camera heading) and elevation angles under a tilt/roll hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryProfile {
    pub columns: Vec<f64>,
    pub offsets: Vec<f64>,
    pub elevations: Vec<f64>,
}

impl QueryProfile {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

pub fn query_profile(
    skyline: &QuerySkyline,
    intrinsics: &CameraIntrinsics,
    tilt: f64,
    roll: f64,
) -> QueryProfile {
    let pose = CameraPose::new(Vector3::zeros(), Angles::new(0.0, tilt, roll), *intrinsics);
    let mut p = QueryProfile {
        columns: Vec::new(),
        offsets: Vec::new(),
        elevations: Vec::new(),
    };
    for (c, row) in skyline.rows.iter().enumerate() {
        if let Some(v) = row {
            let d = pose.pixel_ray(c as f64, *v);
            p.columns.push(c as f64);
            p.offsets.push(wrap_pi(d.x.atan2(d.y)));
            p.elevations.push(d.z.atan2(d.x.hypot(d.y)));
        }
    }
    p
}

/// One matched pair of a DTW path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedPair {
    pub query_index: usize,
    /// Index into the reference duplicated over two turns.
    pub reference_index: usize,
    pub column: f64,
    /// Query elevation minus reference elevation.
    pub residual: f64,
    pub local_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwAlignment {
    pub path: Vec<AlignedPair>,
    pub total_cost: f64,
    /// Total cost divided by the path length.
    pub cost: f64,
    pub heading: f64,
}

/// Minimum-cost open-begin/open-end subsequence path through an `n x m`
/// row-major local cost matrix. Steps are (1,1), (1,0) and (0,1); ties
/// prefer them in that order, and the lowest end column wins.
pub fn dtw_subsequence(costs: &[f64], n: usize, m: usize) -> (f64, Vec<(usize, usize)>) {
    assert_eq!(costs.len(), n * m, "cost matrix size mismatch");
    if n == 0 || m == 0 {
        return (0.0, Vec::new());
    }
    // 0 start, 1 diagonal, 2 vertical (from i-1), 3 horizontal (from j-1)
    let mut acc = vec![0.0; n * m];
    let mut back = vec![0u8; n * m];
    acc[..m].copy_from_slice(&costs[..m]);
    for i in 1..n {
        let (prev, cur) = acc.split_at_mut(i * m);
        let prev = &prev[(i - 1) * m..];
        let cur = &mut cur[..m];
        let c = &costs[i * m..(i + 1) * m];
        cur[0] = c[0] + prev[0];
        back[i * m] = 2;
        for j in 1..m {
            let mut best = prev[j - 1];
            let mut dir = 1;
            if prev[j] < best {
                best = prev[j];
                dir = 2;
            }
            if cur[j - 1] < best {
                best = cur[j - 1];
                dir = 3;
            }
            cur[j] = c[j] + best;
            back[i * m + j] = dir;
        }
    }
    let last = &acc[(n - 1) * m..];
    let mut end = 0;
    for j in 1..m {
        if last[j] < last[end] {
            end = j;
        }
    }
    let total = last[end];
    let (mut i, mut j) = (n - 1, end);
    let mut path = vec![(i, j)];
    loop {
        match back[i * m + j] {
            1 => {
                i -= 1;
                j -= 1;
            }
            2 => i -= 1,
            3 => j -= 1,
            _ => break,
        }
        path.push((i, j));
    }
    path.reverse();
    (total, path)
}

/// Slope of the query at every sample, in radians of elevation per
/// reference azimuth step. A least-squares line over the samples within
/// `half_window` of azimuth; `None` when one side is empty.
fn query_slopes(profile: &QueryProfile, step: f64, half_window: f64) -> Vec<Option<f64>> {
    let n = profile.len();
    (0..n)
        .map(|i| {
            let o = profile.offsets[i];
            let mut lo = i;
            while lo > 0 && o - profile.offsets[lo - 1] <= half_window {
                lo -= 1;
            }
            let mut hi = i;
            while hi + 1 < n && profile.offsets[hi + 1] - o <= half_window {
                hi += 1;
            }
            if lo == i || hi == i {
                return None;
            }
            let k = (hi - lo + 1) as f64;
            let mo = profile.offsets[lo..=hi].iter().sum::<f64>() / k;
            let me = profile.elevations[lo..=hi].iter().sum::<f64>() / k;
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for t in lo..=hi {
                let dx = profile.offsets[t] - mo;
                sxy += dx * (profile.elevations[t] - me);
                sxx += dx * dx;
            }
            (sxx > 0.0).then(|| sxy / sxx * step)
        })
        .collect()
}

/// Local cost matrix of a profile against the reference duplicated over two
/// turns: `|Δ elevation| + λ |Δ slope|`.
pub fn dtw_cost_matrix(
    profile: &QueryProfile,
    reference: &ReferenceSkyline,
    lambda: f64,
) -> Vec<f64> {
    let m = reference.len();
    let step = reference.azimuth_step;
    let q_slopes = query_slopes(profile, step, step.max(1.5 * column_spacing(profile)));
    let r_slopes = reference.slopes();
    let mut costs = Vec::with_capacity(profile.len() * 2 * m);
    for (i, &q) in profile.elevations.iter().enumerate() {
        for j in 0..2 * m {
            let r = reference.elevations[j % m];
            let slope = q_slopes[i].map_or(0.0, |s| (s - r_slopes[j % m]).abs());
            costs.push((q - r).abs() + lambda * slope);
        }
    }
    costs
}

fn column_spacing(profile: &QueryProfile) -> f64 {
    let n = profile.len();
    if n < 2 {
        return 0.0;
    }
    (profile.offsets[n - 1] - profile.offsets[0]).abs() / (n - 1) as f64
}

/// Aligns a query profile to the 360° reference and estimates the heading
/// as the circular mean of `reference azimuth - query offset` along the path.
pub fn dtw_align(
    profile: &QueryProfile,
    reference: &ReferenceSkyline,
    lambda: f64,
) -> Result<DtwAlignment, OrientError> {
    dtw_align_banded(profile, reference, lambda, None)
}

/// [`dtw_align`] restricted to cells whose implied heading
/// `reference azimuth - query offset` lies within `half_width` of `center`.
pub fn dtw_align_banded(
    profile: &QueryProfile,
    reference: &ReferenceSkyline,
    lambda: f64,
    band: Option<(f64, f64)>,
) -> Result<DtwAlignment, OrientError> {
    if profile.len() < MIN_VALID_COLUMNS {
        return Err(OrientError::TooFewValidColumns {
            valid: profile.len(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(OrientError::InvalidParameter(
            "slope weight must be non-negative",
        ));
    }
    let m = reference.len();
    let step = reference.azimuth_step;
    let mut costs = dtw_cost_matrix(profile, reference, lambda);
    // Runs of the query aligned independently; a banded path cannot bridge
    // a gap in the valid columns wider than the band.
    let mut runs = vec![(0, profile.len())];
    if let Some((center, half_width)) = band {
        for (i, row) in costs.chunks_mut(2 * m).enumerate() {
            for (j, c) in row.iter_mut().enumerate() {
                if wrap_pi(j as f64 * step - profile.offsets[i] - center).abs() > half_width {
                    *c = f64::INFINITY;
                }
            }
        }
        runs.clear();
        let mut start = 0;
        for i in 1..=profile.len() {
            if i == profile.len() || profile.offsets[i] - profile.offsets[i - 1] > half_width {
                runs.push((start, i));
                start = i;
            }
        }
    }
    let mut total = 0.0;
    let mut path = Vec::with_capacity(profile.len());
    for (a, b) in runs {
        let (run_total, pairs) = dtw_subsequence(&costs[a * 2 * m..b * 2 * m], b - a, 2 * m);
        if !run_total.is_finite() {
            return Err(OrientError::InvalidParameter("band admits no path"));
        }
        total += run_total;
        path.extend(pairs.iter().map(|&(i, j)| AlignedPair {
            query_index: a + i,
            reference_index: j,
            column: profile.columns[a + i],
            residual: profile.elevations[a + i] - reference.elevations[j % m],
            local_cost: costs[(a + i) * 2 * m + j],
        }));
    }
    let heading = circular_mean(
        path.iter()
            .map(|p| p.reference_index as f64 * step - profile.offsets[p.query_index]),
    )
    .unwrap_or(0.0);
    Ok(DtwAlignment {
        cost: total / path.len() as f64,
        total_cost: total,
        path,
        heading,
    })
}

/// Least-squares line `residual = a + b (column - center)` over the path.
pub fn fit_residual_line(path: &[AlignedPair], center: f64) -> Result<(f64, f64), OrientError> {
    if path.len() < 3 {
        return Err(OrientError::DegenerateFit);
    }
    let n = path.len() as f64;
    let mx = path.iter().map(|p| p.column - center).sum::<f64>() / n;
    let my = path.iter().map(|p| p.residual).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for p in path {
        let dx = p.column - center - mx;
        sxy += dx * (p.residual - my);
        sxx += dx * dx;
    }
    if sxx <= 1e-12 {
        return Err(OrientError::DegenerateFit);
    }
    let b = sxy / sxx;
    Ok((my - b * mx, b))
}

/// Angles implied by an alignment computed under zero tilt and roll.
/// The vertical residual offset is the negated tilt; its slope across the
/// image, converted from radians per pixel, is the roll.
pub fn angles_from_alignment(
    alignment: &DtwAlignment,
    intrinsics: &CameraIntrinsics,
) -> Result<Angles, OrientError> {
    let (a, b) = fit_residual_line(&alignment.path, intrinsics.principal_point.x)?;
    Ok(Angles::new(
        wrap_two_pi(alignment.heading),
        -a,
        (b * intrinsics.focal_px).atan(),
    ))
}

/// Reference elevation at any azimuth, linear between samples.
fn reference_at(reference: &ReferenceSkyline, azimuth: f64) -> f64 {
    let m = reference.len();
    let t = wrap_two_pi(azimuth) / reference.azimuth_step;
    let j = (t.floor() as usize).min(m - 1);
    let f = t - j as f64;
    let e = &reference.elevations;
    e[j] + (e[(j + 1) % m] - e[j]) * f
}

/// Rigid alignment used to seed the DTW: at every reference azimuth the
/// query is laid out by its known column offsets, a residual line
/// `a + b (column - center)` is removed, and the azimuth with the smallest
/// remaining squared residual wins. Fits whose tilt or roll leave
/// `±max_angle` are skipped. Returns `(heading, tilt, roll)`.
pub fn rigid_seed(
    profile: &QueryProfile,
    reference: &ReferenceSkyline,
    intrinsics: &CameraIntrinsics,
    max_angle: f64,
) -> Result<(f64, f64, f64), OrientError> {
    if profile.len() < MIN_VALID_COLUMNS {
        return Err(OrientError::TooFewValidColumns {
            valid: profile.len(),
        });
    }
    let n = profile.len() as f64;
    let xs: Vec<f64> = profile
        .columns
        .iter()
        .map(|c| c - intrinsics.principal_point.x)
        .collect();
    let mx = xs.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 1e-12 {
        return Err(OrientError::DegenerateFit);
    }
    let mut best: Option<(f64, f64, f64, f64)> = None;
    let mut residual = vec![0.0; profile.len()];
    for j in 0..reference.len() {
        let heading = j as f64 * reference.azimuth_step;
        for (i, r) in residual.iter_mut().enumerate() {
            *r = profile.elevations[i] - reference_at(reference, heading + profile.offsets[i]);
        }
        let my = residual.iter().sum::<f64>() / n;
        let sxy: f64 = xs
            .iter()
            .zip(&residual)
            .map(|(x, r)| (x - mx) * (r - my))
            .sum();
        let b = sxy / sxx;
        let a = my - b * mx;
        let (tilt, roll) = (-a, (b * intrinsics.focal_px).atan());
        if tilt.abs() > max_angle || roll.abs() > max_angle {
            continue;
        }
        let rss: f64 = xs
            .iter()
            .zip(&residual)
            .map(|(x, r)| (r - a - b * x).powi(2))
            .sum();
        if best.is_none_or(|bst| rss < bst.0) {
            best = Some((rss, heading, tilt, roll));
        }
    }
    let (_, heading, tilt, roll) = best.ok_or(OrientError::DegenerateFit)?;
    Ok((heading, tilt, roll))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtwParams {
    pub lambda: f64,
    /// Bound on |tilt| and |roll| accepted by the rigid seed.
    pub max_angle: f64,
    /// Half width of the DTW band around the seeded heading.
    pub band: f64,
    /// Alignments after the seed, each under the latest tilt/roll.
    pub passes: usize,
}

impl Default for DtwParams {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_SLOPE_WEIGHT,
            max_angle: 6f64.to_radians(),
            band: 2f64.to_radians(),
            passes: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwOrientation {
    pub angles: Angles,
    pub alignment: DtwAlignment,
}

/// Full skyline orientation. A rigid seed supplies tilt and roll; then the
/// query is re-expressed under the current tilt/roll, aligned by DTW and
/// the residual line updates tilt and roll, `passes` times.
pub fn orient_dtw(
    skyline: &QuerySkyline,
    reference: &ReferenceSkyline,
    intrinsics: &CameraIntrinsics,
    params: DtwParams,
) -> Result<DtwOrientation, OrientError> {
    if params.passes == 0 {
        return Err(OrientError::InvalidParameter("at least one DTW pass"));
    }
    if !(params.band > 0.0) {
        return Err(OrientError::InvalidParameter("DTW band must be positive"));
    }
    let (heading, mut tilt, mut roll) = rigid_seed(
        &query_profile(skyline, intrinsics, 0.0, 0.0),
        reference,
        intrinsics,
        params.max_angle,
    )?;
    let mut last = None;
    for _ in 0..params.passes {
        let profile = query_profile(skyline, intrinsics, tilt, roll);
        let alignment = dtw_align_banded(
            &profile,
            reference,
            params.lambda,
            Some((heading, params.band)),
        )?;
        let delta = angles_from_alignment(&alignment, intrinsics)?;
        tilt += delta.tilt;
        roll += delta.roll;
        last = Some(alignment);
    }
    let alignment = last.expect("at least one pass");
    let angles = Angles::new(wrap_two_pi(alignment.heading), tilt, roll);
    Ok(DtwOrientation { angles, alignment })
}

/// Resamples a level perspective image onto the cylinder of `strip`: column
/// `k` looks at azimuth offset `(k - (n-1)/2) * step`, row `v` at elevation
/// `atan((cy - v) / f)`. Out-of-frame samples are NaN.
pub fn warp_to_cylinder(
    image: &Raster,
    intrinsics: &CameraIntrinsics,
    strip: &PanoramaStrip,
) -> Raster {
    let step = strip.column_step();
    let half_fov = 0.5 * intrinsics.horizontal_fov();
    let n = (2.0 * half_fov / step).floor() as usize;
    let kc = 0.5 * (n as f64 - 1.0);
    let (cu, cv, f) = (
        intrinsics.principal_point.x,
        intrinsics.principal_point.y,
        intrinsics.focal_px,
    );
    Raster::from_fn(n, strip.raster.height(), |k, v| {
        let az = (k as f64 - kc) * step;
        let el = ((strip.principal_row - v as f64) / strip.focal_px).atan();
        let (sa, ca) = az.sin_cos();
        let (se, ce) = el.sin_cos();
        let (x, y, z) = (sa * ce, -se, ca * ce);
        if z <= 1e-9 {
            return f64::NAN;
        }
        image
            .sample_bilinear(cu + f * x / z, cv + f * y / z)
            .unwrap_or(f64::NAN)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HogOrientation {
    pub heading: f64,
    pub score: f64,
    /// `(azimuth, score)` for every tested strip offset.
    pub curve: Vec<(f64, f64)>,
}

/// HOG cell size in pixels at every pyramid level.
pub const HOG_CELL: usize = 8;

/// Box-averages `factor x factor` pixel groups, starting `phase` columns in.
fn downsample(r: &Raster, factor: usize, phase: usize) -> Raster {
    let w = (r.width() - phase) / factor;
    let h = r.height() / factor;
    let norm = (factor * factor) as f64;
    Raster::from_fn(w, h, |x, y| {
        let mut acc = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                acc += r.get(phase + x * factor + dx, y * factor + dy);
            }
        }
        acc / norm
    })
}

/// Scores every `stride`-th strip column as the left edge of a cylindrical
/// query. For each pyramid factor the query and the strip are box-averaged
/// by that factor and described by HOG grids of [`HOG_CELL`] cells; the
/// score is the mean correlation over factors.
pub fn hog_orient_cylindrical(
    query: &Raster,
    strip: &PanoramaStrip,
    scales: &[usize],
    stride: usize,
) -> Result<HogOrientation, OrientError> {
    if scales.is_empty() || scales.contains(&0) || stride == 0 {
        return Err(OrientError::InvalidParameter(
            "scales and stride must be positive",
        ));
    }
    let (qw, qh) = (query.width(), query.height());
    let n = strip.columns();
    if qh != strip.raster.height() || qw >= n {
        return Err(OrientError::InvalidParameter(
            "query must match the strip height and be narrower",
        ));
    }
    for &s in scales {
        if qw / s / HOG_CELL < 2 || qh / s / HOG_CELL < 2 {
            return Err(OrientError::QueryTooSmallForScale {
                width: qw,
                height: qh,
                cell: s * HOG_CELL,
            });
        }
    }
    let largest = scales.iter().copied().max().unwrap_or(1);
    let wrapped = Raster::from_fn(n + qw + largest, qh, |x, y| strip.raster.get(x % n, y));
    let query = fill_nan(query);
    let levels: Vec<(usize, Vec<f64>, Vec<OrientationIntegral>, usize, usize)> = scales
        .iter()
        .map(|&s| {
            let q = downsample(&query, s, 0);
            let (cx, cy) = (q.width() / HOG_CELL, q.height() / HOG_CELL);
            let desc = OrientationIntegral::new(&q).grid_descriptor(0, 0, cx, cy, HOG_CELL);
            let phases = (0..s)
                .map(|p| OrientationIntegral::new(&downsample(&wrapped, s, p)))
                .collect();
            (s, desc, phases, cx, cy)
        })
        .collect();
    let step = strip.column_step();
    let kc = 0.5 * (qw as f64 - 1.0);
    let mut curve = Vec::with_capacity(n / stride + 1);
    for j in (0..n).step_by(stride) {
        let mut score = 0.0;
        for (s, desc, phases, cx, cy) in &levels {
            let d = phases[j % s].grid_descriptor(j / s, 0, *cx, *cy, HOG_CELL);
            score += normalized_correlation(desc, &d);
        }
        curve.push((
            wrap_two_pi((j as f64 + kc) * step),
            score / levels.len() as f64,
        ));
    }
    let best = curve
        .iter()
        .enumerate()
        .fold(0, |b, (i, s)| if s.1 > curve[b].1 { i } else { b });
    Ok(HogOrientation {
        heading: curve[best].0,
        score: curve[best].1,
        curve,
    })
}

/// HOG orientation of a level perspective query against a strip rendered at
/// the query position with the same focal length.
pub fn hog_orient(
    image: &Raster,
    intrinsics: &CameraIntrinsics,
    strip: &PanoramaStrip,
    scales: &[usize],
    stride: usize,
) -> Result<HogOrientation, OrientError> {
    if image.width() != intrinsics.width || image.height() != intrinsics.height {
        return Err(OrientError::InvalidParameter(
            "image size differs from intrinsics",
        ));
    }
    let cyl = warp_to_cylinder(image, intrinsics, strip);
    hog_orient_cylindrical(&cyl, strip, scales, stride)
}

/// NaN pixels (outside the warped frame) take the mean of the finite ones so
/// they add no gradient of their own beyond the frame edge.
fn fill_nan(r: &Raster) -> Raster {
    let finite: Vec<f64> = r.data().iter().copied().filter(|v| v.is_finite()).collect();
    let mean = if finite.is_empty() {
        0.0
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    Raster::from_vec(
        r.width(),
        r.height(),
        r.data()
            .iter()
            .map(|&v| if v.is_finite() { v } else { mean })
            .collect(),
    )
}
