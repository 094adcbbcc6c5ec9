//! Multi-view detection fusion: per-view boxes to ground points, proposal
//! union, re-scoring in every view, and prior-aware subset selection.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI, TAU};
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{Point2, Vector3};
use thiserror::Error;

use crate::camera::{project_point, CameraPose};
use crate::math::{logit, sigmoid, wrap_two_pi};
use crate::raster::Raster;

pub const DEFAULT_MIN_DEPRESSION_DEG: f64 = 0.5;
pub const DEFAULT_MERGE_RADIUS_M: f64 = 2.0;
pub const DEFAULT_FOOTPRINT_RADIUS_M: f64 = 1.0;
/// Largest instance [`solve_exact`] enumerates.
pub const MAX_EXACT_PROPOSALS: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FuseError {
    #[error("detection box ray is at or above the horizon (depression {depression:.4} rad)")]
    AtOrAboveHorizon { depression: f64 },
    #[error("invalid detection: {0}")]
    InvalidDetection(&'static str),
    #[error("view {0} has no geometry")]
    UnknownView(usize),
    #[error("invalid view geometry: {0}")]
    InvalidView(&'static str),
    #[error("no detections")]
    EmptyInput,
    #[error("{count} proposals exceed the exact-solver limit of {MAX_EXACT_PROPOSALS}")]
    TooManyProposals { count: usize },
    #[error("{count} positions, at least 2 required")]
    TooFewPositions { count: usize },
    #[error("invalid histogram: {0}")]
    InvalidHistogram(&'static str),
}

impl FuseError {
    pub fn code(&self) -> &'static str {
        match self {
            FuseError::AtOrAboveHorizon { .. } => "AtOrAboveHorizon",
            FuseError::InvalidDetection(_) => "InvalidDetection",
            FuseError::UnknownView(_) => "UnknownView",
            FuseError::InvalidView(_) => "InvalidView",
            FuseError::EmptyInput => "EmptyInput",
            FuseError::TooManyProposals { .. } => "TooManyProposals",
            FuseError::TooFewPositions { .. } => "TooFewPositions",
            FuseError::InvalidHistogram(_) => "InvalidHistogram",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewDetection {
    pub view: usize,
    pub umin: f64,
    pub vmin: f64,
    pub umax: f64,
    pub vmax: f64,
    pub score: f64,
}

impl ViewDetection {
    pub fn validate(&self) -> Result<(), FuseError> {
        if !(self.umax > self.umin && self.vmax > self.vmin) {
            return Err(FuseError::InvalidDetection(
                "box must have positive width and height",
            ));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(FuseError::InvalidDetection("score must be in [0, 1]"));
        }
        Ok(())
    }

    /// Bottom-centre pixel, where the object meets the ground.
    pub fn foot(&self) -> Point2<f64> {
        Point2::new(0.5 * (self.umin + self.umax), self.vmax)
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= self.umin && p.x <= self.umax && p.y >= self.vmin && p.y <= self.vmax
    }
}

/// Equirectangular street-level panorama over flat ground. Column `x` looks
/// at azimuth `heading0 + x·2π/W`; row `y` at elevation
/// `π/2 − (y + 0.5)·π/H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquirectView {
    pub width: usize,
    pub height: usize,
    pub heading0: f64,
    pub easting: f64,
    pub northing: f64,
    pub camera_height: f64,
}

/// Affine pixel → ground map: `E = a[0] + a[1]·u + a[2]·v`,
/// `N = a[3] + a[4]·u + a[5]·v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTransform {
    pub coefficients: [f64; 6],
    pub width: usize,
    pub height: usize,
}

impl GeoTransform {
    fn determinant(&self) -> f64 {
        let a = &self.coefficients;
        a[1] * a[5] - a[2] * a[4]
    }

    pub fn apply(&self, p: &Point2<f64>) -> (f64, f64) {
        let a = &self.coefficients;
        (
            a[0] + a[1] * p.x + a[2] * p.y,
            a[3] + a[4] * p.x + a[5] * p.y,
        )
    }

    pub fn invert(&self, e: f64, n: f64) -> Point2<f64> {
        let a = &self.coefficients;
        let det = self.determinant();
        let (de, dn) = (e - a[0], n - a[3]);
        Point2::new((a[5] * de - a[2] * dn) / det, (a[1] * dn - a[4] * de) / det)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViewGeometry {
    /// Pinhole camera above flat ground at height `ground_z`.
    Camera {
        pose: CameraPose,
        ground_z: f64,
    },
    Equirect(EquirectView),
    Ortho(GeoTransform),
}

impl ViewGeometry {
    pub fn validate(&self) -> Result<(), FuseError> {
        match self {
            ViewGeometry::Camera { pose, ground_z } => {
                pose.validate()
                    .map_err(|_| FuseError::InvalidView("camera pose"))?;
                if !(pose.position.z > *ground_z) {
                    return Err(FuseError::InvalidView("camera must be above the ground"));
                }
            }
            ViewGeometry::Equirect(v) => {
                if v.width == 0 || v.height == 0 || !(v.camera_height > 0.0) {
                    return Err(FuseError::InvalidView(
                        "panorama size and camera height must be positive",
                    ));
                }
            }
            ViewGeometry::Ortho(t) => {
                if !(t.determinant().abs() > 1e-12) {
                    return Err(FuseError::InvalidView("geo-transform is singular"));
                }
            }
        }
        Ok(())
    }

    /// Image position of a ground point, `None` when out of frame.
    pub fn pixel_of(&self, easting: f64, northing: f64) -> Option<Point2<f64>> {
        match self {
            ViewGeometry::Camera { pose, ground_z } => {
                let p = project_point(pose, &Vector3::new(easting, northing, *ground_z)).ok()?;
                pose.intrinsics.contains(&p).then_some(p)
            }
            ViewGeometry::Equirect(v) => {
                let (dx, dy) = (easting - v.easting, northing - v.northing);
                let range = (dx * dx + dy * dy).sqrt();
                let depression = v.camera_height.atan2(range);
                let az = wrap_two_pi(dx.atan2(dy) - v.heading0);
                let p = Point2::new(
                    az * v.width as f64 / TAU,
                    (FRAC_PI_2 + depression) * v.height as f64 / PI - 0.5,
                );
                (p.y <= v.height as f64 - 0.5).then_some(p)
            }
            ViewGeometry::Ortho(t) => {
                let p = t.invert(easting, northing);
                let inside = p.x >= -0.5
                    && p.y >= -0.5
                    && p.x <= t.width as f64 - 0.5
                    && p.y <= t.height as f64 - 0.5;
                inside.then_some(p)
            }
        }
    }
}

/// Ground point under a detection, assuming locally flat terrain.
pub fn det_to_geo(
    det: &ViewDetection,
    view: &ViewGeometry,
    min_depression: f64,
) -> Result<(f64, f64), FuseError> {
    det.validate()?;
    view.validate()?;
    let foot = det.foot();
    let (origin, camera_height, azimuth, depression) = match view {
        ViewGeometry::Ortho(t) => {
            let centre = Point2::new(0.5 * (det.umin + det.umax), 0.5 * (det.vmin + det.vmax));
            return Ok(t.apply(&centre));
        }
        ViewGeometry::Camera { pose, ground_z } => {
            let d = pose.pixel_ray(foot.x, foot.y);
            let horizontal = (d.x * d.x + d.y * d.y).sqrt();
            (
                (pose.position.x, pose.position.y),
                pose.position.z - ground_z,
                d.x.atan2(d.y),
                (-d.z).atan2(horizontal),
            )
        }
        ViewGeometry::Equirect(v) => {
            let az = v.heading0 + foot.x * TAU / v.width as f64;
            let elevation = FRAC_PI_2 - (foot.y + 0.5) * PI / v.height as f64;
            ((v.easting, v.northing), v.camera_height, az, -elevation)
        }
    };
    if depression <= min_depression {
        return Err(FuseError::AtOrAboveHorizon { depression });
    }
    let range = camera_height / depression.tan();
    Ok((
        origin.0 + range * azimuth.sin(),
        origin.1 + range * azimuth.cos(),
    ))
}

/// Per-view evidence for re-scoring.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreSource {
    /// Gridded scores in image pixels, read at the nearest pixel.
    Raster(Raster),
    /// Highest score among the view's boxes containing the pixel, else the
    /// fusion background score.
    Detections,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionView {
    pub geometry: ViewGeometry,
    pub scores: ScoreSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnionParams {
    pub merge_radius: f64,
    pub footprint_radius: f64,
    pub min_depression: f64,
    /// Score of an in-frame pixel not covered by any box.
    pub background: f64,
}

impl Default for UnionParams {
    fn default() -> Self {
        Self {
            merge_radius: DEFAULT_MERGE_RADIUS_M,
            footprint_radius: DEFAULT_FOOTPRINT_RADIUS_M,
            min_depression: DEFAULT_MIN_DEPRESSION_DEG.to_radians(),
            background: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoDetection {
    pub easting: f64,
    pub northing: f64,
    /// Score per view; `None` where the point is out of frame.
    pub view_scores: Vec<Option<f64>>,
    pub combined: f64,
    pub radius: f64,
    /// Indices of the detections merged into this proposal.
    pub members: Vec<usize>,
}

/// Mean log-odds of the in-frame scores mapped back to a probability; 0.5
/// when no view sees the point.
pub fn combine_scores(scores: &[Option<f64>]) -> f64 {
    let seen: Vec<f64> = scores.iter().flatten().map(|s| logit(*s)).collect();
    if seen.is_empty() {
        return 0.5;
    }
    sigmoid(seen.iter().sum::<f64>() / seen.len() as f64)
}

fn view_score(
    view: &FusionView,
    index: usize,
    detections: &[ViewDetection],
    p: &Point2<f64>,
    background: f64,
) -> f64 {
    match &view.scores {
        ScoreSource::Raster(r) => {
            let (x, y) = (p.x.round(), p.y.round());
            if x < 0.0 || y < 0.0 || x as usize >= r.width() || y as usize >= r.height() {
                return background;
            }
            r.get(x as usize, y as usize).clamp(0.0, 1.0)
        }
        ScoreSource::Detections => detections
            .iter()
            .filter(|d| d.view == index && d.contains(p))
            .map(|d| d.score)
            .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))))
            .unwrap_or(background),
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Single-linkage clusters of `points` within `radius`, ordered by their
/// smallest member.
pub fn single_linkage(points: &[(f64, f64)], radius: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
            if dx * dx + dy * dy <= radius * radius {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[slot[r]].push(i);
    }
    clusters
}

/// Scores of a ground point in every view.
pub fn rescore_point(
    easting: f64,
    northing: f64,
    views: &[FusionView],
    detections: &[ViewDetection],
    background: f64,
) -> Vec<Option<f64>> {
    views
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.geometry
                .pixel_of(easting, northing)
                .map(|p| view_score(v, i, detections, &p, background))
        })
        .collect()
}

/// Projects every detection to the ground, merges nearby points into
/// proposals and re-scores each proposal in every view.
pub fn union_and_rescore(
    detections: &[ViewDetection],
    views: &[FusionView],
    params: &UnionParams,
) -> Result<Vec<GeoDetection>, FuseError> {
    if detections.is_empty() {
        return Err(FuseError::EmptyInput);
    }
    let mut points = Vec::with_capacity(detections.len());
    for d in detections {
        let view = views.get(d.view).ok_or(FuseError::UnknownView(d.view))?;
        points.push(det_to_geo(d, &view.geometry, params.min_depression)?);
    }
    let clusters = single_linkage(&points, params.merge_radius);
    Ok(clusters
        .into_iter()
        .map(|members| {
            let k = members.len() as f64;
            let easting = members.iter().map(|&i| points[i].0).sum::<f64>() / k;
            let northing = members.iter().map(|&i| points[i].1).sum::<f64>() / k;
            let view_scores =
                rescore_point(easting, northing, views, detections, params.background);
            GeoDetection {
                easting,
                northing,
                combined: combine_scores(&view_scores),
                view_scores,
                radius: params.footprint_radius,
                members,
            }
        })
        .collect())
}

/// Distance histogram with a fixed bin width; the last bin collects every
/// distance beyond the regular bins.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceHistogram {
    pub bin_width: f64,
    pub probabilities: Vec<f64>,
}

impl DistanceHistogram {
    pub fn new(bin_width: f64, probabilities: Vec<f64>) -> Result<Self, FuseError> {
        if !(bin_width > 0.0) || probabilities.is_empty() {
            return Err(FuseError::InvalidHistogram(
                "need a positive bin width and at least one bin",
            ));
        }
        if probabilities.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(FuseError::InvalidHistogram(
                "bins must be finite and non-negative",
            ));
        }
        let total: f64 = probabilities.iter().sum();
        if !(total > 0.0) {
            return Err(FuseError::InvalidHistogram("bins sum to zero"));
        }
        Ok(Self {
            bin_width,
            probabilities: probabilities.into_iter().map(|p| p / total).collect(),
        })
    }

    pub fn uniform(bin_width: f64, bins: usize) -> Self {
        Self {
            bin_width,
            probabilities: vec![1.0 / bins as f64; bins],
        }
    }

    pub fn bin(&self, distance: f64) -> usize {
        let b = (distance.max(0.0) / self.bin_width).floor();
        if b >= (self.probabilities.len() - 1) as f64 {
            self.probabilities.len() - 1
        } else {
            b as usize
        }
    }

    pub fn probability(&self, distance: f64) -> f64 {
        self.probabilities[self.bin(distance)]
    }

    /// Add-one smoothed histogram of `distances` over `bins` regular bins
    /// plus the overflow bin.
    pub fn from_samples(distances: &[f64], bin_width: f64, bins: usize) -> Result<Self, FuseError> {
        if !(bin_width > 0.0) || bins == 0 {
            return Err(FuseError::InvalidHistogram(
                "need a positive bin width and at least one bin",
            ));
        }
        let mut counts = vec![1.0; bins + 1];
        let h = Self {
            bin_width,
            probabilities: vec![0.0; bins + 1],
        };
        for &d in distances {
            counts[h.bin(d)] += 1.0;
        }
        Self::new(bin_width, counts)
    }
}

/// Nearest-neighbour distance of every point, by a sweep over x-sorted
/// points.
pub fn nearest_neighbor_distances(points: &[(f64, f64)]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].0.total_cmp(&points[b].0).then(a.cmp(&b)));
    let mut out = vec![f64::INFINITY; points.len()];
    for (k, &i) in order.iter().enumerate() {
        let p = points[i];
        let mut best = f64::INFINITY;
        let mut visit = |j: usize| -> bool {
            let dx = points[j].0 - p.0;
            if dx * dx >= best {
                return false;
            }
            let dy = points[j].1 - p.1;
            best = best.min(dx * dx + dy * dy);
            true
        };
        for &j in &order[k + 1..] {
            if !visit(j) {
                break;
            }
        }
        for &j in order[..k].iter().rev() {
            if !visit(j) {
                break;
            }
        }
        out[i] = best.sqrt();
    }
    out
}

/// Histogram of nearest-neighbour distances of training positions.
pub fn learn_spacing_histogram(
    positions: &[(f64, f64)],
    bin_width: f64,
    bins: usize,
) -> Result<DistanceHistogram, FuseError> {
    if positions.len() < 2 {
        return Err(FuseError::TooFewPositions {
            count: positions.len(),
        });
    }
    DistanceHistogram::from_samples(&nearest_neighbor_distances(positions), bin_width, bins)
}

/// Distance-to-road raster, north-up, row 0 at `origin_northing`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadRaster {
    pub distances: Raster,
    pub origin_easting: f64,
    pub origin_northing: f64,
    pub cell_size: f64,
}

impl RoadRaster {
    /// Distance of the cell under the point, `None` outside the raster.
    pub fn distance_at(&self, easting: f64, northing: f64) -> Option<f64> {
        let c = ((easting - self.origin_easting) / self.cell_size).floor();
        let r = ((self.origin_northing - northing) / self.cell_size).floor();
        if c < 0.0
            || r < 0.0
            || c as usize >= self.distances.width()
            || r as usize >= self.distances.height()
        {
            return None;
        }
        Some(self.distances.get(c as usize, r as usize))
    }

    pub fn max_distance(&self) -> f64 {
        self.distances.finite_range().map_or(0.0, |r| r.1)
    }
}

/// Histogram of road distances under training positions inside the raster.
pub fn learn_road_histogram(
    positions: &[(f64, f64)],
    road: &RoadRaster,
    bin_width: f64,
    bins: usize,
) -> Result<DistanceHistogram, FuseError> {
    let d: Vec<f64> = positions
        .iter()
        .filter_map(|p| road.distance_at(p.0, p.1))
        .collect();
    if d.is_empty() {
        return Err(FuseError::TooFewPositions { count: 0 });
    }
    DistanceHistogram::from_samples(&d, bin_width, bins)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionPriors {
    pub spacing: DistanceHistogram,
    pub road_likelihood: DistanceHistogram,
    pub road: Option<RoadRaster>,
    pub w_spacing: f64,
    pub w_road: f64,
    pub threshold: f64,
}

impl FusionPriors {
    /// Uniform histograms, zero weights: pure thresholding.
    pub fn flat(threshold: f64) -> Self {
        Self {
            spacing: DistanceHistogram::uniform(1.0, 20),
            road_likelihood: DistanceHistogram::uniform(1.0, 20),
            road: None,
            w_spacing: 0.0,
            w_road: 0.0,
            threshold,
        }
    }

    /// Road distance for a proposal; points off the raster take its
    /// largest distance.
    fn road_distance(&self, d: &GeoDetection) -> Option<f64> {
        let road = self.road.as_ref()?;
        Some(
            road.distance_at(d.easting, d.northing)
                .unwrap_or_else(|| road.max_distance()),
        )
    }
}

/// Proposals lying outside the road raster; their road term uses the
/// raster's largest distance.
pub fn outside_road_raster(proposals: &[GeoDetection], priors: &FusionPriors) -> Vec<usize> {
    match &priors.road {
        None => Vec::new(),
        Some(road) => (0..proposals.len())
            .filter(|&i| {
                road.distance_at(proposals[i].easting, proposals[i].northing)
                    .is_none()
            })
            .collect(),
    }
}

fn unary(d: &GeoDetection, priors: &FusionPriors) -> f64 {
    let mut e = -(logit(d.combined) - logit(priors.threshold));
    if priors.w_road > 0.0 {
        if let Some(r) = priors.road_distance(d) {
            e -= priors.w_road * priors.road_likelihood.probability(r).ln();
        }
    }
    e
}

/// Energy of selecting `selection`: thresholded score unary, road unary,
/// nearest-selected-neighbour spacing term, and +∞ for overlapping pairs.
pub fn fusion_energy(
    selection: &[usize],
    proposals: &[GeoDetection],
    priors: &FusionPriors,
) -> f64 {
    let mut e = 0.0;
    for (k, &i) in selection.iter().enumerate() {
        let p = &proposals[i];
        e += unary(p, priors);
        let mut nearest = f64::INFINITY;
        for (l, &j) in selection.iter().enumerate() {
            if l == k {
                continue;
            }
            let q = &proposals[j];
            let d = (p.easting - q.easting).hypot(p.northing - q.northing);
            if d < p.radius + q.radius {
                return f64::INFINITY;
            }
            nearest = nearest.min(d);
        }
        if priors.w_spacing > 0.0 && nearest.is_finite() {
            e -= priors.w_spacing * priors.spacing.probability(nearest).ln();
        }
    }
    e
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Selected proposal indices in ascending order.
    pub indices: Vec<usize>,
    pub energy: f64,
}

/// Adds the above-threshold proposal with the largest energy decrease
/// until none decreases it.
pub fn solve_greedy(proposals: &[GeoDetection], priors: &FusionPriors) -> Selection {
    let mut chosen: Vec<usize> = Vec::new();
    let mut energy = 0.0;
    loop {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..proposals.len() {
            if chosen.contains(&i) || !(proposals[i].combined > priors.threshold) {
                continue;
            }
            chosen.push(i);
            let e = fusion_energy(&chosen, proposals, priors);
            chosen.pop();
            if e < energy && best.is_none_or(|b| e < b.1) {
                best = Some((i, e));
            }
        }
        match best {
            Some((i, e)) => {
                chosen.push(i);
                energy = e;
            }
            None => break,
        }
    }
    chosen.sort_unstable();
    Selection {
        indices: chosen,
        energy,
    }
}

/// Minimum-energy subset by enumeration (first subset in binary order on
/// ties).
pub fn solve_exact(
    proposals: &[GeoDetection],
    priors: &FusionPriors,
) -> Result<Selection, FuseError> {
    let n = proposals.len();
    if n > MAX_EXACT_PROPOSALS {
        return Err(FuseError::TooManyProposals { count: n });
    }
    let mut best = Selection {
        indices: Vec::new(),
        energy: 0.0,
    };
    let mut subset = Vec::with_capacity(n);
    for mask in 1u32..(1u32 << n) {
        subset.clear();
        subset.extend((0..n).filter(|i| mask & (1 << i) != 0));
        let e = fusion_energy(&subset, proposals, priors);
        if e < best.energy {
            best = Selection {
                indices: subset.clone(),
                energy: e,
            };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prop(e: f64, n: f64, c: f64) -> GeoDetection {
        GeoDetection {
            easting: e,
            northing: n,
            view_scores: vec![Some(c)],
            combined: c,
            radius: 1.0,
            members: vec![0],
        }
    }

    #[test]
    fn equirect_depression_45_lands_at_height() {
        let v = EquirectView {
            width: 360,
            height: 180,
            heading0: 0.0,
            easting: 10.0,
            northing: 20.0,
            camera_height: 2.5,
        };
        // Elevation −45° sits at row 134.5 when rows are centred on +0.5.
        let det = ViewDetection {
            view: 0,
            umin: -1.0,
            vmin: 120.0,
            umax: 1.0,
            vmax: 134.5,
            score: 0.9,
        };
        let (e, n) = det_to_geo(&det, &ViewGeometry::Equirect(v), 0.5f64.to_radians()).unwrap();
        assert!((e - 10.0).abs() < 1e-9 && (n - 22.5).abs() < 1e-9);
        let horizon = ViewDetection {
            vmin: 80.0,
            vmax: 89.5,
            ..det
        };
        assert!(matches!(
            det_to_geo(&horizon, &ViewGeometry::Equirect(v), 0.5f64.to_radians()),
            Err(FuseError::AtOrAboveHorizon { .. })
        ));
    }

    #[test]
    fn energy_examples() {
        let priors = FusionPriors::flat(0.5);
        assert_eq!(fusion_energy(&[], &[], &priors), 0.0);
        let ps = [prop(0.0, 0.0, 0.9), prop(0.5, 0.0, 0.8)];
        assert_eq!(fusion_energy(&[0, 1], &ps, &priors), f64::INFINITY);
        let sel = solve_greedy(&ps, &priors);
        assert_eq!(sel.indices, vec![0]);
        assert_eq!(solve_exact(&ps, &priors).unwrap(), sel);
        assert_eq!(
            solve_exact(&[prop(0.0, 0.0, 0.3)], &priors)
                .unwrap()
                .indices,
            Vec::<usize>::new()
        );
    }

    #[test]
    fn histogram_bins() {
        let h = learn_spacing_histogram(&[(0.0, 0.0), (5.0, 0.0)], 1.0, 10).unwrap();
        let top = h.probabilities.iter().cloned().fold(0.0, f64::max);
        assert_eq!(h.bin(5.0), 5);
        assert_eq!(h.probabilities[5], top);
        assert!((h.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(
            learn_spacing_histogram(&[(0.0, 0.0)], 1.0, 10),
            Err(FuseError::TooFewPositions { count: 1 })
        ));
    }

    #[test]
    fn neutral_views_do_not_change_scores() {
        assert_eq!(
            combine_scores(&[Some(0.8)]),
            combine_scores(&[Some(0.8), None, None])
        );
        assert!((combine_scores(&[Some(0.8)]) - 0.8).abs() < 1e-12);
    }
}
