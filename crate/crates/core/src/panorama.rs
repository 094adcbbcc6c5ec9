//! Synthetic views of a [`DemGrid`]: 360° horizon panoramas, perspective
//! renders with per-pixel XYZ, and cylindrical panorama strips.
//!
//! All renderers march rays across the terrain in ground-distance steps of
//! half a cell. Each row (or azimuth) is an independent unit of work, so the
//! `*_row` / [`horizon_record`] entry points can be driven in parallel and
//! reassembled in order with bit-identical results.

use alloc::vec::Vec;
use core::f64::consts::TAU;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::Vector3;
use thiserror::Error;

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::raster::Raster;
use crate::terrain::DemGrid;

/// Mean Earth radius used by the curvature correction.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Default refraction coefficient when curvature is enabled.
pub const DEFAULT_REFRACTION: f64 = 0.13;
/// Requested heights closer than this to the terrain trigger the clearance rule.
pub const MIN_CLEARANCE_M: f64 = 0.1;
/// Eye height a camera is raised to when it sits on or below the terrain.
pub const EYE_HEIGHT_M: f64 = 1.6;
/// Nodata value in [`XyzBands`].
pub const XYZ_NODATA: f64 = -9999.0;
/// Shade value of sky pixels.
pub const SKY_SHADE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PanoramaError {
    #[error("camera at ({x}, {y}) is outside the grid or over nodata")]
    CameraOutsideGrid { x: f64, y: f64 },
    #[error("azimuth step {step} does not divide a full turn")]
    InvalidAzimuthStep { step: f64 },
    #[error("invalid render parameter: {0}")]
    InvalidParameter(&'static str),
}

impl PanoramaError {
    pub fn code(&self) -> &'static str {
        match self {
            PanoramaError::CameraOutsideGrid { .. } => "CameraOutsideGrid",
            PanoramaError::InvalidAzimuthStep { .. } => "InvalidAzimuthStep",
            PanoramaError::InvalidParameter(_) => "InvalidParameter",
        }
    }
}

/// Earth curvature and refraction model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Curvature {
    #[default]
    Off,
    On {
        refraction: f64,
    },
}

impl Curvature {
    /// Apparent drop of terrain at ground distance `d`: `d²(1-k) / 2R`.
    pub fn drop(&self, d: f64) -> f64 {
        match *self {
            Curvature::Off => 0.0,
            Curvature::On { refraction } => d * d * (1.0 - refraction) / (2.0 * EARTH_RADIUS_M),
        }
    }
}

/// Horizon at a single azimuth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonRecord {
    pub azimuth: f64,
    /// Elevation angle of the horizon above the camera's horizontal plane.
    pub elevation: f64,
    /// Ground distance to the horizon point.
    pub range: f64,
    pub point: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanorama {
    pub camera: Vector3<f64>,
    /// Whether the clearance rule raised the requested camera height.
    pub camera_raised: bool,
    pub azimuth_step: f64,
    pub records: Vec<HorizonRecord>,
}

impl SyntheticPanorama {
    pub fn elevations(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.elevation).collect()
    }
}

/// Applies the clearance rule: a camera within [`MIN_CLEARANCE_M`] of the
/// terrain (or below it) is placed [`EYE_HEIGHT_M`] above the ground.
pub fn apply_clearance(
    grid: &DemGrid,
    camera: &Vector3<f64>,
) -> Result<(Vector3<f64>, bool), PanoramaError> {
    let ground = grid.sample_elevation(camera.x, camera.y).map_err(|_| {
        PanoramaError::CameraOutsideGrid {
            x: camera.x,
            y: camera.y,
        }
    })?;
    if camera.z <= ground + MIN_CLEARANCE_M {
        Ok((
            Vector3::new(camera.x, camera.y, ground + EYE_HEIGHT_M),
            true,
        ))
    } else {
        Ok((*camera, false))
    }
}

/// Ground distance from `(x, y)` to the grid boundary along the horizontal
/// unit direction `(dx, dy)`.
fn distance_to_boundary(grid: &DemGrid, x: f64, y: f64, dx: f64, dy: f64) -> f64 {
    let s = grid.spec();
    let mut t = f64::INFINITY;
    if dx > 1e-15 {
        t = t.min((s.max_easting() - x) / dx);
    } else if dx < -1e-15 {
        t = t.min((s.origin_easting - x) / dx);
    }
    if dy > 1e-15 {
        t = t.min((s.max_northing() - y) / dy);
    } else if dy < -1e-15 {
        t = t.min((s.origin_northing - y) / dy);
    }
    t.max(0.0)
}

/// Ground distances at which a ray is sampled: multiples of `step` below
/// `end`, followed by `end` itself.
fn march_distances(step: f64, end: f64) -> impl Iterator<Item = f64> {
    let n = if end > 0.0 {
        (end / step).ceil() as usize
    } else {
        0
    };
    (1..=n).map(move |k| {
        let d = k as f64 * step;
        if d >= end - 1e-9 * step {
            end
        } else {
            d
        }
    })
}

/// Horizon record at one azimuth: the maximum elevation angle
/// `atan2(z - Z - c(d), d)` over ray samples out to
/// `min(max_range, grid boundary)`.
pub fn horizon_record(
    grid: &DemGrid,
    camera: &Vector3<f64>,
    azimuth: f64,
    max_range: f64,
    curvature: Curvature,
) -> HorizonRecord {
    let (dx, dy) = azimuth.sin_cos();
    let end = distance_to_boundary(grid, camera.x, camera.y, dx, dy).min(max_range);
    let step = 0.5 * grid.cell_size();
    let mut best: Option<HorizonRecord> = None;
    for d in march_distances(step, end) {
        let (x, y) = (camera.x + d * dx, camera.y + d * dy);
        let Ok(z) = grid.sample_elevation(x, y) else {
            continue;
        };
        let elevation = (z - camera.z - curvature.drop(d)).atan2(d);
        if best.is_none_or(|b| elevation > b.elevation) {
            best = Some(HorizonRecord {
                azimuth,
                elevation,
                range: d,
                point: Vector3::new(x, y, z),
            });
        }
    }
    best.unwrap_or_else(|| {
        // No terrain sample along this azimuth (camera on the boundary).
        let z = grid
            .sample_elevation(camera.x, camera.y)
            .unwrap_or(camera.z);
        HorizonRecord {
            azimuth,
            elevation: -core::f64::consts::FRAC_PI_2 + 1e-9,
            range: 0.0,
            point: Vector3::new(camera.x, camera.y, z),
        }
    })
}

/// Number of azimuths for a step, checking that the step divides 2π.
pub fn azimuth_count(step: f64) -> Result<usize, PanoramaError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(PanoramaError::InvalidAzimuthStep { step });
    }
    let n = (TAU / step).round();
    if n < 1.0 || (n * step - TAU).abs() > 1e-9 {
        return Err(PanoramaError::InvalidAzimuthStep { step });
    }
    Ok(n as usize)
}

/// Parameters of a horizon panorama after validation and clearance.
#[derive(Debug, Clone, Copy)]
pub struct HorizonJob {
    pub camera: Vector3<f64>,
    pub camera_raised: bool,
    pub azimuth_step: f64,
    pub count: usize,
    pub max_range: f64,
    pub curvature: Curvature,
}

impl HorizonJob {
    pub fn new(
        grid: &DemGrid,
        camera: &Vector3<f64>,
        azimuth_step: f64,
        max_range: f64,
        curvature: Curvature,
    ) -> Result<Self, PanoramaError> {
        let count = azimuth_count(azimuth_step)?;
        if !(max_range > 0.0) {
            return Err(PanoramaError::InvalidParameter(
                "max_range must be positive",
            ));
        }
        let (camera, camera_raised) = apply_clearance(grid, camera)?;
        Ok(Self {
            camera,
            camera_raised,
            azimuth_step,
            count,
            max_range,
            curvature,
        })
    }

    pub fn azimuth(&self, index: usize) -> f64 {
        index as f64 * self.azimuth_step
    }

    pub fn record(&self, grid: &DemGrid, index: usize) -> HorizonRecord {
        horizon_record(
            grid,
            &self.camera,
            self.azimuth(index),
            self.max_range,
            self.curvature,
        )
    }

    pub fn assemble(&self, records: Vec<HorizonRecord>) -> SyntheticPanorama {
        SyntheticPanorama {
            camera: self.camera,
            camera_raised: self.camera_raised,
            azimuth_step: self.azimuth_step,
            records,
        }
    }
}

/// Renders the 360° horizon silhouette seen from `camera`.
pub fn render_horizon_panorama(
    grid: &DemGrid,
    camera: &Vector3<f64>,
    azimuth_step: f64,
    max_range: f64,
    curvature: Curvature,
) -> Result<SyntheticPanorama, PanoramaError> {
    let job = HorizonJob::new(grid, camera, azimuth_step, max_range, curvature)?;
    let records = (0..job.count).map(|i| job.record(grid, i)).collect();
    Ok(job.assemble(records))
}

/// Cosmetic terrain shading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Shading {
    /// Grey level proportional to elevation.
    #[default]
    Hypsometric,
    /// Lambertian grey from a north-west sun.
    Slope,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub shading: Shading,
    /// Maximum ground distance a ray is followed; `None` means the grid boundary.
    pub max_range: Option<f64>,
    pub curvature: Curvature,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            shading: Shading::Hypsometric,
            max_range: None,
            curvature: Curvature::Off,
        }
    }
}

/// First terrain intersection of a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub point: Vector3<f64>,
    /// Distance along the ray from the origin.
    pub depth: f64,
    pub ground_distance: f64,
}

/// Marches rays over a grid.
#[derive(Debug, Clone, Copy)]
pub struct RayCaster<'a> {
    grid: &'a DemGrid,
    settings: RenderSettings,
    max_elevation: f64,
    min_elevation: f64,
}

impl<'a> RayCaster<'a> {
    pub fn new(grid: &'a DemGrid, settings: RenderSettings) -> Self {
        let (lo, hi) = grid.elevation_range().unwrap_or((0.0, 0.0));
        Self {
            grid,
            settings,
            max_elevation: hi,
            min_elevation: lo,
        }
    }

    pub fn grid(&self) -> &'a DemGrid {
        self.grid
    }

    /// Height of the ray above the apparent terrain at ground distance `g`.
    fn clearance(
        &self,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
        inv_h: f64,
        g: f64,
    ) -> Option<f64> {
        let t = g * inv_h;
        let x = origin.x + dir.x * t;
        let y = origin.y + dir.y * t;
        let z = origin.z + dir.z * t;
        let terrain = self.grid.sample_elevation(x, y).ok()?;
        Some(z - (terrain - self.settings.curvature.drop(g)))
    }

    /// First intersection of the ray `origin + s * dir` (`dir` a unit vector)
    /// with the terrain, refined by bisection between march samples.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<RayHit> {
        let h = dir.x.hypot(dir.y);
        if h < 1e-12 {
            if dir.z >= 0.0 {
                return None;
            }
            let z = self.grid.sample_elevation(origin.x, origin.y).ok()?;
            let depth = origin.z - z;
            return Some(RayHit {
                point: Vector3::new(origin.x, origin.y, z),
                depth,
                ground_distance: 0.0,
            });
        }
        let inv_h = 1.0 / h;
        let end = distance_to_boundary(self.grid, origin.x, origin.y, dir.x * inv_h, dir.y * inv_h)
            .min(self.settings.max_range.unwrap_or(f64::INFINITY));
        let step = 0.5 * self.grid.cell_size();
        let mut prev_g = 0.0;
        let mut prev_clear = self.clearance(origin, dir, inv_h, 0.0);
        for g in march_distances(step, end) {
            let ray_z = origin.z + dir.z * g * inv_h;
            if dir.z >= 0.0 && ray_z > self.max_elevation {
                return None;
            }
            let Some(c) = self.clearance(origin, dir, inv_h, g) else {
                prev_clear = None;
                prev_g = g;
                continue;
            };
            if c <= 0.0 {
                let g_hit = match prev_clear {
                    Some(pc) if pc > 0.0 => self.bisect(origin, dir, inv_h, prev_g, g),
                    _ => g,
                };
                let t = g_hit * inv_h;
                let x = origin.x + dir.x * t;
                let y = origin.y + dir.y * t;
                let z = self.grid.sample_elevation(x, y).ok()?;
                return Some(RayHit {
                    point: Vector3::new(x, y, z),
                    depth: t,
                    ground_distance: g_hit,
                });
            }
            prev_clear = Some(c);
            prev_g = g;
        }
        None
    }

    fn bisect(
        &self,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
        inv_h: f64,
        mut lo: f64,
        mut hi: f64,
    ) -> f64 {
        for _ in 0..60 {
            if hi - lo < 1e-9 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            match self.clearance(origin, dir, inv_h, mid) {
                Some(c) if c > 0.0 => lo = mid,
                _ => hi = mid,
            }
        }
        hi
    }

    /// Grey value in `[0.1, 0.7]` for a terrain hit.
    pub fn shade(&self, hit: &RayHit) -> f64 {
        match self.settings.shading {
            Shading::Hypsometric => {
                let span = self.max_elevation - self.min_elevation;
                let t = if span > 0.0 {
                    (hit.point.z - self.min_elevation) / span
                } else {
                    0.5
                };
                0.1 + 0.6 * t.clamp(0.0, 1.0)
            }
            Shading::Slope => {
                let e = 0.5 * self.grid.cell_size();
                let (x, y) = (hit.point.x, hit.point.y);
                let z = |x: f64, y: f64| self.grid.sample_elevation(x, y).unwrap_or(hit.point.z);
                let dzdx = (z(x + e, y) - z(x - e, y)) / (2.0 * e);
                let dzdy = (z(x, y + e) - z(x, y - e)) / (2.0 * e);
                let n = Vector3::new(-dzdx, -dzdy, 1.0).normalize();
                // Sun in the north-west, 45° above the horizon.
                let sun = Vector3::new(-0.5, 0.5, core::f64::consts::FRAC_1_SQRT_2);
                0.1 + 0.6 * n.dot(&sun).max(0.0)
            }
        }
    }
}

/// Per-pixel world coordinates for an oriented image. Sky pixels hold
/// [`XYZ_NODATA`] in all three bands.
#[derive(Debug, Clone, PartialEq)]
pub struct XyzBands {
    pub width: usize,
    pub height: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub nodata: f64,
}

impl XyzBands {
    pub fn from_rows(width: usize, height: usize, rows: &[Vec<Option<RayHit>>]) -> Self {
        let n = width * height;
        let (mut x, mut y, mut z) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for row in rows {
            for hit in row {
                match hit {
                    Some(h) => {
                        x.push(h.point.x);
                        y.push(h.point.y);
                        z.push(h.point.z);
                    }
                    None => {
                        x.push(XYZ_NODATA);
                        y.push(XYZ_NODATA);
                        z.push(XYZ_NODATA);
                    }
                }
            }
        }
        Self {
            width,
            height,
            x,
            y,
            z,
            nodata: XYZ_NODATA,
        }
    }

    pub fn get(&self, col: usize, row: usize) -> Option<Vector3<f64>> {
        let i = row * self.width + col;
        if self.x[i] == self.nodata {
            None
        } else {
            Some(Vector3::new(self.x[i], self.y[i], self.z[i]))
        }
    }
}

/// Perspective render of a posed camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    /// The pose actually rendered (after the clearance rule).
    pub pose: CameraPose,
    pub camera_raised: bool,
    /// Shaded relief in `[0, 1]`; sky is [`SKY_SHADE`].
    pub shade: Raster,
    /// Distance along the pixel ray; NaN for sky.
    pub depth: Raster,
    pub xyz: XyzBands,
}

/// A validated perspective render, processed row by row.
#[derive(Debug, Clone)]
pub struct ViewJob<'a> {
    pub pose: CameraPose,
    pub camera_raised: bool,
    caster: RayCaster<'a>,
}

impl<'a> ViewJob<'a> {
    pub fn new(
        grid: &'a DemGrid,
        pose: &CameraPose,
        settings: RenderSettings,
    ) -> Result<Self, PanoramaError> {
        pose.intrinsics
            .validate()
            .map_err(|_| PanoramaError::InvalidParameter("invalid intrinsics"))?;
        let (position, camera_raised) = apply_clearance(grid, &pose.position)?;
        let mut pose = pose.clone();
        pose.position = position;
        Ok(Self {
            pose,
            camera_raised,
            caster: RayCaster::new(grid, settings),
        })
    }

    pub fn height(&self) -> usize {
        self.pose.intrinsics.height
    }

    pub fn width(&self) -> usize {
        self.pose.intrinsics.width
    }

    pub fn caster(&self) -> &RayCaster<'a> {
        &self.caster
    }

    pub fn hit(&self, u: f64, v: f64) -> Option<RayHit> {
        let dir = self.pose.pixel_ray(u, v);
        self.caster.cast(&self.pose.position, &dir)
    }

    pub fn row(&self, v: usize) -> Vec<Option<RayHit>> {
        (0..self.width())
            .map(|u| self.hit(u as f64, v as f64))
            .collect()
    }

    pub fn assemble(self, rows: Vec<Vec<Option<RayHit>>>) -> RenderedView {
        let (w, h) = (self.width(), self.height());
        let mut shade = Raster::new(w, h, SKY_SHADE);
        let mut depth = Raster::new(w, h, f64::NAN);
        for (v, row) in rows.iter().enumerate() {
            for (u, hit) in row.iter().enumerate() {
                if let Some(hit) = hit {
                    shade.set(u, v, self.caster.shade(hit));
                    depth.set(u, v, hit.depth);
                }
            }
        }
        let xyz = XyzBands::from_rows(w, h, &rows);
        RenderedView {
            pose: self.pose,
            camera_raised: self.camera_raised,
            shade,
            depth,
            xyz,
        }
    }
}

/// Renders a shaded perspective view with per-pixel XYZ.
pub fn render_view(
    grid: &DemGrid,
    pose: &CameraPose,
    settings: RenderSettings,
) -> Result<RenderedView, PanoramaError> {
    let job = ViewJob::new(grid, pose, settings)?;
    let rows = (0..job.height()).map(|v| job.row(v)).collect();
    Ok(job.assemble(rows))
}

/// World coordinates of every pixel of an oriented image.
pub fn backproject_xyz(
    grid: &DemGrid,
    pose: &CameraPose,
    settings: RenderSettings,
) -> Result<XyzBands, PanoramaError> {
    let job = ViewJob::new(grid, pose, settings)?;
    let rows: Vec<_> = (0..job.height()).map(|v| job.row(v)).collect();
    Ok(XyzBands::from_rows(job.width(), job.height(), &rows))
}

/// Terrain point seen through a single pixel.
pub fn backproject_pixel(
    grid: &DemGrid,
    pose: &CameraPose,
    u: f64,
    v: f64,
    settings: RenderSettings,
) -> Result<Option<Vector3<f64>>, PanoramaError> {
    let job = ViewJob::new(grid, pose, settings)?;
    Ok(job.hit(u, v).map(|h| h.point))
}

/// Cylindrical 360° render. Column `j` looks at azimuth `j * 2π / columns`;
/// row `v` looks at elevation `atan((cy - v) / f)`, which matches the centre
/// column of a level pinhole camera with the same focal length.
#[derive(Debug, Clone, PartialEq)]
pub struct PanoramaStrip {
    pub raster: Raster,
    pub focal_px: f64,
    pub principal_row: f64,
    pub camera: Vector3<f64>,
}

impl PanoramaStrip {
    pub fn columns(&self) -> usize {
        self.raster.width()
    }

    /// Azimuth spacing between columns.
    pub fn column_step(&self) -> f64 {
        TAU / self.columns() as f64
    }
}

#[derive(Debug, Clone)]
pub struct StripJob<'a> {
    pub camera: Vector3<f64>,
    pub columns: usize,
    pub rows: usize,
    pub focal_px: f64,
    pub principal_row: f64,
    caster: RayCaster<'a>,
}

impl<'a> StripJob<'a> {
    /// A strip whose column spacing matches `intrinsics` at the image centre.
    pub fn for_intrinsics(
        grid: &'a DemGrid,
        camera: &Vector3<f64>,
        intrinsics: &CameraIntrinsics,
        settings: RenderSettings,
    ) -> Result<Self, PanoramaError> {
        let columns = (TAU * intrinsics.focal_px).round() as usize;
        Self::new(
            grid,
            camera,
            columns,
            intrinsics.height,
            intrinsics.focal_px,
            intrinsics.principal_point.y,
            settings,
        )
    }

    pub fn new(
        grid: &'a DemGrid,
        camera: &Vector3<f64>,
        columns: usize,
        rows: usize,
        focal_px: f64,
        principal_row: f64,
        settings: RenderSettings,
    ) -> Result<Self, PanoramaError> {
        if columns < 8 || rows < 2 || !(focal_px > 0.0) {
            return Err(PanoramaError::InvalidParameter(
                "strip needs >= 8 columns, >= 2 rows, positive focal",
            ));
        }
        let (camera, _) = apply_clearance(grid, camera)?;
        Ok(Self {
            camera,
            columns,
            rows,
            focal_px,
            principal_row,
            caster: RayCaster::new(grid, settings),
        })
    }

    pub fn row(&self, v: usize) -> Vec<f64> {
        let elevation = ((self.principal_row - v as f64) / self.focal_px).atan();
        let (se, ce) = elevation.sin_cos();
        (0..self.columns)
            .map(|j| {
                let az = j as f64 * TAU / self.columns as f64;
                let (sa, ca) = az.sin_cos();
                let dir = Vector3::new(sa * ce, ca * ce, se);
                match self.caster.cast(&self.camera, &dir) {
                    Some(hit) => self.caster.shade(&hit),
                    None => SKY_SHADE,
                }
            })
            .collect()
    }

    pub fn assemble(self, rows: Vec<Vec<f64>>) -> PanoramaStrip {
        let data = rows.into_iter().flatten().collect();
        PanoramaStrip {
            raster: Raster::from_vec(self.columns, self.rows, data),
            focal_px: self.focal_px,
            principal_row: self.principal_row,
            camera: self.camera,
        }
    }
}

pub fn render_panorama_strip(
    grid: &DemGrid,
    camera: &Vector3<f64>,
    intrinsics: &CameraIntrinsics,
    settings: RenderSettings,
) -> Result<PanoramaStrip, PanoramaError> {
    let job = StripJob::for_intrinsics(grid, camera, intrinsics, settings)?;
    let rows = (0..job.rows).map(|v| job.row(v)).collect();
    Ok(job.assemble(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Angles;
    use crate::terrain::{synth_terrain, GridSpec, TerrainShape};

    fn flat(n: usize, cell: f64) -> DemGrid {
        let spec = GridSpec {
            origin_easting: 0.0,
            origin_northing: 0.0,
            cell_size: cell,
            n_cols: n,
            n_rows: n,
        };
        synth_terrain(&TerrainShape::Flat { height: 0.0 }, spec).unwrap()
    }

    #[test]
    fn flat_horizon_is_depression_to_max_range() {
        let g = flat(101, 10.0);
        let h = 10.0;
        let cam = Vector3::new(500.0, 500.0, h);
        let pano = render_horizon_panorama(&g, &cam, TAU / 360.0, 300.0, Curvature::Off).unwrap();
        assert_eq!(pano.records.len(), 360);
        for r in &pano.records {
            assert!((r.elevation - (-h / 300.0).atan()).abs() < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn clearance_rule_raises_camera() {
        let g = flat(11, 10.0);
        let (c, raised) = apply_clearance(&g, &Vector3::new(50.0, 50.0, 0.05)).unwrap();
        assert!(raised);
        assert_eq!(c.z, EYE_HEIGHT_M);
        assert!(matches!(
            apply_clearance(&g, &Vector3::new(-1.0, 50.0, 10.0)),
            Err(PanoramaError::CameraOutsideGrid { .. })
        ));
    }

    #[test]
    fn bad_azimuth_step() {
        assert!(azimuth_count(0.7).is_err());
        assert_eq!(azimuth_count(TAU / 1440.0).unwrap(), 1440);
    }

    #[test]
    fn flat_ground_pixel_backprojects() {
        let g = flat(201, 10.0);
        let h = 20.0;
        let k = CameraIntrinsics::centered(500.0, 101, 101);
        let pose = CameraPose::new(Vector3::new(1000.0, 1000.0, h), Angles::default(), k);
        // Pixel 25 rows below the principal point: depression atan(25 / 500).
        let p = backproject_pixel(&g, &pose, 50.0, 75.0, RenderSettings::default())
            .unwrap()
            .unwrap();
        let delta = (25.0f64 / 500.0).atan();
        assert!((p.x - 1000.0).abs() < 1e-3);
        assert!((p.y - (1000.0 + h / delta.tan())).abs() < 1e-3, "{p:?}");
        assert!(p.z.abs() < 1e-9);
        // Above the horizon is sky.
        assert!(
            backproject_pixel(&g, &pose, 50.0, 20.0, RenderSettings::default())
                .unwrap()
                .is_none()
        );
    }
}
