//! JSON documents: orientation results, homographies, change reports,
//! fusion priors, view descriptions and refinement diagnostics.

use std::path::Path;

use nalgebra::{Point2, Vector3};
use serde::{Deserialize, Serialize};
use terrapose_core::camera::Angles;
use terrapose_core::geofuse::{
    DistanceHistogram, EquirectView, FusionPriors, GeoTransform, ViewGeometry,
};
use terrapose_core::pepalp::IterationRecord;
use terrapose_core::topdown::{ChangeReport, Homography, SceneClass};

use super::pose::PoseDoc;
use super::{parse_json, FormatError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationDoc {
    pub heading_deg: f64,
    pub tilt_deg: f64,
    pub roll_deg: f64,
    /// Mean DTW cost per path step; `null` for HOG orientation.
    pub dtw_cost: Option<f64>,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl OrientationDoc {
    pub fn new(angles: &Angles, dtw_cost: Option<f64>, method: &str, score: Option<f64>) -> Self {
        Self {
            heading_deg: angles.heading.to_degrees(),
            tilt_deg: angles.tilt.to_degrees(),
            roll_deg: angles.roll.to_degrees(),
            dtw_cost,
            method: method.into(),
            score,
        }
    }
}

pub fn parse_homography(text: &str) -> Result<Homography, FormatError> {
    let v: Vec<f64> = parse_json(text, "homography")?;
    let arr: [f64; 9] = v.try_into().map_err(|v: Vec<f64>| {
        FormatError::InvalidJson(format!("homography has {} numbers, expected 9", v.len()))
    })?;
    Homography::from_row_major(&arr).map_err(|e| FormatError::InvalidValue(e.to_string()))
}

pub fn write_homography(h: &Homography) -> Vec<u8> {
    super::to_json(&h.row_major())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileDoc {
    pub row: usize,
    pub col: usize,
    pub r: f64,
    pub z: f64,
    pub flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeReportDoc {
    pub class: String,
    pub tiles: Vec<TileDoc>,
    /// `[row, col]` of tiles with zero variance, excluded from the statistics.
    pub degenerate: Vec<[usize; 2]>,
    pub changed_fraction: f64,
    pub changed: bool,
}

impl From<&ChangeReport> for ChangeReportDoc {
    fn from(r: &ChangeReport) -> Self {
        Self {
            class: match r.class {
                SceneClass::Urban => "urban".into(),
                SceneClass::Rural => "rural".into(),
            },
            tiles: r
                .tiles
                .iter()
                .map(|t| TileDoc {
                    row: t.row,
                    col: t.col,
                    r: t.r,
                    z: t.z,
                    flag: t.flag,
                })
                .collect(),
            degenerate: r.degenerate.iter().map(|&(a, b)| [a, b]).collect(),
            changed_fraction: r.changed_fraction,
            changed: r.changed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramDoc {
    pub bin_width: f64,
    /// The last bin collects every distance beyond the others.
    pub probabilities: Vec<f64>,
}

impl HistogramDoc {
    fn to_histogram(&self) -> Result<DistanceHistogram, FormatError> {
        DistanceHistogram::new(self.bin_width, self.probabilities.clone())
            .map_err(|e| FormatError::InvalidValue(e.to_string()))
    }
}

impl From<&DistanceHistogram> for HistogramDoc {
    fn from(h: &DistanceHistogram) -> Self {
        Self {
            bin_width: h.bin_width,
            probabilities: h.probabilities.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorsDoc {
    pub spacing: HistogramDoc,
    pub road_likelihood: HistogramDoc,
    /// Sidecar of a road distance raster, relative to this file.
    #[serde(default)]
    pub road_raster: Option<String>,
    pub w_spacing: f64,
    pub w_road: f64,
    pub threshold: f64,
}

impl PriorsDoc {
    pub fn from_priors(p: &FusionPriors, road_raster: Option<String>) -> Self {
        Self {
            spacing: (&p.spacing).into(),
            road_likelihood: (&p.road_likelihood).into(),
            road_raster,
            w_spacing: p.w_spacing,
            w_road: p.w_road,
            threshold: p.threshold,
        }
    }

    /// Builds the priors, loading the road raster relative to `base`.
    pub fn to_priors(&self, base: &Path) -> Result<FusionPriors, FormatError> {
        if !(self.w_spacing >= 0.0 && self.w_road >= 0.0) {
            return Err(FormatError::InvalidValue(
                "prior weights must be non-negative".into(),
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(FormatError::InvalidValue(
                "threshold must be in (0, 1)".into(),
            ));
        }
        let road = match &self.road_raster {
            Some(p) => Some(super::bands::read_road_raster(&base.join(p))?),
            None => None,
        };
        Ok(FusionPriors {
            spacing: self.spacing.to_histogram()?,
            road_likelihood: self.road_likelihood.to_histogram()?,
            road,
            w_spacing: self.w_spacing,
            w_road: self.w_road,
            threshold: self.threshold,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ViewDoc {
    /// Pinhole camera over flat ground at `ground_z`.
    Camera {
        pose: PoseDoc,
        ground_z: f64,
        #[serde(default)]
        scores: Option<String>,
    },
    Equirect {
        width: usize,
        height: usize,
        heading0_deg: f64,
        easting: f64,
        northing: f64,
        camera_height: f64,
        #[serde(default)]
        scores: Option<String>,
    },
    /// `geotransform`: easting = g0 + g1·u + g2·v, northing = g3 + g4·u + g5·v.
    Ortho {
        geotransform: [f64; 6],
        width: usize,
        height: usize,
        #[serde(default)]
        scores: Option<String>,
    },
}

impl ViewDoc {
    pub fn geometry(&self) -> Result<ViewGeometry, FormatError> {
        let g = match self {
            ViewDoc::Camera { pose, ground_z, .. } => ViewGeometry::Camera {
                pose: pose.to_pose()?,
                ground_z: *ground_z,
            },
            ViewDoc::Equirect {
                width,
                height,
                heading0_deg,
                easting,
                northing,
                camera_height,
                ..
            } => ViewGeometry::Equirect(EquirectView {
                width: *width,
                height: *height,
                heading0: heading0_deg.to_radians(),
                easting: *easting,
                northing: *northing,
                camera_height: *camera_height,
            }),
            ViewDoc::Ortho {
                geotransform,
                width,
                height,
                ..
            } => ViewGeometry::Ortho(GeoTransform {
                coefficients: *geotransform,
                width: *width,
                height: *height,
            }),
        };
        g.validate()
            .map_err(|e| FormatError::InvalidValue(e.to_string()))?;
        Ok(g)
    }

    pub fn scores(&self) -> Option<&str> {
        match self {
            ViewDoc::Camera { scores, .. }
            | ViewDoc::Equirect { scores, .. }
            | ViewDoc::Ortho { scores, .. } => scores.as_deref(),
        }
    }

    /// Pixel size the score raster must have.
    pub fn size(&self) -> (usize, usize) {
        match self {
            ViewDoc::Camera { pose, .. } => (pose.width, pose.height),
            ViewDoc::Equirect { width, height, .. } | ViewDoc::Ortho { width, height, .. } => {
                (*width, *height)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDoc {
    pub iteration: usize,
    pub threshold: f64,
    pub visible: usize,
    pub accepted: usize,
    pub invalidated: usize,
    pub mean_ellipse_area_px2: Option<f64>,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub heading_deg: f64,
    pub tilt_deg: f64,
    pub roll_deg: f64,
    pub covariance_trace: f64,
    pub position_change_m: f64,
    pub angle_change_deg: f64,
}

impl From<&IterationRecord> for IterationDoc {
    fn from(r: &IterationRecord) -> Self {
        let s = &r.state;
        Self {
            iteration: r.iteration,
            threshold: r.threshold,
            visible: r.visible,
            accepted: r.accepted,
            invalidated: r.invalidated,
            mean_ellipse_area_px2: r
                .mean_ellipse_area
                .is_finite()
                .then_some(r.mean_ellipse_area),
            x: s[0],
            y: s[1],
            z: s[2],
            heading_deg: s[3].to_degrees(),
            tilt_deg: s[4].to_degrees(),
            roll_deg: s[5].to_degrees(),
            covariance_trace: r.covariance_trace,
            position_change_m: r.position_change,
            angle_change_deg: r.angle_change.to_degrees(),
        }
    }
}

pub fn write_jsonl<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend(serde_json::to_vec(r).expect("serializable record"));
        out.push(b'\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintDoc {
    /// Top-down corners mapped into aerial pixels.
    pub footprint: [[f64; 2]; 4],
    pub crop_origin: [usize; 2],
    pub crop_size: [usize; 2],
    pub coverage: f64,
    pub inliers: usize,
}

pub fn point_pair(p: &Point2<f64>) -> [f64; 2] {
    [p.x, p.y]
}

pub fn vector(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}
