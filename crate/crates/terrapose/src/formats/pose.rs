//! Camera pose documents.
//!
//! `cov` holds 36 row-major entries over `(x, y, z, heading, tilt, roll)` in
//! m² / m·deg / deg². Without it the covariance is diagonal, built from the
//! optional `sigma_*` fields (zero when absent).

use nalgebra::{Matrix6, Point2, Vector3};
use serde::{Deserialize, Serialize};
use terrapose_core::camera::{Angles, CameraIntrinsics, CameraPose};

use super::FormatError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDoc {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub heading_deg: f64,
    pub tilt_deg: f64,
    pub roll_deg: f64,
    pub focal_px: f64,
    pub ppu: f64,
    pub ppv: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_heading_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_tilt_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_roll_deg: Option<f64>,
}

/// Per-component factor from file units to internal units.
fn unit(i: usize) -> f64 {
    if i < 3 {
        1.0
    } else {
        1f64.to_radians()
    }
}

impl PoseDoc {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            focal_px: self.focal_px,
            principal_point: Point2::new(self.ppu, self.ppv),
            width: self.width,
            height: self.height,
        }
    }

    pub fn to_pose(&self) -> Result<CameraPose, FormatError> {
        let cov = match &self.cov {
            Some(c) => {
                if c.len() != 36 {
                    return Err(FormatError::InvalidValue(format!(
                        "cov has {} entries, expected 36",
                        c.len()
                    )));
                }
                Matrix6::from_fn(|i, j| c[6 * i + j] * unit(i) * unit(j))
            }
            None => {
                let s = [
                    self.sigma_x,
                    self.sigma_y,
                    self.sigma_z,
                    self.sigma_heading_deg,
                    self.sigma_tilt_deg,
                    self.sigma_roll_deg,
                ];
                Matrix6::from_fn(|i, j| {
                    if i == j {
                        (s[i].unwrap_or(0.0) * unit(i)).powi(2)
                    } else {
                        0.0
                    }
                })
            }
        };
        let pose = CameraPose::with_covariance(
            Vector3::new(self.x, self.y, self.z),
            Angles::from_degrees(self.heading_deg, self.tilt_deg, self.roll_deg),
            self.intrinsics(),
            cov,
        );
        pose.validate()
            .map_err(|e| FormatError::InvalidValue(e.to_string()))?;
        Ok(pose)
    }

    pub fn from_pose(pose: &CameraPose) -> Self {
        let k = &pose.intrinsics;
        let c = &pose.covariance;
        Self {
            x: pose.position.x,
            y: pose.position.y,
            z: pose.position.z,
            heading_deg: pose.angles.heading.to_degrees(),
            tilt_deg: pose.angles.tilt.to_degrees(),
            roll_deg: pose.angles.roll.to_degrees(),
            focal_px: k.focal_px,
            ppu: k.principal_point.x,
            ppv: k.principal_point.y,
            width: k.width,
            height: k.height,
            cov: Some(
                (0..36)
                    .map(|n| c[(n / 6, n % 6)] / (unit(n / 6) * unit(n % 6)))
                    .collect(),
            ),
            sigma_x: None,
            sigma_y: None,
            sigma_z: None,
            sigma_heading_deg: None,
            sigma_tilt_deg: None,
            sigma_roll_deg: None,
        }
    }
}

pub fn parse_pose(text: &str) -> Result<CameraPose, FormatError> {
    super::parse_json::<PoseDoc>(text, "pose")?.to_pose()
}

pub fn write_pose(pose: &CameraPose) -> Vec<u8> {
    super::to_json(&PoseDoc::from_pose(pose))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_fields_build_diagonal() {
        let text = r#"{"x":1,"y":2,"z":3,"heading_deg":90,"tilt_deg":-2,"roll_deg":1,
            "focal_px":500,"ppu":320,"ppv":240,"width":640,"height":480,
            "sigma_x":10,"sigma_heading_deg":2}"#;
        let p = parse_pose(text).unwrap();
        assert_eq!(p.covariance[(0, 0)], 100.0);
        assert!((p.covariance[(3, 3)] - 2f64.to_radians().powi(2)).abs() < 1e-15);
        assert_eq!(p.covariance[(1, 1)], 0.0);
        assert!((p.angles.heading - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn round_trip_and_rejects_unknown_fields() {
        let text = r#"{"x":1,"y":2,"z":3,"heading_deg":10,"tilt_deg":0,"roll_deg":0,
            "focal_px":500,"ppu":320,"ppv":240,"width":640,"height":480,"sigma_tilt_deg":0.5,"sigma_z":4}"#;
        let p = parse_pose(text).unwrap();
        let back = parse_pose(std::str::from_utf8(&write_pose(&p)).unwrap()).unwrap();
        assert!((back.covariance - p.covariance).abs().max() < 1e-18);
        assert!((back.angles.heading - p.angles.heading).abs() < 1e-15);
        assert!(parse_pose(&text.replace("\"x\"", "\"xx\"")).is_err());
    }
}
