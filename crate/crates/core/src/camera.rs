//! Pinhole camera model.
//!
//! World coordinates are ENU metres. Camera axes are x right, y down,
//! z forward. `heading` is the azimuth of the optical axis clockwise from
//! north, `tilt` its elevation above the horizon, and `roll` a rotation about
//! the optical axis (positive roll turns the camera x axis towards the ground,
//! so a level horizon appears to rise to the right of the image).
//!
//! The world-to-camera rotation is `R = R_roll * R_tilt * R_heading`, with
//! `R_tilt` also carrying the axis permutation from (east, north, up) to
//! (right, down, forward). Heading (0, 0, 0) looks north with image x east
//! and image y pointing down.

use core::f64::consts::FRAC_PI_2;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{Matrix2, Matrix2x6, Matrix3, Matrix6, Point2, SymmetricEigen, Vector3, Vector6};
use thiserror::Error;

use crate::math::{chi_square_2dof, wrap_pi, wrap_two_pi};

/// Depth below which a point counts as behind the camera.
pub const DEFAULT_MIN_DEPTH: f64 = 1e-6;

/// Default confidence for image-space gates.
pub const DEFAULT_GATE_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CameraError {
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("non-positive input: {0}")]
    NonPositiveInput(&'static str),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("invalid pose: {0}")]
    InvalidPose(&'static str),
}

impl CameraError {
    pub fn code(&self) -> &'static str {
        match self {
            CameraError::BehindCamera { .. } => "BehindCamera",
            CameraError::NonPositiveInput(_) => "NonPositiveInput",
            CameraError::InvalidIntrinsics(_) => "InvalidIntrinsics",
            CameraError::InvalidPose(_) => "InvalidPose",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub focal_px: f64,
    pub principal_point: Point2<f64>,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    /// Intrinsics with the principal point at the image centre.
    pub fn centered(focal_px: f64, width: usize, height: usize) -> Self {
        Self {
            focal_px,
            principal_point: Point2::new(0.5 * (width as f64 - 1.0), 0.5 * (height as f64 - 1.0)),
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.focal_px > 0.0 && self.focal_px.is_finite()) {
            return Err(CameraError::InvalidIntrinsics(
                "focal length must be positive",
            ));
        }
        let pp = self.principal_point;
        if !(pp.x >= 0.0 && pp.y >= 0.0 && pp.x <= self.width as f64 && pp.y <= self.height as f64)
        {
            return Err(CameraError::InvalidIntrinsics(
                "principal point outside the image",
            ));
        }
        Ok(())
    }

    /// Horizontal field of view in radians.
    pub fn horizontal_fov(&self) -> f64 {
        let left = (self.principal_point.x / self.focal_px).atan();
        let right = ((self.width as f64 - self.principal_point.x) / self.focal_px).atan();
        left + right
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= -0.5
            && p.y >= -0.5
            && p.x <= self.width as f64 - 0.5
            && p.y <= self.height as f64 - 0.5
    }
}

/// Heading, tilt and roll in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Angles {
    pub heading: f64,
    pub tilt: f64,
    pub roll: f64,
}

impl Angles {
    pub fn new(heading: f64, tilt: f64, roll: f64) -> Self {
        Self {
            heading,
            tilt,
            roll,
        }
    }

    pub fn from_degrees(heading: f64, tilt: f64, roll: f64) -> Self {
        Self::new(heading.to_radians(), tilt.to_radians(), roll.to_radians())
    }
}

/// Camera position, orientation, intrinsics and 6x6 covariance over
/// `(X, Y, Z, heading, tilt, roll)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub position: Vector3<f64>,
    pub angles: Angles,
    pub intrinsics: CameraIntrinsics,
    pub covariance: Matrix6<f64>,
}

impl CameraPose {
    /// Pose with zero covariance; heading is wrapped to `[0, 2π)`.
    pub fn new(position: Vector3<f64>, angles: Angles, intrinsics: CameraIntrinsics) -> Self {
        Self::with_covariance(position, angles, intrinsics, Matrix6::zeros())
    }

    pub fn with_covariance(
        position: Vector3<f64>,
        angles: Angles,
        intrinsics: CameraIntrinsics,
        covariance: Matrix6<f64>,
    ) -> Self {
        let angles = Angles {
            heading: wrap_two_pi(angles.heading),
            ..angles
        };
        Self {
            position,
            angles,
            intrinsics,
            covariance,
        }
    }

    /// Checks the invariants: finite state, `|tilt| <= π/2`, symmetric PSD covariance.
    pub fn validate(&self) -> Result<(), CameraError> {
        self.intrinsics.validate()?;
        if !self.state().iter().all(|v| v.is_finite()) {
            return Err(CameraError::InvalidPose("non-finite state"));
        }
        if self.angles.tilt.abs() > FRAC_PI_2 {
            return Err(CameraError::InvalidPose("|tilt| exceeds π/2"));
        }
        if !is_psd(&self.covariance) {
            return Err(CameraError::InvalidPose(
                "covariance is not symmetric positive semidefinite",
            ));
        }
        Ok(())
    }

    /// `(X, Y, Z, heading, tilt, roll)`.
    pub fn state(&self) -> Vector6<f64> {
        let p = &self.position;
        Vector6::new(
            p.x,
            p.y,
            p.z,
            self.angles.heading,
            self.angles.tilt,
            self.angles.roll,
        )
    }

    /// Copy of `self` with a new state vector; heading wrapped.
    pub fn with_state(&self, state: &Vector6<f64>) -> Self {
        Self::with_covariance(
            Vector3::new(state[0], state[1], state[2]),
            Angles::new(state[3], state[4], state[5]),
            self.intrinsics,
            self.covariance,
        )
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_from_angles(&self.angles)
    }

    /// Unit ray direction in world coordinates through pixel `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let k = &self.intrinsics;
        let d_cam = Vector3::new(
            (u - k.principal_point.x) / k.focal_px,
            (v - k.principal_point.y) / k.focal_px,
            1.0,
        );
        (self.rotation().transpose() * d_cam).normalize()
    }

    /// Optical axis in world coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation().row(2).transpose()
    }
}

/// Difference of two state vectors with the heading component wrapped.
pub fn state_difference(a: &Vector6<f64>, b: &Vector6<f64>) -> Vector6<f64> {
    let mut d = a - b;
    d[3] = wrap_pi(d[3]);
    d
}

/// Symmetric positive semidefinite within a small relative tolerance.
pub fn is_psd(m: &Matrix6<f64>) -> bool {
    if !m.iter().all(|v| v.is_finite()) {
        return false;
    }
    let scale = m.abs().max().max(1e-300);
    if (m - m.transpose()).abs().max() > 1e-9 * scale {
        return false;
    }
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym);
    eig.eigenvalues.min() >= -1e-9 * scale
}

fn rotation_heading(h: f64) -> Matrix3<f64> {
    let (s, c) = h.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rotation_heading_derivative(h: f64) -> Matrix3<f64> {
    let (s, c) = h.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

fn rotation_tilt(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, s, -c, 0.0, c, s)
}

fn rotation_tilt_derivative(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c)
}

fn rotation_roll(r: f64) -> Matrix3<f64> {
    let (s, c) = r.sin_cos();
    Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rotation_roll_derivative(r: f64) -> Matrix3<f64> {
    let (s, c) = r.sin_cos();
    Matrix3::new(-s, c, 0.0, -c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// World-to-camera rotation for the given angles.
pub fn rotation_from_angles(angles: &Angles) -> Matrix3<f64> {
    rotation_roll(angles.roll) * rotation_tilt(angles.tilt) * rotation_heading(angles.heading)
}

/// Inverse of [`rotation_from_angles`] away from the `|tilt| = π/2`
/// singularity. The input must be a proper rotation.
pub fn angles_from_rotation(r: &Matrix3<f64>) -> Angles {
    let tilt = r[(2, 2)].clamp(-1.0, 1.0).asin();
    let heading = wrap_two_pi(r[(2, 0)].atan2(r[(2, 1)]));
    let roll = (-r[(0, 2)]).atan2(-r[(1, 2)]);
    Angles {
        heading,
        tilt,
        roll,
    }
}

/// Projects a world point: `p = R (P - t)`, `u = cx + f x/z`, `v = cy + f y/z`.
/// The result may fall outside the image.
pub fn project_point(pose: &CameraPose, point: &Vector3<f64>) -> Result<Point2<f64>, CameraError> {
    let p = pose.rotation() * (point - pose.position);
    pinhole(&pose.intrinsics, &p)
}

fn pinhole(k: &CameraIntrinsics, p: &Vector3<f64>) -> Result<Point2<f64>, CameraError> {
    if p.z <= DEFAULT_MIN_DEPTH {
        return Err(CameraError::BehindCamera { depth: p.z });
    }
    Ok(Point2::new(
        k.principal_point.x + k.focal_px * p.x / p.z,
        k.principal_point.y + k.focal_px * p.y / p.z,
    ))
}

/// Projection of `point` together with the analytic Jacobian of `(u, v)`
/// with respect to the pose state `(X, Y, Z, heading, tilt, roll)`.
pub fn projection_jacobian(
    pose: &CameraPose,
    point: &Vector3<f64>,
) -> Result<(Point2<f64>, Matrix2x6<f64>), CameraError> {
    let a = &pose.angles;
    let (rh, rt, rr) = (
        rotation_heading(a.heading),
        rotation_tilt(a.tilt),
        rotation_roll(a.roll),
    );
    let r = rr * rt * rh;
    let d = point - pose.position;
    let p = r * d;
    let uv = pinhole(&pose.intrinsics, &p)?;

    let f = pose.intrinsics.focal_px;
    let iz = 1.0 / p.z;
    // d(u, v) / d(p_cam)
    let duv_dp = nalgebra::Matrix2x3::new(
        f * iz,
        0.0,
        -f * p.x * iz * iz,
        0.0,
        f * iz,
        -f * p.y * iz * iz,
    );

    let dp_dt = -r;
    let dp_dh = rr * rt * rotation_heading_derivative(a.heading) * d;
    let dp_dtilt = rr * rotation_tilt_derivative(a.tilt) * rh * d;
    let dp_droll = rotation_roll_derivative(a.roll) * rt * rh * d;

    let mut jac = Matrix2x6::zeros();
    jac.fixed_view_mut::<2, 3>(0, 0)
        .copy_from(&(duv_dp * dp_dt));
    jac.set_column(3, &(duv_dp * dp_dh));
    jac.set_column(4, &(duv_dp * dp_dtilt));
    jac.set_column(5, &(duv_dp * dp_droll));
    Ok((uv, jac))
}

/// Horizontal field of view and focal length in pixels from lens metadata.
pub fn fov_from_focal(
    focal_mm: f64,
    sensor_width_mm: f64,
    image_width_px: f64,
) -> Result<(f64, f64), CameraError> {
    if !(focal_mm > 0.0) {
        return Err(CameraError::NonPositiveInput("focal_mm"));
    }
    if !(sensor_width_mm > 0.0) {
        return Err(CameraError::NonPositiveInput("sensor_width_mm"));
    }
    if !(image_width_px > 0.0) {
        return Err(CameraError::NonPositiveInput("image_width_px"));
    }
    let fov = 2.0 * (sensor_width_mm / (2.0 * focal_mm)).atan();
    Ok((fov, focal_mm * image_width_px / sensor_width_mm))
}

/// Image-space chi-square gate around a predicted projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceEllipse {
    pub center: Point2<f64>,
    pub covariance: Matrix2<f64>,
    /// Chi-square threshold on the squared Mahalanobis distance (2 dof).
    pub gate: f64,
}

impl ConfidenceEllipse {
    /// Squared Mahalanobis distance of `p` from the centre. A singular
    /// covariance admits only the centre itself.
    pub fn mahalanobis_sq(&self, p: &Point2<f64>) -> f64 {
        let d = p - self.center;
        match self.covariance.try_inverse() {
            Some(inv) if self.covariance.determinant() > 0.0 => (d.transpose() * inv * d)[0],
            _ => {
                if d.norm_squared() == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        self.mahalanobis_sq(p) <= self.gate
    }

    /// Area of the gated region in pixels².
    pub fn area(&self) -> f64 {
        core::f64::consts::PI * self.gate * self.covariance.determinant().max(0.0).sqrt()
    }

    /// Semi-axis lengths (major, minor) in pixels and the major-axis angle
    /// measured from the image u axis.
    pub fn axes(&self) -> (f64, f64, f64) {
        let eig = SymmetricEigen::new(self.covariance);
        let (i_max, i_min) = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
            (0, 1)
        } else {
            (1, 0)
        };
        let major = (self.gate * eig.eigenvalues[i_max].max(0.0)).sqrt();
        let minor = (self.gate * eig.eigenvalues[i_min].max(0.0)).sqrt();
        let v = eig.eigenvectors.column(i_max);
        (major, minor, v[1].atan2(v[0]))
    }
}

/// First-order propagation of the pose covariance (plus isotropic pixel
/// noise) to an image-space ellipse around the projection of `point`.
pub fn propagate_pose_covariance(
    pose: &CameraPose,
    point: &Vector3<f64>,
    pixel_noise: f64,
    confidence: f64,
) -> Result<ConfidenceEllipse, CameraError> {
    let (center, jac) = projection_jacobian(pose, point)?;
    let mut cov = jac * pose.covariance * jac.transpose();
    cov = 0.5 * (cov + cov.transpose());
    cov += Matrix2::identity() * (pixel_noise * pixel_noise);
    Ok(ConfidenceEllipse {
        center,
        covariance: cov,
        gate: chi_square_2dof(confidence),
    })
}
