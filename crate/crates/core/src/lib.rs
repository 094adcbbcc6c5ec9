//! Geometric and statistical core of multi-view scene analysis from terrain
//! models and street-level imagery.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs; file formats, the command line and thread pools
//! live in the `terrapose` companion crate.
//!
//! Module map:
//!
//! - [`terrain`]: node-registered elevation grids, bilinear sampling and
//!   analytic terrain fixtures.
//! - [`camera`]: pinhole model, heading/tilt/roll rotations, projection
//!   Jacobians and confidence ellipses.
//! - [`panorama`]: horizon panoramas, perspective and cylindrical renders,
//!   per-pixel XYZ backprojection.
//! - [`orient`]: skyline extraction, subsequence DTW and HOG-based heading
//!   recovery.
//! - [`pepalp`]: RANSAC pose initialisation and Kalman refinement with
//!   ellipse-gated matching.
//! - [`topdown`]: panorama to bird's-eye warping, homography registration
//!   and correlation-based change scores.
//! - [`geofuse`]: projection of per-view detections to the ground and
//!   energy-based selection of fused detections.
#![no_std]
// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::large_enum_variant, clippy::type_complexity)]

extern crate alloc;

pub mod camera;
pub mod features;
pub mod geofuse;
pub mod math;
pub mod orient;
pub mod panorama;
pub mod pepalp;
pub mod raster;
pub mod terrain;
pub mod topdown;

pub use camera::{Angles, CameraError, CameraIntrinsics, CameraPose, ConfidenceEllipse};
pub use raster::Raster;
pub use terrain::{DemGrid, GridSpec, TerrainError, TerrainShape};
