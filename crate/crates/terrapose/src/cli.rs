//! The `terrapose` command line: one subcommand per pipeline stage.
//!
//! Every subcommand reads its inputs, computes, stages its outputs in memory
//! and commits them with temp-then-rename. Failures print one line
//! `ERROR <code>: <detail>` on stderr and exit 2 (input) or 3 (numerical).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use terrapose_core::camera::CameraPose;
use terrapose_core::geofuse::{
    learn_road_histogram, learn_spacing_histogram, outside_road_raster, solve_exact, solve_greedy,
    union_and_rescore, DistanceHistogram, FusionPriors, FusionView, ScoreSource, UnionParams,
};
use terrapose_core::orient::{
    extract_image_skyline, hog_orient, orient_dtw, DtwParams, QuerySkyline, ReferenceSkyline,
    SkylineParams,
};
use terrapose_core::panorama::{Curvature, RenderSettings, Shading};
use terrapose_core::pepalp::{
    initial_pose_ransac, pep_alp, Candidate, PepAlpSchedule, RansacParams,
};
use terrapose_core::raster::Raster;
use terrapose_core::terrain::{synth_terrain, DemGrid, GridSpec, TerrainShape};
use terrapose_core::topdown::{
    change_zscore, detect_and_describe, match_knn, ransac_homography, register_crop,
    warp_aerial_to_topdown, ChangeThresholds, PanoramaImage, PointMatch, SceneClass, TopDownParams,
    TopDownView,
};

use crate::error::CliError;
use crate::formats::docs::{
    self, ChangeReportDoc, FootprintDoc, IterationDoc, OrientationDoc, PriorsDoc, ViewDoc,
};
use crate::formats::{asc, bands, parse_json, pnm, pose, read_bytes, read_text, tables, to_json};
use crate::output::Staged;
use crate::parallel;
use crate::synth::HillMixture;

// Value parsers with the documented ranges.

fn finite(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` must be finite"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("`{s}` must be > 0"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("`{s}` must be >= 0"))
    }
}

fn open_unit(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("`{s}` must lie in (0, 1)"))
    }
}

fn unit_closed(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("`{s}` must lie in [0, 1]"))
    }
}

fn ratio(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("`{s}` must lie in (0, 1]"))
    }
}

fn quarter_turn(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if v.abs() <= 90.0 {
        Ok(v)
    } else {
        Err(format!("`{s}` must lie in [-90, 90]"))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "terrapose",
    version,
    about = "Terrain-based pose, registration and detection fusion toolkit"
)]
pub struct Cli {
    /// Worker threads, 0 = one per core [count, >= 0]. Output bytes do not depend on it.
    #[arg(long, global = true, env = "TERRAPOSE_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Seed for every randomized stage [64-bit integer].
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// More progress messages on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize an analytic DEM and write it as an ASCII grid.
    GenDem(GenDemArgs),
    /// Render the 360° horizon from a camera position.
    RenderPano(RenderPanoArgs),
    /// Render a shaded perspective view and optional per-pixel XYZ bands.
    RenderView(RenderViewArgs),
    /// Extract a query skyline from an image, or a reference skyline from a panorama table.
    Skyline(SkylineArgs),
    /// Orient a located image by skyline DTW against the rendered horizon.
    OrientDtw(OrientDtwArgs),
    /// Orient a located image by multi-scale HOG correlation against a rendered strip.
    OrientHog(OrientHogArgs),
    /// Initial pose from 2D-3D descriptor matches by RANSAC.
    PoseInit(PoseInitArgs),
    /// Refine a prior pose with gated matches and Kalman updates.
    RefinePepalp(RefinePepalpArgs),
    /// Warp an equirectangular panorama into a north-up top-down view.
    WarpTopdown(WarpTopdownArgs),
    /// Register a top-down view into an aerial image by homography.
    Register(RegisterArgs),
    /// Tile-wise correlation change scores between two co-registered rasters.
    ChangeScore(ChangeScoreArgs),
    /// Fuse per-view detections into geographic detections.
    Fuse(FuseArgs),
    /// Learn spacing and road-distance priors from training positions.
    LearnPriors(LearnPriorsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemKind {
    Flat,
    Cone,
    Ridge,
    #[value(name = "gaussian_hill")]
    GaussianHill,
    /// Seeded sum of Gaussian hills around a central valley.
    Mixture,
}

#[derive(Debug, Args)]
pub struct GenDemArgs {
    #[arg(long, value_enum)]
    pub kind: DemKind,
    /// Peak height of cone, ridge, hill; largest hill of a mixture [m, finite].
    #[arg(long, default_value_t = 500.0, value_parser = finite)]
    pub amp: f64,
    /// Hill sigma, ridge width, largest mixture sigma [m, > 0].
    #[arg(long, default_value_t = 800.0, value_parser = positive)]
    pub sigma: f64,
    /// Cone slope [m/m, > 0].
    #[arg(long, default_value_t = 0.5, value_parser = positive)]
    pub slope: f64,
    /// Ridge crest azimuth, clockwise from north [deg, finite].
    #[arg(long, default_value_t = 0.0, value_parser = finite)]
    pub azimuth: f64,
    /// Height of flat terrain [m, finite].
    #[arg(long, default_value_t = 0.0, value_parser = finite)]
    pub height: f64,
    /// Number of hills in a mixture [count, >= 1].
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(1..))]
    pub hills: u32,
    /// Nodes per side [count, >= 2].
    #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u32).range(2..))]
    pub size: u32,
    /// Node spacing [m, > 0].
    #[arg(long, default_value_t = 25.0, value_parser = positive)]
    pub cell: f64,
    /// Easting of the south-west node [m, finite].
    #[arg(long, default_value_t = 0.0, value_parser = finite)]
    pub origin_e: f64,
    /// Northing of the south-west node [m, finite].
    #[arg(long, default_value_t = 0.0, value_parser = finite)]
    pub origin_n: f64,
    /// Output ASCII grid.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RenderOptions {
    /// Farthest ground distance a ray follows; unset = grid boundary [m, > 0].
    #[arg(long, value_parser = positive)]
    pub max_range: Option<f64>,
    /// Apply Earth curvature and refraction.
    #[arg(long)]
    pub curvature: bool,
    /// Refraction coefficient when --curvature is set [dimensionless, 0..1].
    #[arg(long, default_value_t = 0.13, value_parser = unit_closed)]
    pub refraction: f64,
}

impl RenderOptions {
    fn curvature(&self) -> Curvature {
        if self.curvature {
            Curvature::On {
                refraction: self.refraction,
            }
        } else {
            Curvature::Off
        }
    }
}

#[derive(Debug, Args)]
pub struct RenderPanoArgs {
    #[arg(long)]
    pub dem: PathBuf,
    /// Camera easting [m].
    #[arg(long, value_parser = finite)]
    pub x: f64,
    /// Camera northing [m].
    #[arg(long, value_parser = finite)]
    pub y: f64,
    /// Camera height; unset or within 0.1 m of the ground = ground + 1.6 [m].
    #[arg(long, value_parser = finite)]
    pub z: Option<f64>,
    /// Azimuth step, must divide 360 [deg, > 0].
    #[arg(long, default_value_t = 0.25, value_parser = positive)]
    pub step: f64,
    #[command(flatten)]
    pub render: RenderOptions,
    /// Output panorama table.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShadingArg {
    Hypsometric,
    Slope,
}

impl From<ShadingArg> for Shading {
    fn from(s: ShadingArg) -> Self {
        match s {
            ShadingArg::Hypsometric => Shading::Hypsometric,
            ShadingArg::Slope => Shading::Slope,
        }
    }
}

#[derive(Debug, Args)]
pub struct RenderViewArgs {
    #[arg(long)]
    pub dem: PathBuf,
    /// Pose document (position, angles, intrinsics).
    #[arg(long)]
    pub pose: PathBuf,
    #[arg(long, value_enum, default_value_t = ShadingArg::Hypsometric)]
    pub shading: ShadingArg,
    #[command(flatten)]
    pub render: RenderOptions,
    /// Output 16-bit PGM of the shaded view.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Write XYZ bands to <prefix>.{x,y,z}.f32 and <prefix>.json.
    #[arg(long)]
    pub xyz: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SkylineOptions {
    /// Minimum vertical gradient for the sky edge [intensity/px, > 0].
    #[arg(long, default_value_t = 0.05, value_parser = positive)]
    pub threshold: f64,
    /// Box-smoothing radius before the gradient [px, >= 0].
    #[arg(long, default_value_t = 1)]
    pub smoothing: usize,
}

impl SkylineOptions {
    fn params(&self) -> SkylineParams {
        SkylineParams {
            threshold: self.threshold,
            smoothing_radius: self.smoothing,
        }
    }
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["image", "pano"]))]
pub struct SkylineArgs {
    /// Query image (PGM/PPM); writes `col,row,valid`.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Panorama table from render-pano; writes `azimuth_deg,elev_deg`.
    #[arg(long)]
    pub pano: Option<PathBuf>,
    #[command(flatten)]
    pub skyline: SkylineOptions,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("query").required(true).args(["image", "skyline"]))]
#[command(group = clap::ArgGroup::new("model").required(true).args(["dem", "reference"]))]
pub struct OrientDtwArgs {
    /// DEM to render the reference horizon from at the pose position.
    #[arg(long)]
    pub dem: Option<PathBuf>,
    /// Precomputed reference skyline or panorama table instead of --dem.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Prior pose; position and intrinsics are used, angles are ignored.
    #[arg(long)]
    pub pose: PathBuf,
    /// Query image (PGM/PPM).
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Query skyline table instead of --image.
    #[arg(long)]
    pub skyline: Option<PathBuf>,
    #[command(flatten)]
    pub skyline_options: SkylineOptions,
    /// Reference azimuth step when rendering from --dem [deg, > 0, divides 360].
    #[arg(long, default_value_t = 0.25, value_parser = positive)]
    pub step: f64,
    /// Weight of the slope term in the DTW cost [dimensionless, >= 0].
    #[arg(long, default_value_t = 0.5, value_parser = non_negative)]
    pub lambda: f64,
    /// Half width of the DTW band around the seeded heading [deg, > 0].
    #[arg(long, default_value_t = 2.0, value_parser = positive)]
    pub band: f64,
    /// Largest |tilt| and |roll| accepted by the rigid seed [deg, 0..90].
    #[arg(long, default_value_t = 6.0, value_parser = quarter_turn)]
    pub max_angle: f64,
    /// DTW passes after the seed [count, >= 1].
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    pub passes: u32,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct OrientHogArgs {
    #[arg(long)]
    pub dem: PathBuf,
    /// Prior pose; position and intrinsics are used. The image must be level.
    #[arg(long)]
    pub pose: PathBuf,
    /// Query image (PGM/PPM), same size as the pose intrinsics.
    #[arg(long)]
    pub image: PathBuf,
    /// Pyramid factors of the 8 px HOG cells [comma list, each >= 1].
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub scales: Vec<usize>,
    /// Azimuth stride of the sweep [strip columns, >= 1].
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, value_enum, default_value_t = ShadingArg::Hypsometric)]
    pub shading: ShadingArg,
    /// Also write the score curve as `azimuth_deg,score`.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PoseInitArgs {
    /// Landmarks table `x,y,z,d0..`.
    #[arg(long)]
    pub landmarks: PathBuf,
    /// Query keypoints table `u,v,d0..`.
    #[arg(long)]
    pub keypoints: PathBuf,
    /// Pose document supplying the intrinsics.
    #[arg(long)]
    pub pose: PathBuf,
    /// Lowe ratio for keypoint-to-landmark candidates [dimensionless, (0, 1]].
    #[arg(long, default_value_t = 0.8, value_parser = ratio)]
    pub ratio: f64,
    /// RANSAC hypotheses [count, >= 1].
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u32).range(1..))]
    pub iterations: u32,
    /// Inlier reprojection tolerance [px, > 0].
    #[arg(long, default_value_t = 3.0, value_parser = positive)]
    pub tol: f64,
    /// Floor on the residual sigma scaling the covariance [px, > 0].
    #[arg(long, default_value_t = 0.5, value_parser = positive)]
    pub min_sigma: f64,
    /// Also write the inlier candidates as `u,v,x,y,z,descriptor_distance`.
    #[arg(long)]
    pub inliers: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct RefinePepalpArgs {
    /// Prior pose with covariance.
    #[arg(long)]
    pub pose: PathBuf,
    #[arg(long)]
    pub landmarks: PathBuf,
    #[arg(long)]
    pub keypoints: PathBuf,
    /// Outer iterations [count, >= 1].
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    pub max_iterations: u32,
    /// Chi-square gate probability [probability, (0, 1)].
    #[arg(long, default_value_t = 0.95, value_parser = open_unit)]
    pub gate_confidence: f64,
    /// Initial descriptor threshold as a fraction of the descriptor diameter [dimensionless, > 0].
    #[arg(long, default_value_t = 0.8, value_parser = positive)]
    pub threshold_fraction: f64,
    /// Threshold decay per iteration [dimensionless, (0, 1)].
    #[arg(long, default_value_t = 0.8, value_parser = open_unit)]
    pub decay: f64,
    /// Keypoint measurement sigma [px, > 0].
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub pixel_sigma: f64,
    /// Relinearisations per update [count, >= 1].
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    pub inner_iterations: u32,
    /// Stop when the position moves less than this [m, >= 0].
    #[arg(long, default_value_t = 0.05, value_parser = non_negative)]
    pub position_tol: f64,
    /// Stop when every angle moves less than this [deg, >= 0].
    #[arg(long, default_value_t = 0.000573, value_parser = non_negative)]
    pub angle_tol: f64,
    /// Fewest validated matches for a converged result [count, >= 1].
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u32).range(1..))]
    pub min_support: u32,
    /// Posterior validation gate probability [probability, (0, 1)].
    #[arg(long, default_value_t = 0.999, value_parser = open_unit)]
    pub validation_confidence: f64,
    /// Per-iteration diagnostics as JSON lines.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct WarpTopdownArgs {
    /// Equirectangular panorama (PGM/PPM, width = 2 x height).
    #[arg(long)]
    pub pano: PathBuf,
    /// Azimuth of column 0, clockwise from north [deg, finite].
    #[arg(long, default_value_t = 0.0, value_parser = finite)]
    pub heading0: f64,
    /// Camera height above the ground [m, > 0].
    #[arg(long, value_parser = positive)]
    pub camera_height: f64,
    /// Ground sampling distance [m/px, > 0].
    #[arg(long, default_value_t = 0.5, value_parser = positive)]
    pub gsd: f64,
    /// Side of the square view [m, >= 2 x gsd].
    #[arg(long, default_value_t = 150.0, value_parser = positive)]
    pub extent: f64,
    /// Cells seen closer to the horizon than this are nodata (written as 0) [deg, 0..90].
    #[arg(long, default_value_t = 5.0, value_parser = quarter_turn)]
    pub min_depression: f64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Top-down view (PGM/PPM).
    #[arg(long)]
    pub topdown: PathBuf,
    /// Aerial image (PGM/PPM).
    #[arg(long)]
    pub aerial: PathBuf,
    /// Correspondences `uA,vA,uB,vB` (A = top-down, B = aerial); skips feature detection.
    #[arg(long)]
    pub matches: Option<PathBuf>,
    /// HOG patch sizes [comma list of px, multiples of 4].
    #[arg(long, value_delimiter = ',', default_value = "16,32")]
    pub scales: Vec<usize>,
    /// Corner response threshold [dimensionless, >= 0].
    #[arg(long, default_value_t = 1e-4, value_parser = non_negative)]
    pub response: f64,
    /// Lowe ratio [dimensionless, (0, 1]].
    #[arg(long, default_value_t = 0.8, value_parser = ratio)]
    pub ratio: f64,
    /// RANSAC hypotheses [count, >= 1].
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u32).range(1..))]
    pub iterations: u32,
    /// Symmetric transfer tolerance [px, > 0].
    #[arg(long, default_value_t = 3.0, value_parser = positive)]
    pub tol: f64,
    /// Top-down ground sampling distance [m/px, > 0].
    #[arg(long, default_value_t = 0.5, value_parser = positive)]
    pub topdown_gsd: f64,
    /// Aerial ground sampling distance [m/px, > 0].
    #[arg(long, default_value_t = 0.5, value_parser = positive)]
    pub aerial_gsd: f64,
    /// Aerial resampled onto the top-down grid (PGM), ready for change-score.
    #[arg(long)]
    pub crop: Option<PathBuf>,
    /// Footprint polygon, crop window and coverage (JSON).
    #[arg(long)]
    pub footprint: Option<PathBuf>,
    /// Homography document (9 row-major numbers, top-down to aerial pixels).
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SceneArg {
    Urban,
    Rural,
}

#[derive(Debug, Args)]
pub struct ChangeScoreArgs {
    #[arg(long)]
    pub topdown: PathBuf,
    /// Aerial raster on the same grid as --topdown.
    #[arg(long)]
    pub aerial: PathBuf,
    /// Tile side, must divide both raster sides [px, >= 2].
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(2..))]
    pub tile: u32,
    #[arg(long, value_enum)]
    pub class: SceneArg,
    /// Override the correlation floor (default 0.20 urban, 0.35 rural) [dimensionless, -1..1].
    #[arg(long, value_parser = finite)]
    pub r_min: Option<f64>,
    /// Override the robust z floor (default -2.5) [dimensionless].
    #[arg(long, value_parser = finite)]
    pub z_min: Option<f64>,
    /// Override the changed-tile fraction for a changed scene (default 0.25) [fraction, 0..1].
    #[arg(long, value_parser = unit_closed)]
    pub fraction: Option<f64>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Greedy,
    Exact,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Detections table `view_id,umin,vmin,umax,vmax,score`.
    #[arg(long)]
    pub detections: PathBuf,
    /// JSON array of view descriptions; `view_id` indexes it.
    #[arg(long)]
    pub views: PathBuf,
    /// Priors document from learn-priors; unset = flat priors.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    /// Detection threshold used with flat priors [probability, (0, 1)].
    #[arg(long, default_value_t = 0.5, value_parser = open_unit)]
    pub threshold: f64,
    /// Single-linkage merge radius [m, > 0].
    #[arg(long, default_value_t = 2.0, value_parser = positive)]
    pub merge_radius: f64,
    /// Object footprint radius; closer pairs exclude each other [m, > 0].
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub footprint_radius: f64,
    /// Boxes whose foot is closer to the horizon are rejected [deg, 0..90].
    #[arg(long, default_value_t = 0.5, value_parser = quarter_turn)]
    pub min_depression: f64,
    /// Score of in-frame pixels no box covers, for views without a score raster [probability, [0, 1]].
    #[arg(long, default_value_t = 0.5, value_parser = unit_closed)]
    pub background: f64,
    #[arg(long, value_enum, default_value_t = SolverArg::Greedy)]
    pub solver: SolverArg,
    /// Proposals table `easting,northing,score,selected`.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct LearnPriorsArgs {
    /// Training positions table `easting,northing`.
    #[arg(long)]
    pub positions: PathBuf,
    /// Road distance raster sidecar (f32 band + JSON).
    #[arg(long)]
    pub road: Option<PathBuf>,
    /// Histogram bin width [m, > 0].
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub bin_width: f64,
    /// Regular bins before the overflow bin [count, >= 1].
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(1..))]
    pub bins: u32,
    /// Spacing prior weight [dimensionless, >= 0].
    #[arg(long, default_value_t = 1.0, value_parser = non_negative)]
    pub w_spacing: f64,
    /// Road prior weight [dimensionless, >= 0].
    #[arg(long, default_value_t = 1.0, value_parser = non_negative)]
    pub w_road: f64,
    /// Detection threshold [probability, (0, 1)].
    #[arg(long, default_value_t = 0.5, value_parser = open_unit)]
    pub threshold: f64,
    #[arg(short, long)]
    pub output: PathBuf,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    pub seed: u64,
    pub verbose: u8,
}

impl RunConfig {
    fn info(&self, msg: impl AsRef<str>) {
        if self.verbose > 0 {
            eprintln!("INFO {}", msg.as_ref());
        }
    }
}

fn warn(msg: impl AsRef<str>) {
    eprintln!("WARN {}", msg.as_ref());
}

fn load_text(path: &Path) -> Result<String, CliError> {
    Ok(read_text(path)?)
}

fn load_dem(path: &Path) -> Result<DemGrid, CliError> {
    asc::parse_ascii_grid(&load_text(path)?).map_err(|e| CliError::from(e).in_file(path))
}

fn load_image(path: &Path) -> Result<Raster, CliError> {
    pnm::parse_pnm(&read_bytes(path)?).map_err(|e| CliError::from(e).in_file(path))
}

fn load_pose(path: &Path) -> Result<CameraPose, CliError> {
    pose::parse_pose(&load_text(path)?).map_err(|e| CliError::from(e).in_file(path))
}

fn load_table<T>(
    path: &Path,
    parse: fn(&str) -> Result<T, crate::formats::FormatError>,
) -> Result<T, CliError> {
    parse(&load_text(path)?).map_err(|e| CliError::from(e).in_file(path))
}

fn settings(shading: ShadingArg, render: &RenderOptions) -> RenderSettings {
    RenderSettings {
        shading: shading.into(),
        max_range: render.max_range,
        curvature: render.curvature(),
    }
}

fn gen_dem(a: &GenDemArgs, cfg: RunConfig) -> Result<Staged, CliError> {
    let n = a.size as usize;
    let spec = GridSpec {
        origin_easting: a.origin_e,
        origin_northing: a.origin_n,
        cell_size: a.cell,
        n_cols: n,
        n_rows: n,
    };
    spec.validate()?;
    let (cx, cy) = spec.center();
    let grid = match a.kind {
        DemKind::Flat => synth_terrain(&TerrainShape::Flat { height: a.height }, spec)?,
        DemKind::Cone => synth_terrain(
            &TerrainShape::Cone {
                apex_x: cx,
                apex_y: cy,
                amplitude: a.amp,
                slope: a.slope,
            },
            spec,
        )?,
        DemKind::Ridge => synth_terrain(
            &TerrainShape::Ridge {
                x: cx,
                y: cy,
                azimuth: a.azimuth.to_radians(),
                amplitude: a.amp,
                width: a.sigma,
            },
            spec,
        )?,
        DemKind::GaussianHill => synth_terrain(
            &TerrainShape::GaussianHill {
                center_x: cx,
                center_y: cy,
                amplitude: a.amp,
                sigma: a.sigma,
            },
            spec,
        )?,
        DemKind::Mixture => HillMixture::for_grid(&spec, a.hills as usize, a.amp, a.sigma)
            .generate(spec, cfg.seed)?,
    };
    let mut out = Staged::new();
    out.add(&a.output, asc::write_ascii_grid(&grid));
    Ok(out)
}

fn render_pano(a: &RenderPanoArgs, cfg: RunConfig) -> Result<Staged, CliError> {
    let grid = load_dem(&a.dem)?;
    let z = match a.z {
        Some(z) => z,
        None => grid.sample_elevation(a.x, a.y).map_err(|_| {
            CliError::input(
                "CameraOutsideGrid",
                format!(
                    "camera at ({}, {}) is outside the grid or over nodata",
                    a.x, a.y
                ),
            )
        })?,
    };
    let pano = parallel::render_horizon_panorama(
        &grid,
        &Vector3::new(a.x, a.y, z),
        a.step.to_radians(),
        a.render.max_range.unwrap_or(f64::INFINITY),
        a.render.curvature(),
    )?;
    if pano.camera_raised {
        cfg.info(format!("camera raised to z = {}", pano.camera.z));
    }
    let mut out = Staged::new();
    out.add(&a.output, tables::write_panorama(&pano));
    Ok(out)
}

fn render_view(a: &RenderViewArgs, cfg: RunConfig) -> Result<Staged, CliError> {
    let grid = load_dem(&a.dem)?;
    let pose = load_pose(&a.pose)?;
    let view = parallel::render_view(&grid, &pose, settings(a.shading, &a.render))?;
    if view.camera_raised {
        cfg.info(format!("camera raised to z = {}", view.pose.position.z));
    }
    let mut out = Staged::new();
    out.add(&a.output, pnm::write_pgm16(&view.shade));
    if let Some(prefix) = &a.xyz {
        out.extend(bands::xyz_files(prefix, &view.xyz));
    }
    Ok(out)
}

fn skyline(a: &SkylineArgs, _cfg: RunConfig) -> Result<Staged, CliError> {
    let text = match (&a.image, &a.pano) {
        (Some(image), _) => {
            let sky = extract_image_skyline(&load_image(image)?, a.skyline.params())?;
            tables::write_query_skyline(&sky)
        }
        (None, Some(pano)) => {
            tables::write_reference_skyline(&load_table(pano, tables::parse_reference_skyline)?)
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    let mut out = Staged::new();
    out.add(&a.output, text);
    Ok(out)
}

fn query_skyline(
    image: Option<&PathBuf>,
    table: Option<&PathBuf>,
    opts: &SkylineOptions,
) -> Result<QuerySkyline, CliError> {
    match (image, table) {
        (Some(image), _) => Ok(extract_image_skyline(&load_image(image)?, opts.params())?),
        (None, Some(t)) => load_table(t, tables::parse_query_skyline),
        (None, None) => unreachable!("clap requires a query"),
    }
}

fn orient_dtw_cmd(a: &OrientDtwArgs, cfg: RunConfig) -> Result<Staged, CliError> {
    let pose = load_pose(&a.pose)?;
    let sky = query_skyline(a.image.as_ref(), a.skyline.as_ref(), &a.skyline_options)?;
    if sky.rows.len() != pose.intrinsics.width {
        return Err(CliError::input(
            "SizeMismatch",
            format!(
                "query skyline has {} columns, intrinsics width is {}",
                sky.rows.len(),
                pose.intrinsics.width
            ),
        ));
    }
    let reference: ReferenceSkyline = match (&a.dem, &a.reference) {
        (Some(dem), _) => {
            let grid = load_dem(dem)?;
            let pano = parallel::render_horizon_panorama(
                &grid,
                &pose.position,
                a.step.to_radians(),
                f64::INFINITY,
                Curvature::Off,
            )?;
            ReferenceSkyline::from_panorama(&pano)
        }
        (None, Some(r)) => load_table(r, tables::parse_reference_skyline)?,
        (None, None) => unreachable!("clap requires a model"),
    };
    let params = DtwParams {
        lambda: a.lambda,
        max_angle: a.max_angle.to_radians(),
        band: a.band.to_radians(),
        passes: a.passes as usize,
    };
    let res = orient_dtw(&sky, &reference, &pose.intrinsics, params)?;
    cfg.info(format!(
        "{} valid skyline columns, path length {}",
        sky.valid_count(),
        res.alignment.path.len()
    ));
    let mut out = Staged::new();
    out.add(
        &a.output,
        to_json(&OrientationDoc::new(
            &res.angles,
            Some(res.alignment.cost),
            "dtw",
            None,
        )),
    );
    Ok(out)
}

fn orient_hog_cmd(a: &OrientHogArgs, _cfg: RunConfig) -> Result<Staged, CliError> {
    let grid = load_dem(&a.dem)?;
    let pose = load_pose(&a.pose)?;
    let image = load_image(&a.image)?;
    let settings = RenderSettings {
        shading: a.shading.into(),
        ..RenderSettings::default()
    };
    let strip = parallel::render_panorama_strip(&grid, &pose.position, &pose.intrinsics, settings)?;
    let res = hog_orient(&image, &pose.intrinsics, &strip, &a.scales, a.stride)?;
    let angles = terrapose_core::camera::Angles::new(res.heading, 0.0, 0.0);
    let mut out = Staged::new();
    out.add(
        &a.output,
        to_json(&OrientationDoc::new(&angles, None, "hog", Some(res.score))),
    );
    if let Some(curve) = &a.curve {
        let mut text = String::from("azimuth_deg,score\n");
        for (az, s) in &res.curve {
            text += &format!("{},{}\n", az.to_degrees(), s);
        }
        out.add(curve, text);
    }
    Ok(out)
}

fn pose_init(a: &PoseInitArgs, cfg: RunConfig) -> Result<Staged, CliError> {
    let landmarks = load_table(&a.landmarks, tables::parse_landmarks)?;
    let keypoints = load_table(&a.keypoints, tables::parse_keypoints)?;
    let intrinsics = load_pose(&a.pose)?.intrinsics;
    let kd: Vec<Vec<f64>> = keypoints.iter().map(|k| k.descriptor.clone()).collect();
    let ld: Vec<Vec<f64>> = landmarks.iter().map(|l| l.descriptor.clone()).collect();
    if kd.is_empty() || ld.is_empty() || kd[0].len() != ld[0].len() {
        return Err(CliError::input(
            "SizeMismatch",
            "landmark and keypoint descriptors must be non-empty and of equal length",
        ));
    }
    let pool: Vec<Candidate> = match_knn(&kd, &ld, a.ratio)
        .into_iter()
        .map(|m| Candidate {
            image: keypoints[m.a].image,
            world: landmarks[m.b].world,
            descriptor_distance: m.d1,
        })
        .collect();
    cfg.info(format!("{} candidate correspondences", pool.len()));
    let params = RansacParams {
        iterations: a.iterations as usize,
        inlier_tol_px: a.tol,
        seed: cfg.seed,
        min_sigma_px: a.min_sigma,
    };
    let fit = initial_pose_ransac(&pool, &intrinsics, params)?;
    cfg.info(format!(
        "{} inliers, rms {} px",
        fit.inliers.len(),
        fit.rms_px
    ));
    let mut out = Staged::new();
    out.add(&a.output, pose::write_pose(&fit.pose));
    if let Some(path) = &a.inliers {
        let mut text = String::from("u,v,x,y,z,descriptor_distance\n");
        for &i in &fit.inliers {
            let c = &pool[i];
            text += &format!(
                "{},{},{},{},{},{}\n",
                c.image.x, c.image.y, c.world.x, c.world.y, c.world.z, c.descriptor_distance
            );
        }
        out.add(path, text);
    }
    Ok(out)
}

fn refine_pepalp(a: &RefinePepalpArgs, cfg: RunConfig) -> Result<Staged, CliError> {
    let prior = load_pose(&a.pose)?;
    let landmarks = load_table(&a.landmarks, tables::parse_landmarks)?;
    let keypoints = load_table(&a.keypoints, tables::parse_keypoints)?;
    let schedule = PepAlpSchedule {
        max_iterations: a.max_iterations as usize,
        gate_confidence: a.gate_confidence,
        threshold_fraction: a.threshold_fraction,
        decay: a.decay,
        pixel_sigma: a.pixel_sigma,
        inner_iterations: a.inner_iterations as usize,
        position_tolerance: a.position_tol,
        angle_tolerance: a.angle_tol.to_radians(),
        min_support: a.min_support as usize,
        validation_confidence: a.validation_confidence,
    };
    let outcome = pep_alp(&prior, &landmarks, &keypoints, &schedule)?;
    if outcome.diverged {
        return Err(CliError::numerical(
            "Diverged",
            format!(
                "no stable support after {} iterations; the prior was not refined",
                outcome.iterations.len()
            ),
        ));
    }
    cfg.info(format!(
        "{} iterations, converged = {}",
        outcome.iterations.len(),
        outcome.converged
    ));
    let mut out = Staged::new();
    out.add(&a.output, pose::write_pose(&outcome.pose));
    if let Some(path) = &a.diagnostics {
        let records: Vec<IterationDoc> =
            outcome.iterations.iter().map(IterationDoc::from).collect();
        out.add(path, docs::write_jsonl(&records));
    }
    Ok(out)
}

fn warp_topdown(a: &WarpTopdownArgs, _cfg: RunConfig) -> Result<Staged, CliError> {
    let raster = load_image(&a.pano)?;
    let pano = PanoramaImage::new(raster, a.heading0.to_radians(), a.camera_height)?;
    let params = TopDownParams {
        gsd: a.gsd,
        extent: a.extent,
        min_depression: a.min_depression.to_radians(),
    };
    let view = parallel::pano_to_topdown(&pano, &params)?;
    let mut out = Staged::new();
    out.add(&a.output, pnm::write_pgm16(&view.raster));
    Ok(out)
}

fn register(a: &RegisterArgs, cfg: RunConfig) -> Result<Staged, CliError> {
    let topdown = load_image(&a.topdown)?;
    let aerial = load_image(&a.aerial)?;
    let matches: Vec<PointMatch> = match &a.matches {
        Some(m) => load_table(m, tables::parse_matches)?,
        None => {
            let fa = detect_and_describe(&topdown, &a.scales, a.response)
                .map_err(|e| CliError::from(e).in_file(&a.topdown))?;
            let fb = detect_and_describe(&aerial, &a.scales, a.response)
                .map_err(|e| CliError::from(e).in_file(&a.aerial))?;
            let da: Vec<Vec<f64>> = fa.iter().map(|f| f.descriptor.clone()).collect();
            let db: Vec<Vec<f64>> = fb.iter().map(|f| f.descriptor.clone()).collect();
            match_knn(&da, &db, a.ratio)
                .into_iter()
                .map(|m| PointMatch {
                    source: nalgebra::Point2::new(fa[m.a].x, fa[m.a].y),
                    target: nalgebra::Point2::new(fb[m.b].x, fb[m.b].y),
                })
                .collect()
        }
    };
    cfg.info(format!("{} candidate matches", matches.len()));
    let fit = ransac_homography(&matches, a.iterations as usize, a.tol, cfg.seed)?;
    let extent = topdown.width() as f64 * a.topdown_gsd;
    let (w, h) = (topdown.width(), topdown.height());
    let view = TopDownView {
        raster: topdown,
        gsd: a.topdown_gsd,
        extent,
        north_up: true,
    };
    let crop = register_crop(&view, &aerial, a.aerial_gsd, &fit.homography)?;
    let mut out = Staged::new();
    out.add(&a.output, docs::write_homography(&fit.homography));
    if let Some(path) = &a.crop {
        out.add(
            path,
            pnm::write_pgm16(&warp_aerial_to_topdown(&aerial, &fit.homography, w, h)),
        );
    }
    if let Some(path) = &a.footprint {
        let doc = FootprintDoc {
            footprint: crop.footprint.map(|p| docs::point_pair(&p)),
            crop_origin: [crop.origin.0, crop.origin.1],
            crop_size: [crop.crop.width(), crop.crop.height()],
            coverage: crop.coverage,
            inliers: fit.inliers.len(),
        };
        out.add(path, to_json(&doc));
    }
    Ok(out)
}

fn change_score(a: &ChangeScoreArgs, _cfg: RunConfig) -> Result<Staged, CliError> {
    let topdown = load_image(&a.topdown)?;
    let aerial = load_image(&a.aerial)?;
    let class = match a.class {
        SceneArg::Urban => SceneClass::Urban,
        SceneArg::Rural => SceneClass::Rural,
    };
    let mut t = ChangeThresholds::for_class(class);
    t.r_min = a.r_min.unwrap_or(t.r_min);
    t.z_min = a.z_min.unwrap_or(t.z_min);
    t.fraction = a.fraction.unwrap_or(t.fraction);
    let report = change_zscore(&topdown, &aerial, a.tile as usize, class, &t)?;
    if !report.degenerate.is_empty() {
        warn(format!(
            "{} degenerate tiles excluded",
            report.degenerate.len()
        ));
    }
    let mut out = Staged::new();
    out.add(&a.output, to_json(&ChangeReportDoc::from(&report)));
    Ok(out)
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn fuse(a: &FuseArgs, cfg: RunConfig) -> Result<Staged, CliError> {
    let dets = load_table(&a.detections, tables::parse_detections)?;
    let view_docs: Vec<ViewDoc> = parse_json(&load_text(&a.views)?, "views")
        .map_err(|e| CliError::from(e).in_file(&a.views))?;
    let mut views = Vec::with_capacity(view_docs.len());
    for (i, doc) in view_docs.iter().enumerate() {
        let geometry = doc
            .geometry()
            .map_err(|e| CliError::from(e).in_file(&a.views))?;
        let scores = match doc.scores() {
            Some(p) => {
                let path = base_dir(&a.views).join(p);
                let r = load_image(&path)?;
                if (r.width(), r.height()) != doc.size() {
                    return Err(CliError::input(
                        "SizeMismatch",
                        format!("view {i}: score raster size differs from the view"),
                    ));
                }
                ScoreSource::Raster(r)
            }
            None => ScoreSource::Detections,
        };
        views.push(FusionView { geometry, scores });
    }
    let priors = match &a.priors {
        Some(p) => {
            let doc: PriorsDoc =
                parse_json(&load_text(p)?, "priors").map_err(|e| CliError::from(e).in_file(p))?;
            doc.to_priors(base_dir(p))
                .map_err(|e| CliError::from(e).in_file(p))?
        }
        None => FusionPriors::flat(a.threshold),
    };
    let params = UnionParams {
        merge_radius: a.merge_radius,
        footprint_radius: a.footprint_radius,
        min_depression: a.min_depression.to_radians(),
        background: a.background,
    };
    let proposals = union_and_rescore(&dets, &views, &params)?;
    let outside = outside_road_raster(&proposals, &priors);
    if !outside.is_empty() {
        warn(format!(
            "ProposalOutsideRoadRaster: {} proposals use the largest road distance",
            outside.len()
        ));
    }
    let selection = match a.solver {
        SolverArg::Greedy => solve_greedy(&proposals, &priors),
        SolverArg::Exact => solve_exact(&proposals, &priors)?,
    };
    cfg.info(format!(
        "{} proposals, {} selected, energy {}",
        proposals.len(),
        selection.indices.len(),
        selection.energy
    ));
    let mut out = Staged::new();
    out.add(
        &a.output,
        tables::write_proposals(&proposals, &selection.indices),
    );
    Ok(out)
}

fn learn_priors(a: &LearnPriorsArgs, _cfg: RunConfig) -> Result<Staged, CliError> {
    let positions = load_table(&a.positions, tables::parse_positions)?;
    let bins = a.bins as usize;
    let spacing = learn_spacing_histogram(&positions, a.bin_width, bins)?;
    let (road, road_likelihood, road_ref) = match &a.road {
        Some(path) => {
            let road =
                bands::read_road_raster(path).map_err(|e| CliError::from(e).in_file(path))?;
            let h = learn_road_histogram(&positions, &road, a.bin_width, bins)?;
            let abs = std::path::absolute(path).map_err(|e| CliError::io(path, e))?;
            (Some(road), h, Some(abs.display().to_string()))
        }
        None => (
            None,
            DistanceHistogram::uniform(a.bin_width, bins + 1),
            None,
        ),
    };
    let priors = FusionPriors {
        spacing,
        road_likelihood,
        road,
        w_spacing: a.w_spacing,
        w_road: a.w_road,
        threshold: a.threshold,
    };
    let mut out = Staged::new();
    out.add(
        &a.output,
        to_json(&PriorsDoc::from_priors(&priors, road_ref)),
    );
    Ok(out)
}

pub fn dispatch(command: &Command, cfg: RunConfig) -> Result<Staged, CliError> {
    match command {
        Command::GenDem(a) => gen_dem(a, cfg),
        Command::RenderPano(a) => render_pano(a, cfg),
        Command::RenderView(a) => render_view(a, cfg),
        Command::Skyline(a) => skyline(a, cfg),
        Command::OrientDtw(a) => orient_dtw_cmd(a, cfg),
        Command::OrientHog(a) => orient_hog_cmd(a, cfg),
        Command::PoseInit(a) => pose_init(a, cfg),
        Command::RefinePepalp(a) => refine_pepalp(a, cfg),
        Command::WarpTopdown(a) => warp_topdown(a, cfg),
        Command::Register(a) => register(a, cfg),
        Command::ChangeScore(a) => change_score(a, cfg),
        Command::Fuse(a) => fuse(a, cfg),
        Command::LearnPriors(a) => learn_priors(a, cfg),
    }
}

fn usage_error(e: &clap::Error) -> CliError {
    use clap::error::ErrorKind;
    let code = match e.kind() {
        ErrorKind::InvalidSubcommand | ErrorKind::MissingSubcommand => "UnknownSubcommand",
        ErrorKind::UnknownArgument => "UnknownFlag",
        ErrorKind::MissingRequiredArgument => "MissingArgument",
        _ => "InvalidArgument",
    };
    let text = e.to_string();
    let first = text.lines().next().unwrap_or_default();
    CliError::input(code, first.trim_start_matches("error: ").trim())
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                let _ = e.print();
            }
            let err = usage_error(&e);
            eprintln!("{err}");
            return err.exit;
        }
    };
    let cfg = RunConfig {
        seed: cli.seed,
        verbose: cli.verbose,
    };
    let pool = parallel::thread_pool(cli.threads);
    let result = pool
        .install(|| dispatch(&cli.command, cfg))
        .and_then(|staged| {
            let paths: Vec<String> = staged.paths().map(|p| p.display().to_string()).collect();
            staged.commit()?;
            cfg.info(format!("wrote {}", paths.join(", ")));
            Ok(())
        });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit
        }
    }
}
