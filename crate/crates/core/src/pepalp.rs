//! Pose estimation from 2D-3D correspondences with pose and landscape
//! priors.
//!
//! [`initial_pose_ransac`] bootstraps a pose from a pool of candidate
//! correspondences. [`pep_alp`] then alternates ellipse-gated descriptor
//! matching against landscape landmarks with an iterated extended Kalman
//! update, so the gates shrink as the posterior tightens.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x4, Matrix6, Point2, Vector3, Vector6, SVD};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::camera::{
    angles_from_rotation, is_psd, project_point, projection_jacobian, propagate_pose_covariance,
    state_difference, CameraError, CameraIntrinsics, CameraPose, ConfidenceEllipse,
    DEFAULT_GATE_CONFIDENCE,
};
use crate::math::median;

/// Correspondences in a minimal pose sample.
pub const MIN_SAMPLE: usize = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PepAlpError {
    #[error("{count} correspondences, at least {MIN_SAMPLE} required")]
    TooFewCorrespondences { count: usize },
    #[error("world points are coplanar")]
    DegenerateCoplanar,
    #[error("best consensus set has {best} inliers, at least {MIN_SAMPLE} required")]
    NoConsensus { best: usize },
    #[error("no landmark projects in front of the camera")]
    NoVisibleLandmarks,
    #[error("prior covariance is not symmetric positive semidefinite")]
    NonPsdPrior,
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("invalid schedule: {0}")]
    InvalidSchedule(&'static str),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

impl PepAlpError {
    pub fn code(&self) -> &'static str {
        match self {
            PepAlpError::TooFewCorrespondences { .. } => "TooFewCorrespondences",
            PepAlpError::DegenerateCoplanar => "DegenerateCoplanar",
            PepAlpError::NoConsensus { .. } => "NoConsensus",
            PepAlpError::NoVisibleLandmarks => "NoVisibleLandmarks",
            PepAlpError::NonPsdPrior => "NonPsdPrior",
            PepAlpError::SingularInnovation => "SingularInnovation",
            PepAlpError::InvalidSchedule(_) => "InvalidSchedule",
            PepAlpError::Camera(e) => e.code(),
        }
    }
}

/// Candidate image/world pair for pose initialisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub image: Point2<f64>,
    pub world: Vector3<f64>,
    pub descriptor_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateStatus {
    Accepted,
    /// No query keypoint inside the landmark's ellipse.
    RejectedEllipse,
    /// The nearest gated keypoint is too far in descriptor space.
    RejectedThreshold,
    /// The nearest gated keypoint prefers another landmark.
    RejectedMutual,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence2D3D {
    pub landmark: usize,
    /// Index of the query keypoint, `None` when nothing was gated.
    pub keypoint: Option<usize>,
    pub image: Point2<f64>,
    pub world: Vector3<f64>,
    pub descriptor_distance: f64,
    pub status: GateStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub world: Vector3<f64>,
    pub descriptor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub image: Point2<f64>,
    pub descriptor: Vec<f64>,
}

pub fn descriptor_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_tol_px: f64,
    pub seed: u64,
    /// Floor on the residual sigma used to scale the covariance.
    pub min_sigma_px: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 500,
            inlier_tol_px: 3.0,
            seed: 0,
            min_sigma_px: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacPose {
    pub pose: CameraPose,
    /// Indices into the candidate pool.
    pub inliers: Vec<usize>,
    pub rms_px: f64,
}

/// Whether the points span less than a plane's worth of volume: the
/// smallest eigenvalue of their scatter is negligible against the largest.
fn coplanar(points: &[Vector3<f64>]) -> bool {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        scatter += d * d.transpose();
    }
    let eig = nalgebra::SymmetricEigen::new(scatter);
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    hi <= 0.0 || lo <= 1e-10 * hi
}

/// Normalised DLT estimate of the pose from >= 6 correspondences with known
/// intrinsics. `None` for degenerate configurations.
pub fn dlt_pose(candidates: &[Candidate], intrinsics: &CameraIntrinsics) -> Option<CameraPose> {
    let n = candidates.len();
    if n < MIN_SAMPLE {
        return None;
    }
    let k = intrinsics;
    let img: Vec<Point2<f64>> = candidates
        .iter()
        .map(|c| {
            Point2::new(
                (c.image.x - k.principal_point.x) / k.focal_px,
                (c.image.y - k.principal_point.y) / k.focal_px,
            )
        })
        .collect();
    let (mi, si) = {
        let m = img
            .iter()
            .fold(Vector3::zeros(), |a, p| a + Vector3::new(p.x, p.y, 0.0))
            / n as f64;
        let d = img
            .iter()
            .map(|p| ((p.x - m.x).powi(2) + (p.y - m.y).powi(2)).sqrt())
            .sum::<f64>()
            / n as f64;
        (
            (m.x, m.y),
            if d > 0.0 {
                core::f64::consts::SQRT_2 / d
            } else {
                return None;
            },
        )
    };
    let mw = candidates.iter().fold(Vector3::zeros(), |a, c| a + c.world) / n as f64;
    let dw = candidates
        .iter()
        .map(|c| (c.world - mw).norm())
        .sum::<f64>()
        / n as f64;
    if dw <= 0.0 {
        return None;
    }
    let sw = 3f64.sqrt() / dw;

    let rows = (2 * n).max(12);
    let mut a = DMatrix::<f64>::zeros(rows, 12);
    for (i, (c, p)) in candidates.iter().zip(&img).enumerate() {
        let x = (p.x - mi.0) * si;
        let y = (p.y - mi.1) * si;
        let w = (c.world - mw) * sw;
        let wh = [w.x, w.y, w.z, 1.0];
        for j in 0..4 {
            a[(2 * i, 4 + j)] = -wh[j];
            a[(2 * i, 8 + j)] = y * wh[j];
            a[(2 * i + 1, j)] = wh[j];
            a[(2 * i + 1, 8 + j)] = -x * wh[j];
        }
    }
    let svd = SVD::new(a, false, true);
    let v_t = svd.v_t?;
    let (imin, _) = svd.singular_values.argmin();
    let h = v_t.row(imin);
    let pn = Matrix3x4::from_fn(|r, c| h[4 * r + c]);

    // Undo the normalisations: P = T_img^-1 * Pn * T_world.
    let t_img_inv = Matrix3::new(1.0 / si, 0.0, mi.0, 0.0, 1.0 / si, mi.1, 0.0, 0.0, 1.0);
    let mut t_world = nalgebra::Matrix4::identity() * sw;
    t_world[(3, 3)] = 1.0;
    t_world[(0, 3)] = -sw * mw.x;
    t_world[(1, 3)] = -sw * mw.y;
    t_world[(2, 3)] = -sw * mw.z;
    let mut p = t_img_inv * pn * t_world;

    let mut m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        p = -p;
        m = -m;
    }
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let r = u * v_t;
    let scale = svd.singular_values.sum() / 3.0;
    if !(scale > 0.0) || r.determinant() <= 0.0 {
        return None;
    }
    let col = p.column(3).into_owned() / scale;
    let position = -(r.transpose() * col);
    Some(CameraPose::new(
        position,
        angles_from_rotation(&r),
        *intrinsics,
    ))
}

fn reprojection_error(pose: &CameraPose, c: &Candidate) -> f64 {
    match project_point(pose, &c.world) {
        Ok(p) => (p - c.image).norm(),
        Err(_) => f64::INFINITY,
    }
}

/// Levenberg-Marquardt refinement of the reprojection error over `set`.
/// Returns the refined pose (covariance untouched), the stacked Jacobian
/// normal matrix and the residual sum of squares.
pub fn refine_pose(
    pose: &CameraPose,
    set: &[Candidate],
    iterations: usize,
) -> (CameraPose, Matrix6<f64>, f64) {
    let eval = |pose: &CameraPose| -> Option<(Matrix6<f64>, Vector6<f64>, f64)> {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        let mut rss = 0.0;
        for c in set {
            let (uv, j) = projection_jacobian(pose, &c.world).ok()?;
            let r = c.image - uv;
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
            rss += r.norm_squared();
        }
        Some((jtj, jtr, rss))
    };
    let mut current = pose.clone();
    let Some((mut jtj, mut jtr, mut rss)) = eval(&current) else {
        return (current, Matrix6::zeros(), f64::INFINITY);
    };
    let mut mu = 1e-3;
    for _ in 0..iterations {
        let mut damped = jtj;
        for i in 0..6 {
            damped[(i, i)] += mu * jtj[(i, i)].max(1e-12);
        }
        let Some(delta) = damped.cholesky().map(|c| c.solve(&jtr)) else {
            mu *= 10.0;
            continue;
        };
        let candidate = current.with_state(&(current.state() + delta));
        match eval(&candidate) {
            Some((j2, r2, s2)) if s2 < rss => {
                let small = delta.fixed_rows::<3>(0).norm()
                    < 1e-9 * (1.0 + current.position.norm())
                    && delta.fixed_rows::<3>(3).norm() < 1e-12;
                current = candidate;
                (jtj, jtr, rss) = (j2, r2, s2);
                mu = (mu * 0.3).max(1e-12);
                if small {
                    break;
                }
            }
            _ => {
                mu *= 10.0;
                if mu > 1e12 {
                    break;
                }
            }
        }
    }
    (current, jtj, rss)
}

/// Residual-scaled inverse normal matrix, falling back to a pseudo-inverse.
fn pose_covariance(jtj: &Matrix6<f64>, rss: f64, count: usize, min_sigma: f64) -> Matrix6<f64> {
    let dof = (2 * count).saturating_sub(6).max(1) as f64;
    let sigma2 = (rss / dof).max(min_sigma * min_sigma);
    let inv = jtj
        .try_inverse()
        .or_else(|| jtj.pseudo_inverse(1e-12).ok())
        .unwrap_or_else(Matrix6::zeros);
    let cov = inv * sigma2;
    0.5 * (cov + cov.transpose())
}

/// RANSAC over minimal samples of six, DLT per sample, consensus by
/// reprojection error, then Levenberg-Marquardt on the consensus set.
pub fn initial_pose_ransac(
    pool: &[Candidate],
    intrinsics: &CameraIntrinsics,
    params: RansacParams,
) -> Result<RansacPose, PepAlpError> {
    if pool.len() < MIN_SAMPLE {
        return Err(PepAlpError::TooFewCorrespondences { count: pool.len() });
    }
    intrinsics.validate()?;
    let worlds: Vec<Vector3<f64>> = pool.iter().map(|c| c.world).collect();
    if coplanar(&worlds) {
        return Err(PepAlpError::DegenerateCoplanar);
    }
    if params.iterations == 0 || !(params.inlier_tol_px > 0.0) {
        return Err(PepAlpError::InvalidSchedule(
            "ransac needs iterations and a positive tolerance",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Vec<usize> = Vec::new();
    let mut sample_buf = Vec::with_capacity(MIN_SAMPLE);
    for _ in 0..params.iterations {
        sample_buf.clear();
        sample_buf.extend(
            sample(&mut rng, pool.len(), MIN_SAMPLE)
                .into_iter()
                .map(|i| pool[i]),
        );
        let pts: Vec<Vector3<f64>> = sample_buf.iter().map(|c| c.world).collect();
        if coplanar(&pts) {
            continue;
        }
        let Some(pose) = dlt_pose(&sample_buf, intrinsics) else {
            continue;
        };
        let inliers: Vec<usize> = (0..pool.len())
            .filter(|&i| reprojection_error(&pose, &pool[i]) < params.inlier_tol_px)
            .collect();
        if inliers.len() > best.len() {
            best = inliers;
        }
    }
    if best.len() < MIN_SAMPLE {
        return Err(PepAlpError::NoConsensus { best: best.len() });
    }
    let mut inliers = best;
    let mut pose = CameraPose::new(Vector3::zeros(), Default::default(), *intrinsics);
    let mut normal = Matrix6::zeros();
    let mut rss = 0.0;
    // Refine on the consensus set, then re-select inliers with a tolerance
    // tightened to the robust residual scale and refine again.
    let set: Vec<Candidate> = inliers.iter().map(|&i| pool[i]).collect();
    let Some(mut start) = dlt_pose(&set, intrinsics) else {
        return Err(PepAlpError::DegenerateCoplanar);
    };
    for _ in 0..4 {
        let set: Vec<Candidate> = inliers.iter().map(|&i| pool[i]).collect();
        (pose, normal, rss) = refine_pose(&start, &set, 100);
        let errors: Vec<f64> = pool.iter().map(|c| reprojection_error(&pose, c)).collect();
        let used: Vec<f64> = inliers.iter().map(|&i| errors[i]).collect();
        let scale = 1.4826 * median(&used);
        let tol = params
            .inlier_tol_px
            .min((3.0 * scale).max(params.min_sigma_px));
        let next: Vec<usize> = (0..pool.len()).filter(|&i| errors[i] < tol).collect();
        if next.len() < MIN_SAMPLE || next == inliers {
            break;
        }
        inliers = next;
        start = pose.clone();
    }
    let covariance = pose_covariance(&normal, rss, inliers.len(), params.min_sigma_px);
    let rms_px = (rss / inliers.len() as f64).sqrt();
    let pose = CameraPose::with_covariance(pose.position, pose.angles, *intrinsics, covariance);
    Ok(RansacPose {
        pose,
        inliers,
        rms_px,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome {
    /// One record per visible landmark, in landmark order.
    pub records: Vec<Correspondence2D3D>,
    /// Ellipse per landmark; `None` behind the camera.
    pub ellipses: Vec<Option<ConfidenceEllipse>>,
}

impl GateOutcome {
    pub fn accepted(&self) -> impl Iterator<Item = &Correspondence2D3D> {
        self.records
            .iter()
            .filter(|r| r.status == GateStatus::Accepted)
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted().count()
    }

    /// Mean gated area over visible landmarks, pixels².
    pub fn mean_ellipse_area(&self) -> f64 {
        let areas: Vec<f64> = self.ellipses.iter().flatten().map(|e| e.area()).collect();
        if areas.is_empty() {
            0.0
        } else {
            areas.iter().sum::<f64>() / areas.len() as f64
        }
    }
}

/// Smallest descriptor distance in `candidates`, lowest index on ties.
fn nearest(candidates: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    candidates.fold(None, |best, (i, d)| match best {
        Some((_, bd)) if bd <= d => best,
        _ => Some((i, d)),
    })
}

/// Matches landmarks to query keypoints inside each landmark's confidence
/// ellipse. Among gated keypoints the nearest descriptor wins; it must be
/// within `threshold` and must itself prefer the landmark among all
/// landmarks whose ellipses contain it.
pub fn gated_match(
    pose: &CameraPose,
    landmarks: &[Landmark],
    keypoints: &[Keypoint],
    threshold: f64,
    pixel_sigma: f64,
    confidence: f64,
) -> Result<GateOutcome, PepAlpError> {
    let ellipses: Vec<Option<ConfidenceEllipse>> = landmarks
        .iter()
        .map(|l| propagate_pose_covariance(pose, &l.world, pixel_sigma, confidence).ok())
        .collect();
    if ellipses.iter().all(Option::is_none) {
        return Err(PepAlpError::NoVisibleLandmarks);
    }
    let gated: Vec<Vec<bool>> = ellipses
        .iter()
        .map(|e| match e {
            Some(e) => keypoints.iter().map(|k| e.contains(&k.image)).collect(),
            None => vec![false; keypoints.len()],
        })
        .collect();
    let dist = |l: usize, k: usize| {
        descriptor_distance(&landmarks[l].descriptor, &keypoints[k].descriptor)
    };
    let mut records = Vec::new();
    for (l, e) in ellipses.iter().enumerate() {
        if e.is_none() {
            continue;
        }
        let landmark = &landmarks[l];
        let best = nearest(
            (0..keypoints.len())
                .filter(|&k| gated[l][k])
                .map(|k| (k, dist(l, k))),
        );
        let record = match best {
            None => Correspondence2D3D {
                landmark: l,
                keypoint: None,
                image: e.unwrap().center,
                world: landmark.world,
                descriptor_distance: f64::INFINITY,
                status: GateStatus::RejectedEllipse,
            },
            Some((k, d)) => {
                let status = if d > threshold {
                    GateStatus::RejectedThreshold
                } else {
                    let back = nearest(
                        (0..landmarks.len())
                            .filter(|&m| gated[m][k])
                            .map(|m| (m, dist(m, k))),
                    );
                    if back.map(|b| b.0) == Some(l) {
                        GateStatus::Accepted
                    } else {
                        GateStatus::RejectedMutual
                    }
                };
                Correspondence2D3D {
                    landmark: l,
                    keypoint: Some(k),
                    image: keypoints[k].image,
                    world: landmark.world,
                    descriptor_distance: d,
                    status,
                }
            }
        };
        records.push(record);
    }
    Ok(GateOutcome { records, ellipses })
}

/// Stacked Jacobian and residual `z - h(x)` of all matches at `pose`.
fn linearize(
    pose: &CameraPose,
    matches: &[Correspondence2D3D],
) -> Result<(DMatrix<f64>, DVector<f64>), CameraError> {
    let m = 2 * matches.len();
    let mut h = DMatrix::<f64>::zeros(m, 6);
    let mut r = DVector::<f64>::zeros(m);
    for (i, c) in matches.iter().enumerate() {
        let (uv, j) = projection_jacobian(pose, &c.world)?;
        h.view_mut((2 * i, 0), (2, 6)).copy_from(&j);
        r[2 * i] = c.image.x - uv.x;
        r[2 * i + 1] = c.image.y - uv.y;
    }
    Ok((h, r))
}

/// Kalman gain `P H^T (H P H^T + r I)^-1`.
fn kalman_gain(
    p0: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r_var: f64,
) -> Result<DMatrix<f64>, PepAlpError> {
    let mut s = h * p0 * h.transpose();
    for i in 0..s.nrows() {
        s[(i, i)] += r_var;
    }
    let chol = s.cholesky().ok_or(PepAlpError::SingularInnovation)?;
    // (S^-1 H P)^T with S and P symmetric.
    Ok(chol.solve(&(h * p0)).transpose())
}

/// Iterated extended Kalman update with all matches as one batch
/// measurement. Each inner iteration relinearises at the current estimate
/// and takes the Gauss-Newton step of the posterior cost, halved until the
/// cost decreases. The posterior covariance uses the Joseph form at the
/// final linearisation.
pub fn iekf_update(
    prior: &CameraPose,
    matches: &[Correspondence2D3D],
    pixel_sigma: f64,
    inner_iterations: usize,
) -> Result<CameraPose, PepAlpError> {
    if !is_psd(&prior.covariance) {
        return Err(PepAlpError::NonPsdPrior);
    }
    if matches.is_empty() || inner_iterations == 0 || !(pixel_sigma > 0.0) {
        return Err(PepAlpError::InvalidSchedule(
            "update needs matches, iterations and a positive sigma",
        ));
    }
    let x0 = prior.state();
    let p0 = DMatrix::from_column_slice(6, 6, prior.covariance.as_slice());
    let info = p0
        .clone()
        .pseudo_inverse(1e-300)
        .map_err(|_| PepAlpError::NonPsdPrior)?;
    let r_var = pixel_sigma * pixel_sigma;
    let cost = |x: &Vector6<f64>| -> f64 {
        match linearize(&prior.with_state(x), matches) {
            Ok((_, r)) => {
                let d = DVector::from_column_slice(state_difference(x, &x0).as_slice());
                r.norm_squared() / r_var + (d.transpose() * &info * &d)[(0, 0)]
            }
            Err(_) => f64::INFINITY,
        }
    };
    let mut x = x0;
    let mut current = cost(&x);
    for _ in 0..inner_iterations {
        let (h, r) = linearize(&prior.with_state(&x), matches)?;
        let gain = kalman_gain(&p0, &h, r_var)?;
        let dx = DVector::from_column_slice(state_difference(&x, &x0).as_slice());
        let update = &gain * (r + &h * dx);
        let target = x0 + Vector6::from_column_slice(update.as_slice());
        let step = state_difference(&target, &x);
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= 1.0 / 64.0 {
            let trial = x + step * alpha;
            let c = cost(&trial);
            if c <= current {
                accepted = Some((trial, c));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, c)) => {
                let done = (trial - x).norm() == 0.0;
                (x, current) = (trial, c);
                if done {
                    break;
                }
            }
            None => break,
        }
    }
    let (h, _) = linearize(&prior.with_state(&x), matches)?;
    let gain = kalman_gain(&p0, &h, r_var)?;
    let ikh = DMatrix::<f64>::identity(6, 6) - &gain * &h;
    let p = &ikh * &p0 * ikh.transpose() + &gain * gain.transpose() * r_var;
    let p = Matrix6::from_column_slice(p.as_slice());
    let p = 0.5 * (p + p.transpose());
    Ok(CameraPose::with_covariance(
        Vector3::new(x[0], x[1], x[2]),
        crate::camera::Angles::new(x[3], x[4], x[5]),
        prior.intrinsics,
        p,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PepAlpSchedule {
    pub max_iterations: usize,
    pub gate_confidence: f64,
    /// Initial descriptor threshold as a fraction of the descriptor-space
    /// diameter (largest landmark/keypoint descriptor distance).
    pub threshold_fraction: f64,
    pub decay: f64,
    pub pixel_sigma: f64,
    pub inner_iterations: usize,
    pub position_tolerance: f64,
    pub angle_tolerance: f64,
    /// Accepted matches required in the last iteration for success.
    pub min_support: usize,
    /// Gate applied to each used match under the posterior it produced;
    /// matches outside are dropped worst-first and the update is redone.
    pub validation_confidence: f64,
}

impl Default for PepAlpSchedule {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            gate_confidence: DEFAULT_GATE_CONFIDENCE,
            threshold_fraction: 0.8,
            decay: 0.8,
            pixel_sigma: 1.0,
            inner_iterations: 3,
            position_tolerance: 0.05,
            angle_tolerance: 1e-5,
            min_support: 6,
            validation_confidence: 0.999,
        }
    }
}

impl PepAlpSchedule {
    pub fn validate(&self) -> Result<(), PepAlpError> {
        if self.max_iterations == 0 {
            return Err(PepAlpError::InvalidSchedule("max_iterations must be >= 1"));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(PepAlpError::InvalidSchedule("decay must be in (0, 1)"));
        }
        if !(self.pixel_sigma > 0.0) {
            return Err(PepAlpError::InvalidSchedule("pixel_sigma must be positive"));
        }
        if !(self.validation_confidence > 0.0 && self.validation_confidence < 1.0) {
            return Err(PepAlpError::InvalidSchedule(
                "validation_confidence must be in (0, 1)",
            ));
        }
        if !(self.gate_confidence > 0.0 && self.gate_confidence < 1.0) {
            return Err(PepAlpError::InvalidSchedule(
                "gate_confidence must be in (0, 1)",
            ));
        }
        if !(self.threshold_fraction > 0.0) || self.inner_iterations == 0 {
            return Err(PepAlpError::InvalidSchedule(
                "threshold_fraction and inner_iterations must be positive",
            ));
        }
        if !(self.position_tolerance >= 0.0 && self.angle_tolerance >= 0.0) {
            return Err(PepAlpError::InvalidSchedule(
                "tolerances must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub threshold: f64,
    pub visible: usize,
    pub accepted: usize,
    /// Accepted matches dropped by the posterior validation.
    pub invalidated: usize,
    /// Mean ellipse area of the gates used in this iteration.
    pub mean_ellipse_area: f64,
    pub state: Vector6<f64>,
    pub covariance_trace: f64,
    /// Norms of the position (m) and angle (rad) change in this iteration.
    pub position_change: f64,
    pub angle_change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PepAlpOutcome {
    pub pose: CameraPose,
    /// Set when no iteration accepted a match or the final support fell
    /// below the schedule minimum; `pose` is then the prior.
    pub diverged: bool,
    pub converged: bool,
    pub iterations: Vec<IterationRecord>,
}

pub fn descriptor_diameter(landmarks: &[Landmark], keypoints: &[Keypoint]) -> f64 {
    let mut d: f64 = 0.0;
    for l in landmarks {
        for k in keypoints {
            d = d.max(descriptor_distance(&l.descriptor, &k.descriptor));
        }
    }
    d
}

/// Updates with `matches`, then drops the match lying furthest outside its
/// posterior ellipse and repeats until all remaining matches fit. Returns
/// `None` once every match has been dropped.
pub fn validated_update(
    prior: &CameraPose,
    mut matches: Vec<Correspondence2D3D>,
    schedule: &PepAlpSchedule,
) -> Result<Option<(CameraPose, Vec<Correspondence2D3D>)>, PepAlpError> {
    while !matches.is_empty() {
        let posterior = iekf_update(
            prior,
            &matches,
            schedule.pixel_sigma,
            schedule.inner_iterations,
        )?;
        let mut worst: Option<(usize, f64)> = None;
        for (i, c) in matches.iter().enumerate() {
            let excess = match propagate_pose_covariance(
                &posterior,
                &c.world,
                schedule.pixel_sigma,
                schedule.validation_confidence,
            ) {
                Ok(e) => e.mahalanobis_sq(&c.image) / e.gate,
                Err(_) => f64::INFINITY,
            };
            if excess > 1.0 && worst.is_none_or(|w| excess > w.1) {
                worst = Some((i, excess));
            }
        }
        match worst {
            None => return Ok(Some((posterior, matches))),
            Some((i, _)) => {
                matches.remove(i);
            }
        }
    }
    Ok(None)
}

/// The refinement loop: gate and match under the current posterior, update,
/// decay the descriptor threshold, repeat until the state settles or the
/// accepted set stops changing.
pub fn pep_alp(
    prior: &CameraPose,
    landmarks: &[Landmark],
    keypoints: &[Keypoint],
    schedule: &PepAlpSchedule,
) -> Result<PepAlpOutcome, PepAlpError> {
    schedule.validate()?;
    if !is_psd(&prior.covariance) {
        return Err(PepAlpError::NonPsdPrior);
    }
    let mut threshold = schedule.threshold_fraction * descriptor_diameter(landmarks, keypoints);
    let mut current = prior.clone();
    let mut records = Vec::new();
    let mut previous: Option<Vec<(usize, Option<usize>)>> = None;
    let mut ever_accepted = false;
    let mut last_support = 0;
    let mut converged = false;
    for iteration in 0..schedule.max_iterations {
        let gate = match gated_match(
            &current,
            landmarks,
            keypoints,
            threshold,
            schedule.pixel_sigma,
            schedule.gate_confidence,
        ) {
            Ok(g) => g,
            Err(PepAlpError::NoVisibleLandmarks) if iteration > 0 => {
                last_support = 0;
                break;
            }
            Err(e) => return Err(e),
        };
        let accepted: Vec<Correspondence2D3D> = gate.accepted().copied().collect();
        last_support = accepted.len();
        let mut record = IterationRecord {
            iteration,
            threshold,
            visible: gate.records.len(),
            accepted: accepted.len(),
            invalidated: 0,
            mean_ellipse_area: gate.mean_ellipse_area(),
            state: current.state(),
            covariance_trace: current.covariance.trace(),
            position_change: 0.0,
            angle_change: 0.0,
        };
        if accepted.is_empty() {
            records.push(record);
            break;
        }
        ever_accepted = true;
        let Some((posterior, used)) = validated_update(&current, accepted.clone(), schedule)?
        else {
            record.invalidated = accepted.len();
            record.accepted = 0;
            last_support = 0;
            records.push(record);
            break;
        };
        debug_assert!(
            posterior.covariance.trace() <= current.covariance.trace() * (1.0 + 1e-9) + 1e-12
        );
        record.invalidated = accepted.len() - used.len();
        record.accepted = used.len();
        last_support = used.len();
        let delta = state_difference(&posterior.state(), &current.state());
        record.position_change = delta.fixed_rows::<3>(0).norm();
        record.angle_change = delta.fixed_rows::<3>(3).norm();
        record.state = posterior.state();
        record.covariance_trace = posterior.covariance.trace();
        let settled = record.position_change < schedule.position_tolerance
            && record.angle_change < schedule.angle_tolerance;
        records.push(record);
        current = posterior;
        let set: Vec<(usize, Option<usize>)> =
            used.iter().map(|c| (c.landmark, c.keypoint)).collect();
        let stable = previous.as_ref() == Some(&set);
        previous = Some(set);
        if settled || stable {
            converged = true;
            break;
        }
        threshold *= schedule.decay;
    }
    let diverged = !ever_accepted || last_support < schedule.min_support;
    let pose = if diverged { prior.clone() } else { current };
    Ok(PepAlpOutcome {
        pose,
        diverged,
        converged: converged && !diverged,
        iterations: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Angles;

    fn scene() -> (CameraPose, Vec<Vector3<f64>>) {
        let k = CameraIntrinsics::centered(800.0, 1000, 800);
        let pose = CameraPose::new(
            Vector3::new(100.0, 200.0, 50.0),
            Angles::from_degrees(30.0, 2.0, -1.0),
            k,
        );
        let mut pts = Vec::new();
        for i in 0..20 {
            let t = i as f64;
            let az = 30f64.to_radians() + 0.5 * (t * 0.77).sin();
            let d = 300.0 + 97.0 * t;
            let z = 50.0 + 40.0 * (t * 1.3).cos() - 0.02 * d;
            pts.push(Vector3::new(100.0 + d * az.sin(), 200.0 + d * az.cos(), z));
        }
        (pose, pts)
    }

    fn candidates(pose: &CameraPose, pts: &[Vector3<f64>]) -> Vec<Candidate> {
        pts.iter()
            .map(|p| Candidate {
                image: project_point(pose, p).unwrap(),
                world: *p,
                descriptor_distance: 0.0,
            })
            .collect()
    }

    #[test]
    fn dlt_recovers_exact_pose() {
        let (pose, pts) = scene();
        let est = dlt_pose(&candidates(&pose, &pts), &pose.intrinsics).unwrap();
        assert!((est.position - pose.position).norm() < 1e-5);
        assert!(
            state_difference(&est.state(), &pose.state())
                .fixed_rows::<3>(3)
                .norm()
                < 1e-8
        );
    }

    #[test]
    fn too_few_and_coplanar() {
        let (pose, pts) = scene();
        let c = candidates(&pose, &pts[..5]);
        assert_eq!(
            initial_pose_ransac(&c, &pose.intrinsics, RansacParams::default()),
            Err(PepAlpError::TooFewCorrespondences { count: 5 })
        );
        let flat: Vec<Vector3<f64>> = pts.iter().map(|p| Vector3::new(p.x, p.y, 0.0)).collect();
        let c = candidates(&pose, &flat);
        assert_eq!(
            initial_pose_ransac(&c, &pose.intrinsics, RansacParams::default()),
            Err(PepAlpError::DegenerateCoplanar)
        );
    }

    #[test]
    fn zero_innovation_keeps_state() {
        let (pose, pts) = scene();
        let prior = CameraPose::with_covariance(
            pose.position,
            pose.angles,
            pose.intrinsics,
            Matrix6::from_diagonal(&Vector6::new(100.0, 100.0, 25.0, 1e-3, 1e-3, 1e-3)),
        );
        let c = Correspondence2D3D {
            landmark: 0,
            keypoint: Some(0),
            image: project_point(&pose, &pts[3]).unwrap(),
            world: pts[3],
            descriptor_distance: 0.0,
            status: GateStatus::Accepted,
        };
        let post = iekf_update(&prior, &[c], 1.0, 3).unwrap();
        assert!(state_difference(&post.state(), &prior.state()).norm() < 1e-9);
        assert!(post.covariance.trace() < prior.covariance.trace());
        let uninformative = iekf_update(&prior, &[c], 1e9, 3).unwrap();
        assert!(
            (uninformative.covariance - prior.covariance).norm() < 1e-6 * prior.covariance.norm()
        );
    }
}
