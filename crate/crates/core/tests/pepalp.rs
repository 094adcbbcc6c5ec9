#![allow(clippy::needless_range_loop)]

use std::f64::consts::TAU;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix6, Point2, Vector3, Vector6};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use terrapose_core::camera::{
    project_point, projection_jacobian, propagate_pose_covariance, state_difference, Angles,
    CameraIntrinsics, CameraPose,
};
use terrapose_core::math::wrap_pi;
use terrapose_core::panorama::{backproject_pixel, RenderSettings};
use terrapose_core::pepalp::{
    descriptor_distance, gated_match, iekf_update, initial_pose_ransac, pep_alp, Candidate,
    Correspondence2D3D, GateStatus, Keypoint, Landmark, PepAlpError, PepAlpSchedule, RansacParams,
};
use terrapose_core::terrain::{synth_terrain_sum, GridSpec, TerrainShape};
use terrapose_core::DemGrid;

const DESCRIPTOR_LEN: usize = 32;

fn terrain(rng: &mut ChaCha8Rng) -> DemGrid {
    let spec = GridSpec {
        origin_easting: 0.0,
        origin_northing: 0.0,
        cell_size: 25.0,
        n_cols: 321,
        n_rows: 321,
    };
    let (cx, cy) = spec.center();
    let shapes: Vec<_> = (0..25)
        .map(|_| {
            let r = rng.random_range(800.0..3800.0);
            let a: f64 = rng.random_range(0.0..TAU);
            TerrainShape::GaussianHill {
                center_x: cx + r * a.sin(),
                center_y: cy + r * a.cos(),
                amplitude: rng.random_range(50.0..400.0),
                sigma: rng.random_range(200.0..700.0),
            }
        })
        .collect();
    synth_terrain_sum(&shapes, 0.0, spec).unwrap()
}

fn random_descriptor(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..DESCRIPTOR_LEN)
        .map(|_| rng.sample(StandardNormal))
        .collect()
}

struct Scene {
    truth: CameraPose,
    landmarks: Vec<Landmark>,
    keypoints: Vec<Keypoint>,
}

/// Landmarks back-projected from random pixels of the true view; query
/// keypoints are their noisy projections, a fraction with scrambled
/// descriptors.
fn scene(rng: &mut ChaCha8Rng, count: usize, pixel_noise: f64, scrambled: f64) -> Scene {
    let grid = terrain(rng);
    let (cx, cy) = grid.spec().center();
    let k = CameraIntrinsics::centered(800.0, 1000, 750);
    let ground = grid.sample_elevation(cx, cy).unwrap();
    let noise = Normal::new(0.0, pixel_noise).unwrap();
    loop {
        let truth = CameraPose::new(
            Vector3::new(cx, cy, ground + 50.0),
            Angles::new(
                rng.random_range(0.0..TAU),
                (-4.0f64).to_radians(),
                rng.random_range(-2.0f64..2.0).to_radians(),
            ),
            k,
        );
        let mut landmarks = Vec::new();
        let mut keypoints = Vec::new();
        for _ in 0..50 * count {
            if landmarks.len() == count {
                break;
            }
            let (u, v) = (rng.random_range(20.0..980.0), rng.random_range(20.0..730.0));
            let Some(p) =
                backproject_pixel(&grid, &truth, u, v, RenderSettings::default()).unwrap()
            else {
                continue;
            };
            if (p - truth.position).norm() < 200.0 {
                continue;
            }
            let d = random_descriptor(rng);
            let uv = project_point(&truth, &p).unwrap();
            let image = Point2::new(uv.x + noise.sample(rng), uv.y + noise.sample(rng));
            let descriptor = if rng.random_bool(scrambled) {
                random_descriptor(rng)
            } else {
                d.iter()
                    .map(|x| x + 0.1 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            };
            landmarks.push(Landmark {
                world: p,
                descriptor: d,
            });
            keypoints.push(Keypoint { image, descriptor });
        }
        if landmarks.len() == count {
            return Scene {
                truth,
                landmarks,
                keypoints,
            };
        }
    }
}

fn offset_prior(
    rng: &mut ChaCha8Rng,
    truth: &CameraPose,
    offset_m: f64,
    heading_deg: f64,
) -> CameraPose {
    let a: f64 = rng.random_range(0.0..TAU);
    let r = rng.random_range(0.0..offset_m);
    let dh = rng.random_range(-heading_deg..heading_deg).to_radians();
    let sp = 200f64.max(offset_m);
    let sa = 3f64.to_radians();
    CameraPose::with_covariance(
        truth.position + Vector3::new(r * a.sin(), r * a.cos(), 0.0),
        Angles::new(
            truth.angles.heading + dh,
            truth.angles.tilt,
            truth.angles.roll,
        ),
        truth.intrinsics,
        Matrix6::from_diagonal(&Vector6::new(
            sp * sp,
            sp * sp,
            50.0 * 50.0,
            sa * sa,
            1e-4,
            1e-4,
        )),
    )
}

#[test]
fn ransac_recovers_pose_with_planted_outliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let s = scene(&mut rng, 20, 0.0, 0.0);
    let mut pool: Vec<Candidate> = s
        .landmarks
        .iter()
        .map(|l| Candidate {
            image: project_point(&s.truth, &l.world).unwrap(),
            world: l.world,
            descriptor_distance: 0.0,
        })
        .collect();
    let clean = initial_pose_ransac(&pool, &s.truth.intrinsics, RansacParams::default()).unwrap();
    for _ in 0..20 {
        let world = s.landmarks[rng.random_range(0..20)].world
            + Vector3::new(
                rng.random_range(-500.0..500.0),
                rng.random_range(-500.0..500.0),
                0.0,
            );
        pool.push(Candidate {
            image: Point2::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..750.0)),
            world,
            descriptor_distance: 1.0,
        });
    }
    let noisy = initial_pose_ransac(
        &pool,
        &s.truth.intrinsics,
        RansacParams {
            seed: 4,
            ..RansacParams::default()
        },
    )
    .unwrap();
    for est in [&clean, &noisy] {
        let d = state_difference(&est.pose.state(), &s.truth.state());
        assert!(
            d.fixed_rows::<3>(0).norm() < 1e-3,
            "{d} {:?} {}",
            est.inliers,
            est.rms_px
        );
        assert!(
            d.fixed_rows::<3>(3).abs().max() < 0.01f64.to_radians(),
            "{d}"
        );
        assert!(terrapose_core::camera::is_psd(&est.pose.covariance));
    }
    assert!(noisy.inliers.iter().all(|&i| i < 20));
    let again = initial_pose_ransac(
        &pool,
        &s.truth.intrinsics,
        RansacParams {
            seed: 4,
            ..RansacParams::default()
        },
    )
    .unwrap();
    assert_eq!(again, noisy);
}

#[test]
fn ransac_without_consensus() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = CameraIntrinsics::centered(800.0, 1000, 750);
    let pool: Vec<Candidate> = (0..12)
        .map(|_| Candidate {
            image: Point2::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..750.0)),
            world: Vector3::new(
                rng.random_range(-1e3..1e3),
                rng.random_range(1e3..3e3),
                rng.random_range(-1e2..1e2),
            ),
            descriptor_distance: 0.0,
        })
        .collect();
    let params = RansacParams {
        iterations: 50,
        inlier_tol_px: 0.5,
        ..RansacParams::default()
    };
    assert!(matches!(
        initial_pose_ransac(&pool, &k, params),
        Err(PepAlpError::NoConsensus { .. })
    ));
}

/// Direct evaluation: every (landmark, keypoint) chi-square test, the
/// per-landmark nearest descriptor, threshold, then the reverse nearest.
fn brute_gate(
    pose: &CameraPose,
    lms: &[Landmark],
    kps: &[Keypoint],
    threshold: f64,
) -> Vec<(usize, usize)> {
    let gate = -2.0 * (1.0 - 0.95f64).ln();
    let inside = |l: usize, k: usize| -> bool {
        let Ok((uv, j)) = projection_jacobian(pose, &lms[l].world) else {
            return false;
        };
        let c = j * pose.covariance * j.transpose() + nalgebra::Matrix2::identity();
        let d = kps[k].image - uv;
        let m = d.transpose() * c.try_inverse().unwrap() * d;
        m[(0, 0)] <= gate
    };
    let mut out = Vec::new();
    for l in 0..lms.len() {
        let mut best: Option<(usize, f64)> = None;
        for k in 0..kps.len() {
            if inside(l, k) {
                let d = descriptor_distance(&lms[l].descriptor, &kps[k].descriptor);
                if best.is_none_or(|b| d < b.1) {
                    best = Some((k, d));
                }
            }
        }
        let Some((k, d)) = best else { continue };
        if d > threshold {
            continue;
        }
        let mut back: Option<(usize, f64)> = None;
        for m in 0..lms.len() {
            if inside(m, k) {
                let dm = descriptor_distance(&lms[m].descriptor, &kps[k].descriptor);
                if back.is_none_or(|b| dm < b.1) {
                    back = Some((m, dm));
                }
            }
        }
        if back.map(|b| b.0) == Some(l) {
            out.push((l, k));
        }
    }
    out
}

pub fn gate_instance(rng: &mut ChaCha8Rng) -> (CameraPose, Vec<Landmark>, Vec<Keypoint>, f64) {
    let k = CameraIntrinsics::centered(500.0, 640, 480);
    let pose = CameraPose::with_covariance(
        Vector3::zeros(),
        Angles::default(),
        k,
        Matrix6::from_diagonal(&Vector6::new(
            1.0,
            1.0,
            1.0,
            rng.random_range(1e-5..1e-3),
            1e-6,
            1e-6,
        )),
    );
    let nl = rng.random_range(1..=50);
    let nk = rng.random_range(1..=50);
    let lms: Vec<Landmark> = (0..nl)
        .map(|_| Landmark {
            world: Vector3::new(
                rng.random_range(-300.0..300.0),
                rng.random_range(200.0..800.0),
                rng.random_range(-200.0..200.0),
            ),
            descriptor: (0..4).map(|_| rng.random_range(0.0..1.0)).collect(),
        })
        .collect();
    let kps: Vec<Keypoint> = (0..nk)
        .map(|_| Keypoint {
            image: Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)),
            descriptor: (0..4).map(|_| rng.random_range(0.0..1.0)).collect(),
        })
        .collect();
    (pose, lms, kps, rng.random_range(0.2..1.2))
}

#[test]
fn gated_match_equals_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let (pose, lms, kps, threshold) = gate_instance(&mut rng);
        let out = gated_match(&pose, &lms, &kps, threshold, 1.0, 0.95).unwrap();
        let got: Vec<(usize, usize)> = out
            .accepted()
            .map(|c| (c.landmark, c.keypoint.unwrap()))
            .collect();
        assert_eq!(got, brute_gate(&pose, &lms, &kps, threshold));
        for c in out.accepted() {
            assert!(out.ellipses[c.landmark].unwrap().contains(&c.image));
        }
    }
}

#[test]
fn gate_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = scene(&mut rng, 30, 0.0, 0.0);
    let exact: Vec<Keypoint> = s
        .landmarks
        .iter()
        .map(|l| Keypoint {
            image: project_point(&s.truth, &l.world).unwrap(),
            descriptor: l.descriptor.clone(),
        })
        .collect();
    let out = gated_match(&s.truth, &s.landmarks, &exact, 1.0, 1.0, 0.95).unwrap();
    assert_eq!(out.accepted_count(), 30);
    assert!(out.accepted().all(|c| Some(c.landmark) == c.keypoint));

    let far: Vec<Keypoint> = exact
        .iter()
        .map(|k| Keypoint {
            image: Point2::new(k.image.x + 10.0, k.image.y),
            descriptor: k.descriptor.clone(),
        })
        .collect();
    let out = gated_match(&s.truth, &s.landmarks[..1], &far[..1], 1.0, 1.0, 0.95).unwrap();
    assert_eq!(out.accepted_count(), 0);
    assert_eq!(out.records[0].status, GateStatus::RejectedEllipse);

    let mut behind = s.truth.clone();
    behind.angles.heading += std::f64::consts::PI;
    behind.angles.tilt = 0.0;
    assert_eq!(
        gated_match(&behind, &s.landmarks, &exact, 1.0, 1.0, 0.95).unwrap_err(),
        PepAlpError::NoVisibleLandmarks
    );
}

#[test]
fn iekf_matches_linear_gaussian_closed_form() {
    // Distant points and a small prior: the projection is effectively linear
    // in the state, so one update must equal the Bayesian least-squares
    // posterior built from the same Jacobian.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let k = CameraIntrinsics::centered(1000.0, 1000, 1000);
    let truth = CameraPose::new(Vector3::zeros(), Angles::new(0.0, 0.0, 0.0), k);
    let p0 = Matrix6::from_diagonal(&Vector6::new(1e-2, 1e-2, 1e-2, 1e-10, 1e-10, 1e-10));
    let prior = CameraPose::with_covariance(
        Vector3::new(0.01, -0.02, 0.01),
        Angles::new(1e-6, -1e-6, 2e-6),
        k,
        p0,
    );
    let matches: Vec<Correspondence2D3D> = (0..8)
        .map(|i| {
            let w = Vector3::new(
                rng.random_range(-5e4..5e4),
                1e5,
                rng.random_range(-5e4..5e4),
            );
            Correspondence2D3D {
                landmark: i,
                keypoint: Some(i),
                image: project_point(&truth, &w).unwrap(),
                world: w,
                descriptor_distance: 0.0,
                status: GateStatus::Accepted,
            }
        })
        .collect();
    let post = iekf_update(&prior, &matches, 1.0, 3).unwrap();

    let x0 = DVector::from_column_slice(prior.state().as_slice());
    let mut h = DMatrix::zeros(16, 6);
    let mut z = DVector::zeros(16);
    for (i, m) in matches.iter().enumerate() {
        let (uv, j) = projection_jacobian(&prior, &m.world).unwrap();
        h.view_mut((2 * i, 0), (2, 6)).copy_from(&j);
        let r = m.image - uv;
        z[2 * i] = r.x;
        z[2 * i + 1] = r.y;
    }
    let p0d = DMatrix::from_column_slice(6, 6, p0.as_slice());
    let info = p0d.clone().try_inverse().unwrap() + h.transpose() * &h;
    let cov = info.clone().try_inverse().unwrap();
    let mean = &x0 + &cov * h.transpose() * z;
    for i in 0..6 {
        assert!(
            (post.state()[i] - mean[i]).abs() < 1e-6 * (1.0 + mean[i].abs()),
            "{i}"
        );
        for j in 0..6 {
            assert!((post.covariance[(i, j)] - cov[(i, j)]).abs() < 1e-6 * cov.norm());
        }
    }
    assert!(post.covariance.trace() <= prior.covariance.trace());
}

#[test]
fn iekf_rejects_bad_prior() {
    let k = CameraIntrinsics::centered(1000.0, 1000, 1000);
    let mut cov = Matrix6::identity();
    cov[(0, 0)] = -1.0;
    let prior = CameraPose::with_covariance(Vector3::zeros(), Angles::default(), k, cov);
    let m = Correspondence2D3D {
        landmark: 0,
        keypoint: Some(0),
        image: Point2::new(500.0, 500.0),
        world: Vector3::new(0.0, 100.0, 0.0),
        descriptor_distance: 0.0,
        status: GateStatus::Accepted,
    };
    assert_eq!(
        iekf_update(&prior, &[m], 1.0, 3).unwrap_err(),
        PepAlpError::NonPsdPrior
    );
}

#[test]
fn fixed_point_converges_immediately() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let s = scene(&mut rng, 40, 0.0, 0.0);
    let prior = CameraPose::with_covariance(
        s.truth.position,
        s.truth.angles,
        s.truth.intrinsics,
        Matrix6::from_diagonal(&Vector6::new(100.0, 100.0, 25.0, 1e-4, 1e-4, 1e-4)),
    );
    let exact: Vec<Keypoint> = s
        .landmarks
        .iter()
        .map(|l| Keypoint {
            image: project_point(&s.truth, &l.world).unwrap(),
            descriptor: l.descriptor.clone(),
        })
        .collect();
    let out = pep_alp(&prior, &s.landmarks, &exact, &PepAlpSchedule::default()).unwrap();
    assert!(out.converged && !out.diverged);
    assert_eq!(out.iterations.len(), 1);
    let d = state_difference(&out.pose.state(), &s.truth.state());
    assert!(d.fixed_rows::<3>(0).norm() < 0.05);
}

#[test]
fn refines_offset_prior() {
    let start = Instant::now();
    let mut good = 0;
    let trials = 50;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let s = scene(&mut rng, 60, 1.0, 0.3);
        let prior = offset_prior(&mut rng, &s.truth, 200.0, 3.0);
        let out = pep_alp(
            &prior,
            &s.landmarks,
            &s.keypoints,
            &PepAlpSchedule::default(),
        )
        .unwrap();
        let d = state_difference(&out.pose.state(), &s.truth.state());
        let pos = d.fixed_rows::<3>(0).norm();
        let head = wrap_pi(d[3]).abs().to_degrees();
        let mut trace = prior.covariance.trace();
        for it in &out.iterations {
            assert!(it.covariance_trace <= trace + 1e-9 * trace);
            trace = it.covariance_trace;
        }
        for w in out.iterations.windows(2) {
            if w[1].accepted > 0 {
                assert!(w[1].mean_ellipse_area <= w[0].mean_ellipse_area * (1.0 + 1e-9));
            }
        }
        if !out.diverged && pos < 10.0 && head < 0.3 {
            good += 1;
        } else {
            eprintln!(
                "seed {seed}: pos {pos:.2} head {head:.3} diverged {} iters {}",
                out.diverged,
                out.iterations.len()
            );
        }
    }
    eprintln!("{good}/{trials} in {:?}", start.elapsed());
    assert!(good >= 45, "{good}/{trials}");
}

#[test]
fn distant_prior_diverges() {
    let mut flagged = 0;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let s = scene(&mut rng, 60, 1.0, 1.0);
        let h = s.truth.angles.heading;
        // Step back along the view direction so the landmarks stay in front.
        let back = Vector3::new(-h.sin(), -h.cos(), 0.0) * 5000.0;
        let sp2 = 200.0 * 200.0;
        let sa2 = 3f64.to_radians().powi(2);
        let prior = CameraPose::with_covariance(
            s.truth.position + back,
            s.truth.angles,
            s.truth.intrinsics,
            Matrix6::from_diagonal(&Vector6::new(sp2, sp2, 2500.0, sa2, 1e-4, 1e-4)),
        );
        let out = pep_alp(
            &prior,
            &s.landmarks,
            &s.keypoints,
            &PepAlpSchedule::default(),
        )
        .unwrap();
        let err = (out.pose.position - s.truth.position).norm();
        if out.diverged && err > 50.0 {
            flagged += 1;
        } else {
            eprintln!(
                "seed {seed}: err {err:.1} iters {:?}",
                out.iterations
                    .iter()
                    .map(|i| i.accepted)
                    .collect::<Vec<_>>()
            );
        }
    }
    eprintln!("{flagged}/50");
    assert!(flagged >= 48, "{flagged}/50");
}

proptest! {
    #[test]
    fn gate_is_translation_invariant(du in -200.0f64..200.0, dv in -200.0f64..200.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (pose, lms, _, _) = gate_instance(&mut rng);
        let e = propagate_pose_covariance(&pose, &lms[0].world, 1.0, 0.95).unwrap();
        let p = Point2::new(e.center.x + rng.random_range(-20.0..20.0), e.center.y + rng.random_range(-20.0..20.0));
        let mut moved = e;
        moved.center.x += du;
        moved.center.y += dv;
        let q = Point2::new(p.x + du, p.y + dv);
        prop_assert!((e.mahalanobis_sq(&p) - moved.mahalanobis_sq(&q)).abs() < 1e-9 * (1.0 + e.mahalanobis_sq(&p)));
    }
}
