use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Point2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use terrapose_core::raster::Raster;
use terrapose_core::topdown::{
    change_zscore, detect_and_describe, homography_dlt, match_knn, pano_to_topdown,
    ransac_homography, register_crop, ChangeThresholds, Homography, PanoramaImage, PointMatch,
    SceneClass, TopDownError, TopDownParams, TopDownView,
};

fn ramp_pano(width: usize, heading0: f64, height_m: f64, along_x: bool) -> PanoramaImage {
    let raster = Raster::from_fn(
        width,
        width / 2,
        |x, y| if along_x { x as f64 } else { y as f64 },
    );
    PanoramaImage::new(raster, heading0, height_m).unwrap()
}

#[test]
fn topdown_sampling_matches_direct_formula() {
    // Bilinear interpolation reproduces a linear ramp exactly, so a panorama
    // painted with its own column (row) index returns the sampling column
    // (row) of every ground cell.
    let (w, h0, cam) = (720, 0.3, 2.5);
    let params = TopDownParams {
        gsd: 0.25,
        extent: 60.0,
        min_depression: 5f64.to_radians(),
    };
    let xs = pano_to_topdown(&ramp_pano(w, h0, cam, true), &params).unwrap();
    let ys = pano_to_topdown(&ramp_pano(w, h0, cam, false), &params).unwrap();
    let n = xs.raster.width();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    while checked < 500 {
        let (c, r) = (rng.random_range(0..n), rng.random_range(0..n));
        let dx = (c as f64 + 0.5 - n as f64 / 2.0) * params.gsd;
        let dy = (n as f64 / 2.0 - r as f64 - 0.5) * params.gsd;
        let rho = dx.hypot(dy);
        let depression = (cam / rho).atan();
        let value = xs.raster.get(c, r);
        if depression < params.min_depression {
            assert!(value.is_nan());
            continue;
        }
        let az = (dx.atan2(dy) - h0).rem_euclid(TAU);
        let px = az * w as f64 / TAU;
        let py = (PI / 2.0 + depression) * (w / 2) as f64 / PI - 0.5;
        if px > (w - 1) as f64 || py > (w / 2 - 1) as f64 {
            continue;
        }
        assert!((value - px).abs() <= 1e-6, "{value} vs {px}");
        assert!((ys.raster.get(c, r) - py).abs() <= 1e-6);
        checked += 1;
    }
}

#[test]
fn coarser_grid_shares_ground_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let raster = Raster::from_fn(400, 200, |_, _| rng.random_range(0.0..1.0));
    let pano = PanoramaImage::new(raster, 1.0, 3.0).unwrap();
    let g = 0.5;
    let p = 20;
    let fine = pano_to_topdown(
        &pano,
        &TopDownParams {
            gsd: g,
            extent: (4 * p + 1) as f64 * g,
            ..Default::default()
        },
    )
    .unwrap();
    let coarse = pano_to_topdown(
        &pano,
        &TopDownParams {
            gsd: 2.0 * g,
            extent: (4 * p + 2) as f64 * g,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(
        (fine.raster.width(), coarse.raster.width()),
        (4 * p + 1, 2 * p + 1)
    );
    for r in 0..coarse.raster.height() {
        for c in 0..coarse.raster.width() {
            assert_eq!(coarse.cell_offset(c, r), fine.cell_offset(2 * c, 2 * r));
            let (a, b) = (coarse.raster.get(c, r), fine.raster.get(2 * c, 2 * r));
            assert!(a == b || (a.is_nan() && b.is_nan()));
        }
    }
}

#[test]
fn square_corners_and_offset_invariance() {
    let img = Raster::from_fn(64, 64, |x, y| {
        if (20..44).contains(&x) && (20..44).contains(&y) {
            1.0
        } else {
            0.0
        }
    });
    let mut feats = detect_and_describe(&img, &[8], 1e-4).unwrap();
    feats.sort_by(|a, b| b.response.partial_cmp(&a.response).unwrap());
    let corners = [(19.5, 19.5), (43.5, 19.5), (19.5, 43.5), (43.5, 43.5)];
    for f in &feats[..4] {
        assert!(
            corners
                .iter()
                .any(|&(cx, cy)| (f.x - cx).abs() <= 1.5 && (f.y - cy).abs() <= 1.5),
            "{} {}",
            f.x,
            f.y
        );
    }
    let shifted = Raster::from_fn(64, 64, |x, y| img.get(x, y) + 3.0);
    let again = detect_and_describe(&shifted, &[8], 1e-4).unwrap();
    let pos = |v: &[terrapose_core::topdown::Feature]| {
        let mut p: Vec<(u64, u64)> = v.iter().map(|f| (f.x.to_bits(), f.y.to_bits())).collect();
        p.sort();
        p
    };
    assert_eq!(pos(&feats), pos(&again));
    assert_eq!(
        detect_and_describe(&Raster::new(64, 64, 0.5), &[8], 1e-4)
            .unwrap_err()
            .code(),
        "NoKeypoints"
    );
}

#[test]
fn knn_equals_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let gen = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..200)
                .map(|_| (0..8).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect()
        };
        let (a, b) = (gen(&mut rng), gen(&mut rng));
        let got = match_knn(&a, &b, 0.8);
        let mut expect = Vec::new();
        for (i, da) in a.iter().enumerate() {
            let mut d: Vec<(f64, usize)> = b
                .iter()
                .enumerate()
                .map(|(j, db)| {
                    (
                        da.iter()
                            .zip(db)
                            .map(|(x, y)| (x - y).powi(2))
                            .sum::<f64>()
                            .sqrt(),
                        j,
                    )
                })
                .collect();
            d.sort_by(|x, y| x.partial_cmp(y).unwrap());
            if d[0].0 < 0.8 * d[1].0 {
                expect.push((i, d[0].1));
            }
        }
        let got: Vec<(usize, usize)> = got.iter().map(|m| (m.a, m.b)).collect();
        assert_eq!(got, expect);
    }
}

fn random_homography(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let a = rng.random_range(-0.3..0.3f64);
    let s = rng.random_range(0.7..1.4);
    Matrix3::new(
        s * a.cos() + rng.random_range(-0.05..0.05),
        -s * a.sin(),
        rng.random_range(-50.0..50.0),
        s * a.sin(),
        s * a.cos() + rng.random_range(-0.05..0.05),
        rng.random_range(-50.0..50.0),
        rng.random_range(-4e-4..4e-4),
        rng.random_range(-4e-4..4e-4),
        1.0,
    )
}

fn frobenius_relative(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let (a, b) = (a / a.norm(), b / b.norm());
    (a - b).norm().min((a + b).norm())
}

#[test]
fn homography_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = Homography::new(random_homography(&mut rng)).unwrap();
    let src = [
        Point2::new(0.0, 0.0),
        Point2::new(300.0, 10.0),
        Point2::new(280.0, 310.0),
        Point2::new(-20.0, 290.0),
    ];
    let m: Vec<PointMatch> = src
        .iter()
        .map(|s| PointMatch {
            source: *s,
            target: h.apply(s).unwrap(),
        })
        .collect();
    let fit = homography_dlt(&m).unwrap();
    for p in &m {
        assert!((fit.apply(&p.source).unwrap() - p.target).norm() < 1e-6);
    }
    assert_eq!(
        ransac_homography(&m[..3], 100, 2.0, 0).unwrap_err(),
        TopDownError::TooFewMatches { count: 3 }
    );
}

#[test]
fn planted_homography_under_half_outliers() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
        let truth = Homography::new(random_homography(&mut rng)).unwrap();
        let mut matches = Vec::new();
        for i in 0..100 {
            let s = Point2::new(rng.random_range(0.0..400.0), rng.random_range(0.0..400.0));
            let t = if i % 2 == 0 {
                truth.apply(&s).unwrap()
            } else {
                Point2::new(
                    rng.random_range(-100.0..500.0),
                    rng.random_range(-100.0..500.0),
                )
            };
            matches.push(PointMatch {
                source: s,
                target: t,
            });
        }
        let fit = ransac_homography(&matches, 500, 2.0, seed).unwrap();
        assert!(frobenius_relative(&fit.homography.matrix, &truth.matrix) < 0.01);
        let inv = fit.homography.inverse().unwrap();
        for &i in &fit.inliers {
            let e =
                terrapose_core::topdown::symmetric_transfer_sq(&fit.homography, &inv, &matches[i]);
            assert!(e < 4.0);
        }
        assert!((0..100).step_by(2).all(|i| fit.inliers.contains(&i)));
        assert_eq!(ransac_homography(&matches, 500, 2.0, seed).unwrap(), fit);
    }
}

fn view(n: usize) -> TopDownView {
    TopDownView {
        raster: Raster::from_fn(n, n, |x, y| (x + y) as f64),
        gsd: 0.5,
        extent: n as f64 * 0.5,
        north_up: true,
    }
}

#[test]
fn register_crop_examples() {
    let aerial = Raster::from_fn(200, 200, |x, y| (x * 3 + y) as f64);
    let td = view(40);
    let id = register_crop(&td, &aerial, 0.5, &Homography::identity()).unwrap();
    assert_eq!(id.origin, (0, 0));
    assert_eq!((id.crop.width(), id.crop.height()), (40, 40));
    assert_eq!(
        id.footprint,
        terrapose_core::topdown::raster_outline(40, 40)
    );
    assert!((id.coverage - 1.0).abs() < 1e-12);

    let t = Homography::new(Matrix3::new(1.0, 0.0, 37.0, 0.0, 1.0, 52.0, 0.0, 0.0, 1.0)).unwrap();
    let moved = register_crop(&td, &aerial, 0.5, &t).unwrap();
    assert_eq!(moved.origin, (37, 52));
    for (a, b) in moved.footprint.iter().zip(id.footprint.iter()) {
        assert_eq!(*a, Point2::new(b.x + 37.0, b.y + 52.0));
    }
    assert_eq!(moved.crop.get(0, 0), aerial.get(37, 52));

    let far =
        Homography::new(Matrix3::new(1.0, 0.0, 5000.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)).unwrap();
    assert!(matches!(
        register_crop(&td, &aerial, 0.5, &far),
        Err(TopDownError::FootprintOutsideAerial { .. })
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let (a, s) = (rng.random_range(0.0..TAU), rng.random_range(0.5..2.0));
        let m = Matrix3::new(
            s * a.cos(),
            -s * a.sin(),
            rng.random_range(60.0..140.0),
            s * a.sin(),
            s * a.cos(),
            rng.random_range(60.0..140.0),
            0.0,
            0.0,
            1.0,
        );
        let out = register_crop(&td, &aerial, 0.5, &Homography::new(m).unwrap()).unwrap();
        for (f, c) in out
            .footprint
            .iter()
            .zip(terrapose_core::topdown::raster_outline(40, 40).iter())
        {
            let d = m * nalgebra::Vector3::new(c.x, c.y, 1.0);
            assert!((f.x - d.x / d.z).abs() < 1e-9 && (f.y - d.y / d.z).abs() < 1e-9);
        }
        let m2 = Matrix3::new(1.0, 0.1, 3.0, -0.05, 0.9, -4.0, 1e-4, 0.0, 1.0);
        let h1 = Homography::new(m).unwrap();
        let h2 = Homography::new(m2).unwrap();
        let step = register_crop(&td, &aerial, 0.5, &h1.then(&h2).unwrap()).unwrap();
        for (f, c) in step.footprint.iter().zip(out.footprint.iter()) {
            let d = h2.apply(c).unwrap();
            assert!((f - d).norm() < 1e-9 * (1.0 + d.coords.norm()));
        }
    }
}

fn texture(rng: &mut ChaCha8Rng, n: usize) -> Raster {
    let waves: Vec<(f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.random_range(0.05..0.6),
                rng.random_range(0.05..0.6),
                rng.random_range(0.0..TAU),
            )
        })
        .collect();
    Raster::from_fn(n, n, |x, y| {
        waves
            .iter()
            .map(|(a, b, p)| (a * x as f64 + b * y as f64 + p).sin())
            .sum()
    })
}

#[test]
fn planted_change_is_the_extreme_tile() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let base = texture(&mut rng, 64);
        let aerial = Raster::from_fn(64, 64, |x, y| base.get(x, y) + rng.random_range(-0.2..0.2));
        let (tr, tc) = (rng.random_range(0..4), rng.random_range(0..4));
        let topdown = Raster::from_fn(64, 64, |x, y| {
            if x / 16 == tc && y / 16 == tr {
                rng.random_range(-3.0..3.0)
            } else {
                base.get(x, y)
            }
        });
        let rep = change_zscore(
            &topdown,
            &aerial,
            16,
            SceneClass::Rural,
            &ChangeThresholds::for_class(SceneClass::Rural),
        )
        .unwrap();
        let planted = rep
            .tiles
            .iter()
            .find(|t| (t.row, t.col) == (tr, tc))
            .unwrap();
        for t in &rep.tiles {
            if (t.row, t.col) != (tr, tc) {
                assert!(planted.r < t.r && planted.z < t.z);
            }
        }
        assert!(planted.flag);
    }
}

#[test]
fn degenerate_tiles_are_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = texture(&mut rng, 32);
    let b = Raster::from_fn(
        32,
        32,
        |x, y| if x < 16 && y < 16 { 0.0 } else { a.get(x, y) },
    );
    let rep = change_zscore(
        &a,
        &b,
        16,
        SceneClass::Urban,
        &ChangeThresholds::for_class(SceneClass::Urban),
    )
    .unwrap();
    assert_eq!(rep.degenerate, vec![(0, 0)]);
    assert_eq!(rep.tiles.len(), 3);
    assert!(matches!(
        change_zscore(
            &a,
            &b,
            5,
            SceneClass::Urban,
            &ChangeThresholds::for_class(SceneClass::Urban)
        ),
        Err(TopDownError::TileDoesNotDivide { .. })
    ));
}

proptest! {
    #[test]
    fn ncc_is_affine_invariant(seed in 0u64..10_000, gain in 0.01f64..100.0, offset in -1e3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..256).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..256).map(|_| rng.random_range(0.0..1.0)).collect();
        let b2: Vec<f64> = b.iter().map(|v| gain * v + offset).collect();
        let r1 = terrapose_core::topdown::ncc(&a, &b).unwrap();
        let r2 = terrapose_core::topdown::ncc(&a, &b2).unwrap();
        prop_assert!((r1 - r2).abs() < 1e-9);
    }
}
