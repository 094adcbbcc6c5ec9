use std::path::Path;
use std::process::{Command, Output};

use terrapose::formats::{asc, pose};
use terrapose_core::camera::{Angles, CameraIntrinsics, CameraPose};
use terrapose_core::math::wrap_pi;

fn terrapose(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_terrapose"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn gen_dem_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = terrapose(
        &[
            "gen-dem",
            "--kind",
            "gaussian_hill",
            "--amp",
            "500",
            "--sigma",
            "800",
            "--size",
            "512",
            "--cell",
            "25",
            "-o",
            "hill.asc",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let grid =
        asc::parse_ascii_grid(&std::fs::read_to_string(dir.path().join("hill.asc")).unwrap())
            .unwrap();
    let spec = grid.spec();
    assert_eq!((spec.n_cols, spec.n_rows, spec.cell_size), (512, 512, 25.0));
    let (cx, cy) = spec.center();
    // The centre lies between four nodes, each 12.5·√2 m from the peak.
    let expect = 500.0 * (-(2.0 * 12.5f64.powi(2)) / (2.0 * 800.0f64.powi(2))).exp();
    assert!((grid.sample_elevation(cx, cy).unwrap() - expect).abs() < 1e-9);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn orient_dtw_recovers_self_rendered_heading() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = terrapose(
        &[
            "gen-dem", "--kind", "mixture", "--size", "241", "--hills", "12", "--seed", "4", "-o",
            "dem.asc",
        ],
        d,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let k = CameraIntrinsics::centered(554.0, 640, 480);
    let truth = CameraPose::new(
        nalgebra::Vector3::new(3000.0, 3000.0, 0.0),
        Angles::from_degrees(140.0, 1.5, -1.0),
        k,
    );
    std::fs::write(d.join("truth.json"), pose::write_pose(&truth)).unwrap();
    let prior = CameraPose::new(truth.position, Angles::default(), k);
    std::fs::write(d.join("prior.json"), pose::write_pose(&prior)).unwrap();
    let out = terrapose(
        &[
            "render-view",
            "--dem",
            "dem.asc",
            "--pose",
            "truth.json",
            "-o",
            "query.pgm",
        ],
        d,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let out = terrapose(
        &[
            "orient-dtw",
            "--dem",
            "dem.asc",
            "--pose",
            "prior.json",
            "--image",
            "query.pgm",
            "-o",
            "orient.json",
        ],
        d,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let doc: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("orient.json")).unwrap()).unwrap();
    let heading = doc["heading_deg"].as_f64().unwrap();
    assert!(
        wrap_pi((heading - 140.0).to_radians()).abs().to_degrees() < 5.0,
        "{heading}"
    );
}

#[test]
fn missing_dem_is_a_single_line_error_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = terrapose(
        &[
            "render-pano",
            "--dem",
            "absent.asc",
            "--x",
            "0",
            "--y",
            "0",
            "-o",
            "pano.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("ERROR FileNotFound: "), "{err}");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn invalid_input_keeps_earlier_outputs_unwritten() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.asc"),
        "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n3\n",
    )
    .unwrap();
    let out = terrapose(
        &[
            "render-pano",
            "--dem",
            "bad.asc",
            "--x",
            "0",
            "--y",
            "0",
            "-o",
            "pano.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).starts_with("ERROR NonRectangularBody"),
        "{}",
        stderr(&out)
    );
    assert!(!dir.path().join("pano.csv").exists());
}

#[test]
fn unknown_subcommand_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = terrapose(&["teleport"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("ERROR UnknownSubcommand"));
    let out = terrapose(
        &[
            "gen-dem", "--kind", "flat", "--colour", "red", "-o", "x.asc",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("ERROR UnknownFlag"));
    let out = terrapose(
        &["gen-dem", "--kind", "flat", "--cell=-3", "-o", "x.asc"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("ERROR InvalidArgument"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn help_lists_flags_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = terrapose(&["refine-pepalp", "--help"], dir.path());
    assert!(out.status.success());
    let help = String::from_utf8_lossy(&out.stdout);
    for flag in [
        "--gate-confidence",
        "--decay",
        "--pixel-sigma",
        "--min-support",
        "--diagnostics",
        "--threads",
        "--seed",
    ] {
        assert!(help.contains(flag), "{flag} missing:\n{help}");
    }
    assert!(help.contains("[default: 0.95]"));
    assert!(help.contains("[probability, (0, 1)]"));
}

#[test]
fn diverged_refinement_exits_3_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let k = CameraIntrinsics::centered(500.0, 640, 480);
    let prior = CameraPose::with_covariance(
        nalgebra::Vector3::zeros(),
        Angles::default(),
        k,
        nalgebra::Matrix6::from_diagonal(&nalgebra::Vector6::new(
            100.0, 100.0, 100.0, 1e-4, 1e-4, 1e-4,
        )),
    );
    std::fs::write(d.join("prior.json"), pose::write_pose(&prior)).unwrap();
    // Landmarks project near the centre; every keypoint lies far outside their gates.
    std::fs::write(d.join("lm.csv"), "x,y,z,d0,d1\n0,100,0,1,0\n1,200,1,0,1\n").unwrap();
    std::fs::write(d.join("kp.csv"), "u,v,d0,d1\n5,5,1,0\n630,470,0,1\n").unwrap();
    let out = terrapose(
        &[
            "refine-pepalp",
            "--pose",
            "prior.json",
            "--landmarks",
            "lm.csv",
            "--keypoints",
            "kp.csv",
            "--diagnostics",
            "diag.jsonl",
            "-o",
            "out.json",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).starts_with("ERROR Diverged"));
    assert!(!d.join("out.json").exists() && !d.join("diag.jsonl").exists());
}
