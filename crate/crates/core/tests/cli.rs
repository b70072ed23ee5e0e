use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nns::scene::frame::read_frame;

fn scenes_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes")
}

fn nns(args: &[&str], cwd: &Path, env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nns"));
    cmd.args(args).current_dir(cwd).env_remove("NNS_OUTPUT_DIR");
    if let Some(d) = env_out {
        cmd.env("NNS_OUTPUT_DIR", d);
    }
    cmd.output().unwrap()
}

const SMALL: &str = r#"{
  "version": 1,
  "particle_spacing": 0.05,
  "materials": { "water": { "viscosity": { "model": "newtonian", "mu0": 0.01 } } },
  "bodies": [ { "shape": { "type": "box", "min": [0, 0, 0], "max": [0.2, 0.2, 0.2] }, "material": "water" } ],
  "boundaries": [ { "shape": { "type": "container", "min": [0, 0, 0], "max": [0.2, 0.4, 0.2] } } ],
  "output": { "frame_interval": 0.01, "frames": 3, "directory": "default_out" }
}"#;

fn write_scene(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("scene.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn entries(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir).unwrap().flatten().map(|e| e.file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn validate_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = write_scene(tmp.path(), SMALL);
    let env_out = tmp.path().join("env_out");
    let out = nns(&["validate", scene.to_str().unwrap()], tmp.path(), Some(&env_out));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok: 64 particles"));
    assert_eq!(entries(tmp.path()), ["scene.json"]);
}

#[test]
fn invalid_scene_reports_every_error() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = SMALL.replace("\"material\": \"water\"", "\"material\": \"lava\"").replace("0.05", "-0.05");
    let scene = write_scene(tmp.path(), &bad);
    let out = nns(&["validate", scene.to_str().unwrap()], tmp.path(), None);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("lava") && err.contains("spacing"), "{err}");
}

#[test]
fn missing_scene_and_bad_arguments_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(nns(&["validate", "nope.json"], tmp.path(), None).status.code(), Some(1));
    assert_eq!(nns(&["frobnicate"], tmp.path(), None).status.code(), Some(1));
    assert_eq!(nns(&["--help"], tmp.path(), None).status.code(), Some(0));
}

#[test]
fn shear_thinning_curve_is_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = scenes_dir().join("armadillo_ramp.json");
    let out = nns(
        &["curves", scene.to_str().unwrap(), "--model", "power_law_1", "--range", "1e-3:1e3"],
        tmp.path(),
        None,
    );
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("strain_rate,viscosity"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 61);
    assert_eq!(rows[0].0, 1e-3);
    assert_eq!(rows[60].0, 1e3);
    assert!(rows.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 <= w[0].1));
    assert!(rows[60].1 < rows[0].1);

    let unknown = nns(&["curves", scene.to_str().unwrap(), "--model", "nope", "--range", "1:2"], tmp.path(), None);
    assert_eq!(unknown.status.code(), Some(1));
    let backwards = nns(&["curves", scene.to_str().unwrap(), "--model", "cross", "--range", "2:1"], tmp.path(), None);
    assert_eq!(backwards.status.code(), Some(1));
}

#[test]
fn zero_frames_writes_only_the_initial_state() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = write_scene(tmp.path(), SMALL);
    let out_dir = tmp.path().join("out");
    let out = nns(
        &["simulate", scene.to_str().unwrap(), "--frames", "0", "--out", out_dir.to_str().unwrap()],
        tmp.path(),
        None,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(entries(&out_dir), ["diagnostics.csv", "frame_00000.nns"]);
    let csv = std::fs::read_to_string(out_dir.join("diagnostics.csv")).unwrap();
    assert_eq!(csv.trim_end(), "frame,time,dt,max_mu,max_strain_rate,density_err,cg_iters,kinetic_energy");
    let f = read_frame(&out_dir.join("frame_00000.nns")).unwrap();
    assert_eq!((f.frame, f.time, f.len()), (0, 0.0, 64));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = write_scene(tmp.path(), SMALL);
    let env_out = tmp.path().join("env_out");
    let out = nns(&["simulate", scene.to_str().unwrap(), "--frames", "2"], tmp.path(), Some(&env_out));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(entries(&env_out), ["diagnostics.csv", "frame_00000.nns", "frame_00001.nns", "frame_00002.nns"]);
    assert!(!tmp.path().join("default_out").exists());
    let f = read_frame(&env_out.join("frame_00002.nns")).unwrap();
    assert!((f.time - 0.02).abs() < 1e-12);

    // `--out` wins over the environment; without either the scene decides.
    let flag_out = tmp.path().join("flag_out");
    nns(&["simulate", scene.to_str().unwrap(), "--frames", "1", "--out", flag_out.to_str().unwrap()], tmp.path(), Some(&env_out));
    assert!(flag_out.join("frame_00001.nns").exists());
    nns(&["simulate", scene.to_str().unwrap(), "--frames", "1"], tmp.path(), None);
    assert!(tmp.path().join("default_out/frame_00001.nns").exists());
}

#[test]
fn diagnostics_rows_cover_every_step() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = write_scene(tmp.path(), SMALL);
    let out_dir = tmp.path().join("out");
    nns(&["simulate", scene.to_str().unwrap(), "--out", out_dir.to_str().unwrap()], tmp.path(), None);
    let csv = std::fs::read_to_string(out_dir.join("diagnostics.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.len() == 8 && r[2] > 0.0));
    assert_eq!(rows.last().unwrap()[0], 3.0);
    assert!((rows.last().unwrap()[1] - 0.03).abs() < 1e-12);
    assert!(rows.windows(2).all(|w| w[1][1] > w[0][1]));
}

#[test]
fn divergence_exits_two_and_keeps_finished_frames() {
    let tmp = tempfile::tempdir().unwrap();
    // A block moving this fast needs steps far below dt_min.
    let fast = SMALL.replace("\"material\": \"water\"", "\"material\": \"water\", \"velocity\": [1e9, 0, 0]");
    let scene = write_scene(tmp.path(), &fast);
    let out_dir = tmp.path().join("out");
    let out = nns(&["simulate", scene.to_str().unwrap(), "--out", out_dir.to_str().unwrap()], tmp.path(), None);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dt_min"));
    assert!(out_dir.join("frame_00000.nns").exists());
    assert!(!out_dir.join("frame_00001.nns").exists());
}
