use std::fs;
use std::path::Path;
use std::process::Command;

use mutualmesh::cli::{run, ExitStatus, BODY_FILE, CHECKPOINT_FILE, CLOTHED_FILE, HISTORY_FILE};
use mutualmesh::mesh::{make_icosphere, write_obj};
use mutualmesh::pipeline::{load_checkpoint, PipelineConfig};
use mutualmesh::raster::image_io::{read_pfm, read_pgm};
use tempfile::TempDir;

fn write_sphere(dir: &Path, name: &str, radius: f64, sub: u32) -> String {
    let m = make_icosphere(sub).unwrap();
    let m = m.with_vertices(m.vertices().iter().map(|v| v * radius).collect());
    let path = dir.join(name);
    fs::write(&path, write_obj(&m).unwrap()).unwrap();
    path.display().to_string()
}

fn mm(args: &[&str]) -> mutualmesh::cli::CommandResult {
    run(std::iter::once("mutualmesh").chain(args.iter().copied()))
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn validate_accepts_icospheres() {
    let dir = TempDir::new().unwrap();
    let p = write_sphere(dir.path(), "s.obj", 1.0, 2);
    let out = dir.path().join("r.json");
    let r = mm(&["validate", &p, "--json", out.to_str().unwrap()]);
    assert_eq!(r.status, ExitStatus::Success, "{}", r.summary);
    let v = json(&out);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["command"], "validate");
    assert_eq!((v["vertices"].as_u64(), v["edges"].as_u64(), v["faces"].as_u64()), (Some(162), Some(480), Some(320)));
    assert_eq!(v["report"]["pass"], true);
}

#[test]
fn validate_rejects_a_single_triangle() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("tri.obj");
    fs::write(&p, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
    let r = mm(&["validate", p.to_str().unwrap()]);
    assert_eq!(r.status, ExitStatus::ValidationFailure);
    assert!(r.summary.contains("boundary edges") && r.summary.contains("FAIL"), "{}", r.summary);
}

#[test]
fn missing_or_malformed_inputs_are_io_errors() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.obj");
    assert_eq!(mm(&["validate", missing.to_str().unwrap()]).status, ExitStatus::Io);
    let bad = dir.path().join("bad.obj");
    fs::write(&bad, "v 0 0\nf 1 2 x\n").unwrap();
    let good = write_sphere(dir.path(), "g.obj", 1.0, 1);
    assert_eq!(mm(&["metrics", bad.to_str().unwrap(), &good]).status, ExitStatus::Io);
}

#[test]
fn unknown_flags_are_usage_errors() {
    assert_eq!(mm(&["validate", "--frobnicate"]).status, ExitStatus::Usage);
    assert_eq!(mm(&["render", "x.obj", "--out", "o", "--angle", "north"]).status, ExitStatus::Usage);
}

#[test]
fn help_lists_every_flag_with_defaults() {
    let r = mm(&["metrics", "--help"]);
    assert_eq!(r.status, ExitStatus::Success);
    for flag in ["--joints", "--regressor", "--samples", "--res", "--seed", "--unit-meters", "--json"] {
        assert!(r.summary.contains(flag), "{flag} missing from\n{}", r.summary);
    }
    assert!(r.summary.contains("[default: 10000]"));
    let r = mm(&["gradcheck", "--help"]);
    assert!(r.summary.contains("[default: 0.0001]") && !r.summary.contains("inject"));
}

#[test]
fn metrics_of_identical_meshes_are_zero() {
    let dir = TempDir::new().unwrap();
    let p = write_sphere(dir.path(), "s.obj", 1.0, 2);
    let out = dir.path().join("m.json");
    let r = mm(&["metrics", &p, &p, "--samples", "500", "--res", "64", "--json", out.to_str().unwrap()]);
    assert_eq!(r.status, ExitStatus::Success, "{}", r.summary);
    let rep = &json(&out)["report"];
    for key in ["chamfer_cm", "p2s_cm", "s2p_cm", "normal_cos", "normal_l2"] {
        assert!(rep[key].as_f64().unwrap().abs() <= 1e-9, "{key}: {}", rep[key]);
    }
    assert!(rep["mpjpe_mm"].is_null());
    assert!(r.summary.contains("Chamfer (cm)"));
}

#[test]
fn metrics_of_concentric_spheres_report_the_gap() {
    let dir = TempDir::new().unwrap();
    let a = write_sphere(dir.path(), "a.obj", 1.1, 3);
    let b = write_sphere(dir.path(), "b.obj", 1.0, 3);
    let out = dir.path().join("m.json");
    let r = mm(&["metrics", &a, &b, "--res", "64", "--json", out.to_str().unwrap()]);
    assert_eq!(r.status, ExitStatus::Success, "{}", r.summary);
    // centimeters with one unit per meter
    let cd = json(&out)["report"]["chamfer_cm"].as_f64().unwrap();
    assert!((cd - 10.0).abs() <= 0.2, "{cd}");
}

#[test]
fn metrics_use_a_supplied_regressor_and_joints() {
    let dir = TempDir::new().unwrap();
    let a = write_sphere(dir.path(), "a.obj", 1.0, 1);
    let reg = dir.path().join("reg.json");
    fs::write(&reg, r#"{"rows": [[[0, 0.5], [1, 0.5]], [[2, 1.0]], [[3, 1.0]], [[4, 0.25], [5, 0.75]]]}"#).unwrap();
    let out = dir.path().join("m.json");
    let r = mm(&["metrics", &a, &a, "--regressor", reg.to_str().unwrap(), "--samples", "100", "--res", "32", "--json", out.to_str().unwrap()]);
    assert_eq!(r.status, ExitStatus::Success, "{}", r.summary);
    assert!(json(&out)["report"]["mpjpe_mm"].as_f64().unwrap() <= 1e-9);

    let joints = dir.path().join("j.json");
    fs::write(&joints, "[[0,0,0],[0,0,0],[0,0,0],[0,0,0]]").unwrap();
    let r = mm(&["metrics", &a, &a, "--regressor", reg.to_str().unwrap(), "--joints", joints.to_str().unwrap(), "--samples", "100", "--res", "32", "--json", out.to_str().unwrap()]);
    assert_eq!(r.status, ExitStatus::Success);
    assert!(json(&out)["report"]["mpjpe_mm"].as_f64().unwrap() > 100.0);

    fs::write(&reg, r#"{"rows": [[[0, 0.7]]]}"#).unwrap();
    let r = mm(&["metrics", &a, &a, "--regressor", reg.to_str().unwrap()]);
    assert_eq!(r.status, ExitStatus::Usage, "{}", r.summary);
}

#[test]
fn metrics_require_manifold_inputs() {
    let dir = TempDir::new().unwrap();
    let tri = dir.path().join("tri.obj");
    fs::write(&tri, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
    let good = write_sphere(dir.path(), "g.obj", 1.0, 1);
    assert_eq!(mm(&["metrics", tri.to_str().unwrap(), &good]).status, ExitStatus::ValidationFailure);
}

#[test]
fn full_frame_quad_renders_all_foreground() {
    let dir = TempDir::new().unwrap();
    let quad = dir.path().join("quad.obj");
    fs::write(&quad, "v -1 -1 0\nv 1 -1 0\nv 1 1 0\nv -1 1 0\nf 1 2 3\nf 1 3 4\n").unwrap();
    let out = dir.path().join("img");
    let r = mm(&["render", quad.to_str().unwrap(), "--camera", "unit", "--res", "32", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status, ExitStatus::Success, "{}", r.summary);
    let img = read_pgm(&fs::read(out.join("quad_silhouette_000.pgm")).unwrap()).unwrap();
    assert_eq!((img.width, img.height), (32, 32));
    assert!(img.values.iter().all(|&v| v == 1.0));
}

#[test]
fn four_angle_batch_writes_four_files() {
    let dir = TempDir::new().unwrap();
    let p = write_sphere(dir.path(), "s.obj", 1.0, 2);
    let out = dir.path().join("img");
    let js = dir.path().join("r.json");
    let r = mm(&["render", &p, "--angle", "all", "--res", "32", "--out", out.to_str().unwrap(), "--json", js.to_str().unwrap()]);
    assert_eq!(r.status, ExitStatus::Success, "{}", r.summary);
    assert_eq!(fs::read_dir(&out).unwrap().count(), 4);
    assert_eq!(json(&js)["files"].as_array().unwrap().len(), 4);
}

#[test]
fn sphere_normal_map_faces_the_camera_at_the_center() {
    let dir = TempDir::new().unwrap();
    let p = write_sphere(dir.path(), "s.obj", 1.0, 3);
    let out = dir.path().join("img");
    let r = mm(&["render", &p, "--mode", "normals", "--res", "65", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status, ExitStatus::Success, "{}", r.summary);
    let img = read_pfm(&fs::read(out.join("s_normals_000.pfm")).unwrap()).unwrap();
    let c = (32 * img.width + 32) * 3;
    let n = &img.data[c..c + 3];
    assert!(n[0].abs() < 0.1 && n[1].abs() < 0.1 && n[2] > 0.99, "{n:?}");
}

#[test]
fn gradcheck_exit_codes() {
    assert_eq!(mm(&["gradcheck"]).status, ExitStatus::Success);
    let r = mm(&["gradcheck", "--inject-fault"]);
    assert_eq!(r.status, ExitStatus::Numerical);
    assert!(r.summary.contains("dense"), "{}", r.summary);
    assert_eq!(mm(&["gradcheck", "--tolerance", "1e-12"]).status, ExitStatus::Numerical);
}

fn tiny_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.network.template_subdivisions = 1;
    cfg.network.body_width = 12;
    cfg.network.graph_layers = 2;
    cfg.network.edge_width = 6;
    cfg.network.edge_layers = 3;
    cfg.data.num_samples = 2;
    cfg.data.resolution = 32;
    cfg.training.steps = 6;
    cfg.training.warmup_steps = 2;
    cfg.training.heldout_every = 3;
    cfg.training.heldout_surface_samples = 200;
    cfg
}

#[test]
fn train_toy_writes_its_artifacts() {
    let dir = TempDir::new().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    let cfg = tiny_config();
    fs::write(&cfg_path, cfg.to_json()).unwrap();
    let out = dir.path().join("run");
    let js = dir.path().join("r.json");
    let r = mm(&["train-toy", "--config", cfg_path.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--quiet", "--json", js.to_str().unwrap()]);
    assert_eq!(r.status, ExitStatus::Success, "{}", r.summary);
    let csv = fs::read_to_string(out.join(HISTORY_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 1 + 7);
    assert!(csv.starts_with("step,lv,lj,lcd1,lcd2,ln,ltrace,lcloth,total,"));
    let net = load_checkpoint(&fs::read(out.join(CHECKPOINT_FILE)).unwrap()).unwrap();
    assert_eq!(net.config, cfg.network);
    for f in [BODY_FILE, CLOTHED_FILE] {
        let text = fs::read_to_string(out.join(f)).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 42);
    }
    let v = json(&js);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["heldout"].as_array().unwrap().len(), 3);
}

#[test]
fn malformed_config_exits_with_the_key() {
    let dir = TempDir::new().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, r#"{"training": {"learning_rate": "fast"}}"#).unwrap();
    let out = dir.path().join("run");
    let r = mm(&["train-toy", "--config", cfg_path.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(r.status, ExitStatus::Usage);
    assert!(r.summary.contains("training.learning_rate"), "{}", r.summary);
    assert!(!out.exists());
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_mutualmesh");
    let dir = TempDir::new().unwrap();
    let p = write_sphere(dir.path(), "s.obj", 1.0, 0);
    let code = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(code(&["validate", &p]), Some(0));
    assert_eq!(code(&["validate", "/nonexistent/mesh.obj"]), Some(3));
    assert_eq!(code(&["bogus"]), Some(2));
    assert_eq!(code(&["--help"]), Some(0));
}
