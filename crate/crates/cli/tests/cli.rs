use std::path::Path;
use std::process::{Command, Output};

fn splatslam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatslam")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path, frames: &str) {
    let o = splatslam(&["synth", dir.to_str().unwrap(), "--frames", frames, "--size", "32", "--arc", "0.05"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn eval_ate_of_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.txt");
    std::fs::write(&p, "0.0 0 0 0 0 0 0 1\n1.0 1 0 0 0 0 0 1\n2.0 1 1 0 0 0 0 1\n3.0 0 1 1 0 0 0 1\n").unwrap();
    let o = splatslam(&["eval-ate", p.to_str().unwrap(), p.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).trim(), "0.000000");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = splatslam(&["eval-ate", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(!o.stderr.is_empty());
    assert_eq!(code(&splatslam(&[])), 1);
    assert_eq!(code(&splatslam(&["--help"])), 0);
}

#[test]
fn missing_sequence_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = dir.path().join("out");
    let o = splatslam(&["run", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing index file"));
}

#[test]
fn bad_config_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    synth(&seq, "2");
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = splatslam(&["run", seq.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
}

#[test]
fn run_on_synthetic_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    synth(&seq, "4");
    for f in ["rgb.txt", "depth.txt", "groundtruth.txt", "intrinsics.txt", "scene.bin"] {
        assert!(seq.join(f).is_file(), "{f}");
    }
    let cfg = dir.path().join("fast.toml");
    std::fs::write(&cfg, "tracking_iters = 10\nmapping_iters = 5\ninit_iters = 20\n").unwrap();
    let out = dir.path().join("out");
    let args = ["run", seq.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--renders"];
    let o = Command::new(env!("CARGO_BIN_EXE_splatslam")).args(args).env("UDGS_THREADS", "1").output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let traj = std::fs::read_to_string(out.join("trajectory.txt")).unwrap();
    assert_eq!(traj.lines().count(), 4);
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("sequence,ate_rmse_m,psnr_db,ssim,frames,keyframes,aligned_scale\n"));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["tracking_iters"], 10);
    assert_eq!(manifest["threads"], 1);
    assert!(manifest["inputs"]["rgb.txt"].as_str().unwrap().len() == 64);
    assert!(out.join("map.bin").is_file());
    assert!(out.join("renders").read_dir().unwrap().count() >= 1);

    // Same inputs, same thread count: identical trajectory.
    let out2 = dir.path().join("out2");
    let args2 = ["run", seq.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--out", out2.to_str().unwrap()];
    let o = Command::new(env!("CARGO_BIN_EXE_splatslam")).args(args2).env("UDGS_THREADS", "1").output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(traj, std::fs::read_to_string(out2.join("trajectory.txt")).unwrap());

    // Render the map and compare it with itself.
    let img = dir.path().join("r").join("view.png");
    std::fs::create_dir_all(img.parent().unwrap()).unwrap();
    let first = traj.lines().next().unwrap();
    let pose: Vec<&str> = first.split_whitespace().skip(1).collect();
    let o = splatslam(&["render", out.join("map.bin").to_str().unwrap(), "--pose", &pose.join(","), "--out", img.to_str().unwrap(), "--size", "32"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let d = img.parent().unwrap().to_str().unwrap();
    let o = splatslam(&["eval-render", d, d]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("view.png,inf,1.000000"));
}

#[test]
fn filter_depth_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    synth(&seq, "1");
    let input = std::fs::read_dir(seq.join("depth")).unwrap().next().unwrap().unwrap().path();
    let output = dir.path().join("filtered.f32");
    let report = dir.path().join("report.json");
    let o = splatslam(&["filter-depth", input.to_str().unwrap(), output.to_str().unwrap(), "--mode", "global", "--report", report.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(doc["valid_after"].as_u64() <= doc["valid_before"].as_u64());
    assert!(dir.path().join("report.histogram.csv").is_file());
    let o = splatslam(&["filter-depth", input.to_str().unwrap(), dir.path().join("x.jpg").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}
