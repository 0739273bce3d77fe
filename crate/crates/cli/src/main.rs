//! `splatslam` command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 tracking diverged
//! (partial outputs are still written).
#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{UnitQuaternion, Vector3};
use serde_json::json;
use sha2::{Digest, Sha256};
use splatslam::dataio::{
    load_config, load_depth, load_rgb, load_tum_sequence, read_trajectory_tum, write_depth, write_rgb_png,
    write_trajectory_tum, DepthFormat, TrajectoryRecord, DEFAULT_MAX_DT, TUM_DEPTH_SCALE,
};
use splatslam::depth_filter::{depth_histogram, depth_stats, histogram_csv, iqr_filter, FilterMode, IqrConfig};
use splatslam::eval::{ate_rmse, psnr, ssim, MetricsRow};
use splatslam::map::{read_snapshot, write_snapshot};
use splatslam::slam::{run_with, FrameSource, SlamConfig, SlamError};
use splatslam::synth::{
    default_intrinsics, make_orbit_arc, make_scene, render_sequence, write_sequence_dir, SceneLayout, SceneSpec,
    SynthSequence,
};
use splatslam::{render, CameraIntrinsics, RenderConfig, SE3Pose};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "splatslam", version, about = "Monocular Gaussian-splatting SLAM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run SLAM on a sequence directory.
    Run {
        seq_dir: PathBuf,
        /// TOML config with flat keys; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Integer image downsampling.
        #[arg(long, default_value_t = 1)]
        downsample: usize,
        /// Process at most this many frames.
        #[arg(long)]
        max_frames: Option<usize>,
        /// Overrides `rng_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Start from the first ground-truth pose instead of the identity.
        #[arg(long)]
        gt_init: bool,
        /// Write a render of every keyframe.
        #[arg(long)]
        renders: bool,
        /// Similarity (scale) alignment for ATE.
        #[arg(long)]
        scale: bool,
    },
    /// IQR-filter a depth map.
    FilterDepth {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 16)]
        window: usize,
        #[arg(long, default_value_t = 1.5)]
        k: f64,
        #[arg(long, value_enum, default_value_t = Mode::Patch)]
        mode: Mode,
        /// Write statistics before and after filtering as JSON, plus a
        /// histogram CSV next to it.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// ATE-RMSE between two TUM trajectory files.
    EvalAte {
        est: PathBuf,
        gt: PathBuf,
        #[arg(long)]
        scale: bool,
        #[arg(long, default_value_t = DEFAULT_MAX_DT)]
        max_dt: f64,
    },
    /// PSNR and SSIM over identically named PNG images in two directories.
    EvalRender { dir_a: PathBuf, dir_b: PathBuf },
    /// Render a map snapshot.
    Render {
        map: PathBuf,
        /// Camera-to-world pose `tx,ty,tz,qx,qy,qz,qw`.
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        #[arg(long)]
        out: PathBuf,
        /// `fx,fy,cx,cy,width,height`; defaults to the synthetic camera.
        #[arg(long)]
        intrinsics: Option<String>,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Also write the depth render (format from the extension).
        #[arg(long)]
        depth_out: Option<PathBuf>,
    },
    /// Write a synthetic sequence directory.
    Synth {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_splats: usize,
        #[arg(long, default_value_t = 50)]
        frames: usize,
        #[arg(long, default_value_t = 3.0)]
        radius: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Orbit arc in radians; a full circle is 6.283.
        #[arg(long, default_value_t = 0.33)]
        arc: f64,
        #[arg(long, value_enum, default_value_t = Layout::Shell)]
        layout: Layout,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Patch,
    Global,
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    Shell,
    Volume,
}

struct Failure {
    code: u8,
    message: String,
}

fn data_err(e: impl Display) -> Failure {
    Failure { code: 2, message: e.to_string() }
}

fn usage_err(e: impl Display) -> Failure {
    Failure { code: 1, message: e.to_string() }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = std::env::var("UDGS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("cannot set thread count: {e}");
        }
    }
    let result = match cli.command {
        Command::Run { seq_dir, config, out, downsample, max_frames, seed, gt_init, renders, scale } => {
            cmd_run(&seq_dir, config.as_deref(), &out, downsample, max_frames, seed, gt_init, renders, scale)
        }
        Command::FilterDepth { input, output, window, k, mode, report } => {
            cmd_filter_depth(&input, &output, window, k, mode, report.as_deref())
        }
        Command::EvalAte { est, gt, scale, max_dt } => cmd_eval_ate(&est, &gt, scale, max_dt),
        Command::EvalRender { dir_a, dir_b } => cmd_eval_render(&dir_a, &dir_b),
        Command::Render { map, pose, out, intrinsics, size, depth_out } => {
            cmd_render(&map, &pose, &out, intrinsics.as_deref(), size, depth_out.as_deref())
        }
        Command::Synth { out_dir, n_splats, frames, radius, seed, size, arc, layout } => {
            cmd_synth(&out_dir, n_splats, frames, radius, seed, size, arc, layout)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn create_dir(path: &Path) -> CliResult {
    std::fs::create_dir_all(path).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    seq_dir: &Path,
    config: Option<&Path>,
    out: &Path,
    downsample: usize,
    max_frames: Option<usize>,
    seed: Option<u64>,
    gt_init: bool,
    renders: bool,
    with_scale: bool,
) -> CliResult {
    if downsample == 0 {
        return Err(usage_err("--downsample must be at least 1"));
    }
    let mut cfg = match config {
        Some(p) => load_config(p).map_err(data_err)?,
        None => SlamConfig::default(),
    };
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    cfg.validate().map_err(|(key, reason)| data_err(format!("config key `{key}`: {reason}")))?;
    let mut seq = load_tum_sequence(seq_dir, DEFAULT_MAX_DT).map_err(data_err)?.with_downsample(downsample);
    if let Some(n) = max_frames {
        seq = seq.truncate(n);
    }
    create_dir(out)?;

    // Manifest first, so a crashed run still says what it was given.
    let mut inputs = serde_json::Map::new();
    let mut hash = |p: &Path| -> CliResult {
        let key = p.strip_prefix(seq_dir).unwrap_or(p).to_string_lossy().into_owned();
        inputs.insert(key, json!(sha256_file(p)?));
        Ok(())
    };
    for name in ["rgb.txt", "depth.txt", "groundtruth.txt", "intrinsics.txt"] {
        let p = seq_dir.join(name);
        if p.is_file() {
            hash(&p)?;
        }
    }
    for (_, rgb, depth) in &seq.pairs {
        hash(rgb)?;
        hash(depth)?;
    }
    let config_hash = config.map(sha256_file).transpose()?;
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "sequence": seq_dir.display().to_string(),
        "config": cfg,
        "config_file": config.map(|p| p.display().to_string()),
        "config_sha256": config_hash,
        "seed": cfg.rng_seed,
        "downsample": downsample,
        "max_frames": max_frames,
        "gt_init": gt_init,
        "threads": rayon::current_num_threads(),
        "inputs": inputs,
    });
    write_text(&out.join("manifest.json"), &serde_json::to_string_pretty(&manifest).unwrap())?;

    let initial_pose = if gt_init {
        let first_t = seq.pairs.first().map(|p| p.0);
        let gt = seq.groundtruth.as_ref().ok_or_else(|| usage_err("--gt-init needs groundtruth.txt"))?;
        let t0 = first_t.ok_or_else(|| data_err("empty sequence"))?;
        let nearest = gt
            .iter()
            .min_by(|a, b| (a.timestamp - t0).abs().total_cmp(&(b.timestamp - t0).abs()))
            .ok_or_else(|| data_err("empty groundtruth"))?;
        Some(nearest.pose_cw())
    } else {
        None
    };

    log::info!("{} frames at {}x{}", seq.len(), seq.intrinsics().width, seq.intrinsics().height);
    let mut diag_lines = String::new();
    let output = run_with(&seq, &cfg, initial_pose, |d| {
        log::info!(
            "frame {} kf={} loss {:.5} -> {:.5} splats {}",
            d.frame,
            d.keyframe,
            d.track_initial_loss,
            d.track_best_loss,
            d.splats
        );
        diag_lines.push_str(&serde_json::to_string(d).unwrap());
        diag_lines.push('\n');
    });

    let records: Vec<TrajectoryRecord> =
        output.trajectory.iter().map(|(t, p)| TrajectoryRecord::from_pose_cw(*t, p)).collect();
    write_trajectory_tum(&records, &out.join("trajectory.txt")).map_err(data_err)?;
    let kf_records: Vec<TrajectoryRecord> =
        output.keyframes.iter().map(|kf| TrajectoryRecord::from_pose_cw(kf.timestamp, &kf.pose)).collect();
    write_trajectory_tum(&kf_records, &out.join("keyframes.txt")).map_err(data_err)?;
    write_text(&out.join("diagnostics.jsonl"), &diag_lines)?;
    let map_path = out.join("map.bin");
    let file = std::fs::File::create(&map_path).map_err(|e| data_err(format!("{}: {e}", map_path.display())))?;
    write_snapshot(&output.map, std::io::BufWriter::new(file)).map_err(data_err)?;

    let k = seq.intrinsics();
    if renders {
        create_dir(&out.join("renders"))?;
    }
    let (mut ps, mut ss) = (Vec::new(), Vec::new());
    for kf in &output.keyframes {
        let r = render(&output.map, &kf.pose, &k, &cfg.render);
        ps.push(psnr(&r.color, &kf.rgb).map_err(data_err)?);
        if let Ok(s) = ssim(&r.color, &kf.rgb) {
            ss.push(s);
        }
        if renders {
            write_rgb_png(&r.color, &out.join("renders").join(format!("kf_{:06}.png", kf.frame_index))).map_err(data_err)?;
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let ate = match &seq.groundtruth {
        Some(gt) if records.len() >= 3 => match ate_rmse(&records, gt, with_scale, DEFAULT_MAX_DT) {
            Ok(a) => {
                log::info!("ATE over all {} frames ({} matched); keyframes only: eval-ate keyframes.txt", records.len(), a.matched);
                Some(a)
            }
            Err(e) => {
                log::warn!("ATE not computed: {e}");
                None
            }
        },
        _ => None,
    };
    let row = MetricsRow {
        sequence: seq_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        ate_rmse_m: ate.as_ref().map(|a| a.rmse),
        psnr_db: mean(&ps),
        ssim: mean(&ss),
        frames: records.len(),
        keyframes: output.keyframes.len(),
        aligned_scale: ate.as_ref().map(|a| a.alignment.scale),
    };
    write_text(&out.join("metrics.csv"), &format!("{}\n{}\n", MetricsRow::HEADER, row.to_csv_line()))?;
    println!("{}", MetricsRow::HEADER);
    println!("{}", row.to_csv_line());

    match output.halted {
        None => Ok(()),
        Some(e @ SlamError::TrackingDiverged { .. }) => Err(Failure { code: 3, message: e.to_string() }),
        Some(e) => Err(data_err(e)),
    }
}

fn depth_format(path: &Path) -> Result<DepthFormat, Failure> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => Ok(DepthFormat::Png16),
        Some("f32") | Some("raw") => Ok(DepthFormat::RawF32),
        _ => Err(usage_err(format!("{}: depth files must end in .png or .f32", path.display()))),
    }
}

fn cmd_filter_depth(input: &Path, output: &Path, window: usize, k: f64, mode: Mode, report: Option<&Path>) -> CliResult {
    if window == 0 || !(k >= 0.0) {
        return Err(usage_err("--window must be positive and --k non-negative"));
    }
    let (fin, fout) = (depth_format(input)?, depth_format(output)?);
    let depth = load_depth(input, fin, TUM_DEPTH_SCALE).map_err(data_err)?;
    let mode = match mode {
        Mode::Patch => FilterMode::Patch,
        Mode::Global => FilterMode::Global,
    };
    let filtered = iqr_filter(&depth, &IqrConfig { window, k, mode, ..IqrConfig::default() });
    write_depth(&filtered, output, fout, TUM_DEPTH_SCALE).map_err(data_err)?;
    let masked = depth.valid_count() - filtered.valid_count();
    log::info!("masked {masked} of {} valid pixels", depth.valid_count());
    if let Some(report) = report {
        let doc = json!({
            "input": input.display().to_string(),
            "valid_before": depth.valid_count(),
            "valid_after": filtered.valid_count(),
            "masked": masked,
            "before": depth_stats(&depth).ok(),
            "after": depth_stats(&filtered).ok(),
        });
        write_text(report, &serde_json::to_string_pretty(&doc).unwrap())?;
        write_text(&report.with_extension("histogram.csv"), &histogram_csv(&depth_histogram(&depth, 50)))?;
    }
    Ok(())
}

fn cmd_eval_ate(est: &Path, gt: &Path, with_scale: bool, max_dt: f64) -> CliResult {
    let e = read_trajectory_tum(est).map_err(data_err)?;
    let g = read_trajectory_tum(gt).map_err(data_err)?;
    let report = ate_rmse(&e, &g, with_scale, max_dt).map_err(data_err)?;
    log::info!("{} matched poses, scale {:.6}", report.matched, report.alignment.scale);
    println!("{:.6}", report.rmse);
    Ok(())
}

fn cmd_eval_render(dir_a: &Path, dir_b: &Path) -> CliResult {
    let read = |d: &Path| std::fs::read_dir(d).map_err(|e| data_err(format!("{}: {e}", d.display())));
    let mut names: Vec<String> = read(dir_a)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png") && dir_b.join(n).is_file())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(data_err("no identically named PNG images in both directories"));
    }
    println!("image,psnr_db,ssim");
    let (mut ps, mut ss) = (0.0, 0.0);
    for n in &names {
        let a = load_rgb(&dir_a.join(n)).map_err(data_err)?;
        let b = load_rgb(&dir_b.join(n)).map_err(data_err)?;
        let p = psnr(&a, &b).map_err(data_err)?;
        let s = ssim(&a, &b).map_err(data_err)?;
        println!("{n},{p:.6},{s:.6}");
        ps += p;
        ss += s;
    }
    let n = names.len() as f64;
    println!("mean,{:.6},{:.6}", ps / n, ss / n);
    Ok(())
}

fn parse_floats(s: &str, n: usize, what: &str) -> Result<Vec<f64>, Failure> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| usage_err(format!("{what}: {e}")))?;
    if v.len() != n {
        return Err(usage_err(format!("{what}: expected {n} comma-separated numbers, got {}", v.len())));
    }
    Ok(v)
}

fn cmd_render(map: &Path, pose: &str, out: &Path, intrinsics: Option<&str>, size: usize, depth_out: Option<&Path>) -> CliResult {
    let p = parse_floats(pose, 7, "--pose")?;
    let q = nalgebra::Quaternion::new(p[6], p[3], p[4], p[5]);
    if q.norm() < 1e-9 {
        return Err(usage_err("--pose: zero quaternion"));
    }
    let record = TrajectoryRecord {
        timestamp: 0.0,
        translation: Vector3::new(p[0], p[1], p[2]),
        rotation: UnitQuaternion::from_quaternion(q),
    };
    let k = match intrinsics {
        Some(s) => {
            let v = parse_floats(s, 6, "--intrinsics")?;
            CameraIntrinsics::new(v[0], v[1], v[2], v[3], v[4] as usize, v[5] as usize).map_err(usage_err)?
        }
        None => default_intrinsics(size, size),
    };
    let file = std::fs::File::open(map).map_err(|e| data_err(format!("{}: {e}", map.display())))?;
    let gmap = read_snapshot(std::io::BufReader::new(file)).map_err(|e| data_err(format!("{}: {e}", map.display())))?;
    let pose: SE3Pose = record.pose_cw();
    let r = render(&gmap, &pose, &k, &RenderConfig::default());
    write_rgb_png(&r.color, out).map_err(data_err)?;
    if let Some(d) = depth_out {
        let depth = splatslam::DepthMap::from_values(k.width, k.height, r.depth.clone());
        write_depth(&depth, d, depth_format(d)?, TUM_DEPTH_SCALE).map_err(data_err)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(out_dir: &Path, n_splats: usize, frames: usize, radius: f64, seed: u64, size: usize, arc: f64, layout: Layout) -> CliResult {
    if n_splats == 0 || frames == 0 || !(radius > 0.0) || size < 8 {
        return Err(usage_err("need --n-splats >= 1, --frames >= 1, --radius > 0 and --size >= 8"));
    }
    let layout = match layout {
        Layout::Shell => SceneLayout::Shell,
        Layout::Volume => SceneLayout::Volume,
    };
    let scene = make_scene(&SceneSpec { n_splats, extent: 2.0, seed, layout });
    let poses = make_orbit_arc(radius, frames, &Vector3::zeros(), arc);
    let sequence = render_sequence(&scene, &poses, &default_intrinsics(size, size), &RenderConfig::default(), 0.9);
    write_sequence_dir(out_dir, &SynthSequence { scene, poses, sequence }).map_err(data_err)?;
    log::info!("wrote {frames} frames to {}", out_dir.display());
    Ok(())
}
