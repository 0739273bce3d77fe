use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatslam::eval::psnr;
use splatslam::geometry::SE3Pose;
use splatslam::map::GaussianMap;
use splatslam::rasterizer::{covisibility, render, RenderConfig};
use splatslam::slam::{compute_loss, initialize, optimize_window, run, track_frame, FrameSource, InMemorySequence, Keyframe, Slam, SlamConfig};
use splatslam::synth::{default_intrinsics, make_orbit_arc, make_scene, render_sequence, SceneSpec};

fn sequence(frames: usize, size: usize) -> (GaussianMap, Vec<SE3Pose>, InMemorySequence) {
    let scene = make_scene(&SceneSpec::default());
    let poses = make_orbit_arc(3.0, frames, &Vector3::zeros(), 0.01 * frames as f64);
    let k = default_intrinsics(size, size);
    let seq = render_sequence(&scene, &poses, &k, &RenderConfig::default(), 0.9);
    (scene, poses, seq)
}

fn fast_config() -> SlamConfig {
    SlamConfig { tracking_iters: 15, mapping_iters: 10, init_iters: 30, ..SlamConfig::default() }
}

/// Replays both keyframe rules from the pre-decision map state and the
/// tracked pose, and compares with the decisions taken during the run.
#[test]
fn keyframes_match_rule_replay() {
    let (_, _, seq) = sequence(12, 32);
    // No mapping steps, so tracked poses stay as recorded.
    let cfg = SlamConfig { mapping_iters: 0, baseline_ratio_threshold: 0.02, covisibility_threshold: 0.95, ..fast_config() };
    let mut slam = Slam::new(seq.intrinsics, cfg.clone());
    let mut decisions = Vec::new();
    for i in 0..seq.len() {
        let before = slam.map.clone();
        let last = slam.keyframes.last().map(|kf| (kf.pose, kf.median_depth));
        let keyframe = slam.process_frame(seq.frame(i).unwrap()).unwrap().keyframe;
        let tracked = slam.poses[i].1;
        let expected = match last {
            None => true,
            Some((last_pose, median)) => {
                let covis = covisibility(&before, &last_pose, &tracked, &seq.intrinsics, &cfg.render);
                let baseline = (tracked.camera_center() - last_pose.camera_center()).norm();
                covis < cfg.covisibility_threshold || baseline / median > cfg.baseline_ratio_threshold
            }
        };
        assert_eq!(keyframe, expected, "frame {i}");
        decisions.push(keyframe);
    }
    assert!(decisions.iter().filter(|&&d| d).count() >= 2, "fixture should trigger keyframes: {decisions:?}");
}

#[test]
fn first_keyframe_is_the_gauge() {
    let (_, _, seq) = sequence(8, 32);
    let cfg = SlamConfig { baseline_ratio_threshold: 0.01, ..fast_config() };
    let out = run(&seq, &cfg);
    assert!(out.halted.is_none());
    assert!(out.keyframes.len() > 1);
    assert_eq!(out.keyframes[0].pose, SE3Pose::identity());
    assert_eq!(out.trajectory[0].1, SE3Pose::identity());
}

#[test]
fn single_frame_run_gives_identity() {
    let (_, _, mut seq) = sequence(3, 32);
    seq.frames.truncate(1);
    let out = run(&seq, &fast_config());
    assert_eq!(out.trajectory.len(), 1);
    assert_eq!(out.trajectory[0].1, SE3Pose::identity());
    assert_eq!(out.keyframe_frames, vec![0]);
    assert!(!out.map.is_empty());
}

#[test]
fn runs_are_deterministic() {
    let (_, _, seq) = sequence(6, 32);
    let a = run(&seq, &fast_config());
    let b = run(&seq, &fast_config());
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.keyframe_frames, b.keyframe_frames);
    assert_eq!(a.map.splats, b.map.splats);
}

#[test]
fn tracking_at_the_optimum_stays_put() {
    let (scene, poses, seq) = sequence(2, 48);
    let f = seq.frame(1).unwrap();
    let res = track_frame(&scene, &poses[1], &seq.intrinsics, &f.rgb, &f.depth, &SlamConfig::default(), 1).unwrap();
    let d = res.pose.compose(&poses[1].inverse()).log().to_vector();
    assert!(d.amax() < 1e-6, "{d:?}");
    assert!(res.best_loss <= res.initial_loss);
}

#[test]
fn tracking_never_returns_a_worse_pose() {
    let (scene, poses, seq) = sequence(2, 32);
    let f = seq.frame(1).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..3 {
        let xi = splatslam::geometry::Tangent6::new(
            Vector3::from_fn(|_, _| r.random_range(-0.02..0.02)),
            Vector3::from_fn(|_, _| r.random_range(-0.02..0.02)),
        );
        let init = poses[1].retract(&xi);
        let res = track_frame(&scene, &init, &seq.intrinsics, &f.rgb, &f.depth, &fast_config(), 1).unwrap();
        assert!(res.best_loss <= res.initial_loss);
    }
}

#[test]
fn refinement_is_stationary_at_ground_truth() {
    let (scene, poses, seq) = sequence(3, 32);
    let cfg = SlamConfig::default();
    let mut kfs: Vec<Keyframe> = (0..3)
        .map(|i| {
            let f = seq.frame(i).unwrap();
            Keyframe::new(i, f.timestamp, poses[i], f.rgb, f.depth)
        })
        .collect();
    let mut map = scene.clone();
    let report = optimize_window(&mut map, &mut kfs, &[0, 1, 2], &[1, 2], &seq.intrinsics, &cfg, 3.0, 10);
    let first = report.losses[0];
    for w in report.losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{:?}", report.losses);
    }
    assert!(first < 1e-9);
}

#[test]
fn refinement_recovers_noisy_colors() {
    let (scene, poses, seq) = sequence(3, 48);
    let k = seq.intrinsics;
    let mut noisy = scene.clone();
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let normal = rand_distr::Normal::new(0.0, 0.1).unwrap();
    for g in &mut noisy.splats {
        g.color = g.color.map(|c| (c + r.sample(normal)).clamp(0.0, 1.0));
    }
    let score = |m: &GaussianMap| {
        (0..3).map(|i| psnr(&render(m, &poses[i], &k, &RenderConfig::default()).color, &seq.frames[i].rgb).unwrap()).sum::<f64>() / 3.0
    };
    let before = score(&noisy);
    let mut kfs: Vec<Keyframe> = (0..3)
        .map(|i| {
            let f = seq.frame(i).unwrap();
            Keyframe::new(i, f.timestamp, poses[i], f.rgb, f.depth)
        })
        .collect();
    let cfg = SlamConfig::default();
    optimize_window(&mut noisy, &mut kfs, &[0, 1, 2], &[], &k, &cfg, 3.0, 300);
    let after = score(&noisy);
    assert!(after - before >= 10.0, "{before:.2} dB -> {after:.2} dB");
}

#[test]
fn initialization_fits_the_first_frame() {
    let (_, poses, seq) = sequence(1, 64);
    let f = seq.frame(0).unwrap();
    let cfg = SlamConfig::default();
    let (map, pose, _) = initialize(&f.rgb, &f.depth, &seq.intrinsics, None, &cfg).unwrap();
    assert_eq!(pose, SE3Pose::identity());
    // The map lives in the first camera's frame.
    let (loss, _) = compute_loss(&map, &pose, &seq.intrinsics, &f.rgb, &f.depth, cfg.lambda, cfg.geo_alpha_min, &cfg.render);
    assert!(loss.e_pho < 0.05, "e_pho {}", loss.e_pho);
    let _ = poses;
}

#[test]
fn empty_depth_is_rejected() {
    let (_, _, mut seq) = sequence(1, 16);
    seq.frames[0].depth.valid.iter_mut().for_each(|v| *v = false);
    let out = run(&seq, &fast_config());
    assert_eq!(out.halted, Some(splatslam::slam::SlamError::EmptyDepth));
    assert!(out.trajectory.is_empty());
}
