//! Synthetic scenes, camera paths and RGB-D renders with known ground truth.

use crate::dataio::{write_depth, write_rgb_png, write_trajectory_tum, DataError, DepthFormat, TrajectoryRecord};
use crate::depth_filter::DepthMap;
use crate::geometry::{CameraIntrinsics, SE3Pose};
use crate::map::{write_snapshot, GaussianMap, GaussianSplat};
use crate::rasterizer::{render, RenderConfig};
use crate::slam::{Frame, InMemorySequence};
use nalgebra::{Matrix3, UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::path::Path;

/// Where splat means are placed inside the cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SceneLayout {
    /// Uniform in the volume; scales 2-8% of the extent.
    #[default]
    Volume,
    /// On the six faces, flattened along the face normal; in-plane scales
    /// 6-15% of the extent. Renders as textured opaque surfaces.
    Shell,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub n_splats: usize,
    /// Side of the axis-aligned cube centered at the origin holding every
    /// splat mean (meters).
    pub extent: f64,
    pub seed: u64,
    pub layout: SceneLayout,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self { n_splats: 200, extent: 2.0, seed: 0, layout: SceneLayout::Volume }
    }
}

/// Random anisotropic splats with opacities in [0.3, 0.95].
pub fn make_scene(spec: &SceneSpec) -> GaussianMap {
    assert!(spec.n_splats >= 1, "n_splats must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let half = 0.5 * spec.extent;
    let mut map = GaussianMap::new();
    for _ in 0..spec.n_splats {
        let mut g = GaussianSplat::isotropic(Vector3::zeros(), 1.0, Vector3::zeros(), 0.5);
        let q = match spec.layout {
            SceneLayout::Volume => {
                g.mu_w = Vector3::from_fn(|_, _| rng.random_range(-half..=half));
                g.log_scale = Vector3::from_fn(|_, _| (spec.extent * rng.random_range(0.02..0.08)).ln());
                UnitQuaternion::from_euler_angles(
                    rng.random_range(-PI..PI),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-PI..PI),
                )
            }
            SceneLayout::Shell => {
                let face = rng.random_range(0..6);
                let axis = face / 2;
                g.mu_w = Vector3::from_fn(|_, _| rng.random_range(-half..half));
                g.mu_w[axis] = if face % 2 == 0 { -half } else { half };
                g.log_scale = Vector3::from_fn(|_, _| (spec.extent * rng.random_range(0.06..0.15)).ln());
                g.log_scale[axis] = (spec.extent * 0.01).ln();
                UnitQuaternion::from_axis_angle(&Vector3::ith_axis(axis), rng.random_range(-PI..PI))
            }
        };
        g.rot_q = Vector4::new(q.w, q.i, q.j, q.k);
        g.color = Vector3::from_fn(|_, _| rng.random_range(0.05..0.95));
        g.logit_opacity = crate::map::logit(rng.random_range(0.3..=0.95));
        map.push(g);
    }
    map
}

/// World-to-camera pose at `center` looking at `target`, image y pointing
/// along world +y ("down") as far as possible.
pub fn look_at(center: &Vector3<f64>, target: &Vector3<f64>) -> SE3Pose {
    let z = (target - center).normalize();
    let down = Vector3::y();
    let x = down.cross(&z);
    let x = if x.norm() < 1e-9 { Vector3::x() } else { x.normalize() };
    let y = z.cross(&x);
    let r_wc = Matrix3::from_columns(&[x, y, z]);
    SE3Pose::new(r_wc, *center).inverse()
}

/// `n_frames` equally spaced poses on a horizontal circle of `radius`
/// around `target`, each looking at it.
pub fn make_orbit(radius: f64, n_frames: usize, target: &Vector3<f64>) -> Vec<SE3Pose> {
    make_orbit_arc(radius, n_frames, target, std::f64::consts::TAU)
}

/// Like [`make_orbit`], covering only `arc` radians: heading `i * arc / n`.
pub fn make_orbit_arc(radius: f64, n_frames: usize, target: &Vector3<f64>, arc: f64) -> Vec<SE3Pose> {
    assert!(radius > 0.0 && n_frames >= 1);
    (0..n_frames)
        .map(|i| {
            let th = arc * i as f64 / n_frames as f64;
            let c = target + radius * Vector3::new(th.sin(), 0.0, -th.cos());
            look_at(&c, target)
        })
        .collect()
}

/// Multiply a seeded `round(tail_fraction * valid)` subset of valid pixels
/// by factors drawn uniformly from `[2, tail_scale]`. Returns the corrupted
/// map and the corruption mask.
pub fn corrupt_depth(depth: &DepthMap, tail_fraction: f64, tail_scale: f64, seed: u64) -> (DepthMap, Vec<bool>) {
    assert!((0.0..=1.0).contains(&tail_fraction), "tail_fraction must be in [0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let valid: Vec<usize> = (0..depth.values.len()).filter(|&i| depth.valid[i]).collect();
    let count = (tail_fraction * valid.len() as f64).round() as usize;
    let mut out = depth.clone();
    let mut mask = vec![false; depth.values.len()];
    let hi = tail_scale.max(2.0);
    for j in rand::seq::index::sample(&mut rng, valid.len(), count) {
        let i = valid[j];
        out.values[i] *= if hi > 2.0 { rng.random_range(2.0..=hi) } else { 2.0 };
        mask[i] = true;
    }
    (out, mask)
}

/// A smooth depth surface: a tilted plane with a gentle ripple.
pub fn smooth_depth(width: usize, height: usize, seed: u64) -> DepthMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = rng.random_range(1.5..3.0);
    let (gx, gy) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    let (fx, fy, amp) = (rng.random_range(1.0..3.0), rng.random_range(1.0..3.0), rng.random_range(0.0..0.05));
    let values = (0..width * height)
        .map(|i| {
            let (u, v) = ((i % width) as f64 / width as f64, (i / width) as f64 / height as f64);
            base + gx * u + gy * v + amp * (fx * u * std::f64::consts::TAU).sin() * (fy * v * std::f64::consts::TAU).cos()
        })
        .collect();
    DepthMap::from_values(width, height, values)
}

/// Square-pixel intrinsics with the principal point at the image center.
pub fn default_intrinsics(width: usize, height: usize) -> CameraIntrinsics {
    let f = 0.9 * width as f64;
    CameraIntrinsics { fx: f, fy: f, cx: (width as f64 - 1.0) / 2.0, cy: (height as f64 - 1.0) / 2.0, width, height }
}

/// Rendered RGB-D frames of a synthetic scene.
#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub scene: GaussianMap,
    /// Ground-truth world-to-camera poses.
    pub poses: Vec<SE3Pose>,
    pub sequence: InMemorySequence,
}

impl SynthSequence {
    pub fn groundtruth(&self) -> Vec<TrajectoryRecord> {
        self.sequence.frames.iter().zip(&self.poses).map(|(f, p)| TrajectoryRecord::from_pose_cw(f.timestamp, p)).collect()
    }
}

/// Frames spaced this far apart in time.
pub const FRAME_DT: f64 = 1.0 / 30.0;

/// Render each pose. Depth is the rendered depth, valid where the rendered
/// opacity exceeds `alpha_valid`.
pub fn render_sequence(
    scene: &GaussianMap,
    poses: &[SE3Pose],
    k: &CameraIntrinsics,
    cfg: &RenderConfig,
    alpha_valid: f64,
) -> InMemorySequence {
    let frames = poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let out = render(scene, pose, k, cfg);
            let values = out.depth.iter().zip(&out.alpha).map(|(&d, &a)| if a > alpha_valid { d } else { 0.0 }).collect();
            Frame { timestamp: i as f64 * FRAME_DT, rgb: out.color, depth: DepthMap::from_values(k.width, k.height, values) }
        })
        .collect();
    InMemorySequence { intrinsics: *k, frames }
}

/// Write a sequence directory: `rgb/`, `depth/` (rawf32), `rgb.txt`,
/// `depth.txt`, `groundtruth.txt`, `intrinsics.txt` and `scene.bin`.
pub fn write_sequence_dir(dir: &Path, synth: &SynthSequence) -> Result<(), DataError> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| DataError::Io { path: p, source }
    };
    for sub in ["rgb", "depth"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(io(&dir.join(sub)))?;
    }
    let (mut rgb_txt, mut depth_txt) = (String::from("# timestamp filename\n"), String::from("# timestamp filename\n"));
    for (i, f) in synth.sequence.frames.iter().enumerate() {
        let (rn, dn) = (format!("rgb/{i:06}.png"), format!("depth/{i:06}.f32"));
        write_rgb_png(&f.rgb, &dir.join(&rn))?;
        write_depth(&f.depth, &dir.join(&dn), DepthFormat::RawF32, 1.0)?;
        rgb_txt += &format!("{:.6} {rn}\n", f.timestamp);
        depth_txt += &format!("{:.6} {dn}\n", f.timestamp);
    }
    let k = synth.sequence.intrinsics;
    let files = [
        ("rgb.txt", rgb_txt),
        ("depth.txt", depth_txt),
        ("intrinsics.txt", format!("{} {} {} {} {} {}\n", k.fx, k.fy, k.cx, k.cy, k.width, k.height)),
    ];
    for (name, text) in files {
        std::fs::write(dir.join(name), text).map_err(io(&dir.join(name)))?;
    }
    write_trajectory_tum(&synth.groundtruth(), &dir.join("groundtruth.txt"))?;
    let scene_path = dir.join("scene.bin");
    let file = std::fs::File::create(&scene_path).map_err(io(&scene_path))?;
    write_snapshot(&synth.scene, std::io::BufWriter::new(file))
        .map_err(|e| DataError::UnreadableFile { path: scene_path, reason: e.to_string() })
}
