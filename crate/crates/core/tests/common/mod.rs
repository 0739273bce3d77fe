//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use nalgebra::{UnitQuaternion, Vector3, Vector4, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatslam::geometry::{CameraIntrinsics, SE3Pose, Tangent6};
use splatslam::map::{logit, GaussianMap, GaussianSplat, ParamGroup};
use splatslam::rasterizer::{render, render_backward, GradientBundle, RenderConfig};

pub fn intrinsics(w: usize, h: usize) -> CameraIntrinsics {
    CameraIntrinsics { fx: 0.9 * w as f64, fy: 0.9 * w as f64, cx: (w as f64 - 1.0) / 2.0, cy: (h as f64 - 1.0) / 2.0, width: w, height: h }
}

/// Up to `max_splats` splats in front of an identity camera, 1-5 px wide.
pub fn random_scene(rng: &mut ChaCha8Rng, max_splats: usize, k: &CameraIntrinsics) -> GaussianMap {
    let n = rng.random_range(1..=max_splats);
    let mut map = GaussianMap::new();
    for _ in 0..n {
        let z = rng.random_range(1.5..4.0);
        let u = rng.random_range(-2.0..k.width as f64 + 1.0);
        let v = rng.random_range(-2.0..k.height as f64 + 1.0);
        let mu = Vector3::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z);
        let mut g = GaussianSplat::isotropic(mu, 1.0, Vector3::zeros(), 0.5);
        g.log_scale = Vector3::from_fn(|_, _| (rng.random_range(1.0..5.0) * z / k.fx).ln());
        let q = UnitQuaternion::from_euler_angles(rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5), rng.random_range(-3.0..3.0));
        // Stored unnormalized to exercise the normalization inside R(q).
        let s = rng.random_range(0.7..1.4);
        g.rot_q = Vector4::new(q.w, q.i, q.j, q.k) * s;
        g.color = Vector3::from_fn(|_, _| rng.random_range(0.0..1.0));
        g.logit_opacity = logit(rng.random_range(0.2..0.9));
        map.push(g);
    }
    map
}

pub fn random_pose(rng: &mut ChaCha8Rng, rot: f64, trans: f64) -> SE3Pose {
    let v = Vector6::from_fn(|i, _| if i < 3 { rng.random_range(-trans..trans) } else { rng.random_range(-rot..rot) });
    SE3Pose::exp(&Tangent6::from_vector(&v))
}

/// Random linear functional weights over color and depth.
pub fn random_upstream(rng: &mut ChaCha8Rng, k: &CameraIntrinsics) -> (Vec<[f64; 3]>, Vec<f64>) {
    let n = k.pixel_count();
    let gc = (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let gd = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (gc, gd)
}

pub fn scalar(map: &GaussianMap, pose: &SE3Pose, k: &CameraIntrinsics, cfg: &RenderConfig, gc: &[[f64; 3]], gd: &[f64]) -> f64 {
    let out = render(map, pose, k, cfg);
    let mut s = 0.0;
    for i in 0..gc.len() {
        let c = out.color.data[i];
        s += gc[i][0] * c[0] + gc[i][1] * c[1] + gc[i][2] * c[2] + gd[i] * out.depth[i];
    }
    s
}

/// Settings under which the render is smooth in every parameter: no early
/// termination and a negligible kernel cutoff.
pub fn smooth_config() -> RenderConfig {
    RenderConfig { t_stop: 0.0, alpha_min: 1e-12, ..RenderConfig::default() }
}

pub struct FdReport {
    pub max_rel: f64,
    pub worst: String,
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compare every analytic gradient with central differences.
#[allow(clippy::too_many_arguments)]
pub fn check_gradients(map: &GaussianMap, pose: &SE3Pose, k: &CameraIntrinsics, cfg: &RenderConfig, gc: &[[f64; 3]], gd: &[f64], h: f64, floor: f64) -> FdReport {
    let analytic: GradientBundle = render_backward(map, pose, k, gc, gd, cfg);
    let mut rep = FdReport { max_rel: 0.0, worst: String::new() };
    let mut note = |a: f64, n: f64, what: String| {
        let e = rel_err(a, n, floor);
        if e > rep.max_rel {
            rep.max_rel = e;
            rep.worst = format!("{what}: analytic {a:.9e} numeric {n:.9e}");
        }
    };
    for group in ParamGroup::ALL {
        let base = map.group_values(group);
        for j in 0..base.len() {
            let mut m = map.clone();
            let mut v = base.clone();
            v[j] = base[j] + h;
            m.set_group_values(group, &v).unwrap();
            let fp = scalar(&m, pose, k, cfg, gc, gd);
            v[j] = base[j] - h;
            m.set_group_values(group, &v).unwrap();
            let fm = scalar(&m, pose, k, cfg, gc, gd);
            note(analytic.group(group)[j], (fp - fm) / (2.0 * h), format!("{}[{j}]", group.name()));
        }
    }
    let d_pose = analytic.d_pose.to_vector();
    for j in 0..6 {
        let mut e = Vector6::zeros();
        e[j] = h;
        let fp = scalar(map, &pose.retract(&Tangent6::from_vector(&e)), k, cfg, gc, gd);
        let fm = scalar(map, &pose.retract(&Tangent6::from_vector(&-e)), k, cfg, gc, gd);
        note(d_pose[j], (fp - fm) / (2.0 * h), format!("pose[{j}]"));
    }
    rep
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
