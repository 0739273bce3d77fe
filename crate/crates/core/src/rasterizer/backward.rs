//! Reverse-mode gradients of the scalarized render
//! `L = sum_p <g_C(p), C(p)> + g_D(p) D(p)`.
//!
//! Per pixel the blend is replayed front to back, then walked in reverse:
//!
//! ```text
//! dL/dalpha_i = T_i f_i - S_i / (1 - alpha_i),   S_i = sum_{j>i} alpha_j T_j f_j
//! f_i         = <g_C, c_i> + g_D z_i
//! ```
//!
//! Per-splat 2D gradients (mean, conic, opacity, color, depth) are reduced
//! over tiles in tile order, so the result does not depend on scheduling.
//! They are then pulled back through the projection: the conic to
//! `Sigma_I`, `Sigma_I = M Sigma_W M^T` with `M = J W`, the mean through
//! `J`, and `J` itself through the camera-frame point.

use super::{bin_tiles, project_splats, splat_alpha, RenderConfig, Splat2D};
use crate::geometry::{CameraIntrinsics, SE3Pose, Tangent6};
use crate::map::{quat_matrix_backward, GaussianMap};
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

/// Gradients for every parameter group (aligned with the map's splat order)
/// and the pose tangent at the identity increment.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub d_mu_w: Vec<f64>,
    pub d_log_scale: Vec<f64>,
    pub d_rot_q: Vec<f64>,
    pub d_color: Vec<f64>,
    pub d_logit_opacity: Vec<f64>,
    pub d_pose: Tangent6,
}

impl GradientBundle {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_mu_w: vec![0.0; 3 * n],
            d_log_scale: vec![0.0; 3 * n],
            d_rot_q: vec![0.0; 4 * n],
            d_color: vec![0.0; 3 * n],
            d_logit_opacity: vec![0.0; n],
            d_pose: Tangent6::zero(),
        }
    }

    pub fn group(&self, g: crate::map::ParamGroup) -> &[f64] {
        use crate::map::ParamGroup::*;
        match g {
            MuW => &self.d_mu_w,
            LogScale => &self.d_log_scale,
            RotQ => &self.d_rot_q,
            Color => &self.d_color,
            LogitOpacity => &self.d_logit_opacity,
        }
    }

    pub fn group_mut(&mut self, g: crate::map::ParamGroup) -> &mut Vec<f64> {
        use crate::map::ParamGroup::*;
        match g {
            MuW => &mut self.d_mu_w,
            LogScale => &mut self.d_log_scale,
            RotQ => &mut self.d_rot_q,
            Color => &mut self.d_color,
            LogitOpacity => &mut self.d_logit_opacity,
        }
    }

    /// Accumulate the map gradients of `other` (pose gradients are per
    /// render and are not summed).
    pub fn add_map_grads(&mut self, other: &GradientBundle) {
        for g in crate::map::ParamGroup::ALL {
            for (a, b) in self.group_mut(g).iter_mut().zip(other.group(g)) {
                *a += b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        crate::map::ParamGroup::ALL.iter().all(|&g| self.group(g).iter().all(|x| x.is_finite()))
            && self.d_pose.is_finite()
    }
}

/// Which gradients to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardMode {
    pub map: bool,
    pub pose: bool,
}

impl BackwardMode {
    pub const ALL: BackwardMode = BackwardMode { map: true, pose: true };
    pub const POSE_ONLY: BackwardMode = BackwardMode { map: false, pose: true };
    pub const MAP_ONLY: BackwardMode = BackwardMode { map: true, pose: false };
}

// Per-splat image-space gradient slots.
const G_MU_X: usize = 0;
const G_MU_Y: usize = 1;
const G_CONIC_A: usize = 2;
const G_CONIC_B: usize = 3;
const G_CONIC_C: usize = 4;
const G_OPACITY: usize = 5;
const G_COLOR: usize = 6;
const G_DEPTH: usize = 9;
type Grad2D = [f64; 10];

pub fn render_backward(
    map: &GaussianMap,
    pose: &SE3Pose,
    k: &CameraIntrinsics,
    grad_color: &[[f64; 3]],
    grad_depth: &[f64],
    cfg: &RenderConfig,
) -> GradientBundle {
    render_backward_with(map, pose, k, grad_color, grad_depth, cfg, BackwardMode::ALL)
}

struct Contribution {
    slot: usize,
    alpha: f64,
    g: f64,
    t: f64,
    clamped: bool,
}

pub fn render_backward_with(
    map: &GaussianMap,
    pose: &SE3Pose,
    k: &CameraIntrinsics,
    grad_color: &[[f64; 3]],
    grad_depth: &[f64],
    cfg: &RenderConfig,
    mode: BackwardMode,
) -> GradientBundle {
    assert_eq!(grad_color.len(), k.pixel_count());
    assert_eq!(grad_depth.len(), k.pixel_count());
    let splats = project_splats(map, pose, k, cfg);
    let bins = bin_tiles(&splats, k, cfg.tile_size);

    let tile_grads: Vec<Vec<Grad2D>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|t| {
            let list = &bins.lists[t];
            let mut acc = vec![[0.0; 10]; list.len()];
            if list.is_empty() {
                return acc;
            }
            let (u0, u1, v0, v1) = bins.bounds(t, k);
            let mut contrib: Vec<Contribution> = Vec::with_capacity(list.len());
            for v in v0..v1 {
                for u in u0..u1 {
                    let pix = v * k.width + u;
                    let gc = grad_color[pix];
                    let gd = grad_depth[pix];
                    if gc == [0.0; 3] && gd == 0.0 {
                        continue;
                    }
                    let (px, py) = (u as f64, v as f64);
                    contrib.clear();
                    let mut t_acc = 1.0;
                    for (slot, &si) in list.iter().enumerate() {
                        let s = &splats[si as usize];
                        let Some((alpha, g, clamped)) = splat_alpha(s, px, py, cfg) else { continue };
                        let next_t = t_acc * (1.0 - alpha);
                        if next_t < cfg.t_stop {
                            break;
                        }
                        contrib.push(Contribution { slot, alpha, g, t: t_acc, clamped });
                        t_acc = next_t;
                    }
                    let mut suffix = 0.0;
                    for c in contrib.iter().rev() {
                        let s = &splats[list[c.slot] as usize];
                        let f = gc[0] * s.color.x + gc[1] * s.color.y + gc[2] * s.color.z + gd * s.depth_c;
                        let w = c.alpha * c.t;
                        let d_alpha = c.t * f - suffix / (1.0 - c.alpha);
                        suffix += w * f;
                        let slot = &mut acc[c.slot];
                        slot[G_COLOR] += gc[0] * w;
                        slot[G_COLOR + 1] += gc[1] * w;
                        slot[G_COLOR + 2] += gc[2] * w;
                        slot[G_DEPTH] += gd * w;
                        if c.clamped {
                            continue;
                        }
                        slot[G_OPACITY] += d_alpha * c.g;
                        let d_power = d_alpha * c.alpha;
                        let dx = px - s.mu_i.x;
                        let dy = py - s.mu_i.y;
                        let [a, b, cc] = s.conic;
                        slot[G_MU_X] += d_power * (a * dx + b * dy);
                        slot[G_MU_Y] += d_power * (b * dx + cc * dy);
                        slot[G_CONIC_A] += d_power * (-0.5 * dx * dx);
                        slot[G_CONIC_B] += d_power * (-dx * dy);
                        slot[G_CONIC_C] += d_power * (-0.5 * dy * dy);
                    }
                }
            }
            acc
        })
        .collect();

    let mut per_splat = vec![[0.0; 10]; splats.len()];
    for (list, grads) in bins.lists.iter().zip(tile_grads) {
        for (&si, g) in list.iter().zip(grads) {
            let dst = &mut per_splat[si as usize];
            for (d, x) in dst.iter_mut().zip(g) {
                *d += x;
            }
        }
    }

    let mut out = GradientBundle::zeros(map.len());
    let mut d_pose = Tangent6::zero();
    for (s, g2) in splats.iter().zip(&per_splat) {
        pull_back(s, g2, map, pose, k, mode, &mut out, &mut d_pose);
    }
    if mode.pose {
        out.d_pose = d_pose;
    }
    out
}

/// Chain image-space gradients of one splat back to its parameters and
/// the pose.
#[allow(clippy::too_many_arguments)]
fn pull_back(
    s: &Splat2D,
    g2: &Grad2D,
    map: &GaussianMap,
    pose: &SE3Pose,
    k: &CameraIntrinsics,
    mode: BackwardMode,
    out: &mut GradientBundle,
    d_pose: &mut Tangent6,
) {
    let i = s.source_index;
    let splat = &map.splats[i];
    let w_rot = pose.rotation;
    let jac: &Matrix2x3<f64> = &s.jac;
    let m = jac * w_rot;

    // Conic -> image covariance: dL/dSigma = -A G A with G the gradient on
    // the full symmetric conic matrix.
    let [a, b, c] = s.conic;
    let conic = Matrix2::new(a, b, b, c);
    let g_conic = Matrix2::new(g2[G_CONIC_A], 0.5 * g2[G_CONIC_B], 0.5 * g2[G_CONIC_B], g2[G_CONIC_C]);
    let g_cov_i = -(conic * g_conic * conic);

    let g_m = 2.0 * g_cov_i * m * s.cov_w;
    let g_jac = g_m * w_rot.transpose();

    let (x, y, z) = (s.mu_c.x, s.mu_c.y, s.mu_c.z);
    let iz2 = 1.0 / (z * z);
    let iz3 = iz2 / z;
    let g_mu_i = Vector2::new(g2[G_MU_X], g2[G_MU_Y]);
    let mut g_mu_c = jac.transpose() * g_mu_i;
    g_mu_c.z += g2[G_DEPTH];
    g_mu_c.x += g_jac[(0, 2)] * (-k.fx * iz2);
    g_mu_c.y += g_jac[(1, 2)] * (-k.fy * iz2);
    g_mu_c.z += g_jac[(0, 0)] * (-k.fx * iz2)
        + g_jac[(0, 2)] * (2.0 * k.fx * x * iz3)
        + g_jac[(1, 1)] * (-k.fy * iz2)
        + g_jac[(1, 2)] * (2.0 * k.fy * y * iz3);

    if mode.pose {
        d_pose.rho += g_mu_c;
        d_pose.phi += s.mu_c.cross(&g_mu_c);
        // Rotation inside M: W' = exp(phi) W, so dL/dphi = 2 vee(asym(G_W W^T)).
        let g_w: Matrix3<f64> = jac.transpose() * g_m;
        let xm = g_w * w_rot.transpose();
        d_pose.phi += Vector3::new(xm[(2, 1)] - xm[(1, 2)], xm[(0, 2)] - xm[(2, 0)], xm[(1, 0)] - xm[(0, 1)]);
    }

    if !mode.map {
        return;
    }
    let g_mu_w = w_rot.transpose() * g_mu_c;
    out.d_mu_w[3 * i..3 * i + 3].copy_from_slice(g_mu_w.as_slice());

    let g_cov_w: Matrix3<f64> = m.transpose() * g_cov_i * m;
    let r = splat.rotation();
    let s2 = splat.log_scale.map(|v| (2.0 * v).exp());
    for axis in 0..3 {
        let col = r.column(axis);
        out.d_log_scale[3 * i + axis] = 2.0 * s2[axis] * (col.transpose() * g_cov_w * col)[(0, 0)];
    }
    let g_r = 2.0 * g_cov_w * r * Matrix3::from_diagonal(&s2);
    let g_q = quat_matrix_backward(&splat.rot_q, &g_r);
    out.d_rot_q[4 * i..4 * i + 4].copy_from_slice(g_q.as_slice());

    out.d_color[3 * i..3 * i + 3].copy_from_slice(&g2[G_COLOR..G_COLOR + 3]);
    let o = s.opacity;
    out.d_logit_opacity[i] = g2[G_OPACITY] * o * (1.0 - o);
}
