//! Differentiable splat rasterizer.
//!
//! Forward: every splat is projected to a 2D Gaussian (`mu_I = pi(T mu_W)`,
//! `Sigma_I = J R Sigma_W (J R)^T + floor I`), splats are sorted front to
//! back by camera depth (ties broken by id), and each pixel alpha-blends
//!
//! ```text
//! alpha_i = min(o_i exp(-1/2 d^T Sigma_I^-1 d), alpha_max),  d = p - mu_I
//! C(p) = sum_i alpha_i T_i c_i,   D(p) = sum_i alpha_i T_i z_i,
//! T_i  = prod_{j<i} (1 - alpha_j)
//! ```
//!
//! Kernel values below `alpha_min` are treated as exactly zero; this gives
//! each splat a finite support, which is what makes tiling exact. The
//! backward pass in [`backward`] returns analytic gradients for every splat
//! parameter group and the camera pose.

mod backward;

pub use backward::{render_backward, render_backward_with, BackwardMode, GradientBundle};

use crate::geometry::{CameraIntrinsics, SE3Pose};
use crate::imaging::RgbImage;
use crate::map::{GaussianMap, GaussianSplat, SplatId};
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub z_min: f64,
    /// Added to the diagonal of every image-space covariance (px^2).
    pub cov_floor: f64,
    pub alpha_max: f64,
    /// Kernel values below this are dropped.
    pub alpha_min: f64,
    /// Per-pixel early termination once transmittance would fall below
    /// this. Zero disables it.
    pub t_stop: f64,
    /// Blending weight above which a splat counts as observed.
    pub visibility_eps: f64,
    pub tile_size: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            z_min: crate::geometry::DEFAULT_Z_MIN,
            cov_floor: 0.3,
            alpha_max: 0.999,
            alpha_min: 1.0 / 255.0,
            t_stop: 1e-4,
            visibility_eps: 0.01,
            tile_size: 16,
        }
    }
}

impl RenderConfig {
    /// Settings for oracle comparisons: no early termination.
    pub fn oracle() -> Self {
        Self { t_stop: 0.0, ..Self::default() }
    }
}

/// A splat projected into the image.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub mu_i: Vector2<f64>,
    pub cov_i: Matrix2<f64>,
    pub depth_c: f64,
    pub color: Vector3<f64>,
    pub opacity: f64,
    pub source_id: SplatId,
    /// Index of the source splat in the map at projection time.
    pub source_index: usize,
    /// Conic `Sigma_I^-1` as `(a, b, c)` with `[[a, b], [b, c]]`.
    pub(crate) conic: [f64; 3],
    /// Radius of the support disc in pixels.
    pub(crate) radius: f64,
    pub(crate) mu_c: Vector3<f64>,
    pub(crate) jac: Matrix2x3<f64>,
    pub(crate) cov_w: Matrix3<f64>,
}

/// Project one splat. Returns `None` when it is behind the near plane or its
/// support lies entirely outside the image.
pub fn splat_project(
    g: &GaussianSplat,
    index: usize,
    pose: &SE3Pose,
    k: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> Option<Splat2D> {
    let mu_c = pose.transform(&g.mu_w);
    let mu_i = k.project(&mu_c, cfg.z_min).ok()?;
    let jac = k.projection_jacobian(&mu_c, cfg.z_min).ok()?;
    let cov_w = g.covariance();
    let m = jac * pose.rotation;
    let cov_i = m * cov_w * m.transpose() + Matrix2::identity() * cfg.cov_floor;
    let (a, b, c) = (cov_i[(0, 0)], 0.5 * (cov_i[(0, 1)] + cov_i[(1, 0)]), cov_i[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) || !mu_i.iter().all(|x| x.is_finite()) {
        return None;
    }
    let conic = [c / det, -b / det, a / det];
    let opacity = g.opacity();
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let support = if opacity > cfg.alpha_min {
        (2.0 * lambda_max * (opacity / cfg.alpha_min).ln()).sqrt()
    } else {
        return None;
    };
    let radius = support.max(3.0 * lambda_max.sqrt());
    let (w, h) = (k.width as f64, k.height as f64);
    if mu_i.x + radius < 0.0 || mu_i.x - radius > w - 1.0 || mu_i.y + radius < 0.0 || mu_i.y - radius > h - 1.0 {
        return None;
    }
    Some(Splat2D {
        mu_i,
        cov_i: Matrix2::new(a, b, b, c),
        depth_c: mu_c.z,
        color: g.color,
        opacity,
        source_id: g.id,
        source_index: index,
        conic,
        radius: support,
        mu_c,
        jac,
        cov_w,
    })
}

/// Project every splat and sort front to back (depth, then id).
pub fn project_splats(
    map: &GaussianMap,
    pose: &SE3Pose,
    k: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> Vec<Splat2D> {
    let mut out: Vec<Splat2D> = map
        .splats
        .iter()
        .enumerate()
        .filter_map(|(i, g)| splat_project(g, i, pose, k, cfg))
        .collect();
    out.sort_by(|a, b| a.depth_c.total_cmp(&b.depth_c).then(a.source_id.cmp(&b.source_id)));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub color: RgbImage,
    pub depth: Vec<f64>,
    /// Accumulated opacity `1 - T_final`.
    pub alpha: Vec<f64>,
    /// Per-splat maximum blending weight, aligned with `map.splats`.
    pub visibility: Vec<f64>,
    /// Map generation this was rendered from.
    pub generation: u64,
}

impl RenderOutput {
    fn empty(k: &CameraIntrinsics, n_splats: usize, generation: u64) -> Self {
        let n = k.pixel_count();
        Self {
            width: k.width,
            height: k.height,
            color: RgbImage::new(k.width, k.height),
            depth: vec![0.0; n],
            alpha: vec![0.0; n],
            visibility: vec![0.0; n_splats],
            generation,
        }
    }

    /// Ids of splats whose visibility exceeds `eps`.
    pub fn visible_set(&self, map: &GaussianMap, eps: f64) -> Vec<SplatId> {
        self.visibility
            .iter()
            .zip(&map.splats)
            .filter(|(&w, _)| w > eps)
            .map(|(_, g)| g.id)
            .collect()
    }
}

/// Kernel value at pixel `(px, py)`: `Some((alpha, g, clamped))` when it is
/// above the support cutoff.
#[inline]
pub(crate) fn splat_alpha(s: &Splat2D, px: f64, py: f64, cfg: &RenderConfig) -> Option<(f64, f64, bool)> {
    let dx = px - s.mu_i.x;
    let dy = py - s.mu_i.y;
    let [a, b, c] = s.conic;
    let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
    let g = power.exp();
    let raw = s.opacity * g;
    if !(raw >= cfg.alpha_min) {
        return None;
    }
    if raw > cfg.alpha_max {
        Some((cfg.alpha_max, g, true))
    } else {
        Some((raw, g, false))
    }
}

/// Per-tile splat lists (indices into the sorted projection), preserving
/// front-to-back order.
pub(crate) struct TileBins {
    pub tiles_x: usize,
    pub tile: usize,
    pub lists: Vec<Vec<u32>>,
}

pub(crate) fn bin_tiles(splats: &[Splat2D], k: &CameraIntrinsics, tile: usize) -> TileBins {
    let tile = tile.max(1);
    let tiles_x = k.width.div_ceil(tile);
    let tiles_y = k.height.div_ceil(tile);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    let (wmax, hmax) = (k.width as f64 - 1.0, k.height as f64 - 1.0);
    for (i, s) in splats.iter().enumerate() {
        // A small margin keeps the box conservative against rounding.
        let r = s.radius + 1e-6;
        let u0 = (s.mu_i.x - r).ceil().clamp(0.0, wmax) as usize;
        let u1 = (s.mu_i.x + r).floor().clamp(0.0, wmax) as usize;
        let v0 = (s.mu_i.y - r).ceil().clamp(0.0, hmax) as usize;
        let v1 = (s.mu_i.y + r).floor().clamp(0.0, hmax) as usize;
        if s.mu_i.x + r < 0.0 || s.mu_i.x - r > wmax || s.mu_i.y + r < 0.0 || s.mu_i.y - r > hmax {
            continue;
        }
        for ty in v0 / tile..=v1 / tile {
            for tx in u0 / tile..=u1 / tile {
                lists[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    TileBins { tiles_x, tile, lists }
}

impl TileBins {
    pub fn bounds(&self, t: usize, k: &CameraIntrinsics) -> (usize, usize, usize, usize) {
        let (tx, ty) = (t % self.tiles_x, t / self.tiles_x);
        let u0 = tx * self.tile;
        let v0 = ty * self.tile;
        (u0, (u0 + self.tile).min(k.width), v0, (v0 + self.tile).min(k.height))
    }
}

struct TileForward {
    pixels: Vec<(usize, [f64; 3], f64, f64)>,
    vis: Vec<(usize, f64)>,
}

/// Render color, depth and accumulated opacity.
pub fn render(map: &GaussianMap, pose: &SE3Pose, k: &CameraIntrinsics, cfg: &RenderConfig) -> RenderOutput {
    let splats = project_splats(map, pose, k, cfg);
    let bins = bin_tiles(&splats, k, cfg.tile_size);
    let mut out = RenderOutput::empty(k, map.len(), map.generation());

    let tiles: Vec<TileForward> = (0..bins.lists.len())
        .into_par_iter()
        .map(|t| {
            let list = &bins.lists[t];
            let (u0, u1, v0, v1) = bins.bounds(t, k);
            let mut vis = vec![0.0f64; list.len()];
            let mut pixels = Vec::with_capacity((u1 - u0) * (v1 - v0));
            for v in v0..v1 {
                for u in u0..u1 {
                    let (px, py) = (u as f64, v as f64);
                    let mut t_acc = 1.0;
                    let mut c = [0.0; 3];
                    let mut d = 0.0;
                    for (slot, &si) in list.iter().enumerate() {
                        let s = &splats[si as usize];
                        let Some((alpha, _, _)) = splat_alpha(s, px, py, cfg) else { continue };
                        let next_t = t_acc * (1.0 - alpha);
                        if next_t < cfg.t_stop {
                            break;
                        }
                        let w = alpha * t_acc;
                        c[0] += w * s.color.x;
                        c[1] += w * s.color.y;
                        c[2] += w * s.color.z;
                        d += w * s.depth_c;
                        if w > vis[slot] {
                            vis[slot] = w;
                        }
                        t_acc = next_t;
                    }
                    pixels.push((v * k.width + u, c, d, 1.0 - t_acc));
                }
            }
            let vis = list.iter().zip(vis).map(|(&si, w)| (splats[si as usize].source_index, w)).collect();
            TileForward { pixels, vis }
        })
        .collect();

    for tile in tiles {
        for (i, c, d, a) in tile.pixels {
            out.color.data[i] = c;
            out.depth[i] = d;
            out.alpha[i] = a;
        }
        for (i, w) in tile.vis {
            if w > out.visibility[i] {
                out.visibility[i] = w;
            }
        }
    }
    out
}

/// Contributions of every splat at one pixel, in blending order.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTrace {
    /// `(source_index, alpha_i, T_i)`.
    pub contributions: Vec<(usize, f64, f64)>,
    pub final_transmittance: f64,
    pub color: [f64; 3],
    pub depth: f64,
}

/// Literal per-pixel evaluator: loops over all projected splats with an
/// explicit 2x2 inverse and no tiling. Used as the test oracle for
/// [`render`].
pub fn trace_pixel_reference(splats: &[Splat2D], px: f64, py: f64, cfg: &RenderConfig) -> PixelTrace {
    let mut tr = PixelTrace { contributions: Vec::new(), final_transmittance: 1.0, color: [0.0; 3], depth: 0.0 };
    for s in splats {
        let Some(inv) = s.cov_i.try_inverse() else { continue };
        let d = Vector2::new(px, py) - s.mu_i;
        let q = (d.transpose() * inv * d)[(0, 0)];
        let raw = s.opacity * (-0.5 * q).exp();
        if raw < cfg.alpha_min {
            continue;
        }
        let alpha = raw.min(cfg.alpha_max);
        let t = tr.final_transmittance;
        if t * (1.0 - alpha) < cfg.t_stop {
            break;
        }
        for ch in 0..3 {
            tr.color[ch] += s.color[ch] * alpha * t;
        }
        tr.depth += s.depth_c * alpha * t;
        tr.contributions.push((s.source_index, alpha, t));
        tr.final_transmittance = t * (1.0 - alpha);
    }
    tr
}

/// Untiled reference render built from [`trace_pixel_reference`].
pub fn render_reference(
    map: &GaussianMap,
    pose: &SE3Pose,
    k: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> RenderOutput {
    let splats = project_splats(map, pose, k, cfg);
    let mut out = RenderOutput::empty(k, map.len(), map.generation());
    for v in 0..k.height {
        for u in 0..k.width {
            let tr = trace_pixel_reference(&splats, u as f64, v as f64, cfg);
            let i = v * k.width + u;
            out.color.data[i] = tr.color;
            out.depth[i] = tr.depth;
            out.alpha[i] = 1.0 - tr.final_transmittance;
            for &(si, a, t) in &tr.contributions {
                out.visibility[si] = out.visibility[si].max(a * t);
            }
        }
    }
    out
}

/// Intersection over union of two visibility vectors (aligned with the same
/// map). Two empty sets are fully covisible.
pub fn covisibility_from_visibility(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (va, vb) = (x > eps, y > eps);
        inter += (va && vb) as usize;
        union += (va || vb) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Covisibility of two poses over the splats they observe.
pub fn covisibility(
    map: &GaussianMap,
    pose_a: &SE3Pose,
    pose_b: &SE3Pose,
    k: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> f64 {
    let a = render(map, pose_a, k, cfg);
    let b = render(map, pose_b, k, cfg);
    covisibility_from_visibility(&a.visibility, &b.visibility, cfg.visibility_eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn k64() -> CameraIntrinsics {
        CameraIntrinsics::new(64.0, 64.0, 32.0, 32.0, 64, 64).unwrap()
    }

    fn splat(mu: [f64; 3], scale: f64, color: [f64; 3], opacity: f64) -> GaussianSplat {
        GaussianSplat::isotropic(Vector3::from(mu), scale, Vector3::from(color), opacity)
    }

    #[test]
    fn on_axis_projection() {
        let k = k64();
        let g = splat([0.0, 0.0, 1.0], 0.05, [1.0; 3], 0.5);
        let s = splat_project(&g, 0, &SE3Pose::identity(), &k, &RenderConfig::default()).unwrap();
        assert_eq!(s.mu_i, Vector2::new(32.0, 32.0));
        // (fx sigma / z)^2 + floor
        let expected = (64.0 * 0.05f64 / 1.0).powi(2) + 0.3;
        assert_relative_eq!(s.cov_i[(0, 0)], expected, epsilon = 1e-12);
        assert_relative_eq!(s.cov_i[(1, 1)], expected, epsilon = 1e-12);
        assert_relative_eq!(s.cov_i[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn behind_camera_is_culled() {
        let g = splat([0.0, 0.0, -1.0], 0.05, [1.0; 3], 0.5);
        assert!(splat_project(&g, 0, &SE3Pose::identity(), &k64(), &RenderConfig::default()).is_none());
    }

    #[test]
    fn far_off_screen_is_culled() {
        let g = splat([50.0, 0.0, 1.0], 0.05, [1.0; 3], 0.5);
        assert!(splat_project(&g, 0, &SE3Pose::identity(), &k64(), &RenderConfig::default()).is_none());
    }

    #[test]
    fn single_splat_saturates_at_center() {
        let mut map = GaussianMap::new();
        let mut g = splat([0.0, 0.0, 2.0], 0.1, [0.2, 0.4, 0.8], 0.5);
        g.logit_opacity = 20.0;
        map.push(g);
        let out = render(&map, &SE3Pose::identity(), &k64(), &RenderConfig::default());
        let c = out.color.get(32, 32);
        assert_relative_eq!(c[0], 0.999 * 0.2, epsilon = 1e-12);
        assert_relative_eq!(c[2], 0.999 * 0.8, epsilon = 1e-12);
        assert_relative_eq!(out.depth[32 * 64 + 32], 0.999 * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn two_half_alpha_splats() {
        // Tiny footprints so the kernel is ~1 at the center pixel.
        let mut map = GaussianMap::new();
        let mut near = splat([0.0, 0.0, 1.0], 1e-6, [1.0, 0.0, 0.0], 0.5);
        let mut far = splat([0.0, 0.0, 2.0], 1e-6, [0.0, 1.0, 0.0], 0.5);
        near.logit_opacity = 0.0;
        far.logit_opacity = 0.0;
        map.push(far);
        map.push(near);
        let cfg = RenderConfig { cov_floor: 1e-9, ..RenderConfig::default() };
        let out = render(&map, &SE3Pose::identity(), &k64(), &cfg);
        let c = out.color.get(32, 32);
        assert_relative_eq!(c[0], 0.5, epsilon = 1e-9);
        assert_relative_eq!(c[1], 0.25, epsilon = 1e-9);
    }

    #[test]
    fn empty_map_renders_background() {
        let out = render(&GaussianMap::new(), &SE3Pose::identity(), &k64(), &RenderConfig::default());
        assert!(out.alpha.iter().all(|&a| a == 0.0));
        assert!(out.depth.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn covisibility_edge_cases() {
        assert_eq!(covisibility_from_visibility(&[], &[], 0.01), 1.0);
        assert_eq!(covisibility_from_visibility(&[0.5, 0.0], &[0.0, 0.5], 0.01), 0.0);
        assert_eq!(covisibility_from_visibility(&[0.5, 0.5], &[0.5, 0.0], 0.01), 0.5);
    }
}
