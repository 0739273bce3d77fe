//! Photometric + geometric L1 loss and its upstream gradients.

use crate::depth_filter::DepthMap;
use crate::geometry::{CameraIntrinsics, SE3Pose};
use crate::imaging::RgbImage;
use crate::map::GaussianMap;
use crate::rasterizer::{render, RenderConfig, RenderOutput};

#[derive(Debug, Clone)]
pub struct LossReport {
    pub total: f64,
    /// Mean absolute color error over all pixels and channels.
    pub e_pho: f64,
    /// Mean absolute depth error over the geometric mask.
    pub e_geo: f64,
    /// Pixels in the geometric mask (valid depth and enough rendered opacity).
    pub geo_pixels: usize,
    /// The geometric mask was empty; `e_geo` is 0 and contributes nothing.
    pub no_valid_pixels: bool,
    /// dL/dC per pixel.
    pub grad_color: Vec<[f64; 3]>,
    /// dL/dD per pixel.
    pub grad_depth: Vec<f64>,
}

/// Residuals this small are treated as exact matches. The L1 subgradient at
/// zero is any value in [-1, 1]; picking 0 keeps roundoff-level residuals
/// from producing full-size steps at an optimum.
pub const L1_DEADBAND: f64 = 1e-9;

#[inline]
fn sign(x: f64) -> f64 {
    if x > L1_DEADBAND {
        1.0
    } else if x < -L1_DEADBAND {
        -1.0
    } else {
        0.0
    }
}

/// Loss of an existing render against an observed frame. Pixels whose depth
/// is invalid are never read.
pub fn loss_from_render(
    render: &RenderOutput,
    rgb: &RgbImage,
    depth: &DepthMap,
    lambda: f64,
    geo_alpha_min: f64,
) -> LossReport {
    let n = render.width * render.height;
    assert_eq!(rgb.data.len(), n, "rgb size differs from render");
    assert_eq!(depth.valid.len(), n, "depth size differs from render");

    let color_norm = 1.0 / (3 * n).max(1) as f64;
    let mut e_pho = 0.0;
    let mut grad_color = vec![[0.0; 3]; n];
    for ((g, r), c) in grad_color.iter_mut().zip(&render.color.data).zip(&rgb.data) {
        for ch in 0..3 {
            let diff = r[ch] - c[ch];
            e_pho += diff.abs();
            g[ch] = lambda * sign(diff) * color_norm;
        }
    }
    e_pho *= color_norm;

    let mask: Vec<usize> = (0..n).filter(|&i| depth.valid[i] && render.alpha[i] > geo_alpha_min).collect();
    let mut grad_depth = vec![0.0; n];
    let mut e_geo = 0.0;
    if !mask.is_empty() {
        let norm = 1.0 / mask.len() as f64;
        for &i in &mask {
            let diff = render.depth[i] - depth.values[i];
            e_geo += diff.abs();
            grad_depth[i] = (1.0 - lambda) * sign(diff) * norm;
        }
        e_geo *= norm;
    }
    LossReport {
        total: lambda * e_pho + (1.0 - lambda) * e_geo,
        e_pho,
        e_geo,
        geo_pixels: mask.len(),
        no_valid_pixels: mask.is_empty(),
        grad_color,
        grad_depth,
    }
}

/// Render `map` at `pose` and score it against the frame.
#[allow(clippy::too_many_arguments)]
pub fn compute_loss(
    map: &GaussianMap,
    pose: &SE3Pose,
    k: &CameraIntrinsics,
    rgb: &RgbImage,
    depth: &DepthMap,
    lambda: f64,
    geo_alpha_min: f64,
    cfg: &RenderConfig,
) -> (LossReport, RenderOutput) {
    let out = render(map, pose, k, cfg);
    let report = loss_from_render(&out, rgb, depth, lambda, geo_alpha_min);
    (report, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_render(w: usize, h: usize, color: [f64; 3], depth: f64, alpha: f64) -> RenderOutput {
        RenderOutput {
            width: w,
            height: h,
            color: RgbImage::filled(w, h, color),
            depth: vec![depth; w * h],
            alpha: vec![alpha; w * h],
            visibility: Vec::new(),
            generation: 0,
        }
    }

    #[test]
    fn perfect_match_is_zero() {
        let r = fake_render(4, 4, [0.3; 3], 2.0, 1.0);
        let l = loss_from_render(&r, &RgbImage::filled(4, 4, [0.3; 3]), &DepthMap::from_values(4, 4, vec![2.0; 16]), 0.9, 0.5);
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn closed_form_weighting() {
        let r = fake_render(4, 4, [0.4; 3], 2.2, 1.0);
        let l = loss_from_render(&r, &RgbImage::filled(4, 4, [0.3; 3]), &DepthMap::from_values(4, 4, vec![2.0; 16]), 0.9, 0.5);
        assert!((l.e_pho - 0.1).abs() < 1e-12);
        assert!((l.e_geo - 0.2).abs() < 1e-12);
        assert!((l.total - 0.11).abs() < 1e-12);
        let l1 = loss_from_render(&r, &RgbImage::filled(4, 4, [0.3; 3]), &DepthMap::from_values(4, 4, vec![9.0; 16]), 1.0, 0.5);
        assert_eq!(l1.total, l1.e_pho);
    }

    #[test]
    fn low_alpha_excludes_geometry() {
        let r = fake_render(2, 2, [0.0; 3], 1.0, 0.4);
        let l = loss_from_render(&r, &RgbImage::new(2, 2), &DepthMap::from_values(2, 2, vec![3.0; 4]), 0.5, 0.5);
        assert!(l.no_valid_pixels);
        assert_eq!(l.e_geo, 0.0);
        assert!(l.grad_depth.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn invalid_depth_values_are_never_read() {
        let r = fake_render(2, 2, [0.0; 3], 1.0, 1.0);
        let mut d = DepthMap::from_values(2, 2, vec![1.5; 4]);
        d.valid[1] = false;
        let a = loss_from_render(&r, &RgbImage::new(2, 2), &d, 0.5, 0.5);
        d.values[1] = f64::NAN;
        let b = loss_from_render(&r, &RgbImage::new(2, 2), &d, 0.5, 0.5);
        assert_eq!(a.e_geo, b.e_geo);
        assert_eq!(a.geo_pixels, 3);
    }
}
