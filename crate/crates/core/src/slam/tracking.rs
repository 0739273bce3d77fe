//! Frame-to-map pose tracking with the map held fixed.

use super::loss::compute_loss;
use super::{SlamConfig, SlamError};
use crate::depth_filter::DepthMap;
use crate::geometry::{CameraIntrinsics, SE3Pose, Tangent6};
use crate::imaging::RgbImage;
use crate::map::GaussianMap;
use crate::optim::Adam;
use crate::rasterizer::{render_backward_with, BackwardMode, RenderOutput};
use nalgebra::Vector6;

/// Constant-velocity prediction from the most recent poses (oldest first).
pub fn predict_pose(history: &[SE3Pose]) -> SE3Pose {
    match history {
        [] => SE3Pose::identity(),
        [only] => *only,
        [.., prev, last] => {
            let velocity = last.compose(&prev.inverse());
            velocity.compose(last)
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrackResult {
    /// Pose with the lowest loss seen.
    pub pose: SE3Pose,
    pub initial_loss: f64,
    pub best_loss: f64,
    /// Loss of the last iterate.
    pub final_loss: f64,
    pub iterations: usize,
    /// Render at `pose`.
    pub render: RenderOutput,
}

/// Optimize the pose tangent alone for `cfg.tracking_iters` steps starting
/// at `init`. Fails with `TrackingDiverged` when the last iterate's loss
/// exceeds `divergence_factor` times the initial loss.
#[allow(clippy::too_many_arguments)]
pub fn track_frame(
    map: &GaussianMap,
    init: &SE3Pose,
    k: &CameraIntrinsics,
    rgb: &RgbImage,
    depth: &DepthMap,
    cfg: &SlamConfig,
    frame_index: usize,
) -> Result<TrackResult, SlamError> {
    let mut pose = *init;
    let mut adam = Adam::new(6);
    let (lr_t, lr_r) = (cfg.lr.pose_trans, cfg.lr.pose_rot);
    let mut lr_scale = 1.0;

    let mut initial_loss = f64::NAN;
    let mut best: Option<(f64, SE3Pose, RenderOutput)> = None;
    let mut last_loss = f64::NAN;
    let mut iterations = 0;
    for it in 0..=cfg.tracking_iters {
        let (loss, out) = compute_loss(map, &pose, k, rgb, depth, cfg.lambda, cfg.geo_alpha_min, &cfg.render);
        if it == 0 {
            initial_loss = loss.total;
        }
        last_loss = loss.total;
        if best.as_ref().is_none_or(|(b, _, _)| loss.total < *b) {
            best = Some((loss.total, pose, out));
        }
        if it == cfg.tracking_iters {
            break;
        }
        let grads = render_backward_with(map, &pose, k, &loss.grad_color, &loss.grad_depth, &cfg.render, BackwardMode::POSE_ONLY);
        if !grads.d_pose.is_finite() {
            lr_scale *= 0.5;
            continue;
        }
        let dir = adam.direction(grads.d_pose.to_vector().as_slice());
        let step = Vector6::new(
            -lr_t * dir[0],
            -lr_t * dir[1],
            -lr_t * dir[2],
            -lr_r * dir[3],
            -lr_r * dir[4],
            -lr_r * dir[5],
        ) * (lr_scale * cfg.lr_schedule(it, cfg.tracking_iters));
        pose = pose.retract(&Tangent6::from_vector(&step));
        iterations += 1;
    }
    let (best_loss, best_pose, render) = best.expect("at least one evaluation");
    if last_loss > cfg.divergence_factor * initial_loss + 1e-12 || !last_loss.is_finite() {
        return Err(SlamError::TrackingDiverged { frame: frame_index, initial_loss, final_loss: last_loss });
    }
    Ok(TrackResult { pose: best_pose, initial_loss, best_loss, final_loss: last_loss, iterations, render })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Tangent6;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    #[test]
    fn constant_velocity_extrapolates() {
        let a = SE3Pose::identity();
        let step = SE3Pose::exp(&Tangent6::new(Vector3::new(0.1, 0.0, 0.0), Vector3::new(0.0, 0.02, 0.0)));
        let b = step.compose(&a);
        let c = predict_pose(&[a, b]);
        let expected = step.compose(&step);
        assert_relative_eq!(c.rotation, expected.rotation, epsilon = 1e-12);
        assert_relative_eq!(c.translation, expected.translation, epsilon = 1e-12);
        assert_eq!(predict_pose(&[b]), b);
    }
}
