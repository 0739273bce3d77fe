//! Joint refinement of the map and the window's keyframe poses.

use super::keyframes::{Keyframe, OptimizationWindow};
use super::loss::compute_loss;
use super::SlamConfig;
use crate::geometry::{CameraIntrinsics, Tangent6};
use crate::map::{coverage_mask, insert_from_depth, prune, GaussianMap, ParamGroup};
use crate::optim::Adam;
use crate::rasterizer::{render, render_backward_with, BackwardMode, GradientBundle};
use nalgebra::Vector6;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizeReport {
    /// Summed window loss before each step, plus one entry after the last.
    pub losses: Vec<f64>,
    pub nonfinite_steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefineReport {
    pub inserted: usize,
    pub pruned: usize,
    pub optimize: OptimizeReport,
}

fn group_lr(cfg: &SlamConfig, g: ParamGroup, scene_scale: f64) -> f64 {
    match g {
        ParamGroup::MuW => cfg.lr.mu_w * scene_scale,
        ParamGroup::LogScale => cfg.lr.log_scale,
        ParamGroup::RotQ => cfg.lr.rot_q,
        ParamGroup::Color => cfg.lr.color,
        ParamGroup::LogitOpacity => cfg.lr.logit_opacity,
    }
}

/// Run `iters` Adam steps on `sum_{kf in views} L_kf` over every splat
/// parameter and the poses of the keyframes listed in `free_poses`.
#[allow(clippy::too_many_arguments)]
pub fn optimize_window(
    map: &mut GaussianMap,
    keyframes: &mut [Keyframe],
    views: &[usize],
    free_poses: &[usize],
    k: &CameraIntrinsics,
    cfg: &SlamConfig,
    scene_scale: f64,
    iters: usize,
) -> OptimizeReport {
    let mut report = OptimizeReport::default();
    let mut adams: Vec<Adam> = ParamGroup::ALL.iter().map(|&g| Adam::new(map.group_len(g))).collect();
    let mut pose_adams: Vec<Adam> = free_poses.iter().map(|_| Adam::new(6)).collect();
    let mut lr_scale = 1.0;

    for it in 0..=iters {
        let mut total = 0.0;
        let mut grads = GradientBundle::zeros(map.len());
        let mut pose_grads = vec![Tangent6::zero(); free_poses.len()];
        for &v in views {
            let kf = &keyframes[v];
            let (loss, _) = compute_loss(map, &kf.pose, k, &kf.rgb, &kf.depth, cfg.lambda, cfg.geo_alpha_min, &cfg.render);
            total += loss.total;
            if it == iters {
                continue;
            }
            let slot = free_poses.iter().position(|&p| p == v);
            let mode = if slot.is_some() { BackwardMode::ALL } else { BackwardMode::MAP_ONLY };
            let g = render_backward_with(map, &kf.pose, k, &loss.grad_color, &loss.grad_depth, &cfg.render, mode);
            grads.add_map_grads(&g);
            if let Some(s) = slot {
                pose_grads[s] = g.d_pose;
            }
        }
        report.losses.push(total);
        if it == iters {
            break;
        }
        if !grads.is_finite() || pose_grads.iter().any(|g| !g.is_finite()) {
            report.nonfinite_steps += 1;
            lr_scale *= 0.5;
            log::warn!("non-finite gradient in mapping; learning rate scale now {lr_scale}");
            continue;
        }
        let sched = lr_scale * cfg.lr_schedule(it, iters);
        for (gi, &group) in ParamGroup::ALL.iter().enumerate() {
            let mut values = map.group_values(group);
            adams[gi].step(&mut values, grads.group(group), group_lr(cfg, group, scene_scale) * sched);
            map.set_group_values(group, &values).expect("group length is stable during refinement");
        }
        map.normalize_rotations();
        for g in &mut map.splats {
            g.color = g.color.map(|c| c.clamp(0.0, 1.0));
        }
        for ((&kf, adam), g) in free_poses.iter().zip(&mut pose_adams).zip(&pose_grads) {
            let dir = adam.direction(g.to_vector().as_slice());
            let s = sched * cfg.mapping_pose_lr_scale;
            let (lt, lr) = (cfg.lr.pose_trans * s, cfg.lr.pose_rot * s);
            let step = Vector6::new(-lt * dir[0], -lt * dir[1], -lt * dir[2], -lr * dir[3], -lr * dir[4], -lr * dir[5]);
            keyframes[kf].pose = keyframes[kf].pose.retract(&Tangent6::from_vector(&step));
        }
    }
    report
}

/// Seed splats from the newest keyframe if needed, jointly refine the map
/// and the poses of the current window (the gauge keyframe 0 and the random
/// past keyframes stay fixed), then prune on schedule.
#[allow(clippy::too_many_arguments)]
pub fn map_refine(
    map: &mut GaussianMap,
    keyframes: &mut [Keyframe],
    window: &OptimizationWindow,
    k: &CameraIntrinsics,
    cfg: &SlamConfig,
    scene_scale: f64,
    current_frame: usize,
    keyframe_count: usize,
) -> RefineReport {
    let mut report = RefineReport::default();
    if let Some(newest) = window.newest() {
        let kf = &keyframes[newest];
        if !kf.seeded {
            let covered = if map.is_empty() {
                None
            } else {
                Some(coverage_mask(&render(map, &kf.pose, k, &cfg.render), &kf.depth))
            };
            report.inserted = insert_from_depth(
                map,
                &kf.rgb,
                &kf.depth,
                &kf.pose,
                k,
                covered.as_deref(),
                &cfg.insert,
                kf.frame_index,
            );
            keyframes[newest].seeded = true;
        }
    }
    let views = window.all();
    let free: Vec<usize> = window.current.iter().copied().filter(|&i| i != 0).collect();
    report.optimize = optimize_window(map, keyframes, &views, &free, k, cfg, scene_scale, cfg.mapping_iters);
    if keyframe_count % cfg.prune_every == 0 {
        report.pruned = prune(map, current_frame, &cfg.prune);
    }
    report
}
