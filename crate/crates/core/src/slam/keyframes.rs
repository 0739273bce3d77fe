//! Keyframe selection and the optimization window.

use super::SlamConfig;
use crate::depth_filter::DepthMap;
use crate::geometry::{CameraIntrinsics, SE3Pose};
use crate::imaging::RgbImage;
use crate::map::GaussianMap;
use crate::rasterizer::{covisibility_from_visibility, render};
use rand::seq::index::sample;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Keyframe {
    pub frame_index: usize,
    pub timestamp: f64,
    pub pose: SE3Pose,
    pub rgb: RgbImage,
    /// Filtered depth.
    pub depth: DepthMap,
    pub median_depth: f64,
    /// Whether splats have been seeded from this keyframe yet.
    pub seeded: bool,
}

impl Keyframe {
    pub fn new(frame_index: usize, timestamp: f64, pose: SE3Pose, rgb: RgbImage, depth: DepthMap) -> Self {
        let median_depth = depth.median().unwrap_or(1.0);
        Self { frame_index, timestamp, pose, rgb, depth, median_depth, seeded: false }
    }
}

/// Indices into the keyframe list: the sliding window `current` (oldest
/// first) and the random draw of older keyframes `random_past`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizationWindow {
    pub current: Vec<usize>,
    pub random_past: Vec<usize>,
}

impl OptimizationWindow {
    /// Append a keyframe, evicting the oldest when the window is full.
    pub fn push(&mut self, kf: usize, window_size: usize) {
        self.current.push(kf);
        while self.current.len() > window_size {
            self.current.remove(0);
        }
        self.random_past.retain(|i| !self.current.contains(i));
    }

    /// Draw up to `count` keyframes from those not in the current window.
    pub fn resample_past<R: Rng>(&mut self, n_keyframes: usize, count: usize, rng: &mut R) {
        let pool: Vec<usize> = (0..n_keyframes).filter(|i| !self.current.contains(i)).collect();
        let take = count.min(pool.len());
        let mut picked: Vec<usize> = sample(rng, pool.len(), take).into_iter().map(|j| pool[j]).collect();
        picked.sort_unstable();
        self.random_past = picked;
    }

    /// `W_r` followed by `W_k`, without duplicates.
    pub fn all(&self) -> Vec<usize> {
        let mut v = self.random_past.clone();
        for &i in &self.current {
            if !v.contains(&i) {
                v.push(i);
            }
        }
        v
    }

    pub fn newest(&self) -> Option<usize> {
        self.current.last().copied()
    }
}

/// The keyframe rule: low covisibility or a baseline that is large
/// relative to the scene depth.
pub fn keyframe_rule(covisibility: f64, baseline: f64, median_depth: f64, cfg: &SlamConfig) -> bool {
    covisibility < cfg.covisibility_threshold || baseline / median_depth > cfg.baseline_ratio_threshold
}

/// Decide whether `candidate` becomes a keyframe relative to the newest one
/// in the window. When it does, it is appended to `keyframes` and the
/// window. The first keyframe is always accepted.
pub fn maybe_insert_keyframe(
    window: &mut OptimizationWindow,
    keyframes: &mut Vec<Keyframe>,
    map: &GaussianMap,
    candidate: Keyframe,
    candidate_visibility: Option<&[f64]>,
    k: &CameraIntrinsics,
    cfg: &SlamConfig,
) -> bool {
    let accept = match window.newest() {
        None => true,
        Some(last) => {
            let last = &keyframes[last];
            let vis_last = render(map, &last.pose, k, &cfg.render).visibility;
            let vis_cand = match candidate_visibility {
                Some(v) => v.to_vec(),
                None => render(map, &candidate.pose, k, &cfg.render).visibility,
            };
            let covis = covisibility_from_visibility(&vis_last, &vis_cand, cfg.render.visibility_eps);
            let baseline = (candidate.pose.camera_center() - last.pose.camera_center()).norm();
            keyframe_rule(covis, baseline, last.median_depth, cfg)
        }
    };
    if accept {
        keyframes.push(candidate);
        window.push(keyframes.len() - 1, cfg.window_size);
    }
    accept
}
