use crate::depth_filter::IqrConfig;
use crate::map::{InsertConfig, PruneConfig};
use crate::rasterizer::RenderConfig;
use serde::{Deserialize, Serialize};

/// Step sizes per parameter group. `mu_w` is relative to the scene scale
/// (median depth of the first keyframe).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub mu_w: f64,
    pub log_scale: f64,
    pub rot_q: f64,
    pub color: f64,
    pub logit_opacity: f64,
    pub pose_rot: f64,
    pub pose_trans: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mu_w: 1e-4,
            log_scale: 5e-3,
            rot_q: 1e-3,
            color: 2.5e-3,
            logit_opacity: 5e-2,
            pose_rot: 1e-3,
            pose_trans: 3e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlamConfig {
    /// Photometric weight in `lambda E_pho + (1 - lambda) E_geo`.
    pub lambda: f64,
    pub window_size: usize,
    pub covisibility_threshold: f64,
    pub baseline_ratio_threshold: f64,
    pub tracking_iters: usize,
    pub mapping_iters: usize,
    pub init_iters: usize,
    /// Tracking fails when the final loss exceeds this multiple of the
    /// initial loss.
    pub divergence_factor: f64,
    /// Prune after every this many keyframes.
    pub prune_every: usize,
    /// Past keyframes drawn at random into each mapping window.
    pub random_past: usize,
    /// Rendered opacity required before a pixel enters the geometric loss.
    pub geo_alpha_min: f64,
    pub rng_seed: u64,
    pub lr: LearningRates,
    pub render: RenderConfig,
    pub insert: InsertConfig,
    pub prune: PruneConfig,
    pub iqr: IqrConfig,
    /// Skip the depth filter entirely (ablation).
    pub filter_depth: bool,
    /// Step sizes decay exponentially within each tracking or mapping call,
    /// reaching this fraction of their initial value on the last step.
    pub lr_decay: f64,
    /// Multiplier on the pose step sizes during mapping. Tracking always
    /// uses the full pose rates.
    pub mapping_pose_lr_scale: f64,
}

impl Default for SlamConfig {
    fn default() -> Self {
        Self {
            lambda: 0.9,
            window_size: 8,
            covisibility_threshold: 0.9,
            baseline_ratio_threshold: 0.08,
            tracking_iters: 60,
            mapping_iters: 100,
            init_iters: 300,
            divergence_factor: 2.0,
            prune_every: 1,
            random_past: 2,
            geo_alpha_min: 0.5,
            rng_seed: 0,
            lr: LearningRates::default(),
            render: RenderConfig::default(),
            insert: InsertConfig::default(),
            prune: PruneConfig::default(),
            iqr: IqrConfig::default(),
            filter_depth: true,
            lr_decay: 1.0,
            mapping_pose_lr_scale: 1.0,
        }
    }
}

impl SlamConfig {
    /// Step-size multiplier for step `it` of `iters`.
    pub fn lr_schedule(&self, it: usize, iters: usize) -> f64 {
        if iters <= 1 {
            1.0
        } else {
            self.lr_decay.powf(it as f64 / (iters - 1) as f64)
        }
    }

    /// Range checks. Returns the offending field name and a reason.
    pub fn validate(&self) -> Result<(), (&'static str, &'static str)> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.lambda) {
            return Err(("lambda", "must be in [0, 1]"));
        }
        if self.window_size == 0 {
            return Err(("window_size", "must be at least 1"));
        }
        if !unit(self.covisibility_threshold) {
            return Err(("covisibility_threshold", "must be in [0, 1]"));
        }
        if !(self.baseline_ratio_threshold > 0.0) {
            return Err(("baseline_ratio_threshold", "must be positive"));
        }
        if !(self.divergence_factor >= 1.0) {
            return Err(("divergence_factor", "must be at least 1"));
        }
        if self.prune_every == 0 {
            return Err(("prune_every", "must be at least 1"));
        }
        if !unit(self.geo_alpha_min) {
            return Err(("geo_alpha_min", "must be in [0, 1]"));
        }
        if self.insert.stride == 0 {
            return Err(("insert_stride", "must be at least 1"));
        }
        if !unit(self.insert.gradient_percentile) {
            return Err(("insert_gradient_percentile", "must be in [0, 1]"));
        }
        if self.iqr.window == 0 {
            return Err(("iqr_window", "must be at least 1"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(("lr_decay", "must be in (0, 1]"));
        }
        if !(self.mapping_pose_lr_scale >= 0.0 && self.mapping_pose_lr_scale.is_finite()) {
            return Err(("mapping_pose_lr_scale", "must be a finite non-negative number"));
        }
        if !(self.iqr.k >= 0.0) {
            return Err(("iqr_k", "must be non-negative"));
        }
        if !(self.render.z_min > 0.0) {
            return Err(("z_min", "must be positive"));
        }
        if !(self.render.alpha_max > 0.0 && self.render.alpha_max < 1.0) {
            return Err(("alpha_max", "must be in (0, 1)"));
        }
        let lr = &self.lr;
        for (name, v) in [
            ("lr_mu_w", lr.mu_w),
            ("lr_log_scale", lr.log_scale),
            ("lr_rot_q", lr.rot_q),
            ("lr_color", lr.color),
            ("lr_logit_opacity", lr.logit_opacity),
            ("lr_pose_rot", lr.pose_rot),
            ("lr_pose_trans", lr.pose_trans),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err((name, "must be a finite non-negative number"));
            }
        }
        Ok(())
    }
}
