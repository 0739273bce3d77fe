//! The tracking and mapping loop.
//!
//! Per frame: filter the depth prior, track the pose against the frozen
//! map, decide whether the frame becomes a keyframe, and on insertion seed
//! new splats and jointly refine the map with the window's poses.

mod config;
mod keyframes;
mod loss;
mod mapping;
mod tracking;

pub use config::{LearningRates, SlamConfig};
pub use keyframes::{keyframe_rule, maybe_insert_keyframe, Keyframe, OptimizationWindow};
pub use loss::{compute_loss, loss_from_render, LossReport, L1_DEADBAND};
pub use mapping::{map_refine, optimize_window, OptimizeReport, RefineReport};
pub use tracking::{predict_pose, track_frame, TrackResult};

use crate::depth_filter::{iqr_filter, DepthMap};
use crate::geometry::{CameraIntrinsics, SE3Pose};
use crate::imaging::RgbImage;
use crate::map::{insert_from_depth, GaussianMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SlamError {
    #[error("depth map has no valid pixels")]
    EmptyDepth,
    #[error("geometric loss mask is empty")]
    NoValidPixels,
    #[error("tracking diverged at frame {frame}: loss {initial_loss:.6} -> {final_loss:.6}")]
    TrackingDiverged { frame: usize, initial_loss: f64, final_loss: f64 },
    #[error("frame {frame}: {message}")]
    Source { frame: usize, message: String },
    #[error("frame {frame} is {got:?}, expected {expected:?}")]
    FrameSize { frame: usize, expected: (usize, usize), got: (usize, usize) },
}

/// One input frame: RGB and the raw (unfiltered) depth prior.
#[derive(Debug, Clone)]
pub struct Frame {
    pub timestamp: f64,
    pub rgb: RgbImage,
    pub depth: DepthMap,
}

/// Random-access sequence of frames.
pub trait FrameSource {
    fn intrinsics(&self) -> CameraIntrinsics;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn frame(&self, index: usize) -> Result<Frame, String>;
}

/// Frames held in memory.
#[derive(Debug, Clone)]
pub struct InMemorySequence {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<Frame>,
}

impl FrameSource for InMemorySequence {
    fn intrinsics(&self) -> CameraIntrinsics {
        self.intrinsics
    }
    fn len(&self) -> usize {
        self.frames.len()
    }
    fn frame(&self, index: usize) -> Result<Frame, String> {
        self.frames.get(index).cloned().ok_or_else(|| format!("no frame {index}"))
    }
}

/// Seed the map from the first frame and fit it with the pose fixed.
/// The pose is `initial_pose`, or the identity when none is known.
pub fn initialize(
    rgb: &RgbImage,
    depth: &DepthMap,
    k: &CameraIntrinsics,
    initial_pose: Option<SE3Pose>,
    cfg: &SlamConfig,
) -> Result<(GaussianMap, SE3Pose, OptimizeReport), SlamError> {
    if depth.valid_count() == 0 {
        return Err(SlamError::EmptyDepth);
    }
    let pose = initial_pose.unwrap_or_else(SE3Pose::identity);
    let mut map = GaussianMap::new();
    insert_from_depth(&mut map, rgb, depth, &pose, k, None, &cfg.insert, 0);
    let mut kf = [Keyframe::new(0, 0.0, pose, rgb.clone(), depth.clone())];
    let scale = kf[0].median_depth;
    let report = optimize_window(&mut map, &mut kf, &[0], &[], k, cfg, scale, cfg.init_iters);
    Ok((map, pose, report))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FrameDiagnostics {
    pub frame: usize,
    pub timestamp: f64,
    pub keyframe: bool,
    pub track_initial_loss: f64,
    pub track_best_loss: f64,
    pub depth_valid_fraction: f64,
    pub splats: usize,
    pub inserted: usize,
    pub pruned: usize,
    pub nonfinite_steps: usize,
    pub geo_mask_empty: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// `(timestamp, T_CW)` per processed frame.
    pub trajectory: Vec<(f64, SE3Pose)>,
    /// Frame indices of the keyframes.
    pub keyframe_frames: Vec<usize>,
    pub keyframes: Vec<Keyframe>,
    pub map: GaussianMap,
    pub diagnostics: Vec<FrameDiagnostics>,
    /// Set when the run stopped early; outputs cover frames before it.
    pub halted: Option<SlamError>,
}

/// Incremental SLAM state.
pub struct Slam {
    pub cfg: SlamConfig,
    pub k: CameraIntrinsics,
    pub map: GaussianMap,
    pub keyframes: Vec<Keyframe>,
    pub window: OptimizationWindow,
    /// Latest estimate per frame. Keyframe entries follow mapping updates.
    pub poses: Vec<(f64, SE3Pose)>,
    pub diagnostics: Vec<FrameDiagnostics>,
    initial_pose: Option<SE3Pose>,
    scene_scale: f64,
    rng: ChaCha8Rng,
}

impl Slam {
    pub fn new(k: CameraIntrinsics, cfg: SlamConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        Self {
            cfg,
            k,
            map: GaussianMap::new(),
            keyframes: Vec::new(),
            window: OptimizationWindow::default(),
            poses: Vec::new(),
            diagnostics: Vec::new(),
            initial_pose: None,
            scene_scale: 1.0,
            rng,
        }
    }

    /// Anchor the first frame at a known world pose instead of the identity.
    pub fn with_initial_pose(mut self, pose: SE3Pose) -> Self {
        self.initial_pose = Some(pose);
        self
    }

    pub fn filter(&self, raw: &DepthMap) -> DepthMap {
        if self.cfg.filter_depth {
            iqr_filter(raw, &self.cfg.iqr)
        } else {
            raw.clone()
        }
    }

    pub fn process_frame(&mut self, frame: Frame) -> Result<&FrameDiagnostics, SlamError> {
        let index = self.poses.len();
        let expected = (self.k.width, self.k.height);
        for got in [(frame.rgb.width, frame.rgb.height), (frame.depth.width, frame.depth.height)] {
            if got != expected {
                return Err(SlamError::FrameSize { frame: index, expected, got });
            }
        }
        let depth = self.filter(&frame.depth);
        let mut diag = FrameDiagnostics {
            frame: index,
            timestamp: frame.timestamp,
            depth_valid_fraction: depth.valid_count() as f64 / depth.valid.len().max(1) as f64,
            ..Default::default()
        };

        if index == 0 {
            let (map, pose, report) = initialize(&frame.rgb, &depth, &self.k, self.initial_pose, &self.cfg)?;
            self.map = map;
            let mut kf = Keyframe::new(0, frame.timestamp, pose, frame.rgb, depth);
            kf.seeded = true;
            self.scene_scale = kf.median_depth;
            self.keyframes.push(kf);
            self.window.push(0, self.cfg.window_size);
            self.poses.push((frame.timestamp, pose));
            diag.keyframe = true;
            diag.inserted = self.map.len();
            diag.nonfinite_steps = report.nonfinite_steps;
            diag.track_best_loss = report.losses.last().copied().unwrap_or(0.0);
            diag.splats = self.map.len();
            self.diagnostics.push(diag);
            return Ok(self.diagnostics.last().unwrap());
        }

        let history: Vec<SE3Pose> = self.poses.iter().rev().take(2).rev().map(|p| p.1).collect();
        let init = predict_pose(&history);
        let tracked = track_frame(&self.map, &init, &self.k, &frame.rgb, &depth, &self.cfg, index)?;
        diag.track_initial_loss = tracked.initial_loss;
        diag.track_best_loss = tracked.best_loss;
        diag.geo_mask_empty = loss_from_render(&tracked.render, &frame.rgb, &depth, self.cfg.lambda, self.cfg.geo_alpha_min).no_valid_pixels;
        self.map.record_visibility(index, &tracked.render.visibility, self.cfg.render.visibility_eps);
        self.poses.push((frame.timestamp, tracked.pose));

        let candidate = Keyframe::new(index, frame.timestamp, tracked.pose, frame.rgb, depth);
        let inserted = maybe_insert_keyframe(
            &mut self.window,
            &mut self.keyframes,
            &self.map,
            candidate,
            Some(&tracked.render.visibility),
            &self.k,
            &self.cfg,
        );
        if inserted {
            diag.keyframe = true;
            let n_keyframes = self.keyframes.len();
            self.window.resample_past(n_keyframes, self.cfg.random_past, &mut self.rng);
            let report = map_refine(
                &mut self.map,
                &mut self.keyframes,
                &self.window,
                &self.k,
                &self.cfg,
                self.scene_scale,
                index,
                n_keyframes,
            );
            diag.inserted = report.inserted;
            diag.pruned = report.pruned;
            diag.nonfinite_steps = report.optimize.nonfinite_steps;
            for &kf in &self.window.current {
                let f = self.keyframes[kf].frame_index;
                self.poses[f].1 = self.keyframes[kf].pose;
            }
        }
        diag.splats = self.map.len();
        self.diagnostics.push(diag);
        Ok(self.diagnostics.last().unwrap())
    }

    pub fn into_output(self, halted: Option<SlamError>) -> RunOutput {
        RunOutput {
            trajectory: self.poses,
            keyframe_frames: self.keyframes.iter().map(|k| k.frame_index).collect(),
            keyframes: self.keyframes,
            map: self.map,
            diagnostics: self.diagnostics,
            halted,
        }
    }
}

/// Process every frame of `source`. Errors stop the run; everything
/// estimated up to that point is returned with `halted` set.
pub fn run(source: &dyn FrameSource, cfg: &SlamConfig) -> RunOutput {
    run_with(source, cfg, None, |_| {})
}

/// [`run`] with an optional known first pose and a per-frame callback.
pub fn run_with(
    source: &dyn FrameSource,
    cfg: &SlamConfig,
    initial_pose: Option<SE3Pose>,
    mut on_frame: impl FnMut(&FrameDiagnostics),
) -> RunOutput {
    let mut slam = Slam::new(source.intrinsics(), cfg.clone());
    if let Some(p) = initial_pose {
        slam = slam.with_initial_pose(p);
    }
    for i in 0..source.len() {
        let frame = match source.frame(i) {
            Ok(f) => f,
            Err(message) => return slam.into_output(Some(SlamError::Source { frame: i, message })),
        };
        match slam.process_frame(frame) {
            Ok(d) => on_frame(d),
            Err(e) => return slam.into_output(Some(e)),
        }
    }
    slam.into_output(None)
}
