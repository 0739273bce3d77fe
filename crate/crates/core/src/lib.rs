//! Monocular Gaussian-splatting SLAM on RGB frames plus per-frame metric
//! depth priors.
//!
//! The pipeline filters each depth prior with interquartile fences
//! ([`depth_filter`]), tracks the camera against a map of 3D Gaussians
//! through a differentiable tile rasterizer ([`rasterizer`]), and refines
//! map and keyframe poses jointly over a sliding window ([`slam`]).
//!
//! ```
//! use splatslam::geometry::SE3Pose;
//! use splatslam::rasterizer::{render, RenderConfig};
//! use splatslam::synth::{default_intrinsics, make_scene, SceneSpec};
//!
//! let scene = make_scene(&SceneSpec { n_splats: 20, extent: 1.0, seed: 1, ..SceneSpec::default() });
//! let k = default_intrinsics(32, 32);
//! let pose = splatslam::synth::look_at(&nalgebra::Vector3::new(0.0, 0.0, -3.0), &nalgebra::Vector3::zeros());
//! let out = render(&scene, &pose, &k, &RenderConfig::default());
//! assert_eq!(out.color.data.len(), 32 * 32);
//! # let _ = SE3Pose::identity();
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod dataio;
pub mod depth_filter;
pub mod eval;
pub mod geometry;
pub mod imaging;
pub mod map;
pub mod optim;
pub mod rasterizer;
pub mod slam;
pub mod synth;

pub use depth_filter::{iqr_filter, DepthMap, IqrConfig};
pub use geometry::{CameraIntrinsics, SE3Pose, Tangent6};
pub use imaging::RgbImage;
pub use map::{GaussianMap, GaussianSplat};
pub use rasterizer::{render, render_backward, RenderConfig, RenderOutput};
pub use slam::{run, SlamConfig, SlamError};
