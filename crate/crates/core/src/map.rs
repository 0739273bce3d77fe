//! The Gaussian scene map.
//!
//! Each splat stores an unconstrained parameterization: log axis lengths and
//! a (not necessarily normalized) quaternion for the covariance, and a logit
//! for the opacity. The world covariance is `R(q) diag(exp(2 s)) R(q)^T`,
//! which is symmetric positive definite for any parameter values.

use crate::depth_filter::DepthMap;
use crate::geometry::{CameraIntrinsics, SE3Pose};
use crate::imaging::{quantile_sorted, RgbImage};
use crate::rasterizer::RenderOutput;
use nalgebra::{Matrix3, Vector2, Vector3, Vector4};
use std::io::{self, Read, Write};
use thiserror::Error;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"UDGSMAP1";
/// Bytes per splat record in a snapshot.
pub const SNAPSHOT_RECORD_LEN: usize = 14 * 8 + 3 * 8;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("parameter group {group:?} expects {expected} values, got {got}")]
    LengthMismatch { group: ParamGroup, expected: usize, got: usize },
    #[error("not a map snapshot (bad magic)")]
    BadMagic,
    #[error("snapshot truncated")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Stable splat identifier. Never reused within a map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SplatId(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSplat {
    pub id: SplatId,
    pub mu_w: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    /// Quaternion `(w, x, y, z)`.
    pub rot_q: Vector4<f64>,
    pub color: Vector3<f64>,
    pub logit_opacity: f64,
    pub birth_keyframe: usize,
    pub last_observed_frame: usize,
    pub observation_count: u32,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of the normalized quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let n = q / q.norm();
    let (w, x, y, z) = (n[0], n[1], n[2], n[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pull a gradient on the rotation matrix back to the raw quaternion,
/// through the normalization.
pub fn quat_matrix_backward(q: &Vector4<f64>, d_r: &Matrix3<f64>) -> Vector4<f64> {
    let norm = q.norm();
    let n = q / norm;
    let (w, x, y, z) = (n[0], n[1], n[2], n[3]);
    let g = d_r;
    let dw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let d_n = Vector4::new(dw, dx, dy, dz);
    (d_n - n * n.dot(&d_n)) / norm
}

impl GaussianSplat {
    /// An isotropic splat with identity orientation. The id is assigned on
    /// insertion into a map.
    pub fn isotropic(mu_w: Vector3<f64>, scale: f64, color: Vector3<f64>, opacity: f64) -> Self {
        Self {
            id: SplatId(0),
            mu_w,
            log_scale: Vector3::repeat(scale.ln()),
            rot_q: Vector4::new(1.0, 0.0, 0.0, 0.0),
            color,
            logit_opacity: logit(opacity),
            birth_keyframe: 0,
            last_observed_frame: 0,
            observation_count: 0,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.logit_opacity)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        quat_to_matrix(&self.rot_q)
    }

    pub fn scales(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    /// World covariance `R S^2 R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation();
        let s2 = Matrix3::from_diagonal(&self.log_scale.map(|s| (2.0 * s).exp()));
        r * s2 * r.transpose()
    }

    pub fn is_finite(&self) -> bool {
        self.mu_w.iter().all(|x| x.is_finite())
            && self.log_scale.iter().all(|x| x.is_finite())
            && self.rot_q.iter().all(|x| x.is_finite())
            && self.color.iter().all(|x| x.is_finite())
            && self.logit_opacity.is_finite()
    }
}

/// Opacity-weighted normalized 3D Gaussian density at `x`.
///
/// This is a diagnostic only: rendering uses the unnormalized 2D kernel.
pub fn eval_gaussian3d(g: &GaussianSplat, x: &Vector3<f64>) -> f64 {
    let cov = g.covariance();
    let d = x - g.mu_w;
    // The inverse follows from the factorization: R diag(exp(-2 s)) R^T.
    let r = g.rotation();
    let inv = r * Matrix3::from_diagonal(&g.log_scale.map(|s| (-2.0 * s).exp())) * r.transpose();
    let det = cov.determinant().max(f64::MIN_POSITIVE);
    let norm = (2.0 * std::f64::consts::PI).powf(1.5) * det.sqrt();
    g.opacity() * (-0.5 * d.dot(&(inv * d))).exp() / norm
}

/// Parameter groups exposed to the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    MuW,
    LogScale,
    RotQ,
    Color,
    LogitOpacity,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::MuW,
        ParamGroup::LogScale,
        ParamGroup::RotQ,
        ParamGroup::Color,
        ParamGroup::LogitOpacity,
    ];

    /// Scalars per splat.
    pub fn width(self) -> usize {
        match self {
            ParamGroup::MuW | ParamGroup::LogScale | ParamGroup::Color => 3,
            ParamGroup::RotQ => 4,
            ParamGroup::LogitOpacity => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::MuW => "mu_w",
            ParamGroup::LogScale => "log_scale",
            ParamGroup::RotQ => "rot_q",
            ParamGroup::Color => "color",
            ParamGroup::LogitOpacity => "logit_opacity",
        }
    }

    fn read(self, g: &GaussianSplat, out: &mut Vec<f64>) {
        match self {
            ParamGroup::MuW => out.extend(g.mu_w.iter()),
            ParamGroup::LogScale => out.extend(g.log_scale.iter()),
            ParamGroup::RotQ => out.extend(g.rot_q.iter()),
            ParamGroup::Color => out.extend(g.color.iter()),
            ParamGroup::LogitOpacity => out.push(g.logit_opacity),
        }
    }

    fn write(self, g: &mut GaussianSplat, v: &[f64]) {
        match self {
            ParamGroup::MuW => g.mu_w.copy_from_slice(v),
            ParamGroup::LogScale => g.log_scale.copy_from_slice(v),
            ParamGroup::RotQ => g.rot_q.copy_from_slice(v),
            ParamGroup::Color => g.color.copy_from_slice(v),
            ParamGroup::LogitOpacity => g.logit_opacity = v[0],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianMap {
    pub splats: Vec<GaussianSplat>,
    next_id: u64,
    generation: u64,
}

impl GaussianMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    /// Edit counter, bumped by every structural or parameter change.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn touch(&mut self) {
        self.generation += 1;
    }

    /// Insert a splat, assigning a fresh id.
    pub fn push(&mut self, mut g: GaussianSplat) -> SplatId {
        let id = SplatId(self.next_id);
        self.next_id += 1;
        g.id = id;
        self.splats.push(g);
        self.generation += 1;
        id
    }

    pub fn get(&self, id: SplatId) -> Option<&GaussianSplat> {
        self.splats.binary_search_by_key(&id, |g| g.id).ok().map(|i| &self.splats[i])
    }

    /// Keep only splats for which `keep` returns true. Returns the number removed.
    pub fn retain(&mut self, mut keep: impl FnMut(&GaussianSplat) -> bool) -> usize {
        let before = self.splats.len();
        self.splats.retain(|g| keep(g));
        let removed = before - self.splats.len();
        if removed > 0 {
            self.generation += 1;
        }
        removed
    }

    pub fn group_len(&self, group: ParamGroup) -> usize {
        self.splats.len() * group.width()
    }

    /// Flattened values of one parameter group, in splat order.
    pub fn group_values(&self, group: ParamGroup) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.group_len(group));
        for g in &self.splats {
            group.read(g, &mut out);
        }
        out
    }

    pub fn set_group_values(&mut self, group: ParamGroup, values: &[f64]) -> Result<(), MapError> {
        let expected = self.group_len(group);
        if values.len() != expected {
            return Err(MapError::LengthMismatch { group, expected, got: values.len() });
        }
        let w = group.width();
        for (g, chunk) in self.splats.iter_mut().zip(values.chunks_exact(w)) {
            group.write(g, chunk);
        }
        self.generation += 1;
        Ok(())
    }

    /// Renormalize every quaternion to unit length.
    pub fn normalize_rotations(&mut self) {
        for g in &mut self.splats {
            let n = g.rot_q.norm();
            if n > 0.0 && n.is_finite() {
                g.rot_q /= n;
            } else {
                g.rot_q = Vector4::new(1.0, 0.0, 0.0, 0.0);
            }
        }
    }

    /// Update observation bookkeeping from one rendered frame. `visibility`
    /// is aligned with `splats`.
    pub fn record_visibility(&mut self, frame_index: usize, visibility: &[f64], eps: f64) {
        debug_assert_eq!(visibility.len(), self.splats.len());
        for (g, &w) in self.splats.iter_mut().zip(visibility) {
            if w > eps {
                g.last_observed_frame = g.last_observed_frame.max(frame_index);
                if frame_index > g.birth_keyframe && frame_index <= g.birth_keyframe + PRUNE_HORIZON {
                    g.observation_count += 1;
                }
            }
        }
    }
}

/// Frames after birth during which a splat must be observed at least once.
pub const PRUNE_HORIZON: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InsertConfig {
    /// Grid stride in pixels.
    pub stride: usize,
    /// Sobel-magnitude percentile above which every pixel also receives a splat.
    pub gradient_percentile: f64,
    pub gradient_boost: bool,
}

impl Default for InsertConfig {
    fn default() -> Self {
        Self { stride: 4, gradient_percentile: 0.9, gradient_boost: true }
    }
}

/// Pixels the current map already explains: accumulated opacity above 0.9,
/// or rendered depth within 10% of the observed depth.
pub fn coverage_mask(render: &RenderOutput, depth: &DepthMap) -> Vec<bool> {
    (0..render.alpha.len())
        .map(|i| {
            if render.alpha[i] > 0.9 {
                return true;
            }
            depth.valid[i] && (render.depth[i] - depth.values[i]).abs() < 0.1 * depth.values[i]
        })
        .collect()
}

/// Seed splats by back-projecting valid, uncovered depth pixels.
///
/// Pixels on a `stride` grid are always candidates; with `gradient_boost`
/// every pixel whose Sobel magnitude exceeds the configured percentile is a
/// candidate too. Each new splat is isotropic with a 1-sigma footprint of
/// `stride / 2` pixels, opacity 0.5 and the pixel's color.
#[allow(clippy::too_many_arguments)]
pub fn insert_from_depth(
    map: &mut GaussianMap,
    rgb: &RgbImage,
    depth: &DepthMap,
    pose: &SE3Pose,
    k: &CameraIntrinsics,
    covered: Option<&[bool]>,
    cfg: &InsertConfig,
    frame_index: usize,
) -> usize {
    let (w, h) = (depth.width, depth.height);
    assert_eq!((rgb.width, rgb.height), (w, h), "rgb and depth sizes differ");
    let stride = cfg.stride.max(1);

    let mut boosted = vec![false; w * h];
    if cfg.gradient_boost {
        let mag = rgb.luminance().sobel_magnitude();
        let mut sorted = mag.data.clone();
        sorted.sort_by(f64::total_cmp);
        let threshold = quantile_sorted(&sorted, cfg.gradient_percentile);
        for (b, &m) in boosted.iter_mut().zip(&mag.data) {
            *b = m > threshold && m > 0.0;
        }
    }

    let cam_to_world = pose.inverse();
    let mut inserted = 0;
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            let on_grid = u % stride == 0 && v % stride == 0;
            if !(on_grid || boosted[i]) || !depth.valid[i] {
                continue;
            }
            if covered.is_some_and(|c| c[i]) {
                continue;
            }
            let z = depth.values[i];
            let p_c = k.unproject(&Vector2::new(u as f64, v as f64), z);
            let scale = 0.5 * stride as f64 * z / k.fx;
            let c = rgb.data[i];
            let mut g = GaussianSplat::isotropic(
                cam_to_world.transform(&p_c),
                scale,
                Vector3::new(c[0], c[1], c[2]),
                0.5,
            );
            g.birth_keyframe = frame_index;
            g.last_observed_frame = frame_index;
            map.push(g);
            inserted += 1;
        }
    }
    inserted
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PruneConfig {
    pub min_opacity: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { min_opacity: 0.005 }
    }
}

/// Drop splats never observed in the frames following their birth, and
/// splats whose opacity fell below the floor.
pub fn prune(map: &mut GaussianMap, current_frame: usize, cfg: &PruneConfig) -> usize {
    map.retain(|g| {
        let stale = current_frame >= g.birth_keyframe + PRUNE_HORIZON && g.observation_count == 0;
        let faded = g.opacity() < cfg.min_opacity;
        !(stale || faded || !g.is_finite())
    })
}

/// Write a little-endian snapshot: magic, `u64` count, then one fixed-size
/// record per splat (`mu_w`, `log_scale`, `rot_q (w,x,y,z)`, `color`,
/// `logit_opacity` as `f64`; `birth_keyframe`, `last_observed_frame`,
/// `observation_count` as `u64`).
pub fn write_snapshot<W: Write>(map: &GaussianMap, mut w: W) -> Result<(), MapError> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&(map.len() as u64).to_le_bytes())?;
    let mut rec = Vec::with_capacity(SNAPSHOT_RECORD_LEN);
    for g in &map.splats {
        rec.clear();
        let floats = g
            .mu_w
            .iter()
            .chain(g.log_scale.iter())
            .chain(g.rot_q.iter())
            .chain(g.color.iter())
            .chain(std::iter::once(&g.logit_opacity));
        for x in floats {
            rec.extend_from_slice(&x.to_le_bytes());
        }
        for x in [g.birth_keyframe as u64, g.last_observed_frame as u64, g.observation_count as u64] {
            rec.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&rec)?;
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<GaussianMap, MapError> {
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(MapError::BadMagic);
    }
    let mut word = [0u8; 8];
    read_exact(&mut r, &mut word)?;
    let count = u64::from_le_bytes(word);
    let mut map = GaussianMap::new();
    let mut rec = [0u8; SNAPSHOT_RECORD_LEN];
    for _ in 0..count {
        read_exact(&mut r, &mut rec)?;
        let f = |i: usize| f64::from_le_bytes(rec[i * 8..i * 8 + 8].try_into().unwrap());
        let u = |i: usize| u64::from_le_bytes(rec[i * 8..i * 8 + 8].try_into().unwrap());
        map.push(GaussianSplat {
            id: SplatId(0),
            mu_w: Vector3::new(f(0), f(1), f(2)),
            log_scale: Vector3::new(f(3), f(4), f(5)),
            rot_q: Vector4::new(f(6), f(7), f(8), f(9)),
            color: Vector3::new(f(10), f(11), f(12)),
            logit_opacity: f(13),
            birth_keyframe: u(14) as usize,
            last_observed_frame: u(15) as usize,
            observation_count: u(16) as u32,
        });
    }
    Ok(map)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), MapError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => MapError::Truncated,
        _ => MapError::Io(e),
    })
}
