//! TUM RGB-D sequence directories.
//!
//! Layout: `rgb.txt` and `depth.txt` list `timestamp relative/path` per
//! line (`#` comments allowed), `groundtruth.txt` optionally holds the
//! camera-to-world trajectory, and `intrinsics.txt` optionally holds
//! `fx fy cx cy width height`. Without it, directory names containing
//! `freiburg1/2/3` get the published TUM calibrations.

use super::trajectory::{read_trajectory_tum, TrajectoryRecord};
use super::{io_err, load_rgb, DataError, DepthFormat, TUM_DEPTH_SCALE};
use crate::geometry::CameraIntrinsics;
use crate::slam::{Frame, FrameSource};
use std::path::{Path, PathBuf};

pub const DEFAULT_MAX_DT: f64 = 0.02;

/// Parse a `timestamp path` index.
pub fn parse_index(text: &str, file: &Path) -> Result<Vec<(f64, String)>, DataError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: String| DataError::MalformedLine { file: file.to_path_buf(), line: i + 1, reason };
        let mut it = line.split_whitespace();
        let (Some(t), Some(p)) = (it.next(), it.next()) else {
            return Err(malformed("expected `timestamp path`".into()));
        };
        let t: f64 = t.parse().map_err(|e| malformed(format!("timestamp `{t}`: {e}")))?;
        if !t.is_finite() {
            return Err(malformed("non-finite timestamp".into()));
        }
        out.push((t, p.to_string()));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Pair entries of `a` and `b` whose timestamps differ by at most `max_dt`.
/// Candidate pairs are taken greedily by increasing `|dt|` (ties by index),
/// each entry used at most once, so swapping the inputs yields the same
/// pairs. Returned `(ia, ib)` are sorted by `ia`.
pub fn associate(a: &[f64], b: &[f64], max_dt: f64) -> Vec<(usize, usize)> {
    let mut cands = Vec::new();
    let mut lo = 0;
    for (i, &ta) in a.iter().enumerate() {
        // `b` is sorted; skip entries too early for any later `a` either.
        while lo < b.len() && b[lo] < ta - max_dt {
            lo += 1;
        }
        for (j, &tb) in b.iter().enumerate().skip(lo) {
            if tb > ta + max_dt {
                break;
            }
            cands.push(((ta - tb).abs(), i, j));
        }
    }
    // Ties break on the unordered index pair; pairs that still tie share no
    // entry, so their order cannot change the result.
    let key = |&(dt, i, j): &(f64, usize, usize)| (dt, i.min(j), i.max(j));
    cands.sort_by(|x, y| {
        let (kx, ky) = (key(x), key(y));
        kx.0.total_cmp(&ky.0).then((kx.1, kx.2).cmp(&(ky.1, ky.2)))
    });
    let (mut used_a, mut used_b) = (vec![false; a.len()], vec![false; b.len()]);
    let mut out = Vec::new();
    for (_, i, j) in cands {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

/// Published TUM calibrations (640x480) by sensor.
pub fn tum_default_intrinsics(dir: &Path) -> Option<CameraIntrinsics> {
    let name = dir.to_string_lossy().to_lowercase();
    let (fx, fy, cx, cy) = if name.contains("freiburg1") {
        (517.3, 516.5, 318.6, 255.3)
    } else if name.contains("freiburg2") {
        (520.9, 521.0, 325.1, 249.7)
    } else if name.contains("freiburg3") {
        (535.4, 539.2, 320.1, 247.6)
    } else {
        return None;
    };
    Some(CameraIntrinsics { fx, fy, cx, cy, width: 640, height: 480 })
}

fn read_intrinsics(root: &Path) -> Result<CameraIntrinsics, DataError> {
    let path = root.join("intrinsics.txt");
    if !path.exists() {
        return tum_default_intrinsics(root).ok_or_else(|| DataError::MissingIntrinsics(root.to_path_buf()));
    }
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let line = text.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with('#')).unwrap_or("");
    let malformed = |reason: &str| DataError::MalformedLine { file: path.clone(), line: 1, reason: reason.into() };
    let v: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| malformed("expected numbers"))?;
    if v.len() != 6 || v[4] < 1.0 || v[5] < 1.0 || v[4].fract() != 0.0 || v[5].fract() != 0.0 {
        return Err(malformed("expected `fx fy cx cy width height`"));
    }
    CameraIntrinsics::new(v[0], v[1], v[2], v[3], v[4] as usize, v[5] as usize)
        .map_err(|e| DataError::InvalidIntrinsics(e.to_string()))
}

/// An associated TUM-layout sequence. Frames load lazily.
#[derive(Debug, Clone)]
pub struct TumSequence {
    pub root: PathBuf,
    /// `(rgb timestamp, rgb path, depth path)` per associated pair.
    pub pairs: Vec<(f64, PathBuf, PathBuf)>,
    pub groundtruth: Option<Vec<TrajectoryRecord>>,
    /// Intrinsics at the native resolution.
    pub native_intrinsics: CameraIntrinsics,
    pub depth_units_scale: f64,
    /// Integer downsampling applied to every frame.
    pub downsample: usize,
    /// Pairs dropped by association.
    pub dropped_rgb: usize,
    pub dropped_depth: usize,
}

pub fn load_tum_sequence(root: &Path, max_dt: f64) -> Result<TumSequence, DataError> {
    let read_index = |name: &str| -> Result<Vec<(f64, String)>, DataError> {
        let path = root.join(name);
        if !path.is_file() {
            return Err(DataError::MissingIndexFile(path));
        }
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        parse_index(&text, &path)
    };
    let rgb = read_index("rgb.txt")?;
    let depth = read_index("depth.txt")?;
    let ta: Vec<f64> = rgb.iter().map(|e| e.0).collect();
    let tb: Vec<f64> = depth.iter().map(|e| e.0).collect();
    let pairs_idx = associate(&ta, &tb, max_dt);
    if pairs_idx.is_empty() {
        return Err(DataError::EmptyAssociation);
    }
    let dropped_rgb = rgb.len() - pairs_idx.len();
    let dropped_depth = depth.len() - pairs_idx.len();
    if dropped_rgb + dropped_depth > 0 {
        log::info!("association dropped {dropped_rgb} rgb and {dropped_depth} depth entries");
    }
    let pairs = pairs_idx.iter().map(|&(i, j)| (rgb[i].0, root.join(&rgb[i].1), root.join(&depth[j].1))).collect();
    let gt_path = root.join("groundtruth.txt");
    let groundtruth = if gt_path.is_file() { Some(read_trajectory_tum(&gt_path)?) } else { None };
    Ok(TumSequence {
        root: root.to_path_buf(),
        pairs,
        groundtruth,
        native_intrinsics: read_intrinsics(root)?,
        depth_units_scale: TUM_DEPTH_SCALE,
        downsample: 1,
        dropped_rgb,
        dropped_depth,
    })
}

impl TumSequence {
    pub fn with_downsample(mut self, factor: usize) -> Self {
        self.downsample = factor.max(1);
        self
    }

    /// Keep only the first `n` pairs.
    pub fn truncate(mut self, n: usize) -> Self {
        self.pairs.truncate(n);
        self
    }

    pub fn load_frame(&self, index: usize) -> Result<Frame, DataError> {
        let (t, rgb_path, depth_path) = &self.pairs[index];
        let rgb = load_rgb(rgb_path)?;
        let depth = super::load_depth(depth_path, DepthFormat::from_path(depth_path), self.depth_units_scale)?;
        let k = self.native_intrinsics;
        for (w, h) in [(rgb.width, rgb.height), (depth.width, depth.height)] {
            if (w, h) != (k.width, k.height) {
                return Err(DataError::UnreadableFile {
                    path: rgb_path.clone(),
                    reason: format!("frame is {w}x{h}, intrinsics say {}x{}", k.width, k.height),
                });
            }
        }
        Ok(Frame { timestamp: *t, rgb: rgb.downsample(self.downsample), depth: depth.downsample(self.downsample) })
    }
}

impl FrameSource for TumSequence {
    fn intrinsics(&self) -> CameraIntrinsics {
        self.native_intrinsics.downsampled(self.downsample)
    }
    fn len(&self) -> usize {
        self.pairs.len()
    }
    fn frame(&self, index: usize) -> Result<Frame, String> {
        self.load_frame(index).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn association_arithmetic() {
        assert_eq!(associate(&[0.0, 0.05], &[0.01, 0.049], 0.02), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn association_unique_and_symmetric() {
        let a = [0.0, 0.01, 0.02, 0.5];
        let b = [0.005, 0.3];
        let ab = associate(&a, &b, 0.02);
        let ba = associate(&b, &a, 0.02);
        assert_eq!(ab.len(), 1);
        assert_eq!(ab, ba.iter().map(|&(j, i)| (i, j)).collect::<Vec<_>>());
    }

    #[test]
    fn comments_only_is_empty_association() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("rgb.txt"), "# a\n# b\n").unwrap();
        std::fs::write(dir.path().join("depth.txt"), "# a\n").unwrap();
        assert!(matches!(load_tum_sequence(dir.path(), 0.02), Err(DataError::EmptyAssociation)));
    }

    #[test]
    fn missing_index_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_tum_sequence(dir.path(), 0.02), Err(DataError::MissingIndexFile(_))));
    }

    #[test]
    fn malformed_index_line_number() {
        let err = parse_index("# x\n1.0 a.png\nfoo b.png\n", Path::new("rgb.txt")).unwrap_err();
        assert!(matches!(err, DataError::MalformedLine { line: 3, .. }));
    }
}
