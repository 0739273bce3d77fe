//! TUM trajectory text format: `timestamp tx ty tz qx qy qz qw`, one pose
//! per line, camera-to-world. Internal poses are world-to-camera; the
//! conversion happens only in [`TrajectoryRecord::from_pose_cw`] and
//! [`TrajectoryRecord::pose_cw`].

use super::{io_err, DataError};
use crate::geometry::SE3Pose;
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use std::fmt::Write as _;
use std::path::Path;

/// One camera-to-world pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub timestamp: f64,
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl TrajectoryRecord {
    pub fn from_pose_cw(timestamp: f64, t_cw: &SE3Pose) -> Self {
        let t_wc = t_cw.inverse();
        Self { timestamp, translation: t_wc.translation, rotation: t_wc.quaternion() }
    }

    /// World-to-camera pose of this record.
    pub fn pose_cw(&self) -> SE3Pose {
        SE3Pose::from_quaternion(&self.rotation, self.translation).inverse()
    }
}

pub fn format_trajectory_tum(traj: &[TrajectoryRecord]) -> String {
    let mut s = String::new();
    for r in traj {
        let q = r.rotation.quaternion();
        let t = r.translation;
        writeln!(s, "{:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}", r.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w)
            .unwrap();
    }
    // Avoid "-0.000000" so identical poses print identically.
    s.replace("-0.000000", "0.000000")
}

pub fn write_trajectory_tum(traj: &[TrajectoryRecord], path: &Path) -> Result<(), DataError> {
    std::fs::write(path, format_trajectory_tum(traj)).map_err(io_err(path))
}

/// Parse TUM trajectory text. `#` comments and blank lines are skipped;
/// quaternions are renormalized.
pub fn parse_trajectory_tum(text: &str, path: &Path) -> Result<Vec<TrajectoryRecord>, DataError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: String| DataError::MalformedLine { file: path.to_path_buf(), line: i + 1, reason };
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| malformed(format!("`{t}`: {e}"))))
            .collect::<Result<_, _>>()?;
        if v.len() != 8 {
            return Err(malformed(format!("expected 8 fields, found {}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(malformed("non-finite value".into()));
        }
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        if q.norm() < 1e-12 {
            return Err(malformed("zero quaternion".into()));
        }
        out.push(TrajectoryRecord {
            timestamp: v[0],
            translation: Vector3::new(v[1], v[2], v[3]),
            rotation: UnitQuaternion::from_quaternion(q),
        });
    }
    Ok(out)
}

pub fn read_trajectory_tum(path: &Path) -> Result<Vec<TrajectoryRecord>, DataError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_trajectory_tum(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Tangent6;

    #[test]
    fn identity_line() {
        let s = format_trajectory_tum(&[TrajectoryRecord::from_pose_cw(0.0, &SE3Pose::identity())]);
        assert_eq!(s, "0.000000 0.000000 0.000000 0.000000 0.000000 0.000000 0.000000 1.000000\n");
    }

    #[test]
    fn round_trip() {
        let poses = [
            SE3Pose::exp(&Tangent6::new(Vector3::new(0.1, -0.2, 0.3), Vector3::new(0.3, 0.1, -0.2))),
            SE3Pose::exp(&Tangent6::new(Vector3::new(1.0, 0.5, 0.0), Vector3::new(-1.0, 0.4, 2.0))),
        ];
        let recs: Vec<_> = poses.iter().enumerate().map(|(i, p)| TrajectoryRecord::from_pose_cw(i as f64, p)).collect();
        let text = format_trajectory_tum(&recs);
        assert_eq!(text.lines().count(), 2);
        let back = parse_trajectory_tum(&text, Path::new("t")).unwrap();
        for (p, r) in poses.iter().zip(&back) {
            let q = r.pose_cw();
            assert!((q.translation - p.translation).amax() < 1e-5);
            assert!((q.rotation - p.rotation).amax() < 1e-5);
        }
    }

    #[test]
    fn malformed_reports_line() {
        let err = parse_trajectory_tum("# c\n0 0 0 0 0 0 0 1\n1 2 3\n", Path::new("t")).unwrap_err();
        assert!(matches!(err, DataError::MalformedLine { line: 3, .. }));
    }
}
