//! Rigid-body geometry: SO(3)/SE(3) exponential and logarithm maps, the
//! pinhole camera, and the Jacobians the rasterizer backward pass chains
//! through.
//!
//! Poses are world-to-camera transforms `T_CW`. Increments live in the
//! tangent space and are applied on the left: `retract(T, xi) = exp(xi) * T`.
//! With that convention the derivative of a camera-frame point with respect
//! to the increment is `[I | -hat(p_c)]`, independent of the pose itself.

use nalgebra::{Matrix2x3, Matrix3, Matrix3x6, UnitQuaternion, Vector2, Vector3, Vector6};
use std::f64::consts::PI;
use thiserror::Error;

/// Below this rotation angle the closed forms switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Default near plane, in meters.
pub const DEFAULT_Z_MIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("point at depth {z} is at or behind the near plane {z_min}")]
    BehindCamera { z: f64, z_min: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

/// Skew-symmetric matrix such that `hat(a) * b == a.cross(&b)`.
#[inline]
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] applied to the antisymmetric part of `m`.
#[inline]
pub fn vee_antisym(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// Rodrigues' formula.
pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + k + k * k * 0.5;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / theta2;
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation angle-axis vector of `r`. Valid for the full range `[0, pi]`.
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let axis_sin = vee_antisym(r); // sin(theta) * n
    // atan2 keeps full precision near 0 and pi where acos does not.
    let theta = axis_sin.norm().atan2(cos_theta);
    if theta < SMALL_ANGLE {
        return axis_sin;
    }
    if theta < PI - 1e-3 {
        return axis_sin * (theta / theta.sin());
    }
    // Near pi the antisymmetric part vanishes; recover n from the symmetric part:
    // (R + R^T)/2 = I + (1 - cos) (n n^T - I).
    let sym = (r + r.transpose()) * 0.5;
    let nnt = Matrix3::identity() + (sym - Matrix3::identity()) / (1.0 - cos_theta);
    let col = (0..3)
        .max_by(|&a, &b| nnt[(a, a)].total_cmp(&nnt[(b, b)]))
        .unwrap_or(0);
    let mut n: Vector3<f64> = nnt.column(col).into_owned();
    n /= n.norm();
    if n.dot(&axis_sin) < 0.0 {
        n = -n;
    }
    n * theta
}

/// Left Jacobian of SO(3), the `V` matrix of the SE(3) exponential.
fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    if theta < 1e-5 {
        return Matrix3::identity() + k * 0.5 + k * k * (1.0 / 6.0);
    }
    let b = (1.0 - theta.cos()) / theta2;
    let c = (theta - theta.sin()) / (theta2 * theta);
    Matrix3::identity() + k * b + k * k * c
}

fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    let coeff = if theta < 1e-5 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / theta2
    };
    Matrix3::identity() - k * 0.5 + k * k * coeff
}

/// Element of se(3): translational part `rho` (meters) and rotational part
/// `phi` (radians).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Tangent6 {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
}

impl Tangent6 {
    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Self { rho, phi }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Stacked as `[rho; phi]`.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z)
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            rho: Vector3::new(v[0], v[1], v[2]),
            phi: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { rho: self.rho * s, phi: self.phi * s }
    }

    pub fn is_finite(&self) -> bool {
        self.rho.iter().chain(self.phi.iter()).all(|x| x.is_finite())
    }
}

impl std::ops::Add for Tangent6 {
    type Output = Tangent6;
    fn add(self, o: Tangent6) -> Tangent6 {
        Tangent6 { rho: self.rho + o.rho, phi: self.phi + o.phi }
    }
}

impl std::ops::AddAssign for Tangent6 {
    fn add_assign(&mut self, o: Tangent6) {
        self.rho += o.rho;
        self.phi += o.phi;
    }
}

impl std::ops::Neg for Tangent6 {
    type Output = Tangent6;
    fn neg(self) -> Tangent6 {
        Tangent6 { rho: -self.rho, phi: -self.phi }
    }
}

/// Rigid transform mapping world points into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE3Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for SE3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl SE3Pose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Build from a unit quaternion and translation.
    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: q.to_rotation_matrix().into_inner(), translation }
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.rotation);
        UnitQuaternion::from_rotation_matrix(&rot)
    }

    pub fn exp(xi: &Tangent6) -> Self {
        Self {
            rotation: so3_exp(&xi.phi),
            translation: so3_left_jacobian(&xi.phi) * xi.rho,
        }
    }

    pub fn log(&self) -> Tangent6 {
        let phi = so3_log(&self.rotation);
        Tangent6 { rho: so3_left_jacobian_inv(&phi) * self.translation, phi }
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self * other`.
    pub fn compose(&self, other: &SE3Pose) -> SE3Pose {
        SE3Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> SE3Pose {
        let rt = self.rotation.transpose();
        SE3Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Left-multiplicative update `exp(xi) * self`, re-orthonormalized.
    pub fn retract(&self, xi: &Tangent6) -> SE3Pose {
        let mut out = SE3Pose::exp(xi).compose(self);
        out.rotation = orthonormalize(&out.rotation);
        out
    }

    /// Camera center in world coordinates.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().chain(self.translation.iter()).all(|x| x.is_finite())
    }
}

/// Nearest rotation matrix via one SVD.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * vt;
    }
    r
}

/// `se3_retract` as a free function.
pub fn se3_retract(pose: &SE3Pose, xi: &Tangent6) -> SE3Pose {
    pose.retract(xi)
}

/// Pinhole intrinsics. Pixel `(u, v)` has its center at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidIntrinsics("cx outside the image"));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics("cy outside the image"));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Intrinsics after integer box downsampling by `factor`.
    pub fn downsampled(&self, factor: usize) -> Self {
        if factor <= 1 {
            return *self;
        }
        let f = factor as f64;
        // Pixel centers: new u' covers old u in [f u', f u' + f - 1], center f u' + (f-1)/2.
        Self {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: (self.cx - (f - 1.0) * 0.5) / f,
            cy: (self.cy - (f - 1.0) * 0.5) / f,
            width: self.width / factor,
            height: self.height / factor,
        }
    }

    #[inline]
    fn check_depth(p: &Vector3<f64>, z_min: f64) -> Result<(), GeometryError> {
        if p.z <= z_min || !p.z.is_finite() {
            Err(GeometryError::BehindCamera { z: p.z, z_min })
        } else {
            Ok(())
        }
    }

    /// Perspective projection of a camera-frame point.
    pub fn project(&self, p: &Vector3<f64>, z_min: f64) -> Result<Vector2<f64>, GeometryError> {
        Self::check_depth(p, z_min)?;
        Ok(Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Back-projection of pixel `uv` at depth `z` into the camera frame.
    pub fn unproject(&self, uv: &Vector2<f64>, z: f64) -> Vector3<f64> {
        Vector3::new((uv.x - self.cx) / self.fx * z, (uv.y - self.cy) / self.fy * z, z)
    }

    /// Jacobian of [`Self::project`] with respect to the camera-frame point.
    pub fn projection_jacobian(
        &self,
        p: &Vector3<f64>,
        z_min: f64,
    ) -> Result<Matrix2x3<f64>, GeometryError> {
        Self::check_depth(p, z_min)?;
        let iz = 1.0 / p.z;
        let iz2 = iz * iz;
        Ok(Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz2,
        ))
    }
}

/// Derivative of the camera-frame point `p_c` with respect to a left
/// increment `xi = [rho; phi]` of the pose: `[I | -hat(p_c)]`.
pub fn point_pose_jacobian(p_c: &Vector3<f64>) -> Matrix3x6<f64> {
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-hat(p_c)));
    j
}

/// Derivative of the pose rotation with respect to the rotational increment,
/// column by column: `d(R e_i)/d(phi) = -hat(R e_i)`. Returned as three 3x3
/// blocks, one per column of `R`.
pub fn rotation_pose_jacobian(r: &Matrix3<f64>) -> [Matrix3<f64>; 3] {
    [
        -hat(&r.column(0).into_owned()),
        -hat(&r.column(1).into_owned()),
        -hat(&r.column(2).into_owned()),
    ]
}
