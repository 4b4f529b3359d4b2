//! Rigid transforms, plane parameter conversions, rotation representations
//! and pixel back-projection.
//!
//! Conventions used across the crate:
//!
//! * A plane is `nᵀX = o` with a unit normal `n` and offset `o ≥ 0`.
//! * A [`CameraPose`] maps coordinates of the second camera into the world
//!   frame, which is the first camera's frame: `X_w = R·X_c + t`.
//! * Pixels follow the pinhole model with `+z` pointing out of the camera.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Planes whose offset falls below this are treated as passing through the
/// camera centre.
pub const MIN_OFFSET: f64 = 1e-9;
/// Norm deviation below which a vector is treated as already unit.
pub const UNIT_TOLERANCE: f64 = 1e-12;

const DEGENERATE_NORM: f64 = 1e-12;
const RAY_PARALLEL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate 6D rotation input")]
    DegenerateInput,
    #[error("matrix is not a proper rotation")]
    NotARotation,
    #[error("plane offset {0} is too close to zero")]
    DegenerateOffset(f64),
    #[error("plane normal must be finite and non-zero")]
    InvalidNormal,
    #[error("pixel ray is parallel to the plane")]
    RayParallel,
    #[error("plane intersection lies behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

/// An oriented plane `nᵀX = o` with `o ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    normal: Vec3,
    offset: f64,
}

impl Plane {
    /// Builds a plane from any non-zero normal. The normal is normalised and,
    /// if the offset is negative, both normal and offset are flipped.
    pub fn new(normal: Vec3, offset: f64) -> Result<Self, GeometryError> {
        let norm = normal.norm();
        if !norm.is_finite() || norm < DEGENERATE_NORM || !offset.is_finite() {
            return Err(GeometryError::InvalidNormal);
        }
        // leave already-unit normals bit-identical so stored planes round-trip
        let (normal, offset) =
            if (norm - 1.0).abs() <= UNIT_TOLERANCE { (normal, offset) } else { (normal / norm, offset / norm) };
        Ok(if offset < 0.0 { Plane { normal: -normal, offset: -offset } } else { Plane { normal, offset } })
    }

    /// Recovers a plane from its offset-scaled normal `q = o·n`.
    pub fn from_scaled_normal(q: &Vec3) -> Result<Self, GeometryError> {
        let offset = q.norm();
        if !offset.is_finite() || offset <= MIN_OFFSET {
            return Err(GeometryError::DegenerateOffset(offset));
        }
        Ok(Plane { normal: q / offset, offset })
    }

    pub fn normal(&self) -> Vec3 {
        self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// `o·n`, the unconstrained parameterisation used by the refiner.
    pub fn scaled_normal(&self) -> Vec3 {
        self.normal * self.offset
    }

    pub fn signed_distance(&self, point: &Vec3) -> f64 {
        self.normal.dot(point) - self.offset
    }

    fn ensure_nondegenerate(&self) -> Result<(), GeometryError> {
        if self.offset <= MIN_OFFSET {
            Err(GeometryError::DegenerateOffset(self.offset))
        } else {
            Ok(())
        }
    }
}

/// Relative rigid transform between two views, stored as a canonical unit
/// quaternion (`w ≥ 0`) and a translation in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: UnitQuaternion<f64>,
    translation: Vec3,
}

impl CameraPose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        CameraPose { rotation: canonical_quaternion(rotation), translation }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vec3::zeros())
    }

    pub fn from_matrix(rotation: &Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        check_rotation(rotation, 1e-6)?;
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*rotation);
        Ok(Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation))
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.rotation
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn transform_point(&self, point: &Vec3) -> Vec3 {
        self.rotation * point + self.translation
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self::new(inv, -(inv * self.translation))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &CameraPose) -> Self {
        Self::new(self.rotation * other.rotation, self.rotation * other.translation + self.translation)
    }
}

/// Flips a quaternion into the hemisphere `w ≥ 0`. When `w == 0` the first
/// non-zero vector component is made positive so that `q` and `-q` always
/// map to the same representative.
pub fn canonical_quaternion(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let c = q.coords; // [x, y, z, w]
    let key = [c[3], c[0], c[1], c[2]];
    let flip = key.iter().find(|v| **v != 0.0).is_some_and(|v| *v < 0.0);
    if flip {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Rotation given by the first two (not yet orthonormal) columns of a
/// rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D {
    pub a1: Vec3,
    pub a2: Vec3,
}

impl Rot6D {
    pub fn new(a1: Vec3, a2: Vec3) -> Self {
        Rot6D { a1, a2 }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Rot6D { a1: Vec3::new(v[0], v[1], v[2]), a2: Vec3::new(v[3], v[4], v[5]) }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a1.x, self.a1.y, self.a1.z, self.a2.x, self.a2.y, self.a2.z]
    }
}

/// Gram-Schmidt orthonormalisation of a 6D rotation into a proper rotation
/// matrix with columns `[b1 b2 b1×b2]`.
pub fn rot6d_to_matrix(v: &Rot6D) -> Result<Mat3, GeometryError> {
    if !v.a1.iter().chain(v.a2.iter()).all(|x| x.is_finite()) {
        return Err(GeometryError::DegenerateInput);
    }
    let n1 = v.a1.norm();
    if n1 < DEGENERATE_NORM {
        return Err(GeometryError::DegenerateInput);
    }
    let b1 = v.a1 / n1;
    let u = v.a2 - b1 * b1.dot(&v.a2);
    let nu = u.norm();
    if nu < DEGENERATE_NORM {
        return Err(GeometryError::DegenerateInput);
    }
    let b2 = u / nu;
    let b3 = b1.cross(&b2);
    Ok(Mat3::from_columns(&[b1, b2, b3]))
}

pub fn matrix_to_rot6d(r: &Mat3) -> Result<Rot6D, GeometryError> {
    check_rotation(r, 1e-6)?;
    Ok(Rot6D { a1: r.column(0).into_owned(), a2: r.column(1).into_owned() })
}

fn check_rotation(r: &Mat3, tol: f64) -> Result<(), GeometryError> {
    if !r.iter().all(|x| x.is_finite()) {
        return Err(GeometryError::NotARotation);
    }
    let err = (r.transpose() * r - Mat3::identity()).abs().max();
    if err > tol || (r.determinant() - 1.0).abs() > tol {
        return Err(GeometryError::NotARotation);
    }
    Ok(())
}

/// Angle of the relative rotation `R1ᵀR2`, in radians within `[0, π]`.
///
/// Evaluated as `atan2(sin θ, cos θ)` from the skew and trace parts of the
/// relative rotation. This is the same quantity as
/// `acos(clamp((tr(R1ᵀR2) − 1)/2))` but keeps full precision for angles close
/// to zero, where `acos` loses about half of the significant digits.
pub fn geodesic_distance(r1: &Mat3, r2: &Mat3) -> f64 {
    let e = r1.transpose() * r2;
    let cos = (e.trace() - 1.0) * 0.5;
    let sin = 0.5 * skew_vector(&e).norm();
    libm::atan2(sin, cos.clamp(-1.0, 1.0))
}

/// `geodesic_distance` for quaternions.
pub fn quaternion_distance(q1: &UnitQuaternion<f64>, q2: &UnitQuaternion<f64>) -> f64 {
    geodesic_distance(&q1.to_rotation_matrix().into_inner(), &q2.to_rotation_matrix().into_inner())
}

/// `vee(M − Mᵀ)`, which equals `2 sin θ · axis` for a rotation matrix.
pub(crate) fn skew_vector(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// Maps a plane from a camera frame into the world frame under `pose`:
/// `P = (1 + t·R(o·n)/‖R(o·n)‖²)·R(o·n)`, `n_w = P/‖P‖`, `o_w = ‖P‖`.
pub fn cam2world(plane: &Plane, pose: &CameraPose) -> Result<Plane, GeometryError> {
    plane.ensure_nondegenerate()?;
    let p = pose.rotation * plane.scaled_normal();
    let scale = 1.0 + pose.translation.dot(&p) / p.norm_squared();
    Plane::from_scaled_normal(&(p * scale))
}

/// Inverse of [`cam2world`]: `n_c = Rᵀn_w`, `o_c = o_w − tᵀn_w`.
pub fn world2cam(plane: &Plane, pose: &CameraPose) -> Result<Plane, GeometryError> {
    let normal = pose.rotation.inverse() * plane.normal;
    let offset = plane.offset - pose.translation.dot(&plane.normal);
    if offset.abs() <= MIN_OFFSET {
        return Err(GeometryError::DegenerateOffset(offset));
    }
    Plane::new(normal, offset)
}

/// Pinhole camera intrinsics, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Intrinsics { fx: 480.0, fy: 480.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Intrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidIntrinsics("cx must lie inside the image"));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics("cy must lie inside the image"));
        }
        Ok(())
    }

    /// Unnormalised viewing ray `((u−cx)/fx, (v−cy)/fy, 1)`.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Projects a camera-frame point; `None` when it is not in front of the
    /// camera.
    pub fn project(&self, point: &Vec3) -> Option<(f64, f64)> {
        if point.z <= 0.0 {
            return None;
        }
        Some((self.fx * point.x / point.z + self.cx, self.fy * point.y / point.z + self.cy))
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        (0.0..=self.width as f64).contains(&u) && (0.0..=self.height as f64).contains(&v)
    }
}

/// Intersects the viewing ray of pixel `(u, v)` with `plane`.
pub fn backproject(pixel: (f64, f64), plane: &Plane, k: &Intrinsics) -> Result<Vec3, GeometryError> {
    let ray = k.ray(pixel.0, pixel.1);
    let denom = plane.normal.dot(&ray);
    if denom.abs() < RAY_PARALLEL {
        return Err(GeometryError::RayParallel);
    }
    let depth = plane.offset / denom;
    if depth <= 0.0 {
        return Err(GeometryError::BehindCamera(depth));
    }
    Ok(ray * depth)
}
