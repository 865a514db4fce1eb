//! Rigid SE(3) transforms shared by fusion and registration.
//!
//! Rotations are stored as 3x3 matrices, the same representation used by the
//! KITTI pose files, so a parsed pose never goes through a quaternion.

use nalgebra::{Matrix3, Matrix4, Point3, Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::kitti_io::{FrameTag, PointCloud};

/// Tolerance for the orthonormality and determinant checks of a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// A rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, rejecting rotations that are not orthonormal with
    /// determinant +1 within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Self::with_tolerance(rotation, translation, ROTATION_TOLERANCE)
    }

    /// Like [`RigidTransform::new`] with a caller-chosen tolerance. Pose files
    /// are printed with limited precision and need a looser bound.
    pub fn with_tolerance(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        tolerance: f64,
    ) -> Result<Self> {
        if !rotation
            .iter()
            .chain(translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidTransform("non-finite entry".into()));
        }
        let err = orthonormality_error(&rotation);
        if err > tolerance {
            return Err(Error::InvalidTransform(format!(
                "rotation deviates from SO(3) by {err:.3e} (tolerance {tolerance:.1e})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized),
    /// followed by `translation`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if axis.norm() == 0.0 || angle == 0.0 {
            Matrix3::identity()
        } else {
            Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
        };
        Self {
            rotation,
            translation,
        }
    }

    /// Rotation about +z, the usual planar heading.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        let (s, c) = yaw.sin_cos();
        #[rustfmt::skip]
        let rotation = Matrix3::new(
            c, -s, 0.0,
            s, c, 0.0,
            0.0, 0.0, 1.0,
        );
        Self {
            rotation,
            translation,
        }
    }

    /// Interprets the top 3x4 block of a homogeneous matrix.
    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self> {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 3x4 entries, the layout of a KITTI pose line.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    /// `(self ∘ other)(p) = self(other(p))`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Rotation angle in radians, recovered from the trace.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Largest absolute elementwise difference of the 3x4 blocks.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let a = self.to_row_major_3x4();
        let b = other.to_row_major_3x4();
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.rotation)
    }
}

/// max(|RᵀR − I|_max, |det R − 1|)
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let off = gram.iter().map(|v| v.abs()).fold(0.0, f64::max);
    off.max((r.determinant() - 1.0).abs())
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// Applies `t` to every point; remission is carried over unchanged and the
/// frame tag is left for the caller to set.
pub fn apply_transform(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    let points = cloud.points().iter().map(|p| t.apply(p)).collect();
    PointCloud::from_parts_unchecked(points, cloud.remission().to_vec(), cloud.frame_tag())
}

/// Same as [`apply_transform`] but tags the output frame.
pub fn apply_transform_into(t: &RigidTransform, cloud: &PointCloud, frame: FrameTag) -> PointCloud {
    let mut out = apply_transform(t, cloud);
    out.set_frame_tag(frame);
    out
}

pub fn transform_points(t: &RigidTransform, points: &[Point3<f64>]) -> Vec<Point3<f64>> {
    points.iter().map(|p| t.apply(p)).collect()
}

/// Euclidean distance computed as `sqrt(dx² + dy² + dz²)` in that order.
/// Sampling and clustering use this single definition so that distance
/// thresholds compare identically everywhere.
#[inline]
pub fn distance(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    distance_squared(a, b).sqrt()
}

#[inline]
pub fn distance_squared(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

pub fn centroid(points: &[Point3<f64>]) -> Option<Point3<f64>> {
    if points.is_empty() {
        return None;
    }
    let sum = points
        .iter()
        .fold(Vector3::zeros(), |acc: Vector3<f64>, p| acc + p.coords);
    Some(Point3::from(sum / points.len() as f64))
}
