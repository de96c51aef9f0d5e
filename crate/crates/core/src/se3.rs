//! Rigid transforms.

use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3, SVD};

use crate::error::{Error, Result};

/// Frobenius tolerance for accepting a rotation matrix as-is.
pub const ORTHONORMAL_TOL: f64 = 1e-9;
/// Inputs within this tolerance are projected back onto SO(3); worse ones are rejected.
pub const REPAIR_TOL: f64 = 1e-6;

/// Rotation `R` and translation `t`; maps `x` to `R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

fn orthonormality_error(r: &Matrix3<f64>) -> (f64, f64) {
    let ortho = (r.transpose() * r - Matrix3::identity()).norm();
    let det = (r.determinant() - 1.0).abs();
    (ortho, det)
}

/// Nearest rotation in the Frobenius sense.
fn project_to_so3(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = SVD::new(*r, true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t
}

impl PoseSE3 {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|x| x.is_finite()) {
            return Err(Error::InvalidPose("non-finite entries".into()));
        }
        let (ortho, det) = orthonormality_error(&rotation);
        if ortho <= ORTHONORMAL_TOL && det <= ORTHONORMAL_TOL {
            return Ok(Self {
                rotation,
                translation,
            });
        }
        if ortho <= REPAIR_TOL && det <= REPAIR_TOL {
            return Ok(Self {
                rotation: project_to_so3(&rotation),
                translation,
            });
        }
        Err(Error::InvalidPose(format!(
            "rotation not in SO(3): |RᵀR - I|_F = {ortho:.3e}, |det - 1| = {det:.3e}"
        )))
    }

    /// Row-major 9-vector rotation plus 3-vector translation, as in label files.
    pub fn from_arrays(r: &[f64; 9], t: &[f64; 3]) -> Result<Self> {
        Self::new(Matrix3::from_row_slice(r), Vector3::from_column_slice(t))
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: rotation.into_inner(),
            translation,
        }
    }

    pub fn from_axis_angle(axis: &Unit<Vector3<f64>>, angle: f64, translation: Vector3<f64>) -> Self {
        Self::from_rotation(Rotation3::from_axis_angle(axis, angle), translation)
    }

    /// Rotation about the camera optical axis (z).
    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z_axis(), angle, Vector3::zeros())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_array(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn translation_array(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    #[inline]
    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        PoseSE3 {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle of `self⁻¹ ∘ other` in radians.
    pub fn angle_to(&self, other: &PoseSE3) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
    }

    pub fn rotation_distance(&self, other: &PoseSE3) -> f64 {
        (self.rotation - other.rotation).norm()
    }

    pub fn translation_distance(&self, other: &PoseSE3) -> f64 {
        (self.translation - other.translation).norm()
    }
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

/// Free-function form of [`PoseSE3::compose`].
pub fn compose(a: &PoseSE3, b: &PoseSE3) -> PoseSE3 {
    a.compose(b)
}
