//! Rotation algebra: the continuous 6D rotation parameterization, proper
//! rotation matrices, SO(3) exp/log, and body-frame angular velocity.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Below this angle `log_so3` and `exp_so3` use their first-order series.
pub const SMALL_ANGLE: f64 = 1e-7;

const ORTHO_TOL: f64 = 1e-9;

/// First two columns of a rotation matrix, column-major:
/// `(R00, R10, R20, R01, R11, R21)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub const IDENTITY: Rot6D = Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn columns(&self) -> (Vec3, Vec3) {
        let v = &self.0;
        (Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))
    }
}

/// A proper rotation (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl Default for RotationMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthonormality and orientation.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let err = (m * m.transpose() - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if !err.is_finite() || err > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidArgument(format!(
                "not a proper rotation (orthogonality error {err:e}, det {det})"
            )));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, rhs: &RotationMatrix) -> Self {
        Self(self.0 * rhs.0)
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        exp_so3(&(axis * (angle / n)))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::z(), angle)
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        log_so3(self).norm()
    }
}

fn gram_schmidt(a: Vec3, b: Vec3) -> Option<Matrix3<f64>> {
    let na = a.norm();
    if !(na > 1e-8) || !(b.norm() > 1e-8) {
        return None;
    }
    let e1 = a / na;
    let resid = b - e1 * e1.dot(&b);
    let nr = resid.norm();
    if !(nr > 1e-8 * b.norm()) {
        return None;
    }
    let e2 = resid / nr;
    let e3 = e1.cross(&e2);
    Some(Matrix3::from_columns(&[e1, e2, e3]))
}

/// Decodes the 6D representation: normalize column 1, orthogonalize and
/// normalize column 2, column 3 is their cross product.
pub fn rot6d_to_matrix(r: &Rot6D) -> Result<RotationMatrix> {
    let (a, b) = r.columns();
    gram_schmidt(a, b)
        .map(RotationMatrix)
        .ok_or_else(|| Error::DegenerateInput(format!("6D rotation columns degenerate: {:?}", r.0)))
}

/// Like [`rot6d_to_matrix`] but decodes degenerate input (e.g. raw network
/// outputs) to the identity.
pub fn rot6d_to_matrix_lenient(r: &Rot6D) -> RotationMatrix {
    rot6d_to_matrix(r).unwrap_or_default()
}

pub fn matrix_to_rot6d(r: &RotationMatrix) -> Rot6D {
    let m = &r.0;
    Rot6D([m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]])
}

fn hat(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee_skew(m: &Matrix3<f64>) -> Vec3 {
    // vee(M − Mᵀ)
    Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// Rodrigues exponential of a rotation vector.
pub fn exp_so3(v: &Vec3) -> RotationMatrix {
    let theta = v.norm();
    let k = hat(v);
    let m = if theta < SMALL_ANGLE {
        Matrix3::identity() + k + 0.5 * k * k
    } else {
        Matrix3::identity()
            + (theta.sin() / theta) * k
            + ((1.0 - theta.cos()) / (theta * theta)) * k * k
    };
    RotationMatrix(m)
}

/// Rotation vector of `r` with angle in `[0, π]`.
pub fn log_so3(r: &RotationMatrix) -> Vec3 {
    let m = &r.0;
    let w = vee_skew(m);
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let s = 0.5 * w.norm();
    let theta = s.atan2(c);
    if theta < SMALL_ANGLE {
        return 0.5 * w;
    }
    if c > -0.99 {
        return w * (theta / (2.0 * s));
    }
    // near π the skew part vanishes; recover the axis from the symmetric part
    let sym = 0.5 * (m + m.transpose()) - c * Matrix3::identity();
    let (mut best, mut best_val) = (0, sym[(0, 0)]);
    for i in 1..3 {
        if sym[(i, i)] > best_val {
            best = i;
            best_val = sym[(i, i)];
        }
    }
    let col = sym.column(best).into_owned();
    let mut axis = col / col.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Body-frame angular velocity taking `prev` to `next` over `dt` seconds:
/// `log(prevᵀ · next) / dt`.
pub fn angular_velocity(prev: &RotationMatrix, next: &RotationMatrix, dt: f64) -> Result<Vec3> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    Ok(log_so3(&prev.transpose().compose(next)) / dt)
}

/// Geodesic interpolation `a · exp(u · log(aᵀ b))`.
pub fn slerp(a: &RotationMatrix, b: &RotationMatrix, u: f64) -> RotationMatrix {
    let delta = log_so3(&a.transpose().compose(b));
    a.compose(&exp_so3(&(delta * u)))
}

/// Angle of the relative rotation between `a` and `b`.
pub fn geodesic_distance(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    a.transpose().compose(b).angle()
}
