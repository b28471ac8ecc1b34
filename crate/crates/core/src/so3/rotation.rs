//! Rotations as unit quaternions and rigid transforms built on them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

const UNIT_TOL: f64 = 1e-12;

/// Element of SO(3), stored as a unit quaternion `(w, x, y, z)`.
///
/// `q` and `-q` describe the same rotation; equality comparisons should go
/// through [`Rotation::geodesic_distance`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub const fn identity() -> Self {
        Self { w: 1.0, x: 0.0, y: 0.0, z: 0.0 }
    }

    /// Builds a rotation from a quaternion that must already be unit length.
    pub fn from_unit_quaternion(q: [f64; 4]) -> Result<Self> {
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!("quaternion norm {n} is not 1")));
        }
        Ok(Self::from_quaternion(q))
    }

    /// Normalizes an arbitrary non-zero quaternion.
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        Self { w: q[0] / n, x: q[1] / n, y: q[2] / n, z: q[3] / n }
    }

    pub fn quaternion(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation by `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = norm(axis);
        if n < 1e-300 {
            return Self::identity();
        }
        let (s, c) = (0.5 * angle).sin_cos();
        Self::from_quaternion([c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n])
    }

    /// Exponential map from a rotation vector (axis times angle).
    pub fn exp(omega: Vec3) -> Self {
        let angle = norm(omega);
        if angle < 1e-12 {
            // second order accurate near zero
            return Self::from_quaternion([1.0, 0.5 * omega[0], 0.5 * omega[1], 0.5 * omega[2]]);
        }
        Self::from_axis_angle(omega, angle)
    }

    /// Rotation vector with angle in `[0, π]`.
    pub fn log(&self) -> Vec3 {
        let (w, v) = if self.w < 0.0 { (-self.w, [-self.x, -self.y, -self.z]) } else { (self.w, [self.x, self.y, self.z]) };
        let s = norm(v);
        if s < 1e-15 {
            return [2.0 * v[0], 2.0 * v[1], 2.0 * v[2]];
        }
        let angle = 2.0 * s.atan2(w);
        [v[0] / s * angle, v[1] / s * angle, v[2] / s * angle]
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle([1.0, 0.0, 0.0], angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle([0.0, 1.0, 0.0], angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle([0.0, 0.0, 1.0], angle)
    }

    /// `Rz(alpha) · Ry(beta) · Rz(gamma)`.
    pub fn from_euler_zyz(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self::rot_z(alpha).compose(&Self::rot_y(beta)).compose(&Self::rot_z(gamma))
    }

    /// Extrinsic x, then y, then z: `Rz(z) · Ry(y) · Rx(x)`.
    pub fn from_euler_xyz(x: f64, y: f64, z: f64) -> Self {
        Self::rot_z(z).compose(&Self::rot_y(y)).compose(&Self::rot_x(x))
    }

    /// Uniformly distributed random rotation (Shoemake's method).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
        let u3: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        Self::from_quaternion([b * u3.cos(), a * u2.sin(), a * u2.cos(), b * u3.sin()])
    }

    /// Group product `self · other` (apply `other` first).
    pub fn compose(&self, o: &Rotation) -> Rotation {
        let (a, b) = (self, o);
        Rotation::from_quaternion([
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        ])
    }

    pub fn inverse(&self) -> Rotation {
        Rotation { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn matrix(&self) -> Mat3 {
        let Rotation { w, x, y, z } = *self;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    /// Rotation from an orthogonal matrix with positive determinant.
    pub fn from_matrix(m: &Mat3) -> Result<Self> {
        let mut ortho_err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                ortho_err = ortho_err.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        if ortho_err > 1e-6 || det3(m) < 0.0 {
            return Err(Error::Domain("matrix is not a proper rotation".into()));
        }
        let tr = m[0][0] + m[1][1] + m[2][2];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            [0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s]
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            [(m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s]
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            [(m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s]
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            [(m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s]
        };
        Ok(Self::from_quaternion(q))
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        mat_vec(&self.matrix(), v)
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let v = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * v.atan2(self.w.abs())
    }

    /// Angle of `a⁻¹ · b`, in radians.
    pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
        let d = (a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z).abs().min(1.0);
        2.0 * d.acos()
    }

    pub fn is_unit(&self) -> bool {
        let n = (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        (n - 1.0).abs() < UNIT_TOL
    }
}

/// Element of SE(3): `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        Self { rotation, translation: [0.0; 3] }
    }

    /// Rotation by `rotation` about the point `center`.
    pub fn about_point(rotation: Rotation, center: Vec3) -> Self {
        let rc = rotation.apply(center);
        Self { rotation, translation: sub(center, rc) }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        add(self.rotation.apply(p), self.translation)
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform { rotation: self.rotation.compose(&other.rotation), translation: self.apply(other.translation) }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        let t = inv.apply(self.translation);
        RigidTransform { rotation: inv, translation: [-t[0], -t[1], -t[2]] }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_translation: f64) -> Self {
        let rotation = Rotation::random(rng);
        let translation = [
            rng.gen_range(-max_translation..=max_translation),
            rng.gen_range(-max_translation..=max_translation),
            rng.gen_range(-max_translation..=max_translation),
        ];
        Self { rotation, translation }
    }
}

pub fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matrix_is_orthonormal_with_unit_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let r = Rotation::random(&mut rng);
            assert!(r.is_unit());
            let m = r.matrix();
            assert!((det3(&m) - 1.0).abs() < 1e-10);
            for i in 0..3 {
                for j in 0..3 {
                    let d: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                    assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = Rotation::random(&mut rng);
        assert!(Rotation::geodesic_distance(&Rotation::identity().compose(&r), &r) < 1e-12);
        assert!(r.compose(&r.inverse()).angle() < 1e-7);
    }

    #[test]
    fn compose_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (Rotation::random(&mut rng), Rotation::random(&mut rng));
        let v = [0.3, -1.2, 0.7];
        let lhs = a.compose(&b).apply(v);
        let rhs = a.apply(b.apply(v));
        assert!(dist(lhs, rhs) < 1e-12);
    }

    #[test]
    fn matrix_round_trip_and_log_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let r = Rotation::random(&mut rng);
            let back = Rotation::from_matrix(&r.matrix()).unwrap();
            assert!(Rotation::geodesic_distance(&r, &back) < 1e-7);
            let again = Rotation::exp(r.log());
            assert!(Rotation::geodesic_distance(&r, &again) < 1e-7);
        }
    }

    #[test]
    fn geodesic_distance_of_axis_rotation() {
        let r = Rotation::rot_z(0.7);
        assert!((Rotation::geodesic_distance(&Rotation::identity(), &r) - 0.7).abs() < 1e-7);
    }

    #[test]
    fn rigid_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = RigidTransform::random(&mut rng, 1.0);
        let p = [0.1, 0.2, -0.4];
        assert!(dist(g.inverse().apply(g.apply(p)), p) < 1e-12);
        let c = [0.5, 0.5, 0.5];
        let about = RigidTransform::about_point(g.rotation, c);
        assert!(dist(about.apply(c), c) < 1e-12);
    }

    #[test]
    fn non_unit_quaternion_is_rejected() {
        assert!(Rotation::from_unit_quaternion([2.0, 0.0, 0.0, 0.0]).is_err());
        assert!(Rotation::from_matrix(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]]).is_err());
    }
}
