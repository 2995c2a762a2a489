//! Minimal spatial algebra: 3-vectors, rotations, rigid transforms and
//! frame-tagged contact wrenches.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("non-positive pressure f_z = {0} N")]
    NonPositivePressure(f64),
    #[error("rotation is not orthonormal (deviation {0:e})")]
    NotARotation(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const UNIT_Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(&self, o: &Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    /// Copy with the vertical component zeroed.
    pub fn horizontal(&self) -> Vec3 {
        Vec3::new(self.x, self.y, 0.0)
    }

    pub fn with_z(&self, z: f64) -> Vec3 {
        Vec3::new(self.x, self.y, z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn component_mul(&self, o: &Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6}, {:.6})", self.x, self.y, self.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn rot_x(a: f64) -> Mat3 {
        let (s, c) = a.sin_cos();
        Mat3([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    pub fn rot_y(a: f64) -> Mat3 {
        let (s, c) = a.sin_cos();
        Mat3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    pub fn rot_z(a: f64) -> Mat3 {
        let (s, c) = a.sin_cos();
        Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    /// R = Rz(yaw) * Ry(pitch) * Rx(roll).
    pub fn from_rpy(roll: f64, pitch: f64, yaw: f64) -> Mat3 {
        Mat3::rot_z(yaw) * Mat3::rot_y(pitch) * Mat3::rot_x(roll)
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest entry of |R^T R - I| plus |det R - 1|.
    pub fn orthonormality_error(&self) -> f64 {
        let p = self.transpose() * *self;
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((p.0[i][j] - target).abs());
            }
        }
        err + (self.det() - 1.0).abs()
    }

    pub fn col(&self, j: usize) -> Vec3 {
        Vec3::new(self.0[0][j], self.0[1][j], self.0[2][j])
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(r)
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }
}

/// Frames used by the stabilizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameId {
    World,
    LeftSoleCenter,
    RightSoleCenter,
    LeftAnkle,
    RightAnkle,
}

/// Rigid transform mapping coordinates of a source frame into a target frame:
/// `p_target = rotation * p_source + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Transform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Transform {
    pub const IDENTITY: Transform = Transform { rotation: Mat3::IDENTITY, translation: Vec3::ZERO };

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, SpatialError> {
        let err = rotation.orthonormality_error();
        if err > 1e-9 {
            return Err(SpatialError::NotARotation(err));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self { rotation: Mat3::IDENTITY, translation: t }
    }

    pub fn from_yaw_translation(yaw: f64, t: Vec3) -> Self {
        Self { rotation: Mat3::rot_z(yaw), translation: t }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Transform {
        let rt = self.rotation.transpose();
        Transform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ inner`: first apply `inner`, then `self`.
    pub fn compose(&self, inner: &Transform) -> Transform {
        Transform {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    pub fn yaw(&self) -> f64 {
        self.rotation.0[1][0].atan2(self.rotation.0[0][0])
    }
}

/// Contact wrench: force and torque about the origin of `frame`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench6 {
    pub force: Vec3,
    pub torque: Vec3,
    pub frame: FrameId,
}

impl Wrench6 {
    pub fn new(force: Vec3, torque: Vec3, frame: FrameId) -> Self {
        Self { force, torque, frame }
    }

    pub fn zero(frame: FrameId) -> Self {
        Self::new(Vec3::ZERO, Vec3::ZERO, frame)
    }

    /// Stacked `[f_x, f_y, f_z, τ_x, τ_y, τ_z]`.
    pub fn to_array(&self) -> [f64; 6] {
        [self.force.x, self.force.y, self.force.z, self.torque.x, self.torque.y, self.torque.z]
    }

    pub fn from_slice(v: &[f64], frame: FrameId) -> Self {
        Self::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]), frame)
    }

    pub fn is_finite(&self) -> bool {
        self.force.is_finite() && self.torque.is_finite()
    }

    /// Sum of two wrenches expressed in the same frame.
    pub fn plus(&self, o: &Wrench6) -> Wrench6 {
        debug_assert_eq!(self.frame, o.frame);
        Wrench6::new(self.force + o.force, self.torque + o.torque, self.frame)
    }
}

/// Re-expresses `w` in the frame reached by `x`.
pub fn transform_wrench(w: &Wrench6, x: &Transform, target: FrameId) -> Wrench6 {
    let f = x.rotation * w.force;
    let tau = x.rotation * w.torque + x.translation.cross(&f);
    Wrench6::new(f, tau, target)
}

/// 6x6 matrix `M` such that `transform_wrench(w, x)` equals `M * w` in the
/// `[f; τ]` stacking.
pub fn wrench_transform_matrix(x: &Transform) -> [[f64; 6]; 6] {
    let r = &x.rotation.0;
    let t = x.translation;
    // skew(t) * R
    let skew = [[0.0, -t.z, t.y], [t.z, 0.0, -t.x], [-t.y, t.x, 0.0]];
    let mut m = [[0.0; 6]; 6];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j];
            m[3 + i][3 + j] = r[i][j];
            m[3 + i][j] = (0..3).map(|k| skew[i][k] * r[k][j]).sum();
        }
    }
    m
}

/// Center of pressure of a wrench expressed in a sole frame (z normal).
pub fn cop_of_wrench(w: &Wrench6) -> Result<Vec3, SpatialError> {
    let fz = w.force.z;
    if fz <= 0.0 || fz.is_nan() {
        return Err(SpatialError::NonPositivePressure(fz));
    }
    Ok(Vec3::new(-w.torque.y / fz, w.torque.x / fz, 0.0))
}

/// Zero-tilting moment point of a wrench given about the world origin, on
/// the horizontal plane at `height`.
pub fn zmp_of_world_wrench(w: &Wrench6, height: f64) -> Result<Vec3, SpatialError> {
    let f = w.force;
    if f.z <= 0.0 || f.z.is_nan() {
        return Err(SpatialError::NonPositivePressure(f.z));
    }
    let tau = w.torque;
    Ok(Vec3::new((f.x * height - tau.y) / f.z, (f.y * height + tau.x) / f.z, height))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn close(a: &Wrench6, b: &Wrench6, tol: f64) -> bool {
        (a.force - b.force).norm_inf() <= tol && (a.torque - b.torque).norm_inf() <= tol
    }

    #[test]
    fn identity_leaves_wrench_unchanged() {
        let w = Wrench6::new(Vec3::new(1.0, -2.0, 300.0), Vec3::new(0.5, 0.1, -0.2), FrameId::LeftAnkle);
        let out = transform_wrench(&w, &Transform::IDENTITY, FrameId::LeftAnkle);
        assert_eq!(out.force, w.force);
        assert_eq!(out.torque, w.torque);
    }

    #[test]
    fn pure_translation_shifts_torque() {
        let w = Wrench6::new(Vec3::new(0.0, 0.0, 100.0), Vec3::ZERO, FrameId::LeftSoleCenter);
        let x = Transform::from_translation(Vec3::new(0.1, 0.0, 0.0));
        let out = transform_wrench(&w, &x, FrameId::World);
        assert_abs_diff_eq!(out.torque.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.torque.y, -10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.torque.z, 0.0, epsilon = 1e-15);
        assert_eq!(out.frame, FrameId::World);
    }

    #[test]
    fn round_trip_restores_wrench() {
        let w = Wrench6::new(Vec3::new(3.0, -4.0, 250.0), Vec3::new(1.0, 2.0, -0.3), FrameId::RightSoleCenter);
        let x = Transform::new(Mat3::from_rpy(0.1, -0.2, 0.7), Vec3::new(0.3, -0.1, 0.05)).unwrap();
        let there = transform_wrench(&w, &x, FrameId::World);
        let back = transform_wrench(&there, &x.inverse(), FrameId::RightSoleCenter);
        assert!(close(&back, &w, 1e-12));
    }

    #[test]
    fn matrix_form_matches_transform() {
        let w = Wrench6::new(Vec3::new(3.0, -4.0, 250.0), Vec3::new(1.0, 2.0, -0.3), FrameId::World);
        let x = Transform::new(Mat3::from_rpy(0.2, 0.1, -0.4), Vec3::new(-0.2, 0.4, 0.1)).unwrap();
        let direct = transform_wrench(&w, &x, FrameId::World).to_array();
        let m = wrench_transform_matrix(&x);
        let v = w.to_array();
        for i in 0..6 {
            let mv: f64 = (0..6).map(|j| m[i][j] * v[j]).sum();
            assert_abs_diff_eq!(mv, direct[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_non_rotation() {
        let bad = Mat3([[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(Transform::new(bad, Vec3::ZERO).is_err());
    }

    #[test]
    fn cop_examples() {
        let centered = Wrench6::new(Vec3::new(0.0, 0.0, 400.0), Vec3::ZERO, FrameId::LeftSoleCenter);
        assert_eq!(cop_of_wrench(&centered).unwrap(), Vec3::ZERO);
        let shifted = Wrench6::new(Vec3::new(0.0, 0.0, 400.0), Vec3::new(4.0, 0.0, 0.0), FrameId::LeftSoleCenter);
        let p = cop_of_wrench(&shifted).unwrap();
        assert_abs_diff_eq!(p.x, 0.0);
        assert_abs_diff_eq!(p.y, 0.01, epsilon = 1e-15);
        let pulling = Wrench6::new(Vec3::new(0.0, 0.0, -1.0), Vec3::ZERO, FrameId::LeftSoleCenter);
        assert!(matches!(cop_of_wrench(&pulling), Err(SpatialError::NonPositivePressure(_))));
    }

    fn arb_transform() -> impl Strategy<Value = Transform> {
        (-3.0..3.0f64, -1.0..1.0f64, -3.0..3.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(
            |(r, p, y, tx, ty, tz)| Transform { rotation: Mat3::from_rpy(r, p, y), translation: Vec3::new(tx, ty, tz) },
        )
    }

    proptest! {
        #[test]
        fn composition_matches_sequential_transforms(
            x1 in arb_transform(), x2 in arb_transform(),
            f in prop::array::uniform3(-500.0..500.0f64), t in prop::array::uniform3(-50.0..50.0f64),
        ) {
            let w = Wrench6::new(Vec3::from_array(f), Vec3::from_array(t), FrameId::LeftSoleCenter);
            let seq = transform_wrench(&transform_wrench(&w, &x1, FrameId::LeftAnkle), &x2, FrameId::World);
            let comp = transform_wrench(&w, &x2.compose(&x1), FrameId::World);
            prop_assert!(close(&seq, &comp, 1e-9));
        }

        #[test]
        fn cop_of_vertical_force_at_point(px in -0.2..0.2f64, py in -0.2..0.2f64, fz in 1.0..1000.0f64) {
            let p = Vec3::new(px, py, 0.0);
            let f = Vec3::new(0.0, 0.0, fz);
            let w = Wrench6::new(f, p.cross(&f), FrameId::RightSoleCenter);
            let cop = cop_of_wrench(&w).unwrap();
            prop_assert!((cop - p).norm_inf() <= 1e-15 * (1.0 + fz));
        }

        #[test]
        fn power_pairing_is_preserved(x in arb_transform(),
            f in prop::array::uniform3(-500.0..500.0f64), t in prop::array::uniform3(-50.0..50.0f64),
            v in prop::array::uniform3(-1.0..1.0f64), om in prop::array::uniform3(-1.0..1.0f64)) {
            // twist (v at source origin, ω) maps to (R v + t × R ω, R ω)
            let w = Wrench6::new(Vec3::from_array(f), Vec3::from_array(t), FrameId::LeftAnkle);
            let (v, om) = (Vec3::from_array(v), Vec3::from_array(om));
            let om2 = x.rotation * om;
            let v2 = x.rotation * v + x.translation.cross(&om2);
            let w2 = transform_wrench(&w, &x, FrameId::World);
            let p1 = w.force.dot(&v) + w.torque.dot(&om);
            let p2 = w2.force.dot(&v2) + w2.torque.dot(&om2);
            prop_assert!((p1 - p2).abs() <= 1e-9 * (1.0 + p1.abs()));
        }
    }
}
