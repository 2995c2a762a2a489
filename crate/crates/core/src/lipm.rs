//! Linear inverted pendulum: natural frequency, dynamics and the
//! divergent-component-of-motion decomposition.
//!
//! All functions here work on horizontal coordinates only; vertical
//! components of inputs are ignored and outputs have `z = 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spatial::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LipmError {
    #[error("pendulum height must be positive (got {0} m)")]
    NonPositiveHeight(f64),
    #[error("gravity must be positive (got {0} m/s^2)")]
    NonPositiveGravity(f64),
    #[error("mass must be positive (got {0} kg)")]
    NonPositiveMass(f64),
}

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipmParams {
    pub mass: f64,
    pub gravity: f64,
    pub com_height: f64,
    omega: f64,
}

impl LipmParams {
    pub fn new(mass: f64, gravity: f64, com_height: f64) -> Result<Self, LipmError> {
        if !(mass > 0.0) {
            return Err(LipmError::NonPositiveMass(mass));
        }
        let omega = natural_frequency(gravity, com_height)?;
        Ok(Self { mass, gravity, com_height, omega })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LipmState {
    pub c: Vec3,
    pub cdot: Vec3,
    pub cddot: Vec3,
}

impl LipmState {
    pub fn at_rest(c: Vec3) -> Self {
        Self { c, cdot: Vec3::ZERO, cddot: Vec3::ZERO }
    }

    pub fn dcm(&self, omega: f64) -> Vec3 {
        dcm_of_state(self, omega)
    }

    /// ZMP consistent with this state under the pendulum model.
    pub fn zmp(&self, omega: f64) -> Vec3 {
        (self.c - self.cddot / (omega * omega)).horizontal()
    }
}

pub fn natural_frequency(g: f64, h: f64) -> Result<f64, LipmError> {
    if !(g > 0.0) {
        return Err(LipmError::NonPositiveGravity(g));
    }
    if !(h > 0.0) {
        return Err(LipmError::NonPositiveHeight(h));
    }
    Ok((g / h).sqrt())
}

/// `c̈ = ω²(c − z)`.
pub fn lipm_accel(c: Vec3, z: Vec3, omega: f64) -> Vec3 {
    ((c - z) * (omega * omega)).horizontal()
}

/// `ξ = c + ċ/ω`.
pub fn dcm_of_state(s: &LipmState, omega: f64) -> Vec3 {
    (s.c + s.cdot / omega).horizontal()
}

/// `ξ̇ = ω(ξ − z)`.
pub fn dcm_derivative(xi: Vec3, z: Vec3, omega: f64) -> Vec3 {
    ((xi - z) * omega).horizontal()
}

/// `ċ = ω(ξ − c)`.
pub fn com_derivative(c: Vec3, xi: Vec3, omega: f64) -> Vec3 {
    ((xi - c) * omega).horizontal()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn natural_frequency_examples() {
        assert_eq!(natural_frequency(9.81, 9.81).unwrap(), 1.0);
        assert_abs_diff_eq!(natural_frequency(9.81, 0.78).unwrap(), 3.546_395_8, epsilon = 1e-6);
        assert_eq!(natural_frequency(9.81, 0.0), Err(LipmError::NonPositiveHeight(0.0)));
        assert!(natural_frequency(9.81, -1.0).is_err());
    }

    #[test]
    fn pendulum_acceleration() {
        let c = Vec3::new(0.3, -0.1, 0.78);
        assert_eq!(lipm_accel(c, c.with_z(0.0), 3.0), Vec3::ZERO);
        let a = lipm_accel(Vec3::new(0.1, 0.0, 0.8), Vec3::ZERO, 3.0);
        assert_abs_diff_eq!(a.x, 0.9, epsilon = 1e-15);
        assert_eq!(a.z, 0.0);
        let a2 = lipm_accel(Vec3::new(0.2, 0.0, 0.8), Vec3::ZERO, 3.0);
        assert_abs_diff_eq!(a2.x, 2.0 * a.x, epsilon = 1e-15);
    }

    #[test]
    fn dcm_examples() {
        let s = LipmState::at_rest(Vec3::new(0.2, 0.1, 0.78));
        assert_eq!(dcm_of_state(&s, 3.5), s.c.horizontal());
        let s = LipmState { c: Vec3::ZERO, cdot: Vec3::new(0.35, 0.0, 0.0), cddot: Vec3::ZERO };
        assert_abs_diff_eq!(dcm_of_state(&s, 3.5).x, 0.1, epsilon = 1e-15);

        let d = dcm_derivative(Vec3::new(0.02, 0.0, 0.0), Vec3::ZERO, 3.5);
        assert_abs_diff_eq!(d.x, 0.07, epsilon = 1e-15);
        let d = dcm_derivative(Vec3::new(-0.02, 0.01, 0.0), Vec3::ZERO, 3.5);
        assert!(d.x < 0.0 && d.y > 0.0);

        let v = com_derivative(Vec3::ZERO, Vec3::new(0.01, -0.01, 0.0), 3.5);
        assert_abs_diff_eq!(v.x, 0.035, epsilon = 1e-15);
        assert_abs_diff_eq!(v.y, -0.035, epsilon = 1e-15);
        assert_eq!(com_derivative(Vec3::new(1.0, 2.0, 0.0), Vec3::new(1.0, 2.0, 0.0), 3.5), Vec3::ZERO);
    }

    #[test]
    fn first_order_pair_reproduces_pendulum_to_first_order() {
        // Integrate (ξ, c) with forward Euler and compare the finite-difference
        // CoM acceleration with the pendulum law.
        let omega = 3.5;
        let z = Vec3::new(0.01, -0.02, 0.0);
        let mut c = Vec3::new(0.05, 0.03, 0.0);
        let cdot0 = Vec3::new(0.1, -0.05, 0.0);
        let mut xi = c + cdot0 / omega;
        let a_expected = lipm_accel(c, z, omega);
        for &dt in &[1e-3, 1e-4] {
            let c0 = c;
            let v0 = com_derivative(c, xi, omega);
            let xi1 = xi + dcm_derivative(xi, z, omega) * dt;
            let c1 = c0 + v0 * dt;
            let v1 = com_derivative(c1, xi1, omega);
            let a_fd = (v1 - v0) / dt;
            assert!((a_fd - a_expected).norm() < 10.0 * dt, "dt={dt}");
            c = c0;
            xi = c0 + cdot0 / omega;
        }
    }

    #[test]
    fn com_converges_to_fixed_dcm() {
        let omega = 3.5;
        let xi = Vec3::new(0.3, -0.2, 0.0);
        let mut c = Vec3::ZERO;
        let mut last = (c - xi).norm();
        for _ in 0..2000 {
            c += com_derivative(c, xi, omega) * 1e-3;
            let d = (c - xi).norm();
            assert!(d < last);
            last = d;
        }
    }

    proptest! {
        #[test]
        fn decomposition_consistency(
            c in prop::array::uniform2(-1.0..1.0f64), v in prop::array::uniform2(-1.0..1.0f64),
            z in prop::array::uniform2(-1.0..1.0f64), omega in 1.0..6.0f64,
        ) {
            let c = Vec3::new(c[0], c[1], 0.0);
            let cdot = Vec3::new(v[0], v[1], 0.0);
            let z = Vec3::new(z[0], z[1], 0.0);
            let s = LipmState { c, cdot, cddot: lipm_accel(c, z, omega) };
            // d/dt (c + ċ/ω) = ċ + c̈/ω
            let lhs = s.cdot + s.cddot / omega;
            let rhs = dcm_derivative(dcm_of_state(&s, omega), z, omega);
            prop_assert!((lhs - rhs).norm_inf() <= 1e-12);
        }
    }
}
