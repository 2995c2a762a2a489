//! DCM feedback: proportional, leaky-integral and ZMP terms on the DCM
//! error, mapped to a commanded ZMP and net contact wrench.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lipm::LipmParams;
use crate::spatial::{FrameId, Vec3, Wrench6};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GainError {
    #[error("gain {name} is invalid ({value})")]
    Invalid { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcmGains {
    pub k_p: f64,
    pub k_i: f64,
    pub k_z: f64,
    /// Time constant of the leaky integrator (s).
    pub t_i: f64,
}

impl Default for DcmGains {
    fn default() -> Self {
        Self { k_p: 5.0, k_i: 20.0, k_z: 2.0, t_i: 20.0 }
    }
}

impl DcmGains {
    /// `k_p = 0` is accepted so that the stabilizer can be switched off
    /// entirely in experiments.
    pub fn validate(&self) -> Result<(), GainError> {
        let check = |name, value: f64, ok: bool| if ok && value.is_finite() { Ok(()) } else { Err(GainError::Invalid { name, value }) };
        check("k_p", self.k_p, self.k_p >= 0.0)?;
        check("k_i", self.k_i, self.k_i >= 0.0)?;
        check("k_z", self.k_z, self.k_z >= 0.0)?;
        check("t_i", self.t_i, self.t_i > 0.0)
    }

    pub fn zero() -> Self {
        Self { k_p: 0.0, k_i: 0.0, k_z: 0.0, t_i: 20.0 }
    }
}

/// Exponential moving average of the DCM error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakyIntegrator {
    pub value: Vec3,
    pub time_constant: f64,
}

impl LeakyIntegrator {
    pub fn new(time_constant: f64) -> Self {
        Self { value: Vec3::ZERO, time_constant }
    }
}

/// Zero-order-hold discretization of `ẏ = (x − y)/T`:
/// `y ← y·e^{−dt/T} + x·(1 − e^{−dt/T})`.
///
/// The new value is a convex combination of the old value and the input, so
/// it never leaves the ball of the largest input seen.
pub fn leaky_update(acc: LeakyIntegrator, x: Vec3, dt: f64) -> LeakyIntegrator {
    let a = (-dt / acc.time_constant).exp();
    LeakyIntegrator { value: acc.value * a + x * (1.0 - a), time_constant: acc.time_constant }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcmReference {
    pub xi: Vec3,
    pub zmp: Vec3,
}

/// `z = z_d − (1 + k_p/ω)(ξ_d − ξ_m) − (k_i/ω)·avg(ξ_d − ξ_m) + (k_z/ω)(z_d − z_m)`
///
/// `zmp_error` is `z_d − z_m` (horizontal); the integrator is updated with
/// the current DCM error when `integrate` is set and the returned value is
/// computed with the updated average.
#[allow(clippy::too_many_arguments)]
pub fn dcm_feedback(
    reference: &DcmReference,
    xi_m: Vec3,
    zmp_error: Vec3,
    gains: &DcmGains,
    integ: LeakyIntegrator,
    omega: f64,
    dt: f64,
    integrate: bool,
) -> (Vec3, LeakyIntegrator) {
    let e = (reference.xi - xi_m).horizontal();
    let integ = if integrate { leaky_update(integ, e, dt) } else { integ };
    let z = reference.zmp.horizontal() - e * (1.0 + gains.k_p / omega) - integ.value * (gains.k_i / omega)
        + zmp_error.horizontal() * (gains.k_z / omega);
    (z.with_z(reference.zmp.z), integ)
}

/// Net contact wrench equivalent to the commanded ZMP under the pendulum
/// model, expressed about the world origin: `f = (mω²(c − z)_xy, m g)` with
/// zero torque about the CoM.
pub fn net_wrench_from_zmp(c: Vec3, z_cmd: Vec3, params: &LipmParams) -> Wrench6 {
    let w2 = params.omega() * params.omega();
    let d = (c - z_cmd).horizontal();
    let f = Vec3::new(params.mass * w2 * d.x, params.mass * w2 * d.y, params.mass * params.gravity);
    Wrench6::new(f, c.cross(&f), FrameId::World)
}

/// Controller state: the integrator and the last valid ZMP error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcmController {
    pub gains: DcmGains,
    pub integ: LeakyIntegrator,
    last_zmp_error: Vec3,
}

impl DcmController {
    pub fn new(gains: DcmGains) -> Self {
        Self { gains, integ: LeakyIntegrator::new(gains.t_i), last_zmp_error: Vec3::ZERO }
    }

    /// `z_m` is `None` when total pressure is below the deadband; the ZMP
    /// term then reuses its last valid value.
    pub fn step(&mut self, reference: &DcmReference, xi_m: Vec3, z_m: Option<Vec3>, omega: f64, dt: f64, integrate: bool) -> Vec3 {
        if let Some(z) = z_m {
            self.last_zmp_error = (reference.zmp - z).horizontal();
        }
        let (z, integ) = dcm_feedback(reference, xi_m, self.last_zmp_error, &self.gains, self.integ, omega, dt, integrate);
        self.integ = integ;
        z
    }
}
