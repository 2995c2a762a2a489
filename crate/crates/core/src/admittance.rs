//! Whole-body admittance: foot damping, foot force difference control and
//! CoM admittance, plus the acceleration tracking law used by the servos.

use serde::{Deserialize, Serialize};

use crate::spatial::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdmittanceGains {
    /// Foot CoP admittance along x (pitch row) and y (roll row).
    pub a_cop_x: f64,
    pub a_cop_y: f64,
    pub a_dfz: f64,
    /// Vertical drift compensation time constant (s).
    pub t_vdc: f64,
    pub a_com_x: f64,
    pub a_com_y: f64,
    /// Pressure below which damping and CoM admittance are disabled (N).
    pub pressure_deadband: f64,
    /// Ankle rate clamp (rad/s).
    pub max_ankle_rate: f64,
    /// Vertical foot velocity clamp (m/s).
    pub max_vertical_velocity: f64,
}

impl Default for AdmittanceGains {
    fn default() -> Self {
        Self {
            a_cop_x: 0.1,
            a_cop_y: 0.1,
            a_dfz: 1e-4,
            t_vdc: 1.0,
            a_com_x: 20.0,
            a_com_y: 10.0,
            pressure_deadband: 10.0,
            max_ankle_rate: 1.0,
            max_vertical_velocity: 0.1,
        }
    }
}

impl AdmittanceGains {
    pub fn zero() -> Self {
        Self { a_cop_x: 0.0, a_cop_y: 0.0, a_dfz: 0.0, a_com_x: 0.0, a_com_y: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("a_cop_x", self.a_cop_x),
            ("a_cop_y", self.a_cop_y),
            ("a_dfz", self.a_dfz),
            ("a_com_x", self.a_com_x),
            ("a_com_y", self.a_com_y),
            ("pressure_deadband", self.pressure_deadband),
            ("max_ankle_rate", self.max_ankle_rate),
            ("max_vertical_velocity", self.max_vertical_velocity),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("admittance gain {name} must be a finite non-negative number (got {v})"));
            }
        }
        if !(self.t_vdc > 0.0) {
            return Err(format!("t_vdc must be positive (got {})", self.t_vdc));
        }
        Ok(())
    }
}

/// Ankle roll/pitch rates `A_cop (p_qp × f_m − τ_m)` (foot frame); the roll
/// rate uses the x-torque error and `A_cop,y`, the pitch rate the y-torque
/// error and `A_cop,x`. Returns zero below the pressure deadband. Rates are
/// clamped to `max_ankle_rate`.
pub fn foot_damping(p_qp: Vec3, f_m: Vec3, tau_m: Vec3, gains: &AdmittanceGains) -> (f64, f64) {
    if !(f_m.z > gains.pressure_deadband) {
        return (0.0, 0.0);
    }
    let err = p_qp.cross(&f_m) - tau_m;
    let clamp = |v: f64| v.clamp(-gains.max_ankle_rate, gains.max_ankle_rate);
    (clamp(gains.a_cop_y * err.x), clamp(gains.a_cop_x * err.y))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FfdcInput {
    pub v_left_d: f64,
    pub v_right_d: f64,
    pub f_left_qp: f64,
    pub f_right_qp: f64,
    pub f_left_m: f64,
    pub f_right_m: f64,
    /// Desired and commanded sole altitudes.
    pub p_left_d: f64,
    pub p_right_d: f64,
    pub p_left_c: f64,
    pub p_right_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FfdcOutput {
    pub v_left: f64,
    pub v_right: f64,
    pub v_dfz: f64,
    pub v_vdc: f64,
}

/// Foot force difference control without clamping.
pub fn ffdc_raw(i: &FfdcInput, gains: &AdmittanceGains) -> FfdcOutput {
    let v_dfz = gains.a_dfz * ((i.f_left_qp - i.f_right_qp) - (i.f_left_m - i.f_right_m));
    let v_vdc = ((i.p_left_d + i.p_right_d) - (i.p_left_c + i.p_right_c)) / gains.t_vdc;
    FfdcOutput {
        v_left: i.v_left_d - 0.5 * v_dfz + 0.5 * v_vdc,
        v_right: i.v_right_d + 0.5 * v_dfz + 0.5 * v_vdc,
        v_dfz,
        v_vdc,
    }
}

/// Foot force difference control; the corrections are clamped to
/// `max_vertical_velocity` before being added to the feedforward.
pub fn ffdc(i: &FfdcInput, gains: &AdmittanceGains) -> FfdcOutput {
    let raw = ffdc_raw(i, gains);
    let lim = gains.max_vertical_velocity;
    let v_dfz = raw.v_dfz.clamp(-lim, lim);
    let v_vdc = raw.v_vdc.clamp(-lim, lim);
    FfdcOutput {
        v_left: i.v_left_d - 0.5 * v_dfz + 0.5 * v_vdc,
        v_right: i.v_right_d + 0.5 * v_dfz + 0.5 * v_vdc,
        v_dfz,
        v_vdc,
    }
}

/// `c̈^c = c̈^d + A_com (z_m − z_qp)` on the horizontal axes; feedforward
/// only when `z_m` is unavailable.
pub fn com_admittance(cddot_d: Vec3, z_m: Option<Vec3>, z_qp: Vec3, gains: &AdmittanceGains) -> Vec3 {
    match z_m {
        Some(z_m) if z_m.is_finite() && z_qp.is_finite() => {
            let d = z_m - z_qp;
            cddot_d + Vec3::new(gains.a_com_x * d.x, gains.a_com_y * d.y, 0.0)
        }
        _ => cddot_d,
    }
}

/// `ẍ = K(x^c − x) + B(ẋ^c − ẋ) + ẍ^c`.
pub fn task_tracking_accel(x: f64, xd: f64, x_c: f64, xd_c: f64, xdd_c: f64, k: f64, b: f64) -> f64 {
    k * (x_c - x) + b * (xd_c - xd) + xdd_c
}
