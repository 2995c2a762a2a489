//! One control cycle of the stabilizer: DCM feedback, wrench distribution,
//! foot damping, foot force difference control and CoM admittance, turned
//! into a command for the plant servos.

use crate::admittance::{com_admittance, ffdc, foot_damping, AdmittanceGains, FfdcInput, FfdcOutput};
use crate::dcm::{net_wrench_from_zmp, DcmController, DcmGains, DcmReference};
use crate::estimator::MeasuredState;
use crate::lipm::LipmParams;
use crate::pattern::{pressure_ratio, Foot, GaitPhase, PatternSample, PhaseKind};
use crate::plant::{PlantCommand, PlantFootCommand, ServoGains};
use crate::scenario::ContactConfig;
use crate::spatial::{Vec3, Wrench6};
use crate::wrenchdist::{DistStatus, DistributionResult, DistributionWeights, Distributor, Support};

/// Time constant with which ankle commands of a swinging foot return to
/// zero (s).
pub const SWING_ANKLE_DECAY: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub lipm: LipmParams,
    pub dcm: DcmGains,
    pub admittance: AdmittanceGains,
    pub weights: DistributionWeights,
    pub contact: ContactConfig,
}

/// Admittance state of one foot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FootControl {
    /// Commanded ankle roll and pitch.
    pub roll: f64,
    pub pitch: f64,
    /// Commanded sole altitude, vertical velocity and acceleration.
    pub z: f64,
    pub vz: f64,
    pub az: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportKind {
    Double,
    Left,
    Right,
}

impl SupportKind {
    pub fn code(&self) -> u8 {
        match self {
            SupportKind::Double => 0,
            SupportKind::Left => 1,
            SupportKind::Right => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleOutput {
    pub command: PlantCommand,
    pub support: SupportKind,
    /// Pressure ratio used by the distribution (double support only).
    pub rho: Option<f64>,
    /// ZMP commanded by DCM feedback.
    pub z_cmd: Vec3,
    pub w_net: Wrench6,
    pub dist: Option<DistributionResult>,
    pub dist_status: DistStatus,
    /// Net ZMP of the distributed wrench (the commanded ZMP when the
    /// distribution is unavailable).
    pub z_qp: Vec3,
    pub ffdc: Option<FfdcOutput>,
    /// Commanded horizontal CoM acceleration.
    pub cddot_c: Vec3,
}

#[derive(Debug, Clone)]
pub struct Stabilizer {
    pub config: ControllerConfig,
    pub dcm: DcmController,
    pub distributor: Distributor,
    pub left: FootControl,
    pub right: FootControl,
}

impl Stabilizer {
    pub fn new(config: ControllerConfig, first: &PatternSample) -> Self {
        let foot = |z: f64| FootControl { z, ..FootControl::default() };
        Self {
            config,
            dcm: DcmController::new(config.dcm),
            distributor: Distributor::new(config.weights),
            left: foot(first.left.pose.translation.z),
            right: foot(first.right.pose.translation.z),
        }
    }

    fn foot_mut(&mut self, f: Foot) -> &mut FootControl {
        match f {
            Foot::Left => &mut self.left,
            Foot::Right => &mut self.right,
        }
    }

    pub fn step(&mut self, sample: &PatternSample, phase: &GaitPhase, m: &MeasuredState, dt: f64) -> CycleOutput {
        let cfg = self.config;
        let omega = cfg.lipm.omega();
        let reference = DcmReference { xi: sample.xi, zmp: sample.zmp };
        let z_cmd = self.dcm.step(&reference, m.xi, m.zmp, omega, dt, true);
        let plane = sample.zmp.z;
        let w_net = net_wrench_from_zmp(m.c, z_cmd, &cfg.lipm);

        let left_spec = cfg.contact.spec(&phase.left);
        let right_spec = cfg.contact.spec(&phase.right);
        let (support, rho) = match (phase.kind, phase.support_foot()) {
            (PhaseKind::SingleSupport, Some(Foot::Left)) => (SupportKind::Left, None),
            (PhaseKind::SingleSupport, Some(Foot::Right)) => (SupportKind::Right, None),
            (PhaseKind::DoubleSupport, _) => (SupportKind::Double, Some(pressure_ratio(phase, sample.t).unwrap_or(0.5))),
            _ => (SupportKind::Double, Some(0.5)),
        };
        let dist_support = match support {
            SupportKind::Left => Support::Left(&left_spec),
            SupportKind::Right => Support::Right(&right_spec),
            SupportKind::Double => Support::Double { left: &left_spec, right: &right_spec, rho: rho.unwrap_or(0.5) },
        };
        let (dist, dist_status) = self.distributor.step(&w_net, dist_support, plane);
        let z_qp = dist.map(|d| d.z_qp).filter(|z| z.is_finite()).unwrap_or(z_cmd);

        // foot damping on contacting feet, ankle commands relax in swing
        let gains = cfg.admittance;
        for foot in [Foot::Left, Foot::Right] {
            let in_contact = match support {
                SupportKind::Double => true,
                SupportKind::Left => foot == Foot::Left,
                SupportKind::Right => foot == Foot::Right,
            };
            let fm = m.foot(foot);
            let target = dist.map(|d| if foot == Foot::Left { d.cop_left } else { d.cop_right });
            let fc = self.foot_mut(foot);
            match (in_contact, target) {
                (true, Some(p_qp)) => {
                    let (roll_rate, pitch_rate) = foot_damping(p_qp, fm.wrench.force, fm.wrench.torque, &gains);
                    fc.roll += roll_rate * dt;
                    fc.pitch += pitch_rate * dt;
                }
                (true, None) => {}
                (false, _) => {
                    let a = (-dt / SWING_ANKLE_DECAY).exp();
                    fc.roll *= a;
                    fc.pitch *= a;
                }
            }
        }

        // vertical foot tasks
        let p_left = phase.left.position().z;
        let p_right = phase.right.position().z;
        let mut ffdc_out = None;
        match support {
            SupportKind::Double => {
                let input = FfdcInput {
                    v_left_d: 0.0,
                    v_right_d: 0.0,
                    f_left_qp: dist.map(|d| d.fz_left).unwrap_or(m.left.pressure()),
                    f_right_qp: dist.map(|d| d.fz_right).unwrap_or(m.right.pressure()),
                    f_left_m: m.left.pressure(),
                    f_right_m: m.right.pressure(),
                    p_left_d: p_left,
                    p_right_d: p_right,
                    p_left_c: self.left.z,
                    p_right_c: self.right.z,
                };
                let o = ffdc(&input, &gains);
                self.left.vz = o.v_left;
                self.right.vz = o.v_right;
                self.left.az = 0.0;
                self.right.az = 0.0;
                self.left.z += o.v_left * dt;
                self.right.z += o.v_right * dt;
                ffdc_out = Some(o);
            }
            SupportKind::Left | SupportKind::Right => {
                let (sup, swing) = if support == SupportKind::Left { (Foot::Left, Foot::Right) } else { (Foot::Right, Foot::Left) };
                let p_sup = if sup == Foot::Left { p_left } else { p_right };
                let target = *sample.foot(swing);
                let fs = self.foot_mut(sup);
                fs.z = p_sup;
                fs.vz = 0.0;
                fs.az = 0.0;
                let fw = self.foot_mut(swing);
                fw.z = target.pose.translation.z;
                fw.vz = target.velocity.z;
                fw.az = target.acceleration.z;
            }
        }

        let cddot_c = com_admittance(sample.cddot.horizontal(), m.zmp, z_qp, &gains);
        let foot_cmd = |foot: Foot, fc: &FootControl| {
            let t = sample.foot(foot);
            let servo = match support {
                SupportKind::Double => ServoGains::CONTACT,
                SupportKind::Left if foot == Foot::Left => ServoGains::SUPPORT,
                SupportKind::Right if foot == Foot::Right => ServoGains::SUPPORT,
                _ => ServoGains::SWING,
            };
            PlantFootCommand {
                x: t.pose.translation.x,
                y: t.pose.translation.y,
                yaw: t.pose.yaw(),
                z: fc.z,
                vz: fc.vz,
                az: fc.az,
                servo,
                roll: fc.roll,
                pitch: fc.pitch,
            }
        };
        let command = PlantCommand {
            com_ref: sample.c,
            com_ref_vel: sample.cdot,
            com_accel: Vec3::new(cddot_c.x, cddot_c.y, sample.cddot.z),
            left: foot_cmd(Foot::Left, &self.left),
            right: foot_cmd(Foot::Right, &self.right),
        };
        CycleOutput { command, support, rho, z_cmd, w_net, dist, dist_status, z_qp, ffdc: ffdc_out, cddot_c }
    }
}
