//! Reduced test plant: a point-mass CoM carried by two massless legs whose
//! geometry is set by position-controlled servos, with a flexible joint
//! between each ankle and its sole and corner spring-dampers against the
//! terrain.
//!
//! The horizontal CoM dynamics follow from the massless-leg constraint: the
//! net contact force passes through the CoM, so its horizontal part is
//! `N (c − q)_xy / (c_z − q_z)` where `N` is the total normal force and `q`
//! the pressure centroid of the loaded sole corners. The corner loads depend
//! on the sole tilts, which balance the flexible-joint torque against the
//! ground torque, and on the leg lengths, which decide how the load is
//! shared between the feet. The flexible joint deflects with the commanded
//! ankle angles and with the body lean `c − c^k` (actual minus kinematic
//! CoM), which is how kinematic CoM motion reaches the contact forces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admittance::task_tracking_accel;
use crate::pattern::Foot;
use crate::spatial::{FrameId, Mat3, Transform, Vec3, Wrench6};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("numerical divergence at t = {t:.3} s: {what}")]
    NumericalDivergence { t: f64, what: String },
}

/// Horizontal rectangle of terrain at height `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Patch {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z: f64,
}

impl Patch {
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }
}

/// Flat ground at height 0 plus raised patches.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Terrain {
    pub patches: Vec<Patch>,
}

impl Terrain {
    pub fn flat() -> Self {
        Self::default()
    }

    /// `n` steps of tread `length` and riser `height`; the first riser is at
    /// `x_start`, the top tread extends 2 m.
    pub fn stairs(n: usize, length: f64, height: f64, x_start: f64) -> Self {
        let patches = (1..=n)
            .map(|k| Patch {
                x_min: x_start + (k - 1) as f64 * length,
                x_max: if k == n { x_start + (k - 1) as f64 * length + 2.0 } else { x_start + k as f64 * length },
                y_min: -2.0,
                y_max: 2.0,
                z: k as f64 * height,
            })
            .collect();
        Self { patches }
    }

    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        self.patches.iter().filter(|p| p.contains(x, y)).map(|p| p.z).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), String> {
        for (i, a) in self.patches.iter().enumerate() {
            if !(a.x_min < a.x_max && a.y_min < a.y_max && a.z.is_finite()) {
                return Err(format!("terrain patch {i} is degenerate"));
            }
            for (j, b) in self.patches.iter().enumerate().skip(i + 1) {
                let overlap = a.x_min < b.x_max && b.x_min < a.x_max && a.y_min < b.y_max && b.y_min < a.y_max;
                if overlap {
                    return Err(format!("terrain patches {i} and {j} overlap"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactParams {
    /// Corner normal stiffness (N/m).
    pub k_n: f64,
    /// Corner normal damping (N·s/m).
    pub d_n: f64,
    pub mu: f64,
    /// Tangential viscous coefficient for sliding corners (N·s/m).
    pub d_t: f64,
    /// Corners deeper than this are treated as hitting a riser side and
    /// produce no force (m).
    pub penetration_cutoff: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { k_n: 1e5, d_n: 1e3, mu: 0.7, d_t: 1e3, penetration_cutoff: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactResult {
    /// Contact wrench about the sole center, in the sole frame.
    pub wrench: Wrench6,
    /// Same wrench in world axes (about the sole center).
    pub world_force: Vec3,
    pub world_torque: Vec3,
    pub corner_forces: [f64; 4],
    pub penetrations: [f64; 4],
    /// World positions of the sole corners.
    pub corners: [Vec3; 4],
}

/// Sole-frame corner offsets in the order front-left, back-left,
/// back-right, front-right.
pub fn corner_offsets(half_x: f64, half_y: f64) -> [Vec3; 4] {
    [Vec3::new(half_x, half_y, 0.0), Vec3::new(-half_x, half_y, 0.0), Vec3::new(-half_x, -half_y, 0.0), Vec3::new(half_x, -half_y, 0.0)]
}

/// Corner spring-damper contact of a rectangular sole.
///
/// `prev_penetration` holds the corner penetrations of the previous
/// substep (for the damping term) and `h` is the substep length. The sole
/// moves with linear velocity `velocity` (used for tangential viscous
/// friction, clamped to the friction disc).
#[allow(clippy::too_many_arguments)]
pub fn contact_wrench(
    sole: &Transform,
    velocity: Vec3,
    half_x: f64,
    half_y: f64,
    terrain: &Terrain,
    params: &ContactParams,
    prev_penetration: &[f64; 4],
    h: f64,
) -> ContactResult {
    let offsets = corner_offsets(half_x, half_y);
    let mut corners = [Vec3::ZERO; 4];
    let mut pen = [0.0; 4];
    let mut normal = [0.0; 4];
    let mut force = Vec3::ZERO;
    let mut torque = Vec3::ZERO;
    for i in 0..4 {
        let r = sole.rotation * offsets[i];
        let p = sole.translation + r;
        corners[i] = p;
        let depth = terrain.height_at(p.x, p.y) - p.z;
        if depth <= 0.0 || depth > params.penetration_cutoff {
            continue;
        }
        pen[i] = depth;
        let rate = if h > 0.0 && prev_penetration[i] > 0.0 { (depth - prev_penetration[i]) / h } else { 0.0 };
        let n = (params.k_n * depth + params.d_n * rate).max(0.0);
        normal[i] = n;
        let vt = velocity.horizontal();
        let mut ft = vt * (-params.d_t);
        let lim = params.mu * n;
        if ft.norm() > lim {
            ft = ft * (lim / ft.norm());
        }
        let f = Vec3::new(ft.x, ft.y, n);
        force += f;
        torque += r.cross(&f);
    }
    let rt = sole.rotation.transpose();
    ContactResult {
        wrench: Wrench6::new(rt * force, rt * torque, FrameId::LeftSoleCenter),
        world_force: force,
        world_torque: torque,
        corner_forces: normal,
        penetrations: pen,
        corners,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantParams {
    pub mass: f64,
    pub gravity: f64,
    pub contact: ContactParams,
    /// Roll/pitch stiffness of the joint between ankle and sole (N·m/rad).
    /// Below `m·g·ℓ/2` for leg length `ℓ` the robot cannot stand without
    /// feedback.
    pub ankle_stiffness: f64,
    /// First-order actuator lag on all servo outputs (s).
    pub actuator_lag: f64,
    /// CoM task stiffness of the kinematic layer (1/s²); damping is critical.
    pub com_task_stiffness: f64,
    /// Physics substep (s).
    pub substep: f64,
    /// Offset between the true CoM and the controller's CoM model (m).
    pub com_bias: [f64; 3],
    pub sole_half_x: f64,
    pub sole_half_y: f64,
    /// Divergence bound on any state component (m, m/s).
    pub max_state_norm: f64,
    /// Collapse threshold on CoM height above the terrain (m).
    pub min_com_height: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            mass: 40.0,
            gravity: 9.81,
            contact: ContactParams::default(),
            ankle_stiffness: 140.0,
            actuator_lag: 0.05,
            com_task_stiffness: 100.0,
            substep: 0.001,
            com_bias: [0.0; 3],
            sole_half_x: 0.112,
            sole_half_y: 0.065,
            max_state_norm: 100.0,
            min_com_height: 0.3,
        }
    }
}

/// Servo gains of the vertical foot task (Eq.-22 form).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoGains {
    pub k: f64,
    pub b: f64,
}

impl ServoGains {
    pub const CONTACT: ServoGains = ServoGains { k: 1.0, b: 300.0 };
    pub const SUPPORT: ServoGains = ServoGains { k: 1000.0, b: 63.245_553_203_367_59 };
    pub const SWING: ServoGains = ServoGains { k: 400.0, b: 40.0 };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantFootCommand {
    /// Horizontal sole-center position and yaw.
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    /// Commanded sole altitude, vertical velocity and acceleration.
    pub z: f64,
    pub vz: f64,
    pub az: f64,
    pub servo: ServoGains,
    /// Ankle roll and pitch angles.
    pub roll: f64,
    pub pitch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantCommand {
    /// Reference CoM position and velocity of the kinematic CoM task.
    pub com_ref: Vec3,
    pub com_ref_vel: Vec3,
    /// Commanded CoM acceleration (feedforward of the CoM task).
    pub com_accel: Vec3,
    pub left: PlantFootCommand,
    pub right: PlantFootCommand,
}

/// Time-varying external inputs for one control period.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantDisturbance {
    pub force: Vec3,
    /// Extra sole (roll, pitch) deflection per foot.
    pub left_tilt: (f64, f64),
    pub right_tilt: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootState {
    /// Kinematic (servo) sole altitude and its rate.
    pub z_k: f64,
    pub vz_k: f64,
    /// Lagged actuator outputs.
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub z: f64,
    pub roll_cmd: f64,
    pub pitch_cmd: f64,
    /// Actual sole tilt (roll, pitch) in the yaw frame.
    pub tilt: (f64, f64),
    pub penetrations: [f64; 4],
    /// Actual sole pose and velocity.
    pub pose: Transform,
    pub velocity: Vec3,
    /// Contact wrench in the sole frame.
    pub wrench: Wrench6,
    pub world_force: Vec3,
    pub world_torque: Vec3,
    pub corner_forces: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub t: f64,
    pub com: Vec3,
    pub com_vel: Vec3,
    pub com_acc: Vec3,
    /// Kinematic CoM (servo layer before lag) and its rate.
    pub com_k: Vec3,
    pub com_k_vel: Vec3,
    /// Lagged kinematic CoM.
    pub com_k_lag: Vec3,
    pub left: FootState,
    pub right: FootState,
}

impl PlantState {
    pub fn foot(&self, f: Foot) -> &FootState {
        match f {
            Foot::Left => &self.left,
            Foot::Right => &self.right,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Plant {
    pub params: PlantParams,
    pub terrain: Terrain,
    pub state: PlantState,
}

fn lag(value: f64, target: f64, a: f64) -> f64 {
    value + (target - value) * a
}

fn wrap_angle(a: f64) -> f64 {
    (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI
}

impl Plant {
    /// Plant at rest with its kinematic layer on `cmd` and the CoM settled
    /// on the contact springs.
    pub fn new(params: PlantParams, terrain: Terrain, cmd: &PlantCommand) -> Self {
        let bias = Vec3::from_array(params.com_bias);
        let foot = |c: &PlantFootCommand| FootState {
            z_k: c.z,
            vz_k: 0.0,
            x: c.x,
            y: c.y,
            yaw: c.yaw,
            z: c.z,
            roll_cmd: c.roll,
            pitch_cmd: c.pitch,
            tilt: (0.0, 0.0),
            penetrations: [0.0; 4],
            pose: Transform::from_yaw_translation(c.yaw, Vec3::new(c.x, c.y, c.z)),
            velocity: Vec3::ZERO,
            wrench: Wrench6::zero(FrameId::LeftSoleCenter),
            world_force: Vec3::ZERO,
            world_torque: Vec3::ZERO,
            corner_forces: [0.0; 4],
        };
        let mut left = foot(&cmd.left);
        let mut right = foot(&cmd.right);
        left.wrench.frame = FrameId::LeftSoleCenter;
        right.wrench.frame = FrameId::RightSoleCenter;
        // static sinkage of the loaded corners
        let loaded = [&cmd.left, &cmd.right].iter().filter(|c| terrain.height_at(c.x, c.y) >= c.z - 1e-6).count().max(1);
        let sink = params.mass * params.gravity / (4.0 * loaded as f64 * params.contact.k_n);
        let state = PlantState {
            t: 0.0,
            com: cmd.com_ref + bias - Vec3::new(0.0, 0.0, sink),
            com_vel: Vec3::ZERO,
            com_acc: Vec3::ZERO,
            com_k: cmd.com_ref,
            com_k_vel: Vec3::ZERO,
            com_k_lag: cmd.com_ref,
            left,
            right,
        };
        let mut plant = Self { params, terrain, state };
        for f in [Foot::Left, Foot::Right] {
            let fs = plant.foot_mut(f);
            let sole_z = fs.z - sink;
            fs.penetrations = [sink; 4];
            fs.pose.translation.z = sole_z;
        }
        plant
    }

    fn foot_mut(&mut self, f: Foot) -> &mut FootState {
        match f {
            Foot::Left => &mut self.state.left,
            Foot::Right => &mut self.state.right,
        }
    }

    /// Advances by `dt` (a multiple of the substep).
    pub fn step(&mut self, cmd: &PlantCommand, dist: &PlantDisturbance, dt: f64) -> Result<(), PlantError> {
        let n = (dt / self.params.substep).round().max(1.0) as usize;
        let h = dt / n as f64;
        for _ in 0..n {
            self.substep(cmd, dist, h);
            self.check()?;
        }
        Ok(())
    }

    fn check(&self) -> Result<(), PlantError> {
        let s = &self.state;
        let t = s.t;
        let finite = s.com.is_finite() && s.com_vel.is_finite() && s.left.pose.translation.is_finite() && s.right.pose.translation.is_finite();
        if !finite {
            return Err(PlantError::NumericalDivergence { t, what: "non-finite state".into() });
        }
        let lim = self.params.max_state_norm;
        if s.com.norm_inf() > lim || s.com_vel.norm_inf() > lim {
            return Err(PlantError::NumericalDivergence { t, what: format!("state exceeds {lim}") });
        }
        let ground = self.terrain.height_at(s.com.x, s.com.y).max(s.left.pose.translation.z.min(s.right.pose.translation.z));
        if s.com.z - ground < self.params.min_com_height {
            return Err(PlantError::NumericalDivergence { t, what: "CoM collapsed".into() });
        }
        Ok(())
    }

    fn substep(&mut self, cmd: &PlantCommand, dist: &PlantDisturbance, h: f64) {
        let p = self.params;
        let a = if p.actuator_lag > 0.0 { 1.0 - (-h / p.actuator_lag).exp() } else { 1.0 };

        let bias = Vec3::from_array(p.com_bias);

        // kinematic CoM task
        let kc = p.com_task_stiffness;
        let bc = 2.0 * kc.sqrt();
        let s = &mut self.state;
        let acc_k = Vec3::new(
            task_tracking_accel(s.com_k.x, s.com_k_vel.x, cmd.com_ref.x, cmd.com_ref_vel.x, cmd.com_accel.x, kc, bc),
            task_tracking_accel(s.com_k.y, s.com_k_vel.y, cmd.com_ref.y, cmd.com_ref_vel.y, cmd.com_accel.y, kc, bc),
            0.0,
        );
        s.com_k_vel += acc_k * h;
        s.com_k += s.com_k_vel * h;
        // vertical CoM follows its reference exactly in the kinematic layer
        s.com_k.z = cmd.com_ref.z;
        s.com_k_vel.z = cmd.com_ref_vel.z;
        s.com_k_lag = Vec3::new(lag(s.com_k_lag.x, s.com_k.x, a), lag(s.com_k_lag.y, s.com_k.y, a), lag(s.com_k_lag.z, s.com_k.z, a));

        let lean = (s.com - s.com_k_lag - bias).horizontal();
        let com = s.com;
        // signed corner depths at the current CoM for both feet
        let mut depth = [[f64::NEG_INFINITY; 4]; 2];
        let mut corners = [[Vec3::ZERO; 4]; 2];
        for (k, (foot, fc, extra)) in [(Foot::Left, &cmd.left, dist.left_tilt), (Foot::Right, &cmd.right, dist.right_tilt)].into_iter().enumerate() {
            let com_k_lag = self.state.com_k_lag;
            let fs = match foot {
                Foot::Left => &mut self.state.left,
                Foot::Right => &mut self.state.right,
            };
            let acc = task_tracking_accel(fs.z_k, fs.vz_k, fc.z, fc.vz, fc.az, fc.servo.k, fc.servo.b);
            fs.vz_k += acc * h;
            fs.z_k += fs.vz_k * h;
            fs.x = lag(fs.x, fc.x, a);
            fs.y = lag(fs.y, fc.y, a);
            fs.yaw += wrap_angle(fc.yaw - fs.yaw) * a;
            fs.z = lag(fs.z, fs.z_k, a);
            fs.roll_cmd = lag(fs.roll_cmd, fc.roll, a);
            fs.pitch_cmd = lag(fs.pitch_cmd, fc.pitch, a);

            // leg length from the kinematic layer; the sole hangs below the CoM
            let leg = (com_k_lag.z - fs.z).max(0.1);
            let sole_z = com.z - leg;
            let (sy, cy) = fs.yaw.sin_cos();
            let lean_f = Vec3::new(cy * lean.x + sy * lean.y, -sy * lean.x + cy * lean.y, 0.0);
            let target = (-fs.roll_cmd - lean_f.y / leg + extra.0, -fs.pitch_cmd + lean_f.x / leg + extra.1);
            let old_pos = fs.pose.translation;
            let pos = Vec3::new(fs.x, fs.y, sole_z);
            let tilt = solve_tilt(target, fs.tilt, pos, fs.yaw, &self.terrain, &p, &fs.penetrations, h);
            let pose = Transform { rotation: Mat3::from_rpy(tilt.0, tilt.1, fs.yaw), translation: pos };
            fs.velocity = (pos - old_pos) / h;
            fs.tilt = tilt;
            fs.pose = pose;
            for (i, o) in corner_offsets(p.sole_half_x, p.sole_half_y).iter().enumerate() {
                let c = pose.apply(*o);
                corners[k][i] = c;
                let d = self.terrain.height_at(c.x, c.y) - c.z;
                // corners past the cutoff hit a riser side and carry nothing
                if d <= p.contact.penetration_cutoff {
                    depth[k][i] = d;
                }
            }
        }

        // backward Euler on the vertical axis: the corner springs and
        // dampers are evaluated at the end of the substep, which makes the
        // contact dissipative for any substep length
        let (kn, dn) = (p.contact.k_n, p.contact.d_n);
        let normal = |v: f64, d: f64| {
            let d1 = d - h * v;
            if d1 > 0.0 { (kn * d1 - dn * v).max(0.0) } else { 0.0 }
        };
        let total_normal = |v: f64| depth.iter().flatten().map(|&d| normal(v, d)).sum::<f64>();
        let (m, vz0) = (p.mass, self.state.com_vel.z);
        let free = vz0 + h * (dist.force.z / m - p.gravity);
        let resid = |v: f64| m * (v - vz0) - h * (total_normal(v) + dist.force.z - m * p.gravity);
        let vz = if total_normal(free) == 0.0 {
            free
        } else {
            // resid is increasing in v and non-positive at `free`
            let (mut lo, mut hi) = (free, free + 1.0);
            while resid(hi) < 0.0 {
                hi += 2.0 * (hi - lo);
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if resid(mid) < 0.0 { lo = mid } else { hi = mid }
                if hi - lo < 1e-15 {
                    break;
                }
            }
            0.5 * (lo + hi)
        };

        let mut pressure_sum = 0.0;
        let mut centroid = Vec3::ZERO;
        for (k, foot) in [Foot::Left, Foot::Right].into_iter().enumerate() {
            let fs = self.foot_mut(foot);
            for i in 0..4 {
                let d = depth[k][i];
                let n = normal(vz, d);
                fs.corner_forces[i] = n;
                fs.penetrations[i] = (d - h * vz).max(0.0);
                pressure_sum += n;
                centroid += corners[k][i] * n;
            }
            fs.world_force = Vec3::new(0.0, 0.0, fs.corner_forces.iter().sum());
        }

        // horizontal force of the massless legs: the net contact force
        // points from the pressure centroid to the CoM
        if pressure_sum > 0.0 {
            let q = centroid / pressure_sum;
            let height = (com.z - q.z).max(0.05);
            let mut f_h = (com - q).horizontal() * (pressure_sum / height);
            let lim = p.contact.mu * pressure_sum;
            if f_h.norm() > lim {
                f_h = f_h * (lim / f_h.norm());
            }
            // share the leg force between the feet by pressure
            for foot in [Foot::Left, Foot::Right] {
                let fs = self.foot_mut(foot);
                let n = fs.world_force.z;
                fs.world_force += f_h * (n / pressure_sum);
            }
        }

        // sole-frame wrenches
        for foot in [Foot::Left, Foot::Right] {
            let frame = if foot == Foot::Left { FrameId::LeftSoleCenter } else { FrameId::RightSoleCenter };
            let fs = self.foot_mut(foot);
            let n: f64 = fs.corner_forces.iter().sum();
            let rt = fs.pose.rotation.transpose();
            if n > 0.0 {
                // corner loads of the horizontal share act at the sole plane
                let offsets = corner_offsets(p.sole_half_x, p.sole_half_y);
                let mut torque = Vec3::ZERO;
                let fh = fs.world_force.horizontal();
                for (o, &fc) in offsets.iter().zip(&fs.corner_forces) {
                    let r = fs.pose.rotation * *o;
                    let fi = Vec3::new(fh.x * fc / n, fh.y * fc / n, fc);
                    torque += r.cross(&fi);
                }
                fs.world_torque = torque;
            } else {
                fs.world_force = Vec3::ZERO;
                fs.world_torque = Vec3::ZERO;
            }
            fs.wrench = Wrench6::new(rt * fs.world_force, rt * fs.world_torque, frame);
        }

        let s = &mut self.state;
        let total = s.left.world_force + s.right.world_force;
        let acc = Vec3::new(
            (total.x + dist.force.x) / p.mass,
            (total.y + dist.force.y) / p.mass,
            (total.z + dist.force.z) / p.mass - p.gravity,
        );
        s.com_acc = Vec3::new(acc.x, acc.y, (vz - s.com_vel.z) / h);
        s.com_vel = Vec3::new(s.com_vel.x + acc.x * h, s.com_vel.y + acc.y * h, vz);
        s.com += s.com_vel * h;
        s.t += h;
    }

    /// Contact wrenches of both soles in their sole frames.
    pub fn sole_wrenches(&self) -> [Wrench6; 2] {
        [self.state.left.wrench, self.state.right.wrench]
    }

    /// Mechanical energy: kinetic, gravitational, corner springs and
    /// flexible joints.
    pub fn energy(&self) -> f64 {
        let p = &self.params;
        let s = &self.state;
        let mut e = 0.5 * p.mass * s.com_vel.norm().powi(2) + p.mass * p.gravity * s.com.z;
        for f in [&s.left, &s.right] {
            // corner depths at the current CoM height
            let leg = (s.com_k_lag.z - f.z).max(0.1);
            let pose = Transform { rotation: f.pose.rotation, translation: Vec3::new(f.x, f.y, s.com.z - leg) };
            for o in corner_offsets(p.sole_half_x, p.sole_half_y) {
                let c = pose.apply(o);
                let d = self.terrain.height_at(c.x, c.y) - c.z;
                if d > 0.0 && d <= p.contact.penetration_cutoff {
                    e += 0.5 * p.contact.k_n * d * d;
                }
            }
        }
        e
    }
}

/// Quasi-static sole tilt: flexible-joint torque `K (target − tilt)`
/// balances the corner ground torque about the sole center.
#[allow(clippy::too_many_arguments)]
fn solve_tilt(
    target: (f64, f64),
    guess: (f64, f64),
    pos: Vec3,
    yaw: f64,
    terrain: &Terrain,
    p: &PlantParams,
    prev: &[f64; 4],
    h: f64,
) -> (f64, f64) {
    let k = p.ankle_stiffness;
    let residual = |t: (f64, f64)| -> (f64, f64) {
        let pose = Transform { rotation: Mat3::from_rpy(t.0, t.1, yaw), translation: pos };
        let r = contact_wrench(&pose, Vec3::ZERO, p.sole_half_x, p.sole_half_y, terrain, &p.contact, prev, h);
        // ground torque in the yaw frame
        let (s, c) = yaw.sin_cos();
        let tau = r.world_torque;
        let tx = c * tau.x + s * tau.y;
        let ty = -s * tau.x + c * tau.y;
        (k * (target.0 - t.0) + tx, k * (target.1 - t.1) + ty)
    };
    let mut t = guess;
    let mut r = residual(t);
    if r.0 == k * (target.0 - t.0) && r.1 == k * (target.1 - t.1) {
        // no ground contact: the joint is unloaded
        let free = residual(target);
        if free.0.abs() < 1e-9 && free.1.abs() < 1e-9 {
            return target;
        }
    }
    let eps = 1e-7;
    for _ in 0..30 {
        if r.0.abs() < 1e-9 && r.1.abs() < 1e-9 {
            break;
        }
        let ra = residual((t.0 + eps, t.1));
        let rb = residual((t.0, t.1 + eps));
        let j = [[(ra.0 - r.0) / eps, (rb.0 - r.0) / eps], [(ra.1 - r.1) / eps, (rb.1 - r.1) / eps]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-12 {
            break;
        }
        let d0 = -(j[1][1] * r.0 - j[0][1] * r.1) / det;
        let d1 = -(-j[1][0] * r.0 + j[0][0] * r.1) / det;
        // limit the step so that contact switches are resolved gradually
        let scale = (0.05 / d0.abs().max(d1.abs()).max(1e-300)).min(1.0);
        let mut step = 1.0 * scale;
        let base = r.0.abs() + r.1.abs();
        let mut accepted = false;
        for _ in 0..20 {
            let cand = (t.0 + step * d0, t.1 + step * d1);
            let rc = residual(cand);
            if rc.0.abs() + rc.1.abs() < base {
                t = cand;
                r = rc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    t
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params() -> ContactParams {
        ContactParams::default()
    }

    #[test]
    fn hovering_foot_has_no_wrench() {
        let pose = Transform::from_translation(Vec3::new(0.0, 0.0, 0.01));
        let r = contact_wrench(&pose, Vec3::ZERO, 0.112, 0.065, &Terrain::flat(), &params(), &[0.0; 4], 1e-3);
        assert_eq!(r.world_force, Vec3::ZERO);
        assert_eq!(r.world_torque, Vec3::ZERO);
    }

    #[test]
    fn flat_penetration_is_centered() {
        let d = 0.002;
        let pose = Transform::from_translation(Vec3::new(0.3, 0.1, -d));
        let r = contact_wrench(&pose, Vec3::ZERO, 0.112, 0.065, &Terrain::flat(), &params(), &[d; 4], 1e-3);
        assert_abs_diff_eq!(r.wrench.force.z, 4.0 * 1e5 * d, epsilon = 1e-9);
        assert!(r.wrench.torque.norm() < 1e-9);
    }

    #[test]
    fn pitched_foot_shifts_cop_to_deep_edge() {
        // pitch θ > 0 lowers the toe: front corners at depth d + X sinθ
        let (x, y, d, th) = (0.112, 0.065, 0.002, 0.005);
        let pose = Transform { rotation: Mat3::from_rpy(0.0, th, 0.0), translation: Vec3::new(0.0, 0.0, -d) };
        let r = contact_wrench(&pose, Vec3::ZERO, x, y, &Terrain::flat(), &params(), &[0.0; 4], 1e-3);
        let cop_x = -r.wrench.torque.y / r.wrench.force.z;
        // two corner pairs at ±x (world) with loads k(d ± x sinθ)
        let front = d + x * th.sin();
        let back = d - x * th.sin();
        let xw = x * th.cos();
        let expected_world = xw * (front - back) / (front + back);
        let cop_world = -r.world_torque.y / r.world_force.z;
        assert_abs_diff_eq!(cop_world, expected_world, epsilon = 1e-9);
        assert!(cop_x > 0.0);
    }

    #[test]
    fn tangential_force_within_friction_disc() {
        let pose = Transform::from_translation(Vec3::new(0.0, 0.0, -0.001));
        let r = contact_wrench(&pose, Vec3::new(3.0, -1.0, 0.0), 0.112, 0.065, &Terrain::flat(), &params(), &[0.001; 4], 1e-3);
        let ft = r.world_force.horizontal().norm();
        assert!(ft <= 0.7 * r.world_force.z + 1e-9);
        assert!(r.world_force.x < 0.0);
    }

    #[test]
    fn stairs_terrain() {
        let t = Terrain::stairs(5, 0.24, 0.185, 0.12);
        assert_eq!(t.height_at(0.0, 0.0), 0.0);
        assert_abs_diff_eq!(t.height_at(0.24, 0.1), 0.185, epsilon = 1e-12);
        assert_abs_diff_eq!(t.height_at(1.2, 0.1), 5.0 * 0.185, epsilon = 1e-12);
        assert_abs_diff_eq!(t.height_at(2.5, 0.1), 5.0 * 0.185, epsilon = 1e-12);
        assert!(t.validate().is_ok());
    }

    pub(crate) fn standing_command(com_height: f64) -> PlantCommand {
        let foot = |y: f64| PlantFootCommand { x: 0.0, y, yaw: 0.0, z: 0.0, vz: 0.0, az: 0.0, servo: ServoGains::CONTACT, roll: 0.0, pitch: 0.0 };
        PlantCommand {
            com_ref: Vec3::new(0.0, 0.0, com_height),
            com_ref_vel: Vec3::ZERO,
            com_accel: Vec3::ZERO,
            left: foot(0.09),
            right: foot(-0.09),
        }
    }

    #[test]
    fn balanced_standing_is_steady() {
        let cmd = standing_command(0.78);
        let mut plant = Plant::new(PlantParams::default(), Terrain::flat(), &cmd);
        for _ in 0..400 {
            plant.step(&cmd, &PlantDisturbance::default(), 0.005).unwrap();
        }
        let c0 = plant.state.com;
        for _ in 0..200 {
            plant.step(&cmd, &PlantDisturbance::default(), 0.005).unwrap();
        }
        assert!((plant.state.com - c0).norm() < 1e-6, "{}", plant.state.com - c0);
        let fz = plant.state.left.wrench.force.z + plant.state.right.wrench.force.z;
        assert_abs_diff_eq!(fz, 40.0 * 9.81, epsilon = 1e-3);
    }

    #[test]
    fn unstabilized_plant_falls_after_push() {
        let cmd = standing_command(0.78);
        let mut plant = Plant::new(PlantParams::default(), Terrain::flat(), &cmd);
        let push = PlantDisturbance { force: Vec3::new(0.0, 20.0, 0.0), ..Default::default() };
        for _ in 0..20 {
            plant.step(&cmd, &push, 0.005).unwrap();
        }
        let mut fell = false;
        for _ in 0..2000 {
            plant.step(&cmd, &PlantDisturbance::default(), 0.005).unwrap();
            if plant.state.com.y > 0.3 {
                fell = true;
                break;
            }
        }
        assert!(fell, "CoM at {}", plant.state.com);
    }

    #[test]
    fn actuator_lag_time_constant() {
        let mut cmd = standing_command(0.78);
        let mut plant = Plant::new(PlantParams::default(), Terrain::flat(), &cmd);
        cmd.left.pitch = 0.01;
        for _ in 0..10 {
            plant.step(&cmd, &PlantDisturbance::default(), 0.005).unwrap();
        }
        assert_abs_diff_eq!(plant.state.left.pitch_cmd / 0.01, 1.0 - (-1.0f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn ankle_pitch_moves_cop() {
        let mut cmd = standing_command(0.78);
        let mut plant = Plant::new(PlantParams::default(), Terrain::flat(), &cmd);
        // a negative ankle pitch presses the toe and moves the CoP forward
        cmd.left.pitch = -0.02;
        for _ in 0..60 {
            plant.step(&cmd, &PlantDisturbance::default(), 0.005).unwrap();
        }
        let w = plant.state.left.wrench;
        let cop_x = -w.torque.y / w.force.z;
        assert!(cop_x > 0.005, "{cop_x}");
    }

    #[test]
    fn energy_non_increasing_without_commands() {
        let cmd = standing_command(0.78);
        let mut plant = Plant::new(PlantParams::default(), Terrain::flat(), &cmd);
        plant.state.com.z += 0.005;
        let mut e = plant.energy();
        for _ in 0..2000 {
            plant.step(&cmd, &PlantDisturbance::default(), 0.001).unwrap();
            let e2 = plant.energy();
            assert!(e2 <= e + 1e-9 * e.abs(), "{e2} > {e}");
            e = e2;
        }
    }

    #[test]
    fn deterministic() {
        let cmd = standing_command(0.78);
        let run = || {
            let mut plant = Plant::new(PlantParams::default(), Terrain::flat(), &cmd);
            let push = PlantDisturbance { force: Vec3::new(5.0, 3.0, 0.0), ..Default::default() };
            for _ in 0..100 {
                plant.step(&cmd, &push, 0.005).unwrap();
            }
            plant.state
        };
        assert_eq!(run(), run());
    }
}
