//! Episode execution, per-cycle CSV log and tracking metrics.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerConfig, Stabilizer};
use crate::estimator::Estimator;
use crate::pattern::{mpc_generate, Foot, PatternError};
use crate::plant::{Plant, PlantCommand, PlantDisturbance, PlantFootCommand, ServoGains};
use crate::scenario::{Disturbance, Scenario, ScenarioError};
use crate::spatial::Vec3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    ScenarioInvalid(#[from] ScenarioError),
    #[error("walking pattern generation failed: {0}")]
    Pattern(#[from] PatternError),
    #[error("fall at t = {time:.3} s: {reason}")]
    Fall { time: f64, reason: String, log: Box<SimLog> },
    #[error("log is empty")]
    EmptyLog,
    #[error("CSV error: {0}")]
    Csv(String),
    #[error("I/O error: {0}")]
    Io(String),
}

/// One control cycle. Column order is the CSV schema.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    /// 0 double support, 1 single support, 2 standing.
    pub phase: u8,
    pub phase_index: usize,
    /// 0 double, 1 left, 2 right.
    pub support: u8,
    pub rho: Option<f64>,
    pub xi_d_x: f64,
    pub xi_d_y: f64,
    pub xi_m_x: f64,
    pub xi_m_y: f64,
    pub z_d_x: f64,
    pub z_d_y: f64,
    pub z_cmd_x: f64,
    pub z_cmd_y: f64,
    pub z_qp_x: f64,
    pub z_qp_y: f64,
    pub z_m_x: Option<f64>,
    pub z_m_y: Option<f64>,
    pub zmp_plane_z: f64,
    pub c_d_x: f64,
    pub c_d_y: f64,
    pub c_d_z: f64,
    pub c_m_x: f64,
    pub c_m_y: f64,
    pub c_m_z: f64,
    pub fz_left_qp: f64,
    pub fz_right_qp: f64,
    pub fz_left_m: f64,
    pub fz_right_m: f64,
    pub cop_left_qp_x: f64,
    pub cop_left_qp_y: f64,
    pub cop_right_qp_x: f64,
    pub cop_right_qp_y: f64,
    pub cop_left_m_x: Option<f64>,
    pub cop_left_m_y: Option<f64>,
    pub cop_right_m_x: Option<f64>,
    pub cop_right_m_y: Option<f64>,
    pub roll_left_c: f64,
    pub pitch_left_c: f64,
    pub roll_right_c: f64,
    pub pitch_right_c: f64,
    pub z_left_c: f64,
    pub z_right_c: f64,
    pub vz_left_c: f64,
    pub vz_right_c: f64,
    pub cddot_c_x: f64,
    pub cddot_c_y: f64,
    /// Distribution status code: 0 ok, 1 held, 2 fallback, 3 failed.
    pub qp_status: u8,
    pub qp_iterations: usize,
    /// Largest distance of the pattern ZMP or the distributed ZMP outside
    /// the support polygon (<= 0 inside).
    pub polygon_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimLog {
    pub rows: Vec<LogRow>,
}

impl SimLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), HarnessError> {
        let mut wr = csv::Writer::from_writer(w);
        if self.rows.is_empty() {
            // header only
            wr.write_record(Self::header()).map_err(|e| HarnessError::Csv(e.to_string()))?;
        }
        for r in &self.rows {
            wr.serialize(r).map_err(|e| HarnessError::Csv(e.to_string()))?;
        }
        wr.flush().map_err(|e| HarnessError::Io(e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory CSV");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }

    pub fn read_csv<R: Read>(r: R) -> Result<SimLog, HarnessError> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers().map_err(|e| HarnessError::Csv(e.to_string()))?.clone();
        if header.iter().collect::<Vec<_>>() != Self::header() {
            return Err(HarnessError::Csv("unexpected column schema".into()));
        }
        let rows = rd.deserialize().collect::<Result<Vec<LogRow>, _>>().map_err(|e| HarnessError::Csv(e.to_string()))?;
        Ok(SimLog { rows })
    }

    /// Column names in order.
    pub fn header() -> Vec<&'static str> {
        vec![
            "t", "phase", "phase_index", "support", "rho", "xi_d_x", "xi_d_y", "xi_m_x", "xi_m_y", "z_d_x", "z_d_y", "z_cmd_x", "z_cmd_y",
            "z_qp_x", "z_qp_y", "z_m_x", "z_m_y", "zmp_plane_z", "c_d_x", "c_d_y", "c_d_z", "c_m_x", "c_m_y", "c_m_z", "fz_left_qp",
            "fz_right_qp", "fz_left_m", "fz_right_m", "cop_left_qp_x", "cop_left_qp_y", "cop_right_qp_x", "cop_right_qp_y",
            "cop_left_m_x", "cop_left_m_y", "cop_right_m_x", "cop_right_m_y", "roll_left_c", "pitch_left_c", "roll_right_c",
            "pitch_right_c", "z_left_c", "z_right_c", "vz_left_c", "vz_right_c", "cddot_c_x", "cddot_c_y", "qp_status",
            "qp_iterations", "polygon_violation",
        ]
    }
}

/// Tolerance on the support polygon check (m).
pub const POLYGON_TOLERANCE: f64 = 1e-6;

fn disturbance_at(disturbances: &[Disturbance], t: f64) -> PlantDisturbance {
    let mut d = PlantDisturbance::default();
    for dist in disturbances.iter().filter(|d| d.active(t)) {
        match *dist {
            Disturbance::Force { force, .. } => d.force += Vec3::from_array(force),
            Disturbance::Impulse { duration, impulse, .. } => d.force += Vec3::from_array(impulse) / duration,
            Disturbance::AnkleTilt { foot, roll, pitch, .. } => {
                let slot = if foot == Foot::Left { &mut d.left_tilt } else { &mut d.right_tilt };
                slot.0 += roll;
                slot.1 += pitch;
            }
        }
    }
    d
}

/// Runs a scenario to its end, or until the DCM error exceeds the fall
/// threshold or the plant diverges.
pub fn run_episode(scenario: &Scenario) -> Result<SimLog, HarnessError> {
    scenario.validate()?;
    let lipm = scenario.lipm()?;
    let omega = lipm.omega();
    let dt = scenario.dt;
    let duration = scenario.episode_duration();
    let plan = scenario.footstep_plan();
    let pattern = mpc_generate(&plan, &scenario.pattern, omega, dt, duration)?;
    let n = (duration / dt).round() as usize;

    let first = pattern.samples[0];
    let foot_cmd = |p: &crate::spatial::Transform| PlantFootCommand {
        x: p.translation.x,
        y: p.translation.y,
        yaw: p.yaw(),
        z: p.translation.z,
        vz: 0.0,
        az: 0.0,
        servo: ServoGains::CONTACT,
        roll: 0.0,
        pitch: 0.0,
    };
    let init = PlantCommand {
        com_ref: first.c,
        com_ref_vel: first.cdot,
        com_accel: first.cddot,
        left: foot_cmd(&first.left.pose),
        right: foot_cmd(&first.right.pose),
    };
    let mut plant = Plant::new(scenario.plant, scenario.terrain(), &init);
    let mut estimator = Estimator::new(scenario.estimator, omega, scenario.seed);
    let config = ControllerConfig {
        lipm,
        dcm: scenario.dcm,
        admittance: scenario.admittance,
        weights: scenario.distribution,
        contact: scenario.contact,
    };
    let mut stab = Stabilizer::new(config, &first);
    let mut log = SimLog { rows: Vec::with_capacity(n) };

    for k in 0..n {
        let t = k as f64 * dt;
        let sample = pattern.samples[k.min(pattern.samples.len() - 1)];
        let phase = pattern.schedule.phases[sample.phase];
        let m = estimator.measure(&plant, sample.zmp.z, dt);
        let out = stab.step(&sample, &phase, &m, dt);
        let polygon = phase.support_polygon(0.0);
        let violation = polygon.violation(sample.zmp).max(polygon.violation(out.z_qp));
        let d = out.dist;
        let row = LogRow {
            t,
            phase: phase.kind as u8,
            phase_index: sample.phase,
            support: out.support.code(),
            rho: out.rho,
            xi_d_x: sample.xi.x,
            xi_d_y: sample.xi.y,
            xi_m_x: m.xi.x,
            xi_m_y: m.xi.y,
            z_d_x: sample.zmp.x,
            z_d_y: sample.zmp.y,
            z_cmd_x: out.z_cmd.x,
            z_cmd_y: out.z_cmd.y,
            z_qp_x: out.z_qp.x,
            z_qp_y: out.z_qp.y,
            z_m_x: m.zmp.map(|z| z.x),
            z_m_y: m.zmp.map(|z| z.y),
            zmp_plane_z: sample.zmp.z,
            c_d_x: sample.c.x,
            c_d_y: sample.c.y,
            c_d_z: sample.c.z,
            c_m_x: m.c.x,
            c_m_y: m.c.y,
            c_m_z: m.c.z,
            fz_left_qp: d.map_or(0.0, |d| d.fz_left),
            fz_right_qp: d.map_or(0.0, |d| d.fz_right),
            fz_left_m: m.left.pressure(),
            fz_right_m: m.right.pressure(),
            cop_left_qp_x: d.map_or(0.0, |d| d.cop_left.x),
            cop_left_qp_y: d.map_or(0.0, |d| d.cop_left.y),
            cop_right_qp_x: d.map_or(0.0, |d| d.cop_right.x),
            cop_right_qp_y: d.map_or(0.0, |d| d.cop_right.y),
            cop_left_m_x: m.left.cop.map(|p| p.x),
            cop_left_m_y: m.left.cop.map(|p| p.y),
            cop_right_m_x: m.right.cop.map(|p| p.x),
            cop_right_m_y: m.right.cop.map(|p| p.y),
            roll_left_c: out.command.left.roll,
            pitch_left_c: out.command.left.pitch,
            roll_right_c: out.command.right.roll,
            pitch_right_c: out.command.right.pitch,
            z_left_c: out.command.left.z,
            z_right_c: out.command.right.z,
            vz_left_c: out.command.left.vz,
            vz_right_c: out.command.right.vz,
            cddot_c_x: out.cddot_c.x,
            cddot_c_y: out.cddot_c.y,
            qp_status: out.dist_status.code(),
            qp_iterations: d.map_or(0, |d| d.iterations),
            polygon_violation: violation,
        };
        log.rows.push(row);

        let err = (sample.xi - m.xi).horizontal().norm();
        if !(err <= scenario.fall_threshold) {
            let reason = format!("DCM error {err:.3} m exceeds {:.3} m", scenario.fall_threshold);
            return Err(HarnessError::Fall { time: t, reason, log: Box::new(log) });
        }
        if let Err(e) = plant.step(&out.command, &disturbance_at(&scenario.disturbances, t), dt) {
            return Err(HarnessError::Fall { time: t, reason: e.to_string(), log: Box::new(log) });
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct AxisStats {
    pub max: f64,
    pub rms: f64,
}

fn axis_stats(v: impl Iterator<Item = f64>) -> AxisStats {
    let (mut max, mut sq, mut n) = (0.0f64, 0.0, 0usize);
    for x in v {
        max = max.max(x.abs());
        sq += x * x;
        n += 1;
    }
    AxisStats { max, rms: if n > 0 { (sq / n as f64).sqrt() } else { 0.0 } }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Metrics {
    pub cycles: usize,
    pub duration: f64,
    pub dcm_x: AxisStats,
    pub dcm_y: AxisStats,
    /// Norm of the horizontal DCM error.
    pub dcm_norm: AxisStats,
    /// Measured ZMP against the distributed ZMP (cycles with a valid
    /// measurement).
    pub zmp_m_qp_x: AxisStats,
    pub zmp_m_qp_y: AxisStats,
    /// Distributed ZMP against the pattern ZMP.
    pub zmp_qp_d_x: AxisStats,
    pub zmp_qp_d_y: AxisStats,
    pub qp_iterations_mean: f64,
    pub qp_iterations_max: usize,
    pub qp_not_ok: usize,
    pub polygon_violations: usize,
}

pub fn compute_metrics(log: &SimLog) -> Result<Metrics, HarnessError> {
    let rows = &log.rows;
    if rows.is_empty() {
        return Err(HarnessError::EmptyLog);
    }
    let zm = || rows.iter().filter_map(|r| Some((r.z_m_x? - r.z_qp_x, r.z_m_y? - r.z_qp_y)));
    let iters: usize = rows.iter().map(|r| r.qp_iterations).sum();
    Ok(Metrics {
        cycles: rows.len(),
        duration: rows[rows.len() - 1].t - rows[0].t,
        dcm_x: axis_stats(rows.iter().map(|r| r.xi_d_x - r.xi_m_x)),
        dcm_y: axis_stats(rows.iter().map(|r| r.xi_d_y - r.xi_m_y)),
        dcm_norm: axis_stats(rows.iter().map(|r| (r.xi_d_x - r.xi_m_x).hypot(r.xi_d_y - r.xi_m_y))),
        zmp_m_qp_x: axis_stats(zm().map(|e| e.0)),
        zmp_m_qp_y: axis_stats(zm().map(|e| e.1)),
        zmp_qp_d_x: axis_stats(rows.iter().map(|r| r.z_qp_x - r.z_d_x)),
        zmp_qp_d_y: axis_stats(rows.iter().map(|r| r.z_qp_y - r.z_d_y)),
        qp_iterations_mean: iters as f64 / rows.len() as f64,
        qp_iterations_max: rows.iter().map(|r| r.qp_iterations).max().unwrap_or(0),
        qp_not_ok: rows.iter().filter(|r| r.qp_status != 0).count(),
        polygon_violations: rows.iter().filter(|r| !(r.polygon_violation <= POLYGON_TOLERANCE)).count(),
    })
}
