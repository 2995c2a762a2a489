//! Browser bindings: run a bundled scenario, push the standing robot and
//! split a net wrench between two feet.

use dcm_stabilizer::admittance::AdmittanceGains;
use dcm_stabilizer::dcm::{net_wrench_from_zmp, DcmGains};
use dcm_stabilizer::harness::{run_episode, HarnessError, SimLog};
use dcm_stabilizer::qp::QpSolver;
use dcm_stabilizer::scenario::{bundled_names, Disturbance, Scenario};
use dcm_stabilizer::spatial::{Transform, Vec3};
use dcm_stabilizer::wrenchdist::{distribute_double, ContactSpec, DistributionWeights};
use wasm_bindgen::prelude::*;

/// Values per sample in [`Episode::series`].
pub const SERIES_STRIDE: usize = 7;

/// Outcome of a simulated episode.
#[wasm_bindgen]
pub struct Episode {
    series: Vec<f64>,
    fall_time: Option<f64>,
    message: String,
}

#[wasm_bindgen]
impl Episode {
    /// Flat samples `[t, ξd_x, ξd_y, ξm_x, ξm_y, zcmd_x, zcmd_y]`, one every
    /// 10 ms.
    #[wasm_bindgen(getter)]
    pub fn series(&self) -> Vec<f64> {
        self.series.clone()
    }

    /// Time of the fall, or NaN when the episode completed.
    #[wasm_bindgen(getter)]
    pub fn fall_time(&self) -> f64 {
        self.fall_time.unwrap_or(f64::NAN)
    }

    #[wasm_bindgen(getter)]
    pub fn message(&self) -> String {
        self.message.clone()
    }
}

fn to_error(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn disable_stabilizer(s: &mut Scenario) {
    s.dcm = DcmGains::zero();
    s.admittance = AdmittanceGains { t_vdc: s.admittance.t_vdc, ..AdmittanceGains::zero() };
}

fn episode(s: &Scenario) -> Episode {
    let (log, fall_time, message): (SimLog, _, _) = match run_episode(s) {
        Ok(log) => (log, None, "completed".to_string()),
        Err(HarnessError::Fall { time, reason, log }) => (*log, Some(time), format!("fell at {time:.2} s: {reason}")),
        Err(e) => (SimLog::default(), None, e.to_string()),
    };
    let every = ((0.01 / s.dt).round() as usize).max(1);
    let series = log
        .rows
        .iter()
        .step_by(every)
        .flat_map(|r| [r.t, r.xi_d_x, r.xi_d_y, r.xi_m_x, r.xi_m_y, r.z_cmd_x, r.z_cmd_y])
        .collect();
    Episode { series, fall_time, message }
}

/// Names of the bundled scenarios, newline separated.
#[wasm_bindgen]
pub fn scenario_names() -> String {
    bundled_names().join("\n")
}

/// Runs a bundled scenario with or without the stabilizer feedback.
#[wasm_bindgen]
pub fn run_scenario(name: &str, stabilizer: bool) -> Result<Episode, JsValue> {
    let mut s = Scenario::bundled(name).map_err(to_error)?;
    if !stabilizer {
        disable_stabilizer(&mut s);
    }
    Ok(episode(&s))
}

/// Lateral and sagittal impulse (N·s) applied over 0.1 s to the standing
/// robot at t = 1 s.
#[wasm_bindgen]
pub fn push(impulse_x: f64, impulse_y: f64, stabilizer: bool) -> Result<Episode, JsValue> {
    let mut s = Scenario::bundled("push_recovery").map_err(to_error)?;
    s.disturbances = vec![Disturbance::Impulse { start: 1.0, duration: 0.1, impulse: [impulse_x, impulse_y, 0.0] }];
    if !stabilizer {
        disable_stabilizer(&mut s);
    }
    Ok(episode(&s))
}

/// Splits the wrench that puts the ZMP at `(zmp_x, zmp_y)` between two flat
/// feet 0.2 m apart with left pressure ratio `rho`. Returns
/// `[fz_left, fz_right, cop_left_x, cop_left_y, cop_right_x, cop_right_y,
/// zqp_x, zqp_y, cost]` with CoPs in world coordinates.
#[wasm_bindgen]
pub fn distribute(zmp_x: f64, zmp_y: f64, rho: f64) -> Result<Vec<f64>, JsValue> {
    let s = Scenario::bundled("standing").map_err(to_error)?;
    let lipm = s.lipm().map_err(to_error)?;
    let left = ContactSpec::new(Transform::from_yaw_translation(0.0, Vec3::new(0.0, 0.1, 0.0)));
    let right = ContactSpec::new(Transform::from_yaw_translation(0.0, Vec3::new(0.0, -0.1, 0.0)));
    let w = net_wrench_from_zmp(Vec3::new(0.0, 0.0, lipm.com_height), Vec3::new(zmp_x, zmp_y, 0.0), &lipm);
    let mut solver = QpSolver::default();
    let r = distribute_double(&mut solver, &w, &left, &right, rho.clamp(0.0, 1.0), &DistributionWeights::default(), 0.0)
        .map_err(to_error)?;
    let cl = left.pose.translation + r.cop_left;
    let cr = right.pose.translation + r.cop_right;
    Ok(vec![r.fz_left, r.fz_right, cl.x, cl.y, cr.x, cr.y, r.z_qp.x, r.z_qp.y, r.cost])
}
