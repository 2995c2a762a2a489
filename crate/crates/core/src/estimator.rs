//! Measured quantities from plant readouts: per-foot wrenches and CoPs, net
//! ZMP, CoM position and low-pass filtered velocity, DCM, with optional
//! seeded sensor noise.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::pattern::Foot;
use crate::plant::Plant;
use crate::spatial::{cop_of_wrench, transform_wrench, zmp_of_world_wrench, FrameId, Transform, Vec3, Wrench6};

/// Standard deviations of zero-mean Gaussian sensor noise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Force sensor forces (N).
    pub sigma_f: f64,
    /// Force sensor torques (N·m).
    pub sigma_tau: f64,
    /// CoM position (m).
    pub sigma_c: f64,
}

impl NoiseConfig {
    pub fn is_off(&self) -> bool {
        self.sigma_f == 0.0 && self.sigma_tau == 0.0 && self.sigma_c == 0.0
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("sigma_f", self.sigma_f), ("sigma_tau", self.sigma_tau), ("sigma_c", self.sigma_c)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("noise {name} must be a finite non-negative number (got {v})"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorParams {
    /// Cutoff of the CoM velocity low-pass filter (Hz).
    pub velocity_cutoff: f64,
    /// Total pressure below which the net ZMP is invalid (N).
    pub pressure_deadband: f64,
    pub noise: NoiseConfig,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self { velocity_cutoff: 40.0, pressure_deadband: 10.0, noise: NoiseConfig::default() }
    }
}

impl EstimatorParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.velocity_cutoff > 0.0 && self.velocity_cutoff.is_finite()) {
            return Err(format!("velocity_cutoff must be positive (got {})", self.velocity_cutoff));
        }
        if !(self.pressure_deadband >= 0.0) {
            return Err(format!("pressure_deadband must be non-negative (got {})", self.pressure_deadband));
        }
        self.noise.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootMeasurement {
    /// Sole pose in the world.
    pub pose: Transform,
    /// Contact wrench in the sole frame.
    pub wrench: Wrench6,
    /// CoP in the world, when the sole is loaded.
    pub cop: Option<Vec3>,
}

impl FootMeasurement {
    pub fn pressure(&self) -> f64 {
        self.wrench.force.z
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasuredState {
    pub c: Vec3,
    pub cdot: Vec3,
    pub xi: Vec3,
    /// Net ZMP on the support plane; `None` below the pressure deadband.
    pub zmp: Option<Vec3>,
    pub left: FootMeasurement,
    pub right: FootMeasurement,
}

impl MeasuredState {
    pub fn foot(&self, f: Foot) -> &FootMeasurement {
        match f {
            Foot::Left => &self.left,
            Foot::Right => &self.right,
        }
    }

    pub fn total_pressure(&self) -> f64 {
        self.left.pressure() + self.right.pressure()
    }
}

/// Net ZMP of sole wrenches on the plane at `height`, or `None` when the
/// total normal force does not exceed `deadband`.
pub fn net_zmp(feet: &[(Transform, Wrench6)], height: f64, deadband: f64) -> Option<Vec3> {
    let total = feet.iter().fold(Wrench6::zero(FrameId::World), |acc, (pose, w)| acc.plus(&transform_wrench(w, pose, FrameId::World)));
    if !(total.force.z > deadband) {
        return None;
    }
    zmp_of_world_wrench(&total, height).ok()
}

/// World CoP of a sole wrench.
pub fn world_cop(pose: &Transform, w: &Wrench6) -> Option<Vec3> {
    cop_of_wrench(w).ok().map(|p| pose.apply(p))
}

/// Stateful estimator: velocity filter memory and the noise generator.
#[derive(Debug, Clone)]
pub struct Estimator {
    pub params: EstimatorParams,
    pub omega: f64,
    rng: ChaCha8Rng,
    cdot: Option<Vec3>,
}

impl Estimator {
    pub fn new(params: EstimatorParams, omega: f64, seed: u64) -> Self {
        Self { params, omega, rng: ChaCha8Rng::seed_from_u64(seed), cdot: None }
    }

    fn gaussian(&mut self, sigma: f64) -> f64 {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).map(|n| n.sample(&mut self.rng)).unwrap_or(0.0)
        } else {
            0.0
        }
    }

    fn noisy(&mut self, v: Vec3, sigma: f64) -> Vec3 {
        if sigma > 0.0 {
            Vec3::new(v.x + self.gaussian(sigma), v.y + self.gaussian(sigma), v.z + self.gaussian(sigma))
        } else {
            v
        }
    }

    /// Reads the plant after a control period of length `dt`. The CoM is
    /// read through the controller's kinematic model, which differs from
    /// the true CoM by the plant's CoM bias. `zmp_height` is the altitude of
    /// the support plane.
    pub fn measure(&mut self, plant: &Plant, zmp_height: f64, dt: f64) -> MeasuredState {
        let s = &plant.state;
        let noise = self.params.noise;
        let mut feet = [(Transform::IDENTITY, Wrench6::zero(FrameId::World)); 2];
        for (k, f) in [&s.left, &s.right].into_iter().enumerate() {
            let mut w = f.wrench;
            w.force = self.noisy(w.force, noise.sigma_f);
            w.torque = self.noisy(w.torque, noise.sigma_tau);
            feet[k] = (f.pose, w);
        }
        let c = self.noisy(s.com - Vec3::from_array(plant.params.com_bias), noise.sigma_c);
        let a = 1.0 - (-2.0 * std::f64::consts::PI * self.params.velocity_cutoff * dt).exp();
        let cdot = match self.cdot {
            Some(v) => v + (s.com_vel - v) * a,
            None => s.com_vel,
        };
        self.cdot = Some(cdot);
        let foot = |(pose, w): (Transform, Wrench6)| FootMeasurement { pose, wrench: w, cop: world_cop(&pose, &w) };
        MeasuredState {
            c,
            cdot,
            xi: c + cdot / self.omega,
            zmp: net_zmp(&feet, zmp_height, self.params.pressure_deadband),
            left: foot(feet[0]),
            right: foot(feet[1]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{tests::standing_command, PlantDisturbance, PlantParams, Terrain};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pressure(p: f64) -> Wrench6 {
        Wrench6::new(Vec3::new(0.0, 0.0, p), Vec3::ZERO, FrameId::LeftSoleCenter)
    }

    #[test]
    fn two_equal_feet_give_midpoint() {
        let d = 0.1;
        let feet = [
            (Transform::from_translation(Vec3::new(0.05, d, 0.0)), pressure(200.0)),
            (Transform::from_translation(Vec3::new(0.05, -d, 0.0)), pressure(200.0)),
        ];
        let z = net_zmp(&feet, 0.0, 10.0).unwrap();
        assert_abs_diff_eq!(z.x, 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(z.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn single_foot_zmp_is_its_cop() {
        let pose = Transform::from_yaw_translation(0.4, Vec3::new(0.3, -0.1, 0.185));
        // CoP at (0.02, -0.01) in the sole frame
        let w = Wrench6::new(Vec3::new(3.0, -2.0, 380.0), Vec3::new(-0.01 * 380.0, -0.02 * 380.0, 0.3), FrameId::RightSoleCenter);
        let z = net_zmp(&[(pose, w)], 0.185, 10.0).unwrap();
        let p = pose.apply(Vec3::new(0.02, -0.01, 0.0));
        assert!((z - p).norm() < 1e-12, "{z:?} {p:?}");
    }

    #[test]
    fn low_pressure_is_invalid() {
        let feet = [(Transform::IDENTITY, pressure(5.0)), (Transform::IDENTITY, pressure(4.0))];
        assert_eq!(net_zmp(&feet, 0.0, 10.0), None);
        assert_eq!(net_zmp(&[(Transform::IDENTITY, pressure(0.0))], 0.0, 0.0), None);
    }

    fn arb_foot() -> impl Strategy<Value = (Transform, Wrench6)> {
        (-1.0..1.0f64, -1.0..1.0f64, -3.2..3.2f64, 1.0..600.0f64, prop::array::uniform5(-1.0..1.0f64)).prop_map(|(x, y, yaw, fz, r)| {
            let pose = Transform::from_yaw_translation(yaw, Vec3::new(x, y, 0.2));
            let f = Vec3::new(r[0] * 0.7 * fz, r[1] * 0.7 * fz, fz);
            let tau = Vec3::new(r[2] * 0.065 * fz, r[3] * 0.112 * fz, r[4] * 5.0);
            (pose, Wrench6::new(f, tau, FrameId::LeftSoleCenter))
        })
    }

    proptest! {
        #[test]
        fn zmp_is_pressure_weighted_cop_mean(a in arb_foot(), b in arb_foot()) {
            let z = net_zmp(&[a, b], 0.2, 0.0).unwrap();
            let (ca, cb) = (world_cop(&a.0, &a.1).unwrap(), world_cop(&b.0, &b.1).unwrap());
            let (pa, pb) = (a.1.force.z, b.1.force.z);
            let mean = (ca * pa + cb * pb) / (pa + pb);
            prop_assert!((z.horizontal() - mean.horizontal()).norm() < 1e-9, "{:?} {:?}", z, mean);
        }
    }

    #[test]
    fn noise_free_readout_matches_plant() {
        let params = PlantParams { com_bias: [0.02, 0.0, 0.0], ..PlantParams::default() };
        let cmd = standing_command(0.78);
        let mut plant = Plant::new(params, Terrain::flat(), &cmd);
        let mut est = Estimator::new(EstimatorParams::default(), 3.5464, 1);
        let push = PlantDisturbance { force: Vec3::new(0.0, 5.0, 0.0), ..Default::default() };
        let mut m = est.measure(&plant, 0.0, 0.005);
        for _ in 0..40 {
            plant.step(&cmd, &push, 0.005).unwrap();
            m = est.measure(&plant, 0.0, 0.005);
        }
        assert_eq!(m.c, plant.state.com - Vec3::new(0.02, 0.0, 0.0));
        // a ramp lags a first-order filter by its time constant
        let lag = 1.0 / (2.0 * std::f64::consts::PI * 40.0);
        let err = (m.cdot - plant.state.com_vel).norm();
        assert!(err < 2.0 * lag * plant.state.com_acc.horizontal().norm() + 1e-6, "{err}");
        assert_eq!(m.xi, m.c + m.cdot / 3.5464);
        let [wl, wr] = plant.sole_wrenches();
        assert_eq!(m.left.wrench.force, wl.force);
        assert_eq!(m.right.wrench.torque, wr.torque);
        assert!(m.zmp.is_some());
    }

    #[test]
    fn noise_is_seeded() {
        let noise = NoiseConfig { sigma_f: 2.0, sigma_tau: 0.2, sigma_c: 1e-3 };
        let params = EstimatorParams { noise, ..EstimatorParams::default() };
        let cmd = standing_command(0.78);
        let plant = Plant::new(PlantParams::default(), Terrain::flat(), &cmd);
        let run = |seed| {
            let mut est = Estimator::new(params, 3.5464, seed);
            (0..10).map(|_| est.measure(&plant, 0.0, 0.005)).collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
        let m = run(7)[3];
        assert!((m.c - plant.state.com).norm() > 0.0);
        assert!((m.left.wrench.force - plant.state.left.wrench.force).norm() < 20.0);
    }
}
