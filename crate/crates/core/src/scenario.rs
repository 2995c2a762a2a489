//! Scenario files: terrain, footstep plan, timings, gains, disturbances,
//! sensor noise and episode settings, in TOML.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admittance::AdmittanceGains;
use crate::dcm::DcmGains;
use crate::estimator::EstimatorParams;
use crate::lipm::LipmParams;
use crate::pattern::{Foot, Footstep, FootstepPlan, PatternParams, Timing};
use crate::plant::{PlantParams, Terrain};
use crate::spatial::Vec3;
use crate::wrenchdist::{ContactSpec, DistributionWeights};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown bundled scenario '{0}'")]
    UnknownBundled(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub foot: Foot,
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementSpec {
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSpec {
    pub initial_left: PlacementSpec,
    pub initial_right: PlacementSpec,
    pub steps: Vec<StepSpec>,
}

impl Default for PlanSpec {
    fn default() -> Self {
        Self {
            initial_left: PlacementSpec { position: [0.0, 0.09, 0.0], yaw: 0.0 },
            initial_right: PlacementSpec { position: [0.0, -0.09, 0.0], yaw: 0.0 },
            steps: Vec::new(),
        }
    }
}

/// Straight flight of stairs climbed with a step-to gait: both feet land
/// on every tread, the leading foot first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StairsSpec {
    pub n: usize,
    pub length: f64,
    pub height: f64,
    /// Position of the first riser (m).
    #[serde(default = "default_x_start")]
    pub x_start: f64,
    #[serde(default = "default_lead")]
    pub lead: Foot,
}

fn default_x_start() -> f64 {
    0.15
}

fn default_lead() -> Foot {
    Foot::Left
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactConfig {
    pub mu: f64,
    /// Minimum pressure of a loaded sole (N).
    pub p_min: f64,
    pub half_x: f64,
    pub half_y: f64,
}

impl Default for ContactConfig {
    fn default() -> Self {
        Self { mu: 0.7, p_min: 15.0, half_x: 0.112, half_y: 0.065 }
    }
}

impl ContactConfig {
    pub fn spec(&self, fs: &Footstep) -> ContactSpec {
        ContactSpec { half_x: self.half_x, half_y: self.half_y, mu: self.mu, p_min: self.p_min, ..ContactSpec::new(fs.sole_pose) }
    }
}

/// Time-windowed external inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Disturbance {
    /// Constant force on the CoM (N).
    Force { start: f64, duration: f64, force: [f64; 3] },
    /// Impulse spread uniformly over the window (N·s).
    Impulse { start: f64, duration: f64, impulse: [f64; 3] },
    /// Extra roll/pitch deflection of a sole (rad); negative pitch tilts
    /// the sole back onto its heel.
    AnkleTilt { start: f64, duration: f64, foot: Foot, roll: f64, pitch: f64 },
}

impl Disturbance {
    pub fn window(&self) -> (f64, f64) {
        match *self {
            Disturbance::Force { start, duration, .. }
            | Disturbance::Impulse { start, duration, .. }
            | Disturbance::AnkleTilt { start, duration, .. } => (start, duration),
        }
    }

    pub fn active(&self, t: f64) -> bool {
        let (s, d) = self.window();
        t >= s - 1e-9 && t < s + d - 1e-9
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerrainSpec {
    pub patches: Vec<crate::plant::Patch>,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    /// Episode length (s); defaults to the plan end plus `settle`.
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default = "default_settle")]
    pub settle: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    /// Horizontal DCM error that ends the episode as a fall (m).
    #[serde(default = "default_fall")]
    pub fall_threshold: f64,
    #[serde(default)]
    pub terrain: TerrainSpec,
    #[serde(default)]
    pub stairs: Option<StairsSpec>,
    #[serde(default)]
    pub plan: PlanSpec,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default)]
    pub pattern: PatternParams,
    #[serde(default)]
    pub dcm: DcmGains,
    #[serde(default)]
    pub admittance: AdmittanceGains,
    #[serde(default)]
    pub distribution: DistributionWeights,
    #[serde(default)]
    pub contact: ContactConfig,
    #[serde(default)]
    pub plant: PlantParams,
    #[serde(default)]
    pub estimator: EstimatorParams,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
}

fn default_settle() -> f64 {
    2.0
}

fn default_dt() -> f64 {
    0.005
}

fn default_fall() -> f64 {
    0.3
}

const BUNDLED: [(&str, &str); 5] = [
    ("standing", include_str!("../scenarios/standing.toml")),
    ("flat_walk", include_str!("../scenarios/flat_walk.toml")),
    ("single_step_18p5cm", include_str!("../scenarios/single_step_18p5cm.toml")),
    ("airbus_stairs", include_str!("../scenarios/airbus_stairs.toml")),
    ("push_recovery", include_str!("../scenarios/push_recovery.toml")),
];

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

pub fn bundled_source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::from_array(a)
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn bundled(name: &str) -> Result<Scenario, ScenarioError> {
        let text = bundled_source(name).ok_or_else(|| ScenarioError::UnknownBundled(name.to_string()))?;
        Scenario::from_toml(text)
    }

    /// A bundled scenario name or a path to a TOML file.
    pub fn load(name_or_path: &str) -> Result<Scenario, ScenarioError> {
        if let Some(text) = bundled_source(name_or_path) {
            return Scenario::from_toml(text);
        }
        let text = std::fs::read_to_string(name_or_path)
            .map_err(|e| ScenarioError::Parse(format!("{name_or_path}: {e}")))?;
        Scenario::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn lipm(&self) -> Result<LipmParams, ScenarioError> {
        LipmParams::new(self.plant.mass, self.plant.gravity, self.pattern.com_height).map_err(|e| ScenarioError::Invalid(e.to_string()))
    }

    pub fn terrain(&self) -> Terrain {
        let mut t = Terrain { patches: self.terrain.patches.clone() };
        if let Some(s) = &self.stairs {
            t.patches.extend(Terrain::stairs(s.n, s.length, s.height, s.x_start).patches);
        }
        t
    }

    pub fn footstep_plan(&self) -> FootstepPlan {
        let c = &self.contact;
        let place = |foot: Foot, p: &PlacementSpec| Footstep { half_x: c.half_x, half_y: c.half_y, ..Footstep::new(foot, vec3(p.position), p.yaw) };
        let initial_left = place(Foot::Left, &self.plan.initial_left);
        let initial_right = place(Foot::Right, &self.plan.initial_right);
        let mut steps: Vec<Footstep> = self
            .plan
            .steps
            .iter()
            .map(|s| Footstep { half_x: c.half_x, half_y: c.half_y, ..Footstep::new(s.foot, vec3(s.position), s.yaw) })
            .collect();
        if let Some(st) = &self.stairs {
            let y = |f: Foot| if f == Foot::Left { initial_left.position().y } else { initial_right.position().y };
            for k in 1..=st.n {
                let x = st.x_start + (k as f64 - 0.5) * st.length;
                let z = k as f64 * st.height;
                for f in [st.lead, st.lead.other()] {
                    steps.push(Footstep { half_x: c.half_x, half_y: c.half_y, ..Footstep::new(f, Vec3::new(x, y(f), z), 0.0) });
                }
            }
        }
        FootstepPlan { initial_left, initial_right, steps, timing: self.timing }
    }

    /// Nominal end of the stepping plan (s).
    pub fn plan_end(&self) -> f64 {
        let p = self.footstep_plan();
        if p.steps.is_empty() {
            return 0.0;
        }
        let t = &p.timing;
        let n = p.steps.len() as f64;
        t.initial_double_support + n * t.single_support + (n - 1.0) * t.double_support + t.final_double_support
    }

    pub fn episode_duration(&self) -> f64 {
        self.duration.unwrap_or(self.plan_end() + self.settle)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive (got {})", self.dt));
        }
        let ratio = self.pattern.mpc.sampling_period / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return bad(format!("dt {} must divide the MPC sampling period {}", self.dt, self.pattern.mpc.sampling_period));
        }
        if let Some(d) = self.duration {
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("duration must be positive (got {d})"));
            }
        }
        if !(self.settle >= 0.0) {
            return bad(format!("settle must be non-negative (got {})", self.settle));
        }
        if !(self.fall_threshold > 0.0) {
            return bad(format!("fall_threshold must be positive (got {})", self.fall_threshold));
        }
        self.lipm()?;
        self.dcm.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.admittance.validate().map_err(ScenarioError::Invalid)?;
        self.estimator.validate().map_err(ScenarioError::Invalid)?;
        let w = &self.distribution;
        if !(w.net_wrench > 0.0 && w.ankle_torque >= 0.0 && w.pressure_ratio >= 0.0 && w.epsilon >= 0.0) {
            return bad("distribution weights must be non-negative with a positive net_wrench weight".into());
        }
        let c = &self.contact;
        if !(c.mu > 0.0 && c.p_min >= 0.0 && c.half_x > 0.0 && c.half_y > 0.0) {
            return bad("contact: mu, half_x and half_y must be positive and p_min non-negative".into());
        }
        let p = &self.plant;
        if !(p.substep > 0.0 && p.substep <= self.dt && p.ankle_stiffness > 0.0 && p.actuator_lag >= 0.0 && p.com_task_stiffness > 0.0) {
            return bad("plant: substep must be in (0, dt], ankle_stiffness and com_task_stiffness positive, actuator_lag non-negative".into());
        }
        if let Some(s) = &self.stairs {
            if s.n == 0 || !(s.length > 2.0 * c.half_x) || !(s.height.is_finite()) {
                return bad(format!("stairs: need n >= 1 and treads longer than the sole (got n = {}, length = {})", s.n, s.length));
            }
        }
        let terrain = self.terrain();
        terrain.validate().map_err(ScenarioError::Invalid)?;
        for d in &self.disturbances {
            let (s, len) = d.window();
            if !(s >= 0.0 && len > 0.0 && s.is_finite() && len.is_finite()) {
                return bad(format!("disturbance window ({s}, {len}) must have start >= 0 and positive duration"));
            }
        }
        crate::pattern::Schedule::new(&self.footstep_plan()).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Replaces the value at a dotted path (e.g. `dcm.k_p`) and re-validates.
    pub fn with_param(&self, path: &str, value: f64) -> Result<Scenario, ScenarioError> {
        let mut root: toml::Value = toml::Value::try_from(self).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        let unknown = || ScenarioError::Invalid(format!("unknown parameter '{path}'"));
        let (parents, last) = match path.rsplit_once('.') {
            Some((p, l)) => (p.split('.').collect::<Vec<_>>(), l),
            None => (Vec::new(), path),
        };
        let mut node = &mut root;
        for key in parents {
            node = node.get_mut(key).ok_or_else(unknown)?;
        }
        let slot = node.get_mut(last).ok_or_else(unknown)?;
        *slot = match slot {
            toml::Value::Integer(_) if value.fract() == 0.0 => toml::Value::Integer(value as i64),
            toml::Value::Float(_) | toml::Value::Integer(_) => toml::Value::Float(value),
            _ => return Err(ScenarioError::Invalid(format!("parameter '{path}' is not numeric"))),
        };
        let s: Scenario = root.try_into().map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }
}
