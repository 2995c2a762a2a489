//! Footstep plans, gait phase schedule, reference ZMP, swing trajectories and
//! the model-predictive pattern generator producing the reference CoM, DCM
//! and ZMP trajectories.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qp::{QpProblem, QpSettings, QpSolver, QpStatus};
use crate::spatial::{Transform, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatternError {
    #[error("footstep plan is empty")]
    EmptyPlan,
    #[error("time {t} s is outside the phase")]
    OutOfPhase { t: f64 },
    #[error("pattern QP infeasible at sample {sample} (t = {time:.3} s)")]
    QpInfeasible { sample: usize, time: f64 },
    #[error("pattern QP did not converge at t = {time:.3} s")]
    QpMaxIterations { time: f64 },
    #[error("invalid timing: {0}")]
    Timing(String),
    #[error("invalid footstep: {0}")]
    Footstep(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Foot {
    Left,
    Right,
}

impl Foot {
    pub fn other(self) -> Foot {
        match self {
            Foot::Left => Foot::Right,
            Foot::Right => Foot::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footstep {
    /// Sole-center pose in the world.
    pub sole_pose: Transform,
    pub foot: Foot,
    pub half_x: f64,
    pub half_y: f64,
}

impl Footstep {
    pub fn new(foot: Foot, position: Vec3, yaw: f64) -> Self {
        Self { sole_pose: Transform::from_yaw_translation(yaw, position), foot, half_x: 0.112, half_y: 0.065 }
    }

    pub fn position(&self) -> Vec3 {
        self.sole_pose.translation
    }

    pub fn validate(&self) -> Result<(), PatternError> {
        if !(self.half_x > 0.0 && self.half_y > 0.0) {
            return Err(PatternError::Footstep(format!("half extents must be positive ({}, {})", self.half_x, self.half_y)));
        }
        if !self.sole_pose.translation.is_finite() {
            return Err(PatternError::Footstep("non-finite position".into()));
        }
        Ok(())
    }

    /// Rectangle corners in the world (horizontal), counter-clockwise,
    /// shrunk by `margin` on every side.
    pub fn corners(&self, margin: f64) -> [Vec3; 4] {
        let (x, y) = ((self.half_x - margin).max(0.0), (self.half_y - margin).max(0.0));
        let yaw = self.sole_pose.yaw();
        let (s, c) = yaw.sin_cos();
        let p = self.position();
        [(x, y), (-x, y), (-x, -y), (x, -y)].map(|(a, b)| Vec3::new(p.x + c * a - s * b, p.y + s * a + c * b, 0.0))
    }

    pub fn polygon(&self, margin: f64) -> Polygon {
        Polygon::convex_hull(&self.corners(margin))
    }
}

/// Convex polygon in the horizontal plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    /// Counter-clockwise vertices.
    pub vertices: Vec<Vec3>,
}

impl Polygon {
    /// Andrew's monotone chain; collinear points are dropped.
    pub fn convex_hull(points: &[Vec3]) -> Polygon {
        let mut pts: Vec<Vec3> = points.iter().map(|p| p.horizontal()).collect();
        pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        pts.dedup_by(|a, b| (*a - *b).norm() < 1e-12);
        if pts.len() < 3 {
            return Polygon { vertices: pts };
        }
        let cross = |o: Vec3, a: Vec3, b: Vec3| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
        let mut lower: Vec<Vec3> = Vec::new();
        for &p in &pts {
            while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 1e-15 {
                lower.pop();
            }
            lower.push(p);
        }
        let mut upper: Vec<Vec3> = Vec::new();
        for &p in pts.iter().rev() {
            while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 1e-15 {
                upper.pop();
            }
            upper.push(p);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        Polygon { vertices: lower }
    }

    /// Half-planes `n·p <= d` with unit outward normals.
    /// A point or segment is boxed by opposing half-planes.
    pub fn halfplanes(&self) -> Vec<(Vec3, f64)> {
        let v = &self.vertices;
        let m = v.len();
        match m {
            0 => return Vec::new(),
            1 => {
                let a = v[0];
                return [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)]
                    .into_iter()
                    .flat_map(|n| [(n, n.dot(&a)), (-n, -n.dot(&a))])
                    .collect();
            }
            2 => {
                let (a, b) = (v[0], v[1]);
                let t = (b - a) / (b - a).norm();
                let n = Vec3::new(t.y, -t.x, 0.0);
                return vec![(n, n.dot(&a)), (-n, -n.dot(&a)), (t, t.dot(&b)), (-t, -t.dot(&a))];
            }
            _ => {}
        }
        (0..m)
            .map(|i| {
                let a = v[i];
                let b = v[(i + 1) % m];
                let e = b - a;
                let n = Vec3::new(e.y, -e.x, 0.0);
                let n = n / n.norm();
                (n, n.dot(&a))
            })
            .collect()
    }

    /// Signed distance-like margin: max over edges of `n·p − d` (<= 0 inside).
    pub fn violation(&self, p: Vec3) -> f64 {
        let p = p.horizontal();
        self.halfplanes().iter().map(|(n, d)| n.dot(&p) - d).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, p: Vec3, tol: f64) -> bool {
        self.violation(p) <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseKind {
    DoubleSupport,
    SingleSupport,
    Standing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitPhase {
    pub kind: PhaseKind,
    pub t_start: f64,
    pub duration: f64,
    /// Pressure ratio at the start of a double-support phase (0 or 1).
    pub rho_init: Option<f64>,
    /// Foot placements during the phase (the swing foot's lift-off pose in
    /// single support).
    pub left: Footstep,
    pub right: Footstep,
    /// Single support only: which foot swings and where it lands.
    pub swing: Option<(Foot, Footstep)>,
}

impl GaitPhase {
    pub fn t_end(&self) -> f64 {
        self.t_start + self.duration
    }

    pub fn support_foot(&self) -> Option<Foot> {
        self.swing.map(|(f, _)| f.other())
    }

    pub fn footstep(&self, foot: Foot) -> &Footstep {
        match foot {
            Foot::Left => &self.left,
            Foot::Right => &self.right,
        }
    }

    pub fn progress(&self, t: f64) -> f64 {
        ((t - self.t_start) / self.duration).clamp(0.0, 1.0)
    }

    /// Support polygon (union hull of contacting soles) with a margin.
    pub fn support_polygon(&self, margin: f64) -> Polygon {
        match self.support_foot() {
            Some(f) => self.footstep(f).polygon(margin),
            None => {
                let mut pts = self.left.corners(margin).to_vec();
                pts.extend(self.right.corners(margin));
                Polygon::convex_hull(&pts)
            }
        }
    }
}

/// Linear pressure ratio schedule of a double-support phase.
pub fn pressure_ratio(phase: &GaitPhase, t: f64) -> Result<f64, PatternError> {
    let rho0 = match (phase.kind, phase.rho_init) {
        (PhaseKind::DoubleSupport, Some(r)) => r,
        _ => return Err(PatternError::OutOfPhase { t }),
    };
    if t < phase.t_start - 1e-9 || t > phase.t_end() + 1e-9 {
        return Err(PatternError::OutOfPhase { t });
    }
    let s = phase.progress(t);
    Ok(rho0 + (1.0 - 2.0 * rho0) * s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Timing {
    pub single_support: f64,
    pub double_support: f64,
    /// Weight transfer before the first step.
    pub initial_double_support: f64,
    /// Weight transfer back to both feet after the last step.
    pub final_double_support: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Self { single_support: 1.4, double_support: 0.2, initial_double_support: 0.6, final_double_support: 0.6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FootstepPlan {
    pub initial_left: Footstep,
    pub initial_right: Footstep,
    /// Each step moves the named foot to the given placement.
    pub steps: Vec<Footstep>,
    pub timing: Timing,
}

fn mid(a: &Footstep, b: &Footstep) -> Vec3 {
    (a.position() + b.position()) * 0.5
}

/// Phase sequence and reference ZMP of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub phases: Vec<GaitPhase>,
    /// End of the last stepping phase; standing afterwards.
    pub plan_end: f64,
    /// Knots of the piecewise-linear reference ZMP `(t, z_ideal)`; the
    /// vertical coordinate is the height of the supporting surface.
    knots: Vec<(f64, Vec3)>,
}

impl Schedule {
    pub fn new(plan: &FootstepPlan) -> Result<Schedule, PatternError> {
        plan.initial_left.validate()?;
        plan.initial_right.validate()?;
        for s in &plan.steps {
            s.validate()?;
        }
        let tm = &plan.timing;
        for (name, v) in [
            ("single_support", tm.single_support),
            ("double_support", tm.double_support),
            ("initial_double_support", tm.initial_double_support),
            ("final_double_support", tm.final_double_support),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PatternError::Timing(format!("{name} must be positive (got {v})")));
            }
        }
        let mut left = plan.initial_left;
        let mut right = plan.initial_right;
        let mut phases = Vec::new();
        let mut knots = vec![(0.0, mid(&left, &right))];
        let mut t = 0.0;
        if plan.steps.is_empty() {
            phases.push(GaitPhase { kind: PhaseKind::Standing, t_start: 0.0, duration: f64::INFINITY, rho_init: None, left, right, swing: None });
            return Ok(Schedule { phases, plan_end: 0.0, knots });
        }
        // initial transfer onto the first support foot
        let first_support = plan.steps[0].foot.other();
        phases.push(GaitPhase {
            kind: PhaseKind::DoubleSupport,
            t_start: t,
            duration: tm.initial_double_support,
            rho_init: Some(if first_support == Foot::Left { 0.0 } else { 1.0 }),
            left,
            right,
            swing: None,
        });
        t += tm.initial_double_support;
        for (i, step) in plan.steps.iter().enumerate() {
            let swing = step.foot;
            let support = swing.other();
            let support_step = if support == Foot::Left { left } else { right };
            knots.push((t, support_step.position()));
            phases.push(GaitPhase {
                kind: PhaseKind::SingleSupport,
                t_start: t,
                duration: tm.single_support,
                rho_init: None,
                left,
                right,
                swing: Some((swing, *step)),
            });
            t += tm.single_support;
            knots.push((t, support_step.position()));
            match swing {
                Foot::Left => left = *step,
                Foot::Right => right = *step,
            }
            let last = i + 1 == plan.steps.len();
            let duration = if last { tm.final_double_support } else { tm.double_support };
            // after left support the right foot has just landed: ρ = 1 unloads it
            let rho_init = if support == Foot::Left { 1.0 } else { 0.0 };
            phases.push(GaitPhase { kind: PhaseKind::DoubleSupport, t_start: t, duration, rho_init: Some(rho_init), left, right, swing: None });
            t += duration;
        }
        knots.push((t, mid(&left, &right)));
        phases.push(GaitPhase { kind: PhaseKind::Standing, t_start: t, duration: f64::INFINITY, rho_init: None, left, right, swing: None });
        Ok(Schedule { phases, plan_end: t, knots })
    }

    pub fn phase_index(&self, t: f64) -> usize {
        self.phases.iter().rposition(|p| p.t_start <= t + 1e-9).unwrap_or(0)
    }

    pub fn phase_at(&self, t: f64) -> &GaitPhase {
        &self.phases[self.phase_index(t)]
    }

    /// Piecewise-linear reference ZMP: on the support sole center in single
    /// support, linear across double support, constant while standing.
    pub fn zmp_reference(&self, t: f64) -> Vec3 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let (t0, p0) = w[0];
            let (t1, p1) = w[1];
            if t <= t1 {
                if t1 - t0 <= 0.0 {
                    return p1;
                }
                let s = (t - t0) / (t1 - t0);
                return p0 + (p1 - p0) * s;
            }
        }
        k[k.len() - 1].1
    }

    /// Total horizontal displacement of the reference over the plan divided
    /// by the plan duration.
    pub fn average_velocity(&self) -> Vec3 {
        if self.plan_end <= 0.0 {
            return Vec3::ZERO;
        }
        let k = &self.knots;
        ((k[k.len() - 1].1 - k[0].1) / self.plan_end).horizontal()
    }

    /// Support polygon used to constrain the ZMP at sample time `t`: the
    /// single-support sole when `t` borders a single-support phase, so that
    /// the segment between consecutive samples stays inside the sole.
    pub fn constraint_polygon(&self, t: f64, margin: f64) -> Polygon {
        let now = self.phase_at(t);
        let before = self.phase_at(t - 1e-6);
        if now.kind != PhaseKind::SingleSupport && before.kind == PhaseKind::SingleSupport && t > 1e-6 {
            return before.support_polygon(margin);
        }
        now.support_polygon(margin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootTarget {
    pub pose: Transform,
    pub velocity: Vec3,
    pub acceleration: Vec3,
}

fn smoothstep5(s: f64) -> (f64, f64, f64) {
    let p = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
    let dp = 30.0 * s * s * (1.0 - s) * (1.0 - s);
    let ddp = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s);
    (p, dp, ddp)
}

/// Fraction of the swing at each end during which the foot only moves
/// vertically.
pub const SWING_VERTICAL_WINDOW: f64 = 0.2;

/// Swing foot pose, linear velocity and acceleration at time `t` in
/// `[0, duration]`.
///
/// Vertical: two quintic segments with zero end velocities and
/// accelerations, rising to
/// `max(z0, z1) + apex` at mid-swing and landing at `z1`. Horizontal and yaw:
/// quintic profile restricted to the middle of the swing so that the sole
/// clears stair edges before moving forward.
pub fn swing_trajectory(from: &Transform, to: &Transform, apex: f64, duration: f64, t: f64) -> Result<FootTarget, PatternError> {
    if !(t >= -1e-12 && t <= duration + 1e-12) || !(duration > 0.0) {
        return Err(PatternError::OutOfPhase { t });
    }
    let t = t.clamp(0.0, duration);
    let (z0, z1) = (from.translation.z, to.translation.z);
    let top = z0.max(z1) + apex;
    let half = 0.5 * duration;
    let (z, vz, az) = if t <= half {
        let (s, ds, dds) = smoothstep5(t / half);
        (z0 + (top - z0) * s, (top - z0) * ds / half, (top - z0) * dds / (half * half))
    } else {
        let (s, ds, dds) = smoothstep5((t - half) / half);
        (top + (z1 - top) * s, (z1 - top) * ds / half, (z1 - top) * dds / (half * half))
    };
    let a = SWING_VERTICAL_WINDOW;
    let span = (1.0 - 2.0 * a) * duration;
    let u = ((t / duration - a) / (1.0 - 2.0 * a)).clamp(0.0, 1.0);
    let (s, ds, dds) = smoothstep5(u);
    let inside = t / duration > a && t / duration < 1.0 - a;
    let (ds, dds) = if inside { (ds / span, dds / (span * span)) } else { (0.0, 0.0) };
    let p0 = from.translation;
    let p1 = to.translation;
    let x = p0.x + (p1.x - p0.x) * s;
    let y = p0.y + (p1.y - p0.y) * s;
    let yaw0 = from.yaw();
    let mut dyaw = to.yaw() - yaw0;
    dyaw = (dyaw + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
    let yaw = yaw0 + dyaw * s;
    Ok(FootTarget {
        pose: Transform::from_yaw_translation(yaw, Vec3::new(x, y, z)),
        velocity: Vec3::new((p1.x - p0.x) * ds, (p1.y - p0.y) * ds, vz),
        acceleration: Vec3::new((p1.x - p0.x) * dds, (p1.y - p0.y) * dds, az),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcParams {
    pub sampling_period: f64,
    pub horizon_samples: usize,
    pub zmp_weight: f64,
    pub velocity_weight: f64,
    pub jerk_weight: f64,
    pub margin: f64,
    pub max_iterations: usize,
}

impl Default for MpcParams {
    fn default() -> Self {
        Self {
            sampling_period: 0.1,
            horizon_samples: 16,
            zmp_weight: 1000.0,
            velocity_weight: 10.0,
            jerk_weight: 1.0,
            margin: 0.02,
            max_iterations: 500,
        }
    }
}

/// Per-axis CoM state `(c, ċ, c̈)` for both horizontal axes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AxisState {
    pub x: [f64; 3],
    pub y: [f64; 3],
}

/// Triple integrator over `tau` with constant jerk `u`.
pub fn integrate_jerk(s: [f64; 3], u: f64, tau: f64) -> [f64; 3] {
    [
        s[0] + s[1] * tau + s[2] * tau * tau / 2.0 + u * tau.powi(3) / 6.0,
        s[1] + s[2] * tau + u * tau * tau / 2.0,
        s[2] + u * tau,
    ]
}

/// One MPC solve: optimal jerks and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub t0: f64,
    pub jerk_x: Vec<f64>,
    pub jerk_y: Vec<f64>,
    /// Predicted ZMP and DCM at each sample `k = 1..=N`.
    pub zmp: Vec<Vec3>,
    pub dcm: Vec<Vec3>,
    pub zmp_ideal: Vec<Vec3>,
    /// Worst half-plane value `n·z − d` over the horizon (<= 0 when inside).
    pub max_polygon_violation: f64,
    pub terminal_dcm_error: f64,
    pub terminal_zmp_error: f64,
}

/// Linear model predictive control of the CoM jerk over a sampled horizon.
#[derive(Debug, Clone)]
pub struct Mpc {
    pub params: MpcParams,
    pub omega: f64,
    solver: QpSolver,
    /// Rows `k = 1..=N` of the maps from jerks to (c, ċ, c̈), and from the
    /// initial state to the same.
    pu: [DMatrix<f64>; 3],
    ps: [DMatrix<f64>; 3],
}

impl Mpc {
    pub fn new(params: MpcParams, omega: f64) -> Self {
        let n = params.horizon_samples;
        let dt = params.sampling_period;
        let mut pu = [DMatrix::zeros(n, n), DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
        let mut ps = [DMatrix::zeros(n, 3), DMatrix::zeros(n, 3), DMatrix::zeros(n, 3)];
        // effect of the initial state
        for basis in 0..3 {
            let mut s = [0.0; 3];
            s[basis] = 1.0;
            for k in 0..n {
                s = integrate_jerk(s, 0.0, dt);
                for r in 0..3 {
                    ps[r][(k, basis)] = s[r];
                }
            }
        }
        // effect of jerk j applied on [j·dt, (j+1)·dt)
        for j in 0..n {
            let mut s = [0.0; 3];
            for k in j..n {
                s = integrate_jerk(s, if k == j { 1.0 } else { 0.0 }, dt);
                for r in 0..3 {
                    pu[r][(k, j)] = s[r];
                }
            }
        }
        let settings = QpSettings { max_iterations: params.max_iterations, ..QpSettings::default() };
        Self { params, omega, solver: QpSolver::new(settings), pu, ps }
    }

    fn zmp_rows(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let w2 = self.omega * self.omega;
        (&self.pu[0] - &self.pu[2] / w2, &self.ps[0] - &self.ps[2] / w2)
    }

    /// Solves the horizon starting at `t0` from `state`.
    pub fn solve(&mut self, schedule: &Schedule, t0: f64, state: &AxisState) -> Result<MpcSolution, PatternError> {
        let n = self.params.horizon_samples;
        let dt = self.params.sampling_period;
        let (pz, pzs) = self.zmp_rows();
        let pv = &self.pu[1];
        let pvs = &self.ps[1];
        let vref = schedule.average_velocity();
        let times: Vec<f64> = (1..=n).map(|k| t0 + k as f64 * dt).collect();
        let zref: Vec<Vec3> = times.iter().map(|&t| schedule.zmp_reference(t)).collect();

        let mut h = DMatrix::zeros(2 * n, 2 * n);
        let mut g = DVector::zeros(2 * n);
        let (wz, wv, wj) = (self.params.zmp_weight, self.params.velocity_weight, self.params.jerk_weight);
        let mut free = [DVector::zeros(n), DVector::zeros(n)];
        let mut free_v = [DVector::zeros(n), DVector::zeros(n)];
        for axis in 0..2 {
            let s0 = DVector::from_row_slice(if axis == 0 { &state.x } else { &state.y });
            let zfree = &pzs * &s0;
            let vfree = pvs * &s0;
            let zr = DVector::from_iterator(n, zref.iter().map(|z| z[axis]));
            let vr = DVector::from_element(n, vref[axis]);
            let ha = (pz.transpose() * &pz * wz + pv.transpose() * pv * wv + DMatrix::identity(n, n) * wj) * 2.0;
            let ga = (pz.transpose() * (&zfree - &zr) * wz + pv.transpose() * (&vfree - &vr) * wv) * 2.0;
            h.view_mut((axis * n, axis * n), (n, n)).copy_from(&ha);
            g.rows_mut(axis * n, n).copy_from(&ga);
            free[axis] = zfree;
            free_v[axis] = vfree;
        }
        let h = (&h + h.transpose()) * 0.5;

        // ZMP polygons per sample
        let mut rows: Vec<(Vec<f64>, f64, usize)> = Vec::new();
        for k in 0..n {
            let poly = schedule.constraint_polygon(times[k], self.params.margin);
            for (nrm, d) in poly.halfplanes() {
                let mut r = vec![0.0; 2 * n];
                for j in 0..n {
                    r[j] = nrm.x * pz[(k, j)];
                    r[n + j] = nrm.y * pz[(k, j)];
                }
                rows.push((r, d - nrm.x * free[0][k] - nrm.y * free[1][k], k));
            }
        }
        let a_in = DMatrix::from_fn(rows.len(), 2 * n, |i, j| rows[i].0[j]);
        let b_in = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));

        // terminal ZMP and DCM on the reference
        let zt = zref[n - 1];
        let mut a_eq = DMatrix::zeros(4, 2 * n);
        let mut b_eq = DVector::zeros(4);
        for axis in 0..2 {
            let off = axis * n;
            for j in 0..n {
                a_eq[(2 * axis, off + j)] = pz[(n - 1, j)];
                a_eq[(2 * axis + 1, off + j)] = self.pu[0][(n - 1, j)] + self.pu[1][(n - 1, j)] / self.omega;
            }
            let s0 = if axis == 0 { &state.x } else { &state.y };
            let cfree: f64 = (0..3).map(|b| self.ps[0][(n - 1, b)] * s0[b]).sum();
            let vfree: f64 = (0..3).map(|b| self.ps[1][(n - 1, b)] * s0[b]).sum();
            b_eq[2 * axis] = zt[axis] - free[axis][n - 1];
            b_eq[2 * axis + 1] = zt[axis] - cfree - vfree / self.omega;
        }

        let p = QpProblem::new(h, g).with_eq(a_eq, b_eq).with_ineq(a_in.clone(), b_in.clone());
        let sol = self.solver.solve(&p).map_err(|e| PatternError::Timing(e.to_string()))?;
        match sol.status {
            QpStatus::Optimal => {}
            QpStatus::MaxIterations => return Err(PatternError::QpMaxIterations { time: t0 }),
            QpStatus::Infeasible => {
                // most violated ZMP row of the least-violating point
                let mut worst = (f64::NEG_INFINITY, n - 1);
                for (i, r) in rows.iter().enumerate() {
                    let v = a_in.row(i).dot(&sol.x.transpose()) - b_in[i];
                    if v > worst.0 {
                        worst = (v, r.2);
                    }
                }
                let sample = worst.1 + 1;
                return Err(PatternError::QpInfeasible { sample, time: t0 + sample as f64 * dt });
            }
        }
        let ux: Vec<f64> = sol.x.rows(0, n).iter().copied().collect();
        let uy: Vec<f64> = sol.x.rows(n, n).iter().copied().collect();
        let ux_v = DVector::from_row_slice(&ux);
        let uy_v = DVector::from_row_slice(&uy);
        let zx = &pz * &ux_v + &free[0];
        let zy = &pz * &uy_v + &free[1];
        let sx = DVector::from_row_slice(&state.x);
        let sy = DVector::from_row_slice(&state.y);
        let cx = &self.pu[0] * &ux_v + &self.ps[0] * &sx;
        let cy = &self.pu[0] * &uy_v + &self.ps[0] * &sy;
        let vx = &self.pu[1] * &ux_v + &self.ps[1] * &sx;
        let vy = &self.pu[1] * &uy_v + &self.ps[1] * &sy;
        let zmp: Vec<Vec3> = (0..n).map(|k| Vec3::new(zx[k], zy[k], zref[k].z)).collect();
        let dcm: Vec<Vec3> = (0..n).map(|k| Vec3::new(cx[k] + vx[k] / self.omega, cy[k] + vy[k] / self.omega, 0.0)).collect();
        let mut max_violation = f64::NEG_INFINITY;
        for (k, &t) in times.iter().enumerate() {
            max_violation = max_violation.max(schedule.constraint_polygon(t, self.params.margin).violation(zmp[k]));
        }
        let terminal_dcm_error = (dcm[n - 1] - zt).horizontal().norm();
        let terminal_zmp_error = (zmp[n - 1] - zt).horizontal().norm();
        Ok(MpcSolution {
            t0,
            jerk_x: ux,
            jerk_y: uy,
            zmp,
            dcm,
            zmp_ideal: zref,
            max_polygon_violation: max_violation,
            terminal_dcm_error,
            terminal_zmp_error,
        })
    }
}

/// Reference quantities at one control sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternSample {
    pub t: f64,
    pub phase: usize,
    pub c: Vec3,
    pub cdot: Vec3,
    pub cddot: Vec3,
    pub xi: Vec3,
    pub xi_dot: Vec3,
    /// Pattern ZMP `c − c̈/ω²` on the support surface.
    pub zmp: Vec3,
    pub zmp_ideal: Vec3,
    pub left: FootTarget,
    pub right: FootTarget,
}

impl PatternSample {
    pub fn foot(&self, f: Foot) -> &FootTarget {
        match f {
            Foot::Left => &self.left,
            Foot::Right => &self.right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternParams {
    pub com_height: f64,
    pub swing_apex: f64,
    pub mpc: MpcParams,
}

impl Default for PatternParams {
    fn default() -> Self {
        Self { com_height: 0.78, swing_apex: 0.24, mpc: MpcParams::default() }
    }
}

#[derive(Debug, Clone)]
pub struct WalkingPattern {
    pub dt: f64,
    pub omega: f64,
    pub schedule: Schedule,
    pub samples: Vec<PatternSample>,
    pub solves: Vec<MpcSolution>,
}

impl WalkingPattern {
    pub fn sample(&self, t: f64) -> &PatternSample {
        let i = ((t / self.dt).round().max(0.0) as usize).min(self.samples.len() - 1);
        &self.samples[i]
    }
}

/// Height of the highest sole of a phase's stance configuration, used as
/// the ground reference of the CoM height profile.
fn stance_height(p: &GaitPhase) -> f64 {
    match p.support_foot() {
        Some(f) => p.footstep(f).position().z,
        None => p.left.position().z.max(p.right.position().z),
    }
}

/// CoM height, vertical velocity and acceleration: constant at the nominal
/// height above the stance, ramping during the second half of single support
/// to the nominal height above the higher of the support and landing soles.
pub fn com_height_profile(schedule: &Schedule, h: f64, t: f64) -> (f64, f64, f64) {
    let p = schedule.phase_at(t);
    match (p.kind, p.swing) {
        (PhaseKind::SingleSupport, Some((_, to))) => {
            let z0 = stance_height(p);
            let z1 = z0.max(to.position().z);
            let half = 0.5 * p.duration;
            let tau = t - p.t_start - half;
            if tau <= 0.0 {
                (h + z0, 0.0, 0.0)
            } else {
                let (s, ds, dds) = smoothstep5((tau / half).min(1.0));
                (h + z0 + (z1 - z0) * s, (z1 - z0) * ds / half, (z1 - z0) * dds / (half * half))
            }
        }
        _ => (h + stance_height(p), 0.0, 0.0),
    }
}

fn foot_targets(schedule: &Schedule, apex: f64, t: f64) -> Result<(FootTarget, FootTarget), PatternError> {
    let p = schedule.phase_at(t);
    let still = |s: &Footstep| FootTarget { pose: s.sole_pose, velocity: Vec3::ZERO, acceleration: Vec3::ZERO };
    let (mut l, mut r) = (still(&p.left), still(&p.right));
    if let Some((foot, to)) = p.swing {
        let from = p.footstep(foot).sole_pose;
        let tgt = swing_trajectory(&from, &to.sole_pose, apex, p.duration, t - p.t_start)?;
        match foot {
            Foot::Left => l = tgt,
            Foot::Right => r = tgt,
        }
    }
    Ok((l, r))
}

/// Receding-horizon pattern generation: re-solve every sampling period and
/// integrate the first jerk open-loop at the control period `dt`.
pub fn mpc_generate(plan: &FootstepPlan, params: &PatternParams, omega: f64, dt: f64, duration: f64) -> Result<WalkingPattern, PatternError> {
    let schedule = Schedule::new(plan)?;
    let period = params.mpc.sampling_period;
    let ratio = period / dt;
    if !(dt > 0.0) || (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
        return Err(PatternError::Timing(format!("control period {dt} must divide the MPC period {period}")));
    }
    let ratio = ratio.round() as usize;
    let mut mpc = Mpc::new(params.mpc, omega);
    let c0 = schedule.zmp_reference(0.0);
    let mut state = AxisState { x: [c0.x, 0.0, 0.0], y: [c0.y, 0.0, 0.0] };
    let n_samples = (duration / dt).round() as usize + 1;
    let mut samples = Vec::with_capacity(n_samples);
    let mut solves = Vec::new();
    let mut block = 0usize;
    while samples.len() < n_samples {
        let t0 = block as f64 * period;
        let sol = mpc.solve(&schedule, t0, &state)?;
        let (ux, uy) = (sol.jerk_x[0], sol.jerk_y[0]);
        for i in 0..ratio {
            if samples.len() >= n_samples {
                break;
            }
            let tau = i as f64 * dt;
            let t = t0 + tau;
            let sx = integrate_jerk(state.x, ux, tau);
            let sy = integrate_jerk(state.y, uy, tau);
            let (cz, vz, az) = com_height_profile(&schedule, params.com_height, t);
            let c = Vec3::new(sx[0], sy[0], cz);
            let cdot = Vec3::new(sx[1], sy[1], vz);
            let cddot = Vec3::new(sx[2], sy[2], az);
            let zi = schedule.zmp_reference(t);
            let zmp = Vec3::new(sx[0] - sx[2] / (omega * omega), sy[0] - sy[2] / (omega * omega), zi.z);
            let xi = Vec3::new(sx[0] + sx[1] / omega, sy[0] + sy[1] / omega, 0.0);
            let xi_dot = Vec3::new(sx[1] + sx[2] / omega, sy[1] + sy[2] / omega, 0.0);
            let (left, right) = foot_targets(&schedule, params.swing_apex, t)?;
            samples.push(PatternSample { t, phase: schedule.phase_index(t), c, cdot, cddot, xi, xi_dot, zmp, zmp_ideal: zi, left, right });
        }
        state = AxisState { x: integrate_jerk(state.x, ux, period), y: integrate_jerk(state.y, uy, period) };
        solves.push(sol);
        block += 1;
    }
    Ok(WalkingPattern { dt, omega, schedule, samples, solves })
}
