//! Contact wrench cones and the distribution of the net contact wrench
//! between the feet.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qp::{QpProblem, QpSolver, QpStatus};
use crate::spatial::{cop_of_wrench, wrench_transform_matrix, zmp_of_world_wrench, FrameId, Transform, Vec3, Wrench6};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("wrench distribution QP is infeasible")]
    Infeasible,
    #[error("wrench distribution QP hit the iteration cap")]
    MaxIterations,
    #[error("invalid pressure ratio {0}")]
    BadRatio(f64),
    #[error("invalid QP data: {0}")]
    Qp(String),
}

/// Rectangular frictional contact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSpec {
    /// Sole half-length along the sole x axis.
    pub half_x: f64,
    /// Sole half-width along the sole y axis.
    pub half_y: f64,
    pub mu: f64,
    /// Pose of the sole center in the world.
    pub pose: Transform,
    pub p_min: f64,
    /// Ankle position in the sole frame.
    pub ankle_offset: Vec3,
}

impl ContactSpec {
    pub fn new(pose: Transform) -> Self {
        Self { half_x: 0.112, half_y: 0.065, mu: 0.7, pose, p_min: 15.0, ankle_offset: Vec3::ZERO }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistributionWeights {
    pub net_wrench: f64,
    pub ankle_torque: f64,
    pub pressure_ratio: f64,
    /// Weight of non-ankle-torque components in the ankle cost.
    pub epsilon: f64,
}

impl Default for DistributionWeights {
    fn default() -> Self {
        Self { net_wrench: 10000.0, ankle_torque: 100.0, pressure_ratio: 1.0, epsilon: 1e-4 }
    }
}

pub const CWC_ROWS: usize = 16;

/// `U` such that `U w <= 0` for wrenches `w = [f; τ]` about the sole center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CwcMatrix(pub [[f64; 6]; CWC_ROWS]);

impl CwcMatrix {
    pub fn eval(&self, w: &[f64; 6]) -> [f64; CWC_ROWS] {
        let mut out = [0.0; CWC_ROWS];
        for (o, row) in out.iter_mut().zip(self.0.iter()) {
            *o = row.iter().zip(w).map(|(a, b)| a * b).sum();
        }
        out
    }

    pub fn contains(&self, w: &[f64; 6], tol: f64) -> bool {
        self.eval(w).iter().all(|&v| v <= tol)
    }
}

/// Rows, in order:
///
/// * 0..4 friction pyramid: `±f_x <= μ f_z`, `±f_y <= μ f_z`
/// * 4..8 CoP: `±τ_x <= Y f_z`, `±τ_y <= X f_z`
/// * 8..12 lower yaw bound `τ_min <= τ_z` with
///   `τ_min = −μ(X+Y) f_z + |Y f_x − μ τ_x| + |X f_y − μ τ_y|`
/// * 12..16 upper yaw bound `τ_z <= τ_max` with
///   `τ_max = μ(X+Y) f_z − |Y f_x + μ τ_x| − |X f_y + μ τ_y|`
///
/// Each absolute-value bound expands into its four sign combinations
/// `(s1, s2) ∈ {(+,+), (+,−), (−,+), (−,−)}`.
pub fn build_cwc(spec: &ContactSpec) -> CwcMatrix {
    let (x, y, mu) = (spec.half_x, spec.half_y, spec.mu);
    let mut u = [[0.0; 6]; CWC_ROWS];
    u[0] = [1.0, 0.0, -mu, 0.0, 0.0, 0.0];
    u[1] = [-1.0, 0.0, -mu, 0.0, 0.0, 0.0];
    u[2] = [0.0, 1.0, -mu, 0.0, 0.0, 0.0];
    u[3] = [0.0, -1.0, -mu, 0.0, 0.0, 0.0];
    u[4] = [0.0, 0.0, -y, 1.0, 0.0, 0.0];
    u[5] = [0.0, 0.0, -y, -1.0, 0.0, 0.0];
    u[6] = [0.0, 0.0, -x, 0.0, 1.0, 0.0];
    u[7] = [0.0, 0.0, -x, 0.0, -1.0, 0.0];
    let signs = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];
    for (k, &(s1, s2)) in signs.iter().enumerate() {
        // −μ(X+Y) f_z + s1 (Y f_x − μ τ_x) + s2 (X f_y − μ τ_y) − τ_z <= 0
        u[8 + k] = [s1 * y, s2 * x, -mu * (x + y), -s1 * mu, -s2 * mu, -1.0];
        // τ_z − μ(X+Y) f_z + s1 (Y f_x + μ τ_x) + s2 (X f_y + μ τ_y) <= 0
        u[12 + k] = [s1 * y, s2 * x, -mu * (x + y), s1 * mu, s2 * mu, 1.0];
    }
    CwcMatrix(u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionResult {
    /// Left sole wrench in the left sole-center frame.
    pub w_left: Wrench6,
    pub w_right: Wrench6,
    /// World ZMP of the summed wrench.
    pub z_qp: Vec3,
    /// Per-foot CoP targets in sole frames (zero when the foot is unloaded).
    pub cop_left: Vec3,
    pub cop_right: Vec3,
    pub fz_left: f64,
    pub fz_right: f64,
    /// Summed wrench about the world origin.
    pub w_net: Wrench6,
    pub cost: f64,
    /// Active-set iterations of the solve.
    pub iterations: usize,
}

fn world_sum(left: Option<(&ContactSpec, &Wrench6)>, right: Option<(&ContactSpec, &Wrench6)>) -> Wrench6 {
    let mut acc = [0.0; 6];
    for (spec, w) in [left, right].into_iter().flatten() {
        let t = wrench_transform_matrix(&spec.pose);
        let a = w.to_array();
        for i in 0..6 {
            acc[i] += (0..6).map(|j| t[i][j] * a[j]).sum::<f64>();
        }
    }
    Wrench6::from_slice(&acc, FrameId::World)
}

fn finish(
    left: Option<(&ContactSpec, Wrench6)>,
    right: Option<(&ContactSpec, Wrench6)>,
    plane_height: f64,
    cost: f64,
    iterations: usize,
) -> DistributionResult {
    let wl = left.map(|l| l.1).unwrap_or(Wrench6::zero(FrameId::LeftSoleCenter));
    let wr = right.map(|r| r.1).unwrap_or(Wrench6::zero(FrameId::RightSoleCenter));
    let net = world_sum(left.as_ref().map(|l| (l.0, &l.1)), right.as_ref().map(|r| (r.0, &r.1)));
    let z_qp = zmp_of_world_wrench(&net, plane_height).unwrap_or(Vec3::new(f64::NAN, f64::NAN, plane_height));
    DistributionResult {
        w_left: wl,
        w_right: wr,
        z_qp,
        cop_left: cop_of_wrench(&wl).unwrap_or(Vec3::ZERO),
        cop_right: cop_of_wrench(&wr).unwrap_or(Vec3::ZERO),
        fz_left: wl.force.z,
        fz_right: wr.force.z,
        w_net: net,
        cost,
        iterations,
    }
}

fn mat6(m: &[[f64; 6]; 6]) -> DMatrix<f64> {
    DMatrix::from_fn(6, 6, |i, j| m[i][j])
}

/// Cone and minimum-pressure rows for one foot occupying variable columns
/// `offset..offset + 6`.
fn push_contact_rows(spec: &ContactSpec, n: usize, offset: usize, rows: &mut Vec<(Vec<f64>, f64)>) {
    let u = build_cwc(spec);
    for r in u.0.iter() {
        let mut row = vec![0.0; n];
        row[offset..offset + 6].copy_from_slice(r);
        rows.push((row, 0.0));
    }
    let mut row = vec![0.0; n];
    row[offset + 2] = -1.0;
    rows.push((row, -spec.p_min));
}

fn rows_to_matrix(rows: &[(Vec<f64>, f64)], n: usize) -> (DMatrix<f64>, DVector<f64>) {
    (
        DMatrix::from_fn(rows.len(), n, |i, j| rows[i].0[j]),
        DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1)),
    )
}

/// Quadratic cost data `(H, g, c)` of the double-support problem, with cost
/// `½ xᵀ H x + gᵀ x + c` over `x = [w_left; w_right]` in sole frames.
pub fn double_support_cost(
    w_net: &Wrench6,
    left: &ContactSpec,
    right: &ContactSpec,
    rho: f64,
    weights: &DistributionWeights,
) -> (DMatrix<f64>, DVector<f64>, f64) {
    let tl = mat6(&wrench_transform_matrix(&left.pose));
    let tr = mat6(&wrench_transform_matrix(&right.pose));
    let mut j = DMatrix::zeros(6, 12);
    j.view_mut((0, 0), (6, 6)).copy_from(&tl);
    j.view_mut((0, 6), (6, 6)).copy_from(&tr);
    let wd = DVector::from_row_slice(&w_net.to_array());
    let mut h = j.transpose() * &j * (2.0 * weights.net_wrench);
    let g = -(j.transpose() * &wd) * (2.0 * weights.net_wrench);
    let c = weights.net_wrench * wd.norm_squared();

    let eps = weights.epsilon;
    let wdiag = DMatrix::from_diagonal(&DVector::from_row_slice(&[eps, eps, eps, 1.0, 1.0, eps]));
    for (spec, off) in [(left, 0), (right, 6)] {
        let to_ankle = mat6(&wrench_transform_matrix(&Transform::from_translation(-spec.ankle_offset)));
        let block = to_ankle.transpose() * &wdiag * &to_ankle * (2.0 * weights.ankle_torque);
        let mut v = h.view_mut((off, off), (6, 6));
        v += block;
    }
    let mut r = DVector::zeros(12);
    r[2] = 1.0 - rho;
    r[8] = -rho;
    h += &r * r.transpose() * (2.0 * weights.pressure_ratio);
    // exact symmetry for the solver
    let h = (&h + h.transpose()) * 0.5;
    (h, g, c)
}

/// Constraint rows `A x <= b` of the double-support problem (32 cone rows
/// then two minimum-pressure rows are interleaved per foot: 16 cone rows and
/// one pressure row for the left foot, then the same for the right foot).
pub fn double_support_constraints(left: &ContactSpec, right: &ContactSpec) -> (DMatrix<f64>, DVector<f64>) {
    let mut rows = Vec::new();
    push_contact_rows(left, 12, 0, &mut rows);
    push_contact_rows(right, 12, 6, &mut rows);
    rows_to_matrix(&rows, 12)
}

/// Splits `w_net` (about the world origin) between both feet.
pub fn distribute_double(
    solver: &mut QpSolver,
    w_net: &Wrench6,
    left: &ContactSpec,
    right: &ContactSpec,
    rho: f64,
    weights: &DistributionWeights,
    plane_height: f64,
) -> Result<DistributionResult, DistError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(DistError::BadRatio(rho));
    }
    let (h, g, c) = double_support_cost(w_net, left, right, rho, weights);
    let (a, b) = double_support_constraints(left, right);
    let p = QpProblem::new(h, g).with_ineq(a, b);
    let sol = solver.solve(&p).map_err(|e| DistError::Qp(e.to_string()))?;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(DistError::Infeasible),
        QpStatus::MaxIterations => return Err(DistError::MaxIterations),
    }
    let wl = Wrench6::from_slice(&sol.x.as_slice()[0..6], FrameId::LeftSoleCenter);
    let wr = Wrench6::from_slice(&sol.x.as_slice()[6..12], FrameId::RightSoleCenter);
    let cost = p.objective(&sol.x) + c;
    Ok(finish(Some((left, wl)), Some((right, wr)), plane_height, cost, sol.iterations))
}

/// Closest feasible wrench on a single support foot, in the world-frame
/// Euclidean metric.
pub fn saturate_single(
    solver: &mut QpSolver,
    w_net: &Wrench6,
    support: &ContactSpec,
    is_left: bool,
    plane_height: f64,
) -> Result<DistributionResult, DistError> {
    let t = mat6(&wrench_transform_matrix(&support.pose));
    let wd = DVector::from_row_slice(&w_net.to_array());
    let h = t.transpose() * &t * 2.0;
    let h = (&h + h.transpose()) * 0.5;
    let g = -(t.transpose() * &wd) * 2.0;
    let mut rows = Vec::new();
    push_contact_rows(support, 6, 0, &mut rows);
    let (a, b) = rows_to_matrix(&rows, 6);
    let p = QpProblem::new(h, g).with_ineq(a, b);
    let sol = solver.solve(&p).map_err(|e| DistError::Qp(e.to_string()))?;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(DistError::Infeasible),
        QpStatus::MaxIterations => return Err(DistError::MaxIterations),
    }
    let cost = p.objective(&sol.x) + wd.norm_squared();
    if is_left {
        let w = Wrench6::from_slice(sol.x.as_slice(), FrameId::LeftSoleCenter);
        Ok(finish(Some((support, w)), None, plane_height, cost, sol.iterations))
    } else {
        let w = Wrench6::from_slice(sol.x.as_slice(), FrameId::RightSoleCenter);
        Ok(finish(None, Some((support, w)), plane_height, cost, sol.iterations))
    }
}

/// Support configuration for one control cycle.
#[derive(Debug, Clone, Copy)]
pub enum Support<'a> {
    Double { left: &'a ContactSpec, right: &'a ContactSpec, rho: f64 },
    Left(&'a ContactSpec),
    Right(&'a ContactSpec),
}

/// Outcome flag of a distribution cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistStatus {
    Ok,
    /// Solve failed; previous result reused.
    Held,
    /// Solve failed for too long; saturated onto the dominant foot.
    Fallback,
    Failed,
}

impl DistStatus {
    pub fn code(&self) -> u8 {
        match self {
            DistStatus::Ok => 0,
            DistStatus::Held => 1,
            DistStatus::Fallback => 2,
            DistStatus::Failed => 3,
        }
    }
}

/// Stateful wrapper used by the control loop: owns the solver workspaces and
/// implements the failure fallback.
#[derive(Debug, Clone)]
pub struct Distributor {
    pub weights: DistributionWeights,
    pub max_hold_cycles: usize,
    double: QpSolver,
    single: QpSolver,
    last: Option<DistributionResult>,
    failures: usize,
}

impl Distributor {
    pub fn new(weights: DistributionWeights) -> Self {
        Self { weights, max_hold_cycles: 3, double: QpSolver::default(), single: QpSolver::default(), last: None, failures: 0 }
    }

    pub fn step(&mut self, w_net: &Wrench6, support: Support<'_>, plane_height: f64) -> (Option<DistributionResult>, DistStatus) {
        let res = match support {
            Support::Double { left, right, rho } => {
                distribute_double(&mut self.double, w_net, left, right, rho, &self.weights, plane_height)
            }
            Support::Left(s) => saturate_single(&mut self.single, w_net, s, true, plane_height),
            Support::Right(s) => saturate_single(&mut self.single, w_net, s, false, plane_height),
        };
        match res {
            Ok(r) => {
                self.failures = 0;
                self.last = Some(r);
                (Some(r), DistStatus::Ok)
            }
            Err(e) => {
                self.failures += 1;
                log::warn!("wrench distribution failed: {e}; w_net = {:?}", w_net.to_array());
                if self.failures <= self.max_hold_cycles {
                    if let Some(last) = self.last {
                        return (Some(last), DistStatus::Held);
                    }
                }
                let dominant = match (support, self.last) {
                    (Support::Double { left, right, .. }, Some(l)) => {
                        if l.fz_left >= l.fz_right {
                            Some((left, true))
                        } else {
                            Some((right, false))
                        }
                    }
                    (Support::Double { left, .. }, None) => Some((left, true)),
                    _ => None,
                };
                if let Some((spec, is_left)) = dominant {
                    if let Ok(r) = saturate_single(&mut self.single, w_net, spec, is_left, plane_height) {
                        self.last = Some(r);
                        return (Some(r), DistStatus::Fallback);
                    }
                }
                (self.last, DistStatus::Failed)
            }
        }
    }
}
