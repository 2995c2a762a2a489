//! Dense convex QP solver.
//!
//! Solves
//!
//! ```text
//!     minimize    ½ xᵀ H x + gᵀ x
//!     subject to  A_eq x  = b_eq
//!                 A_in x <= b_in
//!                 lower <= x <= upper
//! ```
//!
//! with a primal active-set method. A feasible starting point is found by an
//! elastic Phase-1 problem that is itself solved by the same active-set
//! iteration, started from a trivially feasible point. Problem sizes in this
//! crate are tiny (12 variables for wrench distribution, 32 for the pattern
//! generator), so the KKT system is factorized from scratch at every
//! iteration.
//!
//! Inequality rows are normalized to unit Euclidean norm internally; the
//! reported multipliers refer to the rows as given.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("cost matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("cost matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotConvex(f64),
    #[error("problem data contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub lower: Option<DVector<f64>>,
    pub upper: Option<DVector<f64>>,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
            lower: None,
            upper: None,
        }
    }

    pub fn with_eq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_ineq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_ineq = a;
        self.b_ineq = b;
        self
    }

    pub fn with_bounds(mut self, lower: Option<DVector<f64>>, upper: Option<DVector<f64>>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.g.len()
    }

    /// Number of inequality rows once bounds are expanded: general rows
    /// first, then upper bounds, then lower bounds (finite entries only).
    pub fn num_ineq_rows(&self) -> usize {
        let finite = |v: &Option<DVector<f64>>| v.as_ref().map_or(0, |v| v.iter().filter(|x| x.is_finite()).count());
        self.a_ineq.nrows() + finite(&self.upper) + finite(&self.lower)
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    /// Expanded inequality system `A x <= b` including bounds.
    pub fn expanded_ineq(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.num_vars();
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for i in 0..self.a_ineq.nrows() {
            rows.push((self.a_ineq.row(i).iter().copied().collect(), self.b_ineq[i]));
        }
        if let Some(u) = &self.upper {
            for (j, &uj) in u.iter().enumerate() {
                if uj.is_finite() {
                    let mut r = vec![0.0; n];
                    r[j] = 1.0;
                    rows.push((r, uj));
                }
            }
        }
        if let Some(l) = &self.lower {
            for (j, &lj) in l.iter().enumerate() {
                if lj.is_finite() {
                    let mut r = vec![0.0; n];
                    r[j] = -1.0;
                    rows.push((r, -lj));
                }
            }
        }
        let a = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].0[j]);
        let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        (a, b)
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        let dim = |what: &str| Err(QpError::Dimension(what.to_string()));
        if self.h.nrows() != n || self.h.ncols() != n {
            return dim("H must be n x n");
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return dim("A_eq / b_eq");
        }
        if self.a_ineq.ncols() != n || self.a_ineq.nrows() != self.b_ineq.len() {
            return dim("A_ineq / b_ineq");
        }
        if self.lower.as_ref().is_some_and(|l| l.len() != n) || self.upper.as_ref().is_some_and(|u| u.len() != n) {
            return dim("bounds");
        }
        let finite = self.h.iter().all(|v| v.is_finite())
            && self.g.iter().all(|v| v.is_finite())
            && self.a_eq.iter().all(|v| v.is_finite())
            && self.b_eq.iter().all(|v| v.is_finite())
            && self.a_ineq.iter().all(|v| v.is_finite())
            && self.b_ineq.iter().all(|v| v.is_finite());
        if !finite {
            return Err(QpError::NonFinite);
        }
        let scale = self.h.amax().max(1.0);
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(QpError::NotSymmetric(asym));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    /// Scaled KKT residual: max of relative stationarity, primal
    /// infeasibility, dual infeasibility and complementarity.
    pub kkt_residual: f64,
    /// Active inequality rows (indices into the expanded inequality system).
    pub active_set: Vec<usize>,
    pub eq_multipliers: DVector<f64>,
    /// One multiplier per expanded inequality row (zero when inactive).
    pub ineq_multipliers: DVector<f64>,
    pub iterations: usize,
    /// Largest constraint violation at `x` (row-normalized).
    pub max_violation: f64,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone)]
pub struct QpSettings {
    pub max_iterations: usize,
    pub feasibility_tol: f64,
    pub regularization: f64,
    pub warm_start: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { max_iterations: 200, feasibility_tol: 1e-9, regularization: 1e-10, warm_start: true }
    }
}

/// Active-set solver; keeps the last optimal working set to seed the next
/// solve of a problem with the same shape.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
    last_active: Option<(usize, usize, Vec<usize>)>,
}

pub fn solve(p: &QpProblem) -> Result<QpSolution, QpError> {
    QpSolver::default().solve(p)
}

/// Normalized internal representation.
struct Normalized {
    h: DMatrix<f64>,
    g: DVector<f64>,
    /// Equality rows first, then inequality rows.
    a: DMatrix<f64>,
    b: DVector<f64>,
    n_eq: usize,
    row_scale: Vec<f64>,
}

struct CoreResult {
    x: DVector<f64>,
    working: Vec<usize>,
    mult: Vec<f64>,
    status: QpStatus,
    iterations: usize,
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings, last_active: None }
    }

    pub fn clear_warm_start(&mut self) {
        self.last_active = None;
    }

    pub fn solve(&mut self, p: &QpProblem) -> Result<QpSolution, QpError> {
        p.validate()?;
        let n = p.num_vars();
        let (a_in, b_in) = p.expanded_ineq();
        let m_in = a_in.nrows();
        let n_eq = p.a_eq.nrows();
        let tol = self.settings.feasibility_tol;

        let mut h = p.h.clone();
        let h_scale = h.amax().max(1.0);
        if n > 0 {
            let eig = nalgebra::SymmetricEigen::new(h.clone());
            let lmin = eig.eigenvalues.min();
            if lmin < -1e-8 * h_scale {
                return Err(QpError::NotConvex(lmin));
            }
            if lmin < 1e-9 * h_scale {
                for i in 0..n {
                    h[(i, i)] += self.settings.regularization * h_scale;
                }
            }
        }

        // stack and normalize rows
        let m = n_eq + m_in;
        let mut a = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        let mut row_scale = vec![1.0; m];
        for i in 0..m {
            let (row, rhs) = if i < n_eq {
                (p.a_eq.row(i).clone_owned(), p.b_eq[i])
            } else {
                (a_in.row(i - n_eq).clone_owned(), b_in[i - n_eq])
            };
            let nr = row.norm();
            let s = if nr > 0.0 { nr } else { 1.0 };
            row_scale[i] = s;
            a.set_row(i, &(row / s));
            b[i] = rhs / s;
        }
        for i in n_eq..m {
            if row_scale[i] == 1.0 && a.row(i).norm() == 0.0 && b[i] < -tol {
                // 0 <= negative
                return Ok(self.infeasible(p, DVector::zeros(n), 0));
            }
        }
        let prob = Normalized { h, g: p.g.clone(), a, b, n_eq, row_scale };

        // Warm start
        let mut start: Option<(DVector<f64>, Vec<usize>)> = None;
        if self.settings.warm_start {
            if let Some((wn, wm, ws)) = &self.last_active {
                if *wn == n && *wm == m_in {
                    let mut working: Vec<usize> = (0..n_eq).collect();
                    for &i in ws {
                        let r = n_eq + i;
                        if independent_of(&prob.a, &working, r) {
                            working.push(r);
                        }
                    }
                    if let Some((x, _)) = solve_eqp(&prob.h, &prob.g, &prob.a, &prob.b, &working, None) {
                        if max_violation(&prob, &x) <= tol {
                            start = Some((x, working));
                        }
                    }
                }
            }
        }

        let (x0, w0, mut iterations) = match start {
            Some((x, w)) => (x, w, 0),
            None => match self.phase_one(&prob) {
                Ok((x, it)) => {
                    let w = initial_working_set(&prob, &x, tol);
                    (x, w, it)
                }
                Err((x, it)) => return Ok(self.infeasible(p, x, it)),
            },
        };

        let core = active_set(&prob, x0, w0, self.settings.max_iterations);
        iterations += core.iterations;

        let mut eq_mult = DVector::zeros(n_eq);
        let mut in_mult = DVector::zeros(m_in);
        let mut active = Vec::new();
        for (k, &r) in core.working.iter().enumerate() {
            let mu = core.mult[k] / prob.row_scale[r];
            if r < n_eq {
                eq_mult[r] = mu;
            } else {
                in_mult[r - n_eq] = mu;
                active.push(r - n_eq);
            }
        }
        active.sort_unstable();
        let kkt = kkt_residual(p, &a_in, &b_in, &core.x, &eq_mult, &in_mult);
        let viol = max_violation(&prob, &core.x);
        if core.status == QpStatus::Optimal {
            self.last_active = Some((n, m_in, active.clone()));
        }
        Ok(QpSolution {
            x: core.x,
            status: core.status,
            kkt_residual: kkt,
            active_set: active,
            eq_multipliers: eq_mult,
            ineq_multipliers: in_mult,
            iterations,
            max_violation: viol,
        })
    }

    fn infeasible(&mut self, p: &QpProblem, x: DVector<f64>, iterations: usize) -> QpSolution {
        self.last_active = None;
        let m_in = p.num_ineq_rows();
        let (a_in, b_in) = p.expanded_ineq();
        let mut viol: f64 = 0.0;
        for i in 0..m_in {
            let r = a_in.row(i);
            let nr = r.norm().max(1e-300);
            viol = viol.max((r.dot(&x.transpose()) - b_in[i]) / nr);
        }
        for i in 0..p.a_eq.nrows() {
            let r = p.a_eq.row(i);
            let nr = r.norm().max(1e-300);
            viol = viol.max((r.dot(&x.transpose()) - p.b_eq[i]).abs() / nr);
        }
        QpSolution {
            x,
            status: QpStatus::Infeasible,
            kkt_residual: f64::INFINITY,
            active_set: Vec::new(),
            eq_multipliers: DVector::zeros(p.a_eq.nrows()),
            ineq_multipliers: DVector::zeros(m_in),
            iterations,
            max_violation: viol,
        }
    }

    /// Finds a point satisfying every constraint, or returns the
    /// least-violating point of the elastic problem.
    fn phase_one(&self, prob: &Normalized) -> Result<(DVector<f64>, usize), (DVector<f64>, usize)> {
        let n = prob.g.len();
        let m = prob.a.nrows();
        let n_eq = prob.n_eq;
        let tol = self.settings.feasibility_tol;
        let eq_rows: Vec<usize> = (0..n_eq).collect();
        let independent_eq = {
            let mut w = Vec::new();
            for &r in &eq_rows {
                if independent_of(&prob.a, &w, r) {
                    w.push(r);
                }
            }
            w
        };
        let x0 = match solve_eqp(&prob.h, &prob.g, &prob.a, &prob.b, &independent_eq, None) {
            Some((x, _)) => x,
            None => return Err((DVector::zeros(n), 0)),
        };
        // dependent equality rows must be consistent
        for r in 0..n_eq {
            if (prob.a.row(r).dot(&x0.transpose()) - prob.b[r]).abs() > 1e-7 {
                return Err((x0, 0));
            }
        }
        let violated: Vec<usize> = (n_eq..m).filter(|&r| prob.a.row(r).dot(&x0.transpose()) - prob.b[r] > tol).collect();
        if violated.is_empty() {
            return Ok((x0, 0));
        }

        // elastic problem in (x, s)
        let v = violated.len();
        let nn = n + v;
        let rho = 1e-6;
        let mut h1 = DMatrix::zeros(nn, nn);
        for i in 0..nn {
            h1[(i, i)] = rho;
        }
        let mut g1 = DVector::zeros(nn);
        for i in 0..n {
            g1[i] = -rho * x0[i];
        }
        for k in 0..v {
            g1[n + k] = 1.0;
        }
        let m1 = m + v;
        let mut a1 = DMatrix::zeros(m1, nn);
        let mut b1 = DVector::zeros(m1);
        for r in 0..m {
            for j in 0..n {
                a1[(r, j)] = prob.a[(r, j)];
            }
            b1[r] = prob.b[r];
        }
        for (k, &r) in violated.iter().enumerate() {
            a1[(r, n + k)] = -1.0;
            a1[(m + k, n + k)] = -1.0;
        }
        let mut x1 = DVector::zeros(nn);
        for j in 0..n {
            x1[j] = x0[j];
        }
        for (k, &r) in violated.iter().enumerate() {
            x1[n + k] = prob.a.row(r).dot(&x0.transpose()) - prob.b[r];
        }
        // the slack-augmented rows are not unit norm; normalize them again
        let mut scale1 = vec![1.0; m1];
        for r in 0..m1 {
            let nr = a1.row(r).norm();
            if nr > 0.0 {
                let row = a1.row(r) / nr;
                a1.set_row(r, &row);
                b1[r] /= nr;
                scale1[r] = nr;
            }
        }
        let elastic = Normalized { h: h1, g: g1, a: a1, b: b1, n_eq, row_scale: scale1 };
        let w0 = initial_working_set(&elastic, &x1, tol);
        let core = active_set(&elastic, x1, w0, 20 * self.settings.max_iterations.max(m1));
        let x = core.x.rows(0, n).into_owned();
        let worst = (0..v).map(|k| core.x[n + k]).fold(0.0, f64::max);
        if worst > 1e-7 || max_violation(prob, &x) > 1e-7 {
            return Err((x, core.iterations));
        }
        Ok((x, core.iterations))
    }
}

fn max_violation(prob: &Normalized, x: &DVector<f64>) -> f64 {
    let mut v: f64 = 0.0;
    for r in 0..prob.a.nrows() {
        let s = prob.a.row(r).dot(&x.transpose()) - prob.b[r];
        v = v.max(if r < prob.n_eq { s.abs() } else { s });
    }
    v
}

fn independent_of(a: &DMatrix<f64>, working: &[usize], r: usize) -> bool {
    if working.len() >= a.ncols() {
        return false;
    }
    let k = working.len();
    let mut m = DMatrix::zeros(k + 1, a.ncols());
    for (i, &w) in working.iter().enumerate() {
        m.set_row(i, &a.row(w));
    }
    m.set_row(k, &a.row(r));
    let svd = m.transpose().svd(false, false);
    let smin = svd.singular_values.min();
    smin > 1e-9
}

fn initial_working_set(prob: &Normalized, x: &DVector<f64>, tol: f64) -> Vec<usize> {
    let mut w: Vec<usize> = Vec::new();
    for r in 0..prob.n_eq {
        if independent_of(&prob.a, &w, r) {
            w.push(r);
        }
    }
    for r in prob.n_eq..prob.a.nrows() {
        let s = prob.a.row(r).dot(&x.transpose()) - prob.b[r];
        if s.abs() <= 10.0 * tol && independent_of(&prob.a, &w, r) {
            w.push(r);
        }
    }
    w
}

/// Minimizes the quadratic over `{x : A_W x = b_W}` when `x` is `None`, or
/// returns the step `p` from `x` with `A_W p = 0` otherwise. Multipliers
/// follow the convention `H x + g + A_Wᵀ μ = 0`.
fn solve_eqp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    working: &[usize],
    x: Option<&DVector<f64>>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = g.len();
    let k = working.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    let mut rhs = DVector::zeros(n + k);
    for (i, &r) in working.iter().enumerate() {
        for j in 0..n {
            kkt[(n + i, j)] = a[(r, j)];
            kkt[(j, n + i)] = a[(r, j)];
        }
    }
    match x {
        None => {
            for j in 0..n {
                rhs[j] = -g[j];
            }
            for (i, &r) in working.iter().enumerate() {
                rhs[n + i] = b[r];
            }
        }
        Some(x) => {
            let grad = h * x + g;
            for j in 0..n {
                rhs[j] = -grad[j];
            }
        }
    }
    let lu = kkt.full_piv_lu();
    let sol = lu.solve(&rhs)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
}

fn active_set(prob: &Normalized, mut x: DVector<f64>, mut working: Vec<usize>, max_iter: usize) -> CoreResult {
    let m = prob.a.nrows();
    let mut iterations = 0;
    // after an unblocked full step, x minimizes over the working set and the
    // step recomputed there is rounding noise
    let mut at_minimizer = false;
    loop {
        let (p, mu) = match solve_eqp(&prob.h, &prob.g, &prob.a, &prob.b, &working, Some(&x)) {
            Some(v) => v,
            None => {
                // singular KKT: drop the most recently added inequality
                if working.len() > prob.n_eq {
                    working.pop();
                    iterations += 1;
                    if iterations >= max_iter {
                        return CoreResult { x, mult: vec![0.0; working.len()], working, status: QpStatus::MaxIterations, iterations };
                    }
                    continue;
                }
                return CoreResult { x, mult: vec![0.0; working.len()], working, status: QpStatus::MaxIterations, iterations };
            }
        };
        let grad_scale = (&prob.h * &x + &prob.g).amax().max(1.0);
        let xs = x.amax().max(1.0);
        if at_minimizer || p.amax() <= 1e-9 * xs {
            at_minimizer = false;
            // multiplier check
            let mult_tol = 1e-10 * grad_scale;
            let mut worst: Option<(usize, f64)> = None;
            for (k, &r) in working.iter().enumerate() {
                if r >= prob.n_eq && mu[k] < -mult_tol && worst.is_none_or(|(_, v)| mu[k] < v) {
                    worst = Some((k, mu[k]));
                }
            }
            match worst {
                None => {
                    return CoreResult { x, mult: mu.iter().copied().collect(), working, status: QpStatus::Optimal, iterations };
                }
                Some((k, _)) => {
                    working.remove(k);
                }
            }
        } else {
            let mut alpha = 1.0;
            let mut blocking = None;
            // rows are unit norm; rows spanned by the working set give a·p at
            // rounding level and must not block
            let ap_tol = 1e-10 * p.norm();
            for r in prob.n_eq..m {
                if working.contains(&r) {
                    continue;
                }
                let ap = prob.a.row(r).dot(&p.transpose());
                if ap > ap_tol {
                    let slack = prob.b[r] - prob.a.row(r).dot(&x.transpose());
                    let step = (slack / ap).max(0.0);
                    if step < alpha {
                        alpha = step;
                        blocking = Some(r);
                    }
                }
            }
            x += &p * alpha;
            match blocking {
                Some(r) => working.push(r),
                None => at_minimizer = true,
            }
        }
        iterations += 1;
        if iterations >= max_iter {
            let mult = vec![0.0; working.len()];
            return CoreResult { x, mult, working, status: QpStatus::MaxIterations, iterations };
        }
    }
}

fn kkt_residual(
    p: &QpProblem,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
    x: &DVector<f64>,
    eq_mult: &DVector<f64>,
    in_mult: &DVector<f64>,
) -> f64 {
    let hx = &p.h * x;
    let mut r = &hx + &p.g;
    if p.a_eq.nrows() > 0 {
        r += p.a_eq.transpose() * eq_mult;
    }
    if a_in.nrows() > 0 {
        r += a_in.transpose() * in_mult;
    }
    let scale = hx.amax().max(p.g.amax()).max(1.0);
    let mut res = r.amax() / scale;
    for i in 0..a_in.nrows() {
        let nr = a_in.row(i).norm().max(1e-300);
        let slack = (a_in.row(i).dot(&x.transpose()) - b_in[i]) / nr;
        res = res.max(slack);
        res = res.max(-in_mult[i] * nr / scale);
        res = res.max((in_mult[i] * nr / scale * slack).abs());
    }
    for i in 0..p.a_eq.nrows() {
        let nr = p.a_eq.row(i).norm().max(1e-300);
        res = res.max((p.a_eq.row(i).dot(&x.transpose()) - p.b_eq[i]).abs() / nr);
    }
    res.max(0.0)
}
