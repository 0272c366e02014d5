//! Dense SQP solver for smooth equality/inequality constrained NLPs.
//!
//! The quadratic subproblems are solved by a Goldfarb-Idnani dual active-set
//! method, which needs no feasible starting point; infeasible subproblems
//! fall back to an elastic reformulation with penalized slacks. The Hessian
//! is a damped BFGS approximation, globalized by an l1 merit backtracking
//! line search.

use std::io::Write;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::exprgraph::{ExprGraph, GraphError};

#[derive(Debug, Error)]
pub enum NlpError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("nlp dimension mismatch: {0}")]
    Dim(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// An NLP over a decision vector `z` and a parameter vector `theta`:
/// minimize `f(z; theta)` subject to `c_eq(z; theta) = 0`,
/// `c_ineq(z; theta) <= 0`, and `z_lo <= z <= z_hi`.
///
/// All graphs use the two-group `(z, theta)` signature. First derivatives
/// are built symbolically once at construction; `theta` can be rebound
/// between solves without touching the graphs.
pub struct NlpProblem {
    objective: ExprGraph,
    eq: Option<ExprGraph>,
    ineq: Option<ExprGraph>,
    grad: ExprGraph,
    jac_eq: Option<ExprGraph>,
    jac_ineq: Option<ExprGraph>,
    pub z_lo: Vec<f64>,
    pub z_hi: Vec<f64>,
    theta: Vec<f64>,
    /// Layout metadata: one name per variable, one tag per constraint row.
    pub var_names: Vec<String>,
    pub eq_tags: Vec<String>,
    pub ineq_tags: Vec<String>,
    /// Objective Hessian graph, built on first use.
    hess: OnceLock<ExprGraph>,
}

impl NlpProblem {
    pub fn new(
        objective: ExprGraph,
        eq: Option<ExprGraph>,
        ineq: Option<ExprGraph>,
        z_lo: Vec<f64>,
        z_hi: Vec<f64>,
        theta: Vec<f64>,
    ) -> Result<Self, NlpError> {
        let n_z = objective.signature().group_size(0);
        if z_lo.len() != n_z || z_hi.len() != n_z {
            return Err(NlpError::Dim(format!(
                "bounds length {} vs {} variables",
                z_lo.len(),
                n_z
            )));
        }
        if objective.n_outputs() != 1 {
            return Err(NlpError::Dim("objective must be scalar".into()));
        }
        let grad = objective.differentiate(0)?;
        let jac_eq = eq.as_ref().map(|g| g.differentiate(0)).transpose()?;
        let jac_ineq = ineq.as_ref().map(|g| g.differentiate(0)).transpose()?;
        let m_eq = eq.as_ref().map_or(0, |g| g.n_outputs());
        let m_ineq = ineq.as_ref().map_or(0, |g| g.n_outputs());
        Ok(NlpProblem {
            objective,
            eq,
            ineq,
            grad,
            jac_eq,
            jac_ineq,
            z_lo,
            z_hi,
            theta,
            var_names: (0..n_z).map(|i| format!("z{i}")).collect(),
            eq_tags: (0..m_eq).map(|i| format!("eq{i}")).collect(),
            ineq_tags: (0..m_ineq).map(|i| format!("ineq{i}")).collect(),
            hess: OnceLock::new(),
        })
    }

    pub fn n_z(&self) -> usize {
        self.z_lo.len()
    }

    pub fn m_eq(&self) -> usize {
        self.eq.as_ref().map_or(0, |g| g.n_outputs())
    }

    pub fn m_ineq(&self) -> usize {
        self.ineq.as_ref().map_or(0, |g| g.n_outputs())
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_theta(&mut self, theta: Vec<f64>) {
        assert_eq!(theta.len(), self.theta.len(), "theta length is fixed");
        self.theta = theta;
    }

    pub fn objective_value(&self, z: &[f64]) -> Result<f64, GraphError> {
        Ok(self.objective.eval(&[z, &self.theta])?[0])
    }

    pub fn gradient(&self, z: &[f64]) -> Result<Vec<f64>, GraphError> {
        self.grad.eval(&[z, &self.theta])
    }

    pub fn c_eq(&self, z: &[f64]) -> Result<Vec<f64>, GraphError> {
        match &self.eq {
            Some(g) => g.eval(&[z, &self.theta]),
            None => Ok(Vec::new()),
        }
    }

    pub fn c_ineq(&self, z: &[f64]) -> Result<Vec<f64>, GraphError> {
        match &self.ineq {
            Some(g) => g.eval(&[z, &self.theta]),
            None => Ok(Vec::new()),
        }
    }

    fn jac(&self, g: &ExprGraph, z: &[f64], rows: usize) -> Result<DMatrix<f64>, GraphError> {
        let flat = g.eval(&[z, &self.theta])?;
        Ok(DMatrix::from_row_slice(rows, self.n_z(), &flat))
    }

    pub fn jacobian_eq(&self, z: &[f64]) -> Result<DMatrix<f64>, GraphError> {
        match &self.jac_eq {
            Some(g) => self.jac(g, z, self.m_eq()),
            None => Ok(DMatrix::zeros(0, self.n_z())),
        }
    }

    pub fn jacobian_ineq(&self, z: &[f64]) -> Result<DMatrix<f64>, GraphError> {
        match &self.jac_ineq {
            Some(g) => self.jac(g, z, self.m_ineq()),
            None => Ok(DMatrix::zeros(0, self.n_z())),
        }
    }

    /// Max-norm constraint violation at `z` (equalities, inequalities,
    /// variable bounds).
    pub fn violation(&self, z: &[f64]) -> Result<f64, GraphError> {
        let mut v: f64 = 0.0;
        for c in self.c_eq(z)? {
            v = v.max(c.abs());
        }
        for c in self.c_ineq(z)? {
            v = v.max(c.max(0.0));
        }
        for ((zi, lo), hi) in z.iter().zip(&self.z_lo).zip(&self.z_hi) {
            v = v.max(lo - zi).max(zi - hi);
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianMode {
    /// Solver's choice (default); currently the objective Hessian.
    Auto,
    /// Damped BFGS on the Lagrangian.
    DampedBfgs,
    /// Symbolic Hessian of the objective only, eigenvalue-floored.
    GaussNewton,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub kkt_tol: f64,
    pub max_iter: usize,
    /// Multiplier applied to the merit penalty when it must increase.
    pub penalty_growth: f64,
    /// Backtracking ratio of the line search.
    pub backtrack: f64,
    pub hessian: HessianMode,
    /// Smallest diagonal regularization added to rescue factorization.
    pub reg_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            kkt_tol: 1e-6,
            max_iter: 200,
            penalty_growth: 10.0,
            backtrack: 0.5,
            hessian: HessianMode::Auto,
            reg_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    MaxIter,
    Infeasible,
    LineSearchFailure,
    EvalError,
}

/// One row of the iteration log.
#[derive(Debug, Clone)]
pub struct IterRow {
    pub iter: usize,
    pub objective: f64,
    pub kkt: f64,
    pub violation: f64,
    pub step: f64,
    pub active: usize,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub z: Vec<f64>,
    pub lam_eq: Vec<f64>,
    /// Multipliers of `c_ineq <= 0`, nonnegative.
    pub mu_ineq: Vec<f64>,
    /// Multipliers of the lower/upper variable bounds, nonnegative.
    pub mu_lo: Vec<f64>,
    pub mu_hi: Vec<f64>,
    pub status: Status,
    pub kkt: f64,
    pub violation: f64,
    pub iterations: usize,
    pub objective: f64,
    pub log: Vec<IterRow>,
    /// Diagnostic for `EvalError`.
    pub detail: String,
}

impl Solution {
    pub fn write_log_csv<W: Write>(&self, mut w: W) -> Result<(), NlpError> {
        writeln!(w, "iter,objective,kkt,violation,step,active")?;
        for r in &self.log {
            writeln!(
                w,
                "{},{:?},{:?},{:?},{:?},{}",
                r.iter, r.objective, r.kkt, r.violation, r.step, r.active
            )?;
        }
        Ok(())
    }
}

/// Stationarity, feasibility, and complementarity residual (max-norm),
/// recomputed from the graphs.
pub fn kkt_residual(
    p: &NlpProblem,
    z: &[f64],
    lam_eq: &[f64],
    mu_ineq: &[f64],
    mu_lo: &[f64],
    mu_hi: &[f64],
) -> Result<f64, GraphError> {
    let n = p.n_z();
    let mut stat = p.gradient(z)?;
    if p.m_eq() > 0 {
        let a = p.jacobian_eq(z)?;
        for (i, l) in lam_eq.iter().enumerate() {
            for j in 0..n {
                stat[j] += l * a[(i, j)];
            }
        }
    }
    if p.m_ineq() > 0 {
        let a = p.jacobian_ineq(z)?;
        for (i, m) in mu_ineq.iter().enumerate() {
            for j in 0..n {
                stat[j] += m * a[(i, j)];
            }
        }
    }
    for j in 0..n {
        stat[j] += mu_hi[j] - mu_lo[j];
    }
    let mut r = stat.iter().fold(0.0f64, |a, s| a.max(s.abs()));
    r = r.max(p.violation(z)?);
    for (ci, mi) in p.c_ineq(z)?.iter().zip(mu_ineq) {
        r = r.max((ci * mi).abs());
    }
    for j in 0..n {
        if p.z_lo[j].is_finite() {
            r = r.max((mu_lo[j] * (z[j] - p.z_lo[j])).abs());
        }
        if p.z_hi[j].is_finite() {
            r = r.max((mu_hi[j] * (p.z_hi[j] - z[j])).abs());
        }
    }
    Ok(r)
}

/// Goldfarb-Idnani dual active-set QP:
/// minimize `1/2 d' H d + g' d` subject to `a_i' d = b_i` for `i < meq`
/// and `a_i' d >= b_i` otherwise. `H` must be positive definite.
/// Returns `(d, multipliers)` or `None` when the constraints are
/// inconsistent. Multipliers are reported per row, zero when inactive.
fn solve_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    rows: &[(DVector<f64>, f64)],
    meq: usize,
) -> Option<(DVector<f64>, Vec<f64>)> {
    let n = h.nrows();
    let chol = h.clone().cholesky()?;
    // J = L^{-T}: unconstrained metric; columns q.. span the free subspace.
    let mut j_mat = DMatrix::<f64>::identity(n, n);
    chol.l_dirty()
        .transpose()
        .solve_upper_triangular_mut(&mut j_mat);
    let mut x = -chol.solve(g);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut r_mat = DMatrix::<f64>::zeros(n, n);
    let vsmall = 1e-11;

    // Queue: all equalities first, then repeatedly the most violated
    // inequality. Rows proven dependent with rounding-level violation are
    // parked rather than treated as witnesses of infeasibility.
    let mut forced: Vec<usize> = (0..meq).collect();
    let mut parked: Vec<bool> = vec![false; rows.len()];
    let max_pivots = 50 * (rows.len() + n) + 100;
    let mut pivots = 0;
    'outer: loop {
        let cand = if let Some(k) = forced.first().copied() {
            forced.remove(0);
            k
        } else {
            let mut worst = None;
            let mut worst_v = -vsmall;
            for (k, (a, b)) in rows.iter().enumerate().skip(meq) {
                if active.contains(&k) || parked[k] {
                    continue;
                }
                let s = a.dot(&x) - b;
                if s < worst_v {
                    worst_v = s;
                    worst = Some(k);
                }
            }
            match worst {
                Some(k) => k,
                None => break,
            }
        };
        let (ref a_cand, b_cand) = rows[cand];
        let mut u_plus = 0.0;
        // Inner loop: take partial (drop) or full (add) steps until the
        // candidate constraint is satisfied or shown inconsistent.
        loop {
            pivots += 1;
            if pivots > max_pivots {
                return None;
            }
            let q = active.len();
            let d = j_mat.transpose() * a_cand;
            // Step direction in primal space and dual space.
            let mut z = DVector::zeros(n);
            for c in q..n {
                z.axpy(d[c], &j_mat.column(c).into_owned(), 1.0);
            }
            let mut r = DVector::zeros(q);
            for i in (0..q).rev() {
                let mut s = d[i];
                for c in (i + 1)..q {
                    s -= r_mat[(i, c)] * r[c];
                }
                r[i] = s / r_mat[(i, i)];
            }
            // Partial step bound from active inequality multipliers.
            let mut t1 = f64::INFINITY;
            let mut drop_idx = None;
            for (pos, &k) in active.iter().enumerate() {
                if k < meq {
                    continue;
                }
                if r[pos] > vsmall {
                    let t = u[pos] / r[pos];
                    if t < t1 {
                        t1 = t;
                        drop_idx = Some(pos);
                    }
                }
            }
            let z_dot_a = z.dot(a_cand);
            let s_cand = a_cand.dot(&x) - b_cand;
            if z_dot_a.abs() <= vsmall {
                // No primal progress possible in the current subspace.
                if t1.is_infinite() {
                    // The candidate is in the span of the active rows with
                    // no dual slack. A violation at rounding level is a
                    // degenerate duplicate (common when an ordering row is
                    // the sum of two bounding rows); park it. Anything
                    // larger certifies inconsistency.
                    if cand >= meq && s_cand >= -1e-8 * (1.0 + b_cand.abs()) {
                        parked[cand] = true;
                        continue 'outer;
                    }
                    return None;
                }
                let pos = drop_idx.unwrap();
                for i in 0..active.len() {
                    u[i] -= t1 * r[i];
                }
                u_plus += t1;
                drop_constraint(&mut active, &mut u, &mut r_mat, &mut j_mat, pos);
                continue;
            }
            let t2 = -s_cand / z_dot_a;
            let t = t1.min(t2);
            if !t.is_finite() {
                return None;
            }
            x.axpy(t, &z, 1.0);
            for i in 0..active.len() {
                u[i] -= t * r[i];
            }
            u_plus += t;
            if t2 <= t1 + vsmall {
                // Full step: add the candidate to the active set.
                add_constraint(&mut active, &mut u, &mut r_mat, &mut j_mat, cand, u_plus, &d);
                break;
            }
            // Partial step: t1 < t2 < inf, so a blocking row exists.
            let pos = drop_idx.expect("finite partial step has a blocking row");
            drop_constraint(&mut active, &mut u, &mut r_mat, &mut j_mat, pos);
        }
    }
    let mut mult = vec![0.0; rows.len()];
    for (pos, &k) in active.iter().enumerate() {
        mult[k] = u[pos];
    }
    Some((x, mult))
}

/// Appends constraint `k` with multiplier `u_plus`; `d = J' a_k` as computed
/// before the step. Givens rotations restore the triangular factor.
fn add_constraint(
    active: &mut Vec<usize>,
    u: &mut Vec<f64>,
    r_mat: &mut DMatrix<f64>,
    j_mat: &mut DMatrix<f64>,
    k: usize,
    u_plus: f64,
    d: &DVector<f64>,
) {
    let n = j_mat.nrows();
    let q = active.len();
    let mut d = d.clone();
    for i in ((q + 1)..n).rev() {
        let (a, b) = (d[i - 1], d[i]);
        let h = a.hypot(b);
        if h == 0.0 {
            continue;
        }
        let (c, s) = (a / h, b / h);
        d[i - 1] = h;
        d[i] = 0.0;
        for row in 0..n {
            let (x1, x2) = (j_mat[(row, i - 1)], j_mat[(row, i)]);
            j_mat[(row, i - 1)] = c * x1 + s * x2;
            j_mat[(row, i)] = -s * x1 + c * x2;
        }
    }
    for i in 0..=q {
        r_mat[(i, q)] = d[i];
    }
    active.push(k);
    u.push(u_plus);
}

/// Removes the active constraint at position `pos`, restoring the factor.
fn drop_constraint(
    active: &mut Vec<usize>,
    u: &mut Vec<f64>,
    r_mat: &mut DMatrix<f64>,
    j_mat: &mut DMatrix<f64>,
    pos: usize,
) {
    let n = j_mat.nrows();
    let q = active.len();
    active.remove(pos);
    u.remove(pos);
    // Shift columns left; the factor becomes upper Hessenberg.
    for col in pos..(q - 1) {
        for row in 0..n {
            r_mat[(row, col)] = r_mat[(row, col + 1)];
        }
    }
    for row in 0..n {
        r_mat[(row, q - 1)] = 0.0;
    }
    for i in pos..(q - 1) {
        let (a, b) = (r_mat[(i, i)], r_mat[(i + 1, i)]);
        let h = a.hypot(b);
        if h == 0.0 {
            continue;
        }
        let (c, s) = (a / h, b / h);
        for col in i..(q - 1) {
            let (x1, x2) = (r_mat[(i, col)], r_mat[(i + 1, col)]);
            r_mat[(i, col)] = c * x1 + s * x2;
            r_mat[(i + 1, col)] = -s * x1 + c * x2;
        }
        for row in 0..n {
            let (x1, x2) = (j_mat[(row, i)], j_mat[(row, i + 1)]);
            j_mat[(row, i)] = c * x1 + s * x2;
            j_mat[(row, i + 1)] = -s * x1 + c * x2;
        }
    }
}

/// QP data assembled at the current iterate.
struct QpData {
    rows: Vec<(DVector<f64>, f64)>,
    meq: usize,
    /// Row provenance: index into eq (0..m_eq), ineq (m_eq..m_eq+m_ineq),
    /// then lower/upper bounds.
    kinds: Vec<RowKind>,
}

#[derive(Clone, Copy)]
enum RowKind {
    Eq(usize),
    Ineq(usize),
    Lo(usize),
    Hi(usize),
}

fn assemble_qp(
    p: &NlpProblem,
    z: &[f64],
    ce: &[f64],
    ci: &[f64],
    a_eq: &DMatrix<f64>,
    a_ineq: &DMatrix<f64>,
) -> QpData {
    let n = p.n_z();
    let mut rows = Vec::new();
    let mut kinds = Vec::new();
    for (i, c) in ce.iter().enumerate() {
        rows.push((a_eq.row(i).transpose(), -c));
        kinds.push(RowKind::Eq(i));
    }
    let meq = rows.len();
    // c + a'd <= 0 in >= form: -a'd >= c.
    for (i, c) in ci.iter().enumerate() {
        rows.push((-a_ineq.row(i).transpose(), *c));
        kinds.push(RowKind::Ineq(i));
    }
    for jv in 0..n {
        if p.z_lo[jv].is_finite() {
            let mut a = DVector::zeros(n);
            a[jv] = 1.0;
            rows.push((a, p.z_lo[jv] - z[jv]));
            kinds.push(RowKind::Lo(jv));
        }
        if p.z_hi[jv].is_finite() {
            let mut a = DVector::zeros(n);
            a[jv] = -1.0;
            rows.push((a, z[jv] - p.z_hi[jv]));
            kinds.push(RowKind::Hi(jv));
        }
    }
    QpData { rows, meq, kinds }
}

/// Elastic reformulation: slacks absorb every general constraint so the QP
/// is always consistent; the slack penalty drives them toward zero.
fn solve_qp_elastic(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    qp: &QpData,
    rho: f64,
) -> Option<(DVector<f64>, Vec<f64>)> {
    let n = h.nrows();
    // One slack per general (non-bound) row; bounds stay hard since the
    // current iterate already satisfies them.
    let slack_rows: Vec<usize> = qp
        .kinds
        .iter()
        .enumerate()
        .filter(|(_, k)| matches!(k, RowKind::Eq(_) | RowKind::Ineq(_)))
        .map(|(i, _)| i)
        .collect();
    let ns = slack_rows.len();
    let ne = n + ns;
    let mut h_ext = DMatrix::zeros(ne, ne);
    h_ext.view_mut((0, 0), (n, n)).copy_from(h);
    for i in 0..ns {
        h_ext[(n + i, n + i)] = 1e-4 * rho;
    }
    let mut g_ext = DVector::zeros(ne);
    g_ext.rows_mut(0, n).copy_from(g);
    for i in 0..ns {
        g_ext[n + i] = rho;
    }
    let mut rows = Vec::new();
    let mut slack_of_row = vec![None; qp.rows.len()];
    for (si, &ri) in slack_rows.iter().enumerate() {
        slack_of_row[ri] = Some(si);
    }
    for (i, (a, b)) in qp.rows.iter().enumerate() {
        let mut a_ext = DVector::zeros(ne);
        a_ext.rows_mut(0, n).copy_from(a);
        if let Some(si) = slack_of_row[i] {
            // Equality rows relax both ways through a signed pair folded
            // into one slack: a'd + s >= b with s >= 0 handles the >= side;
            // for true equalities we keep them as two inequality rows.
            a_ext[n + si] = 1.0;
        }
        if i < qp.meq {
            // a'd + s >= b and -a'd + s >= -b.
            rows.push((a_ext.clone(), *b));
            let mut neg = DVector::zeros(ne);
            neg.rows_mut(0, n).copy_from(&(-a));
            if let Some(si) = slack_of_row[i] {
                neg[n + si] = 1.0;
            }
            rows.push((neg, -b));
        } else {
            rows.push((a_ext, *b));
        }
    }
    // Slack nonnegativity.
    for si in 0..ns {
        let mut a = DVector::zeros(ne);
        a[n + si] = 1.0;
        rows.push((a, 0.0));
    }
    let (x, _mult) = solve_qp(&h_ext, &g_ext, &rows, 0)?;
    // Multipliers of the elastic problem are biased by the penalty; drop
    // them and let the caller fall back to least-squares estimates.
    Some((x.rows(0, n).into_owned(), vec![0.0; qp.rows.len()]))
}

/// Solves the NLP starting from `start` (clamped into the bounds).
pub fn solve(p: &NlpProblem, start: &[f64], opts: &SolverOptions) -> Solution {
    let n = p.n_z();
    assert_eq!(start.len(), n, "start vector length");
    let mut z: Vec<f64> = start
        .iter()
        .zip(p.z_lo.iter().zip(&p.z_hi))
        .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
        .collect();
    let mut b_mat = DMatrix::<f64>::identity(n, n);
    let mut nu = 1.0;
    let mut log = Vec::new();
    let mut last_grad_l: Option<DVector<f64>> = None;
    let mut last_z: Option<DVector<f64>> = None;
    let fail = |status: Status, z: &[f64], log: Vec<IterRow>, iters: usize, detail: String| {
        Solution {
            z: z.to_vec(),
            lam_eq: vec![0.0; p.m_eq()],
            mu_ineq: vec![0.0; p.m_ineq()],
            mu_lo: vec![0.0; n],
            mu_hi: vec![0.0; n],
            status,
            kkt: f64::INFINITY,
            violation: f64::INFINITY,
            iterations: iters,
            objective: f64::NAN,
            log,
            detail,
        }
    };

    let was_auto = matches!(opts.hessian, HessianMode::Auto);
    let mut hessian_mode = match opts.hessian {
        HessianMode::Auto => HessianMode::GaussNewton,
        m => m,
    };
    let mut elastic_streak = 0usize;
    let mut stall = 0usize;
    let mut acceptable = 0usize;
    let mut last_f0: Option<f64> = None;
    for iter in 0..opts.max_iter {
        let (f0, grad, ce, ci, a_eq, a_ineq) = match (|| -> Result<_, GraphError> {
            Ok((
                p.objective_value(&z)?,
                DVector::from_vec(p.gradient(&z)?),
                p.c_eq(&z)?,
                p.c_ineq(&z)?,
                p.jacobian_eq(&z)?,
                p.jacobian_ineq(&z)?,
            ))
        })() {
            Ok(v) => v,
            Err(e) => return fail(Status::EvalError, &z, log, iter, e.to_string()),
        };
        // Hessian model.
        let h = match hessian_mode {
            HessianMode::Auto | HessianMode::DampedBfgs => b_mat.clone(),
            HessianMode::GaussNewton => {
                let hess = objective_hessian(p, &z);
                match hess {
                    Ok(h) => spd_floor(h, opts.reg_floor),
                    Err(e) => return fail(Status::EvalError, &z, log, iter, e.to_string()),
                }
            }
        };
        let qp = assemble_qp(p, &z, &ce, &ci, &a_eq, &a_ineq);
        // Escalating regularization around the factorization.
        let mut reg = 0.0;
        let mut qp_sol = None;
        for _ in 0..8 {
            let mut h_try = h.clone();
            for d in 0..n {
                h_try[(d, d)] += reg;
            }
            if let Some(s) = solve_qp(&h_try, &grad, &qp.rows, qp.meq) {
                qp_sol = Some(s);
                break;
            }
            reg = if reg == 0.0 { opts.reg_floor } else { reg * 100.0 };
            if reg > 1e8 {
                break;
            }
        }
        let mut used_elastic = false;
        let (d, mult) = match qp_sol {
            Some(s) => s,
            None => {
                used_elastic = true;
                let rho = nu * opts.penalty_growth;
                let mut elastic = None;
                for reg in [0.0, 1e-8, 1e-4, 1.0, 1e4] {
                    // Degenerate active sets can defeat the pivoting even on
                    // the always-consistent elastic problem; stiffen the
                    // Hessian until it goes through.
                    let mut h_try = h.clone();
                    for dd in 0..n {
                        h_try[(dd, dd)] += reg;
                    }
                    if let Some(s) = solve_qp_elastic(&h_try, &grad, &qp, rho) {
                        elastic = Some(s);
                        break;
                    }
                }
                if elastic.is_none() {
                    elastic = solve_qp_elastic(&DMatrix::identity(n, n), &grad, &qp, rho);
                }
                match elastic {
                    Some(s) => s,
                    None => {
                        // No usable direction at all. If the iterate is in
                        // fact optimal, say so instead of failing.
                        let viol = p.violation(&z).unwrap_or(f64::INFINITY);
                        if viol <= opts.kkt_tol {
                            let ci = p.c_ineq(&z).unwrap_or_default();
                            for act_tol in [opts.kkt_tol, opts.kkt_tol * 1e2] {
                                if let Some((l2, mi2, mlo2, mhi2)) = refine_multipliers(
                                    p, &z, &grad, &ci, &a_eq, &a_ineq, act_tol,
                                ) {
                                    if let Ok(r2) =
                                        kkt_residual(p, &z, &l2, &mi2, &mlo2, &mhi2)
                                    {
                                        if r2 <= opts.kkt_tol {
                                            return Solution {
                                                z,
                                                lam_eq: l2,
                                                mu_ineq: mi2,
                                                mu_lo: mlo2,
                                                mu_hi: mhi2,
                                                status: Status::Optimal,
                                                kkt: r2,
                                                violation: viol,
                                                iterations: iter,
                                                objective: f0,
                                                log,
                                                detail: String::new(),
                                            };
                                        }
                                    }
                                }
                            }
                        }
                        return fail(
                            Status::Infeasible,
                            &z,
                            log,
                            iter,
                            "elastic subproblem failed".into(),
                        );
                    }
                }
            }
        };
        // Split multipliers by provenance. QP rows are in >= form, so an
        // active row has a nonnegative QP multiplier; map back to the
        // outer sign conventions.
        let mut lam_eq = vec![0.0; p.m_eq()];
        let mut mu_ineq = vec![0.0; p.m_ineq()];
        let mut mu_lo = vec![0.0; n];
        let mut mu_hi = vec![0.0; n];
        for (i, k) in qp.kinds.iter().enumerate() {
            match *k {
                // Stationarity: grad f + A_e' lam + A_i' mu - mu_lo + mu_hi.
                // QP stationarity: H d + g - sum u_i a_i = 0.
                RowKind::Eq(j) => lam_eq[j] = -mult[i],
                RowKind::Ineq(j) => mu_ineq[j] = mult[i],
                RowKind::Lo(j) => mu_lo[j] = mult[i],
                RowKind::Hi(j) => mu_hi[j] = mult[i],
            }
        }
        let mut kkt = match kkt_residual(p, &z, &lam_eq, &mu_ineq, &mu_lo, &mu_hi) {
            Ok(r) => r,
            Err(e) => return fail(Status::EvalError, &z, log, iter, e.to_string()),
        };
        let viol = p.violation(&z).unwrap_or(f64::INFINITY);
        let step_norm = d.amax();
        let z_scale = 1.0 + z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let lam_scale = lam_eq
            .iter()
            .chain(&mu_ineq)
            .chain(&mu_lo)
            .chain(&mu_hi)
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let refit_wanted = step_norm <= 1e-3 * z_scale || lam_scale > 1e3 * (1.0 + grad.amax());
        if kkt > opts.kkt_tol && viol <= opts.kkt_tol && refit_wanted {
            // Feasible but the QP multipliers miss stationarity; refit them
            // before concluding the point is not optimal. The refit also
            // replaces exploded QP multipliers so the penalty and the
            // quasi-Newton update see sane values. It is only worth its
            // cost near convergence or when the QP multipliers are clearly
            // unusable. The activation cutoff trades stationarity (wants
            // every near-active row) against complementarity (penalizes
            // rows that are not quite active), so two cutoffs are tried.
            for act_tol in [opts.kkt_tol, opts.kkt_tol * 1e2] {
                if let Some((l2, mi2, mlo2, mhi2)) =
                    refine_multipliers(p, &z, &grad, &ci, &a_eq, &a_ineq, act_tol)
                {
                    if let Ok(r2) = kkt_residual(p, &z, &l2, &mi2, &mlo2, &mhi2) {
                        if r2 < kkt {
                            kkt = r2;
                            lam_eq = l2;
                            mu_ineq = mi2;
                            mu_lo = mlo2;
                            mu_hi = mhi2;
                        }
                    }
                }
                if kkt <= opts.kkt_tol {
                    break;
                }
            }
        }
        if std::env::var_os("MONOTUBE_DEBUG").is_some() && iter % 10 == 0 {
            let lam_max = lam_eq
                .iter()
                .chain(&mu_ineq)
                .fold(0.0f64, |a, v| a.max(v.abs()));
            eprintln!(
                "dbg it {iter} nu {nu:.3e} lam_max {lam_max:.3e} |d| {step_norm:.3e} g.d {:.3e}",
                grad.dot(&d)
            );
        }
        let active = mult.iter().filter(|m| m.abs() > 1e-12).count();
        log.push(IterRow {
            iter,
            objective: f0,
            kkt,
            violation: viol,
            step: step_norm,
            active,
        });
        if kkt <= opts.kkt_tol && viol <= opts.kkt_tol {
            return Solution {
                z,
                lam_eq,
                mu_ineq,
                mu_lo,
                mu_hi,
                status: Status::Optimal,
                kkt,
                violation: viol,
                iterations: iter,
                objective: f0,
                log,
                detail: String::new(),
            };
        }
        if used_elastic {
            elastic_streak += 1;
        } else {
            elastic_streak = 0;
        }
        if step_norm <= 1e-12 * (1.0 + z.iter().fold(0.0f64, |a, v| a.max(v.abs()))) {
            // No direction left. Either we are stuck feasible (line-search
            // style failure) or the constraints cannot be met.
            let status = if viol > opts.kkt_tol.max(1e-8) * 1e2 || elastic_streak > 0 {
                Status::Infeasible
            } else {
                Status::LineSearchFailure
            };
            return Solution {
                z,
                lam_eq,
                mu_ineq,
                mu_lo,
                mu_hi,
                status,
                kkt,
                violation: viol,
                iterations: iter,
                objective: f0,
                log,
                detail: String::new(),
            };
        }
        if elastic_streak >= 10 && viol > opts.kkt_tol {
            return Solution {
                z,
                lam_eq,
                mu_ineq,
                mu_lo,
                mu_hi,
                status: Status::Infeasible,
                kkt,
                violation: viol,
                iterations: iter,
                objective: f0,
                log,
                detail: "persistent elastic mode".into(),
            };
        }
        // Penalty update: dominate the multipliers.
        let lam_max = lam_eq
            .iter()
            .chain(&mu_ineq)
            .fold(0.0f64, |a, v| a.max(v.abs()));
        if nu < 1.1 * lam_max {
            nu = (1.1 * lam_max).max(nu * opts.penalty_growth.min(2.0));
        } else if nu > 1e3 * (1.1 * lam_max).max(1.0) {
            // Forget transient multiplier spikes: an oversized penalty makes
            // the merit reject every step along curved constraint surfaces.
            nu = 1e2 * (1.1 * lam_max).max(1.0);
        }
        // l1 merit line search.
        let merit = |zz: &[f64]| -> Option<f64> {
            let f = p.objective_value(zz).ok()?;
            let v = l1_violation(p, zz).ok()?;
            Some(f + nu * v)
        };
        let phi0 = f0 + nu * l1_violation(p, &z).unwrap_or(f64::INFINITY);
        let descent = grad.dot(&d) - nu * l1_violation(p, &z).unwrap_or(0.0);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = z
                .iter()
                .enumerate()
                .map(|(i, v)| (v + t * d[i]).clamp(p.z_lo[i], p.z_hi[i]))
                .collect();
            if let Some(phi) = merit(&trial) {
                // The noise floor keeps rounding in the merit evaluation
                // from rejecting the last tiny steps toward an optimum.
                let noise = 1e-12 * (1.0 + phi0.abs());
                if phi <= phi0 + 1e-4 * t * descent.min(0.0) + noise || phi < phi0 - 1e-16 {
                    // BFGS update data before moving.
                    let zv = DVector::from_vec(z.clone());
                    let grad_l = lagrangian_gradient(&grad, &a_eq, &a_ineq, &lam_eq, &mu_ineq);
                    if let (Some(pg), Some(pz)) = (last_grad_l.take(), last_z.take()) {
                        let s = &zv - &pz;
                        let y = &grad_l - &pg;
                        damped_bfgs_update(&mut b_mat, &s, &y);
                    }
                    // Store at the PREVIOUS point; difference uses the next
                    // iterate's Lagrangian gradient with the same multipliers,
                    // recomputed at the top of the next iteration.
                    last_grad_l = Some(grad_l);
                    last_z = Some(zv);
                    z = trial;
                    accepted = true;
                    break;
                }
            }
            t *= opts.backtrack;
        }
        if !accepted {
            return Solution {
                z,
                lam_eq,
                mu_ineq,
                mu_lo,
                mu_hi,
                status: Status::LineSearchFailure,
                kkt,
                violation: viol,
                iterations: iter,
                objective: f0,
                log,
                detail: String::new(),
            };
        }
        if let Some(last) = log.last_mut() {
            last.step = t * step_norm;
        }
        // A stale quasi-Newton matrix can shrink every accepted step to
        // rounding level while the KKT residual is still large; restart the
        // curvature estimate instead of dithering until the iteration cap.
        if t * step_norm <= 1e-10 * z_scale && kkt > opts.kkt_tol {
            stall += 1;
            if stall >= 3 && matches!(hessian_mode, HessianMode::DampedBfgs) {
                b_mat = DMatrix::identity(n, n);
                last_grad_l = None;
                last_z = None;
                stall = 0;
            }
        } else {
            stall = 0;
        }
        // Degenerate active sets can hold the stationarity residual a small
        // factor above the tolerance while the iterate no longer moves, or
        // leave it cycling through rounding-level steps with a frozen
        // objective. Accept such a point once it has persisted instead of
        // burning the iteration budget.
        let f_frozen = last_f0.is_some_and(|pf: f64| (f0 - pf).abs() <= 1e-11 * (1.0 + f0.abs()));
        last_f0 = Some(f0);
        if kkt <= 1e2 * opts.kkt_tol
            && viol <= opts.kkt_tol
            && (t * step_norm <= 1e-9 * z_scale || (f_frozen && t * step_norm <= 1e-4 * z_scale))
        {
            acceptable += 1;
            if acceptable >= patience
                && was_auto
                && kkt > opts.kkt_tol
                && matches!(hessian_mode, HessianMode::GaussNewton)
            {
                // The objective Hessian misses the Lagrangian's constraint
                // curvature and can limit-cycle a factor above tolerance.
                // Polish with quasi-Newton steps seeded from the current
                // model instead of settling for the looser exit.
                hessian_mode = HessianMode::DampedBfgs;
                if let Ok(h2) = objective_hessian(p, &z) {
                    b_mat = spd_floor(h2, opts.reg_floor);
                }
                last_grad_l = None;
                last_z = None;
                acceptable = 0;
            } else if acceptable >= 10 {
                // The optimality contract stays strict: within tolerance or
                // the exit is reported as hitting the iteration budget.
                let status = if kkt <= opts.kkt_tol {
                    Status::Optimal
                } else {
                    Status::MaxIter
                };
                return Solution {
                    z,
                    lam_eq,
                    mu_ineq,
                    mu_lo,
                    mu_hi,
                    status,
                    kkt,
                    violation: viol,
                    iterations: iter,
                    objective: f0,
                    log,
                    detail: String::new(),
                };
            }
        } else {
            acceptable = 0;
        }
    }
    let viol = p.violation(&z).unwrap_or(f64::INFINITY);
    let obj = p.objective_value(&z).unwrap_or(f64::NAN);
    Solution {
        z,
        lam_eq: vec![0.0; p.m_eq()],
        mu_ineq: vec![0.0; p.m_ineq()],
        mu_lo: vec![0.0; n],
        mu_hi: vec![0.0; n],
        status: Status::MaxIter,
        kkt: f64::INFINITY,
        violation: viol,
        iterations: opts.max_iter,
        objective: obj,
        log,
        detail: String::new(),
    }
}

/// Least-squares multiplier estimate over the active set at `z`.
///
/// Active-set QP multipliers can be poor at degenerate vertices (dependent
/// active gradients); refit them by minimizing the stationarity residual
/// `|grad + A c|` with Lawson-Hanson NNLS, the sign constraint applying to
/// every column except the equality ones.
#[allow(clippy::too_many_arguments)]
pub fn refine_multipliers(
    p: &NlpProblem,
    z: &[f64],
    grad: &DVector<f64>,
    ci: &[f64],
    a_eq: &DMatrix<f64>,
    a_ineq: &DMatrix<f64>,
    act_tol: f64,
) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = p.n_z();
    #[derive(Clone, Copy)]
    enum Col {
        Eq(usize),
        Ineq(usize),
        Lo(usize),
        Hi(usize),
    }
    let mut cols: Vec<Col> = (0..p.m_eq()).map(Col::Eq).collect();
    for (j, c) in ci.iter().enumerate() {
        if *c >= -act_tol {
            cols.push(Col::Ineq(j));
        }
    }
    for i in 0..n {
        if p.z_lo[i].is_finite() && z[i] - p.z_lo[i] <= act_tol {
            cols.push(Col::Lo(i));
        }
        if p.z_hi[i].is_finite() && p.z_hi[i] - z[i] <= act_tol {
            cols.push(Col::Hi(i));
        }
    }
    let m = cols.len();
    if m == 0 {
        return None;
    }
    let acols: Vec<DVector<f64>> = cols
        .iter()
        .map(|col| match *col {
            Col::Eq(j) => a_eq.row(j).transpose(),
            Col::Ineq(j) => a_ineq.row(j).transpose(),
            Col::Lo(i) => {
                let mut e = DVector::zeros(n);
                e[i] = -1.0;
                e
            }
            Col::Hi(i) => {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                e
            }
        })
        .collect();
    let is_free = |k: usize| matches!(cols[k], Col::Eq(_));
    // The normal equations over the precomputed Gram matrix keep each
    // passive-set solve at O(p^3) with no repeated column assembly.
    let mut gram = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = acols[i].dot(&acols[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let b: Vec<f64> = (0..m).map(|k| -acols[k].dot(grad)).collect();
    let solve_ls = |idx: &[usize]| -> Option<DVector<f64>> {
        let p_len = idx.len();
        let mut diag_max = 0.0f64;
        for &j in idx {
            diag_max = diag_max.max(gram[(j, j)]);
        }
        let rhs = DVector::from_iterator(p_len, idx.iter().map(|&j| b[j]));
        let mut eps = 1e-12 * (1.0 + diag_max);
        for _ in 0..6 {
            let mut g = DMatrix::zeros(p_len, p_len);
            for (a, &i) in idx.iter().enumerate() {
                for (bq, &j) in idx.iter().enumerate() {
                    g[(a, bq)] = gram[(i, j)];
                }
                g[(a, a)] += eps;
            }
            if let Some(ch) = g.cholesky() {
                return Some(ch.solve(&rhs));
            }
            eps *= 100.0;
        }
        None
    };
    let mut passive: Vec<bool> = (0..m).map(is_free).collect();
    let mut c = vec![0.0; m];
    if passive.iter().any(|b| *b) {
        let idx: Vec<usize> = (0..m).filter(|k| passive[*k]).collect();
        let t = solve_ls(&idx)?;
        for (k, &j) in idx.iter().enumerate() {
            c[j] = t[k];
        }
    }
    let w_tol = 1e-10 * (1.0 + grad.amax());
    for _ in 0..2 * m + 10 {
        // Entering column: the sign-blocked one whose activation most
        // decreases the residual. w = -A' (grad + A c) = b - G c.
        let mut enter = None;
        for k in 0..m {
            if passive[k] {
                continue;
            }
            let mut w = b[k];
            for j in 0..m {
                if c[j] != 0.0 {
                    w -= gram[(k, j)] * c[j];
                }
            }
            if w > w_tol && enter.map_or(true, |(_, bw)| w > bw) {
                enter = Some((k, w));
            }
        }
        let Some((k_in, _)) = enter else {
            break;
        };
        passive[k_in] = true;
        // Restore sign feasibility of the passive solve, shrinking the
        // passive set as columns hit zero.
        for _ in 0..m + 1 {
            let idx: Vec<usize> = (0..m).filter(|k| passive[*k]).collect();
            let t = solve_ls(&idx)?;
            let mut alpha = 1.0f64;
            let mut blocked = false;
            for (k, &j) in idx.iter().enumerate() {
                if is_free(j) || t[k] > 0.0 {
                    continue;
                }
                blocked = true;
                let denom = c[j] - t[k];
                let a = if denom > 0.0 { c[j] / denom } else { 0.0 };
                if a < alpha {
                    alpha = a;
                }
            }
            if !blocked {
                for k in 0..m {
                    c[k] = 0.0;
                }
                for (k, &j) in idx.iter().enumerate() {
                    c[j] = t[k];
                }
                break;
            }
            for (k, &j) in idx.iter().enumerate() {
                c[j] += alpha * (t[k] - c[j]);
            }
            for &j in &idx {
                if !is_free(j) && c[j] <= 1e-12 {
                    passive[j] = false;
                    c[j] = 0.0;
                }
            }
        }
    }
    let mut lam_eq = vec![0.0; p.m_eq()];
    let mut mu_ineq = vec![0.0; p.m_ineq()];
    let mut mu_lo = vec![0.0; n];
    let mut mu_hi = vec![0.0; n];
    for (k, col) in cols.iter().enumerate() {
        match *col {
            Col::Eq(j) => lam_eq[j] = c[k],
            Col::Ineq(j) => mu_ineq[j] = c[k].max(0.0),
            Col::Lo(i) => mu_lo[i] = c[k].max(0.0),
            Col::Hi(i) => mu_hi[i] = c[k].max(0.0),
        }
    }
    Some((lam_eq, mu_ineq, mu_lo, mu_hi))
}

fn l1_violation(p: &NlpProblem, z: &[f64]) -> Result<f64, GraphError> {
    let mut v = 0.0;
    for c in p.c_eq(z)? {
        v += c.abs();
    }
    for c in p.c_ineq(z)? {
        v += c.max(0.0);
    }
    Ok(v)
}

fn lagrangian_gradient(
    grad: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    a_ineq: &DMatrix<f64>,
    lam_eq: &[f64],
    mu_ineq: &[f64],
) -> DVector<f64> {
    let mut g = grad.clone();
    for (i, l) in lam_eq.iter().enumerate() {
        g.axpy(*l, &a_eq.row(i).transpose(), 1.0);
    }
    for (i, m) in mu_ineq.iter().enumerate() {
        g.axpy(*m, &a_ineq.row(i).transpose(), 1.0);
    }
    g
}

fn damped_bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let s_norm = s.norm();
    if s_norm <= 1e-12 {
        return;
    }
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    let sy = s.dot(y);
    if sbs <= 0.0 {
        return;
    }
    // Powell damping keeps the update positive definite.
    let y_eff = if sy < 0.2 * sbs {
        let theta = 0.8 * sbs / (sbs - sy);
        theta * y + (1.0 - theta) * &bs
    } else {
        y.clone()
    };
    let sy_eff = s.dot(&y_eff);
    if sy_eff <= 1e-14 {
        return;
    }
    *b -= &bs * bs.transpose() / sbs;
    *b += &y_eff * y_eff.transpose() / sy_eff;
}

/// Symbolic Hessian of the objective (differentiates the gradient graph).
fn objective_hessian(p: &NlpProblem, z: &[f64]) -> Result<DMatrix<f64>, GraphError> {
    let hess_graph = match p.hess.get() {
        Some(g) => g,
        None => {
            let g = p.grad.differentiate(0)?;
            let _ = p.hess.set(g);
            p.hess.get().expect("just set")
        }
    };
    let flat = hess_graph.eval(&[z, &p.theta])?;
    let n = p.n_z();
    Ok(DMatrix::from_row_slice(n, n, &flat))
}

fn spd_floor(h: DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (&h + h.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < floor.max(1e-8) {
            *v = floor.max(1e-8);
        }
    }
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprgraph::{ExprBuilder, Signature};

    fn scalar_bound_problem() -> NlpProblem {
        // min x^2 s.t. x >= 1.
        let mut b = ExprBuilder::new(Signature::nlp(1, 0));
        let x = b.sym(0, 0);
        let out = b.mul(x, x);
        let obj = b.finish(vec![out]);
        NlpProblem::new(obj, None, None, vec![1.0], vec![f64::INFINITY], vec![]).unwrap()
    }

    #[test]
    fn bound_constrained_minimum_with_multiplier() {
        let p = scalar_bound_problem();
        let s = solve(&p, &[3.0], &SolverOptions::default());
        assert_eq!(s.status, Status::Optimal);
        assert!((s.z[0] - 1.0).abs() <= 1e-8);
        // Stationarity 2x - mu_lo = 0 at x = 1.
        assert!((s.mu_lo[0] - 2.0).abs() <= 1e-6, "{}", s.mu_lo[0]);
    }

    #[test]
    fn equality_projection_matches_closed_form() {
        // min |x - c|^2 s.t. a'x = b. Solution: x = c + a (b - a'c)/|a|^2.
        let c = [1.0, -2.0, 0.5];
        let a = [1.0, 2.0, -1.0];
        let b_rhs = 1.0;
        let obj = {
            let mut bld = ExprBuilder::new(Signature::nlp(3, 0));
            let mut terms = Vec::new();
            for i in 0..3 {
                let x = bld.sym(0, i);
                let d = bld.affine(-c[i], &[(1.0, x)]);
                let sq = bld.mul(d, d);
                terms.push((1.0, sq));
            }
            let out = bld.affine(0.0, &terms);
            bld.finish(vec![out])
        };
        let eq = {
            let mut bld = ExprBuilder::new(Signature::nlp(3, 0));
            let xs: Vec<_> = (0..3).map(|i| bld.sym(0, i)).collect();
            let out = bld.affine(-b_rhs, &[(a[0], xs[0]), (a[1], xs[1]), (a[2], xs[2])]);
            bld.finish(vec![out])
        };
        let p = NlpProblem::new(
            obj,
            Some(eq),
            None,
            vec![f64::NEG_INFINITY; 3],
            vec![f64::INFINITY; 3],
            vec![],
        )
        .unwrap();
        let s = solve(&p, &[0.0; 3], &SolverOptions::default());
        assert_eq!(s.status, Status::Optimal);
        let a_dot_c: f64 = a.iter().zip(&c).map(|(ai, ci)| ai * ci).sum();
        let a_sq: f64 = a.iter().map(|ai| ai * ai).sum();
        let scale = (b_rhs - a_dot_c) / a_sq;
        for i in 0..3 {
            let expect = c[i] + a[i] * scale;
            assert!((s.z[i] - expect).abs() <= 1e-10, "{} vs {expect}", s.z[i]);
        }
    }

    #[test]
    fn conflicting_bounds_detected_infeasible() {
        // min x^2 s.t. x >= 1 and x <= 0 (as a general inequality).
        let (obj, ineq) = {
            let mut bld = ExprBuilder::new(Signature::nlp(1, 0));
            let x = bld.sym(0, 0);
            let out = bld.mul(x, x);
            let obj = bld.finish(vec![out]);
            let mut bld2 = ExprBuilder::new(Signature::nlp(1, 0));
            let x2 = bld2.sym(0, 0);
            let out2 = bld2.affine(0.0, &[(1.0, x2)]);
            (obj, bld2.finish(vec![out2]))
        };
        let p = NlpProblem::new(obj, None, Some(ineq), vec![1.0], vec![f64::INFINITY], vec![])
            .unwrap();
        let s = solve(&p, &[2.0], &SolverOptions::default());
        assert_eq!(s.status, Status::Infeasible);
    }

    #[test]
    fn kkt_residual_positive_away_from_optimum() {
        let p = scalar_bound_problem();
        let r = kkt_residual(&p, &[3.0], &[], &[], &[0.0], &[0.0]).unwrap();
        assert!(r > 1.0);
    }

    #[test]
    fn qp_simple_inequality() {
        // min 1/2 d^2 - d s.t. d >= 2 -> d = 2, mult = 1.
        let h = DMatrix::from_row_slice(1, 1, &[1.0]);
        let g = DVector::from_vec(vec![-1.0]);
        let rows = vec![(DVector::from_vec(vec![1.0]), 2.0)];
        let (d, m) = solve_qp(&h, &g, &rows, 0).unwrap();
        assert!((d[0] - 2.0).abs() <= 1e-10);
        assert!((m[0] - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn qp_infeasible_rows() {
        let h = DMatrix::from_row_slice(1, 1, &[1.0]);
        let g = DVector::from_vec(vec![0.0]);
        let rows = vec![
            (DVector::from_vec(vec![1.0]), 1.0),
            (DVector::from_vec(vec![-1.0]), 0.5),
        ];
        assert!(solve_qp(&h, &g, &rows, 0).is_none());
    }

    #[test]
    fn qp_equality_and_bounds() {
        // min 1/2 |d|^2 s.t. d0 + d1 = 1 -> d = (0.5, 0.5).
        let h = DMatrix::identity(2, 2);
        let g = DVector::zeros(2);
        let rows = vec![(DVector::from_vec(vec![1.0, 1.0]), 1.0)];
        let (d, _) = solve_qp(&h, &g, &rows, 1).unwrap();
        assert!((d[0] - 0.5).abs() <= 1e-10);
        assert!((d[1] - 0.5).abs() <= 1e-10);
    }
}
