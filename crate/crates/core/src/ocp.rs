//! Assembly of the robust MPC problems into dense NLP instances.
//!
//! The closed-loop problem carries, per step, the bounding-box corners, the
//! partition cut coordinates, and one input per subregion; the open-loop
//! problem is the same with the trivial partition. A nominal variant (exact
//! dynamics at a fixed parameter) serves as baseline controller and as the
//! full-knowledge oracle.

use std::fmt::Write as _;

use thiserror::Error;

use crate::exprgraph::{
    DecompGraph, ExprBuilder, ExprGraph, GraphError, NodeId, Signature,
};
use crate::models::Model;
use crate::nlp::{NlpError, NlpProblem};
use crate::partition::{CoordRef, PartitionSpec};
use crate::reach::Hyperrect;

#[derive(Debug, Error)]
pub enum OcpError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Nlp(#[from] NlpError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("infeasible start: {0}")]
    InfeasibleStart(String),
}

#[derive(Debug, Clone)]
pub enum TerminalMode {
    /// Containment of the final bounding box in a fixed box (verify it with
    /// [`verify_rcis`] first).
    Fixed(Hyperrect),
    /// Final-step leaf boxes contained in the step `N-1` bounding box.
    Relaxed,
}

/// Affine recourse policy `u = K x + v` with the composed-dynamics
/// decomposition used by the feedback variant.
#[derive(Debug, Clone)]
pub struct Feedback {
    pub gain: Vec<Vec<f64>>,
    dyn_decomp: DecompGraph,
    v_box: Hyperrect,
}

impl Feedback {
    pub fn v_box(&self) -> &Hyperrect {
        &self.v_box
    }

    /// Applied input for a realized state.
    pub fn apply(&self, x: &[f64], v: &[f64], u_box: &Hyperrect) -> Vec<f64> {
        self.gain
            .iter()
            .zip(v)
            .enumerate()
            .map(|(i, (row, vi))| {
                let kx: f64 = row.iter().zip(x).map(|(k, xj)| k * xj).sum();
                (kx + vi).clamp(u_box.lo()[i], u_box.hi()[i])
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RobustOcp {
    pub model: Model,
    pub decomp: DecompGraph,
    pub horizon: usize,
    pub partition: PartitionSpec,
    pub terminal: TerminalMode,
    pub feedback: Option<Feedback>,
}

impl RobustOcp {
    /// Synthesizes the decomposition over the model's operating boxes.
    pub fn new(model: Model, horizon: usize, partition: PartitionSpec) -> Result<Self, OcpError> {
        if horizon < 1 {
            return Err(OcpError::Config("horizon must be >= 1".into()));
        }
        if partition.n_dim() != model.n_x() {
            return Err(OcpError::Config(format!(
                "partition dimension {} vs state dimension {}",
                partition.n_dim(),
                model.n_x()
            )));
        }
        let decomp = model.dynamics.synth_decomposition(
            &model.x_box.intervals(),
            &model.u_box.intervals(),
            &model.p_box.intervals(),
        )?;
        Ok(RobustOcp {
            model,
            decomp,
            horizon,
            partition,
            terminal: TerminalMode::Relaxed,
            feedback: None,
        })
    }

    pub fn with_terminal(mut self, terminal: TerminalMode) -> Self {
        self.terminal = terminal;
        self
    }

    /// Installs an affine feedback policy `u = K x + v` and synthesizes the
    /// decomposition of the composed dynamics over `(x, v, p)`.
    pub fn with_feedback(mut self, gain: Vec<Vec<f64>>) -> Result<Self, OcpError> {
        let (n_x, n_u, n_p) = (self.model.n_x(), self.model.n_u(), self.model.n_p());
        if gain.len() != n_u || gain.iter().any(|r| r.len() != n_x) {
            return Err(OcpError::Config("gain must be n_u x n_x".into()));
        }
        // v range making K x + v reach U somewhere over X.
        let mut v_lo = Vec::with_capacity(n_u);
        let mut v_hi = Vec::with_capacity(n_u);
        for (i, row) in gain.iter().enumerate() {
            let mut kx_lo = 0.0;
            let mut kx_hi = 0.0;
            for (j, k) in row.iter().enumerate() {
                let (a, b) = (k * self.model.x_box.lo()[j], k * self.model.x_box.hi()[j]);
                kx_lo += a.min(b);
                kx_hi += a.max(b);
            }
            v_lo.push(self.model.u_box.lo()[i] - kx_hi);
            v_hi.push(self.model.u_box.hi()[i] - kx_lo);
        }
        let v_box = Hyperrect::new(v_lo, v_hi)
            .map_err(|_| OcpError::Config("gain leaves no admissible v range".into()))?;
        let composed = {
            let mut b = ExprBuilder::new(Signature::xup(n_x, n_u, n_p));
            let xs: Vec<NodeId> = (0..n_x).map(|j| b.sym(0, j)).collect();
            let vs: Vec<NodeId> = (0..n_u).map(|j| b.sym(1, j)).collect();
            let ps: Vec<NodeId> = (0..n_p).map(|j| b.sym(2, j)).collect();
            let us: Vec<NodeId> = gain
                .iter()
                .zip(&vs)
                .map(|(row, &v)| {
                    let terms: Vec<(f64, NodeId)> =
                        row.iter().zip(&xs).map(|(k, &x)| (*k, x)).collect();
                    let kx = b.affine(0.0, &terms);
                    b.add(kx, v)
                })
                .collect();
            let outs = b.inline(&self.model.dynamics, &[xs, us, ps]);
            b.finish(outs)
        };
        let dyn_decomp = composed.synth_decomposition(
            &self.model.x_box.intervals(),
            &v_box.intervals(),
            &self.model.p_box.intervals(),
        )?;
        self.feedback = Some(Feedback {
            gain,
            dyn_decomp,
            v_box,
        });
        Ok(self)
    }
}

/// Offsets into the robust decision vector. Steps `1..=N` hold the two
/// bounding corners and the cut coordinates; all per-subregion inputs follow.
#[derive(Debug, Clone)]
pub struct Layout {
    pub n_x: usize,
    pub n_u: usize,
    pub n_cuts: usize,
    pub mu_s: usize,
    pub horizon: usize,
}

impl Layout {
    fn step_block(&self) -> usize {
        2 * self.n_x + self.n_cuts
    }

    pub fn n_z(&self) -> usize {
        self.horizon * self.step_block() + self.horizon * self.mu_s * self.n_u
    }

    /// Lower bounding corner of step `k` (1-based).
    pub fn xlo(&self, k: usize) -> usize {
        debug_assert!((1..=self.horizon).contains(&k));
        (k - 1) * self.step_block()
    }

    pub fn xhi(&self, k: usize) -> usize {
        self.xlo(k) + self.n_x
    }

    pub fn cuts(&self, k: usize) -> usize {
        self.xlo(k) + 2 * self.n_x
    }

    /// Input of subregion `s` at step `k` (0-based, `k < N`).
    pub fn u(&self, k: usize, s: usize) -> usize {
        debug_assert!(k < self.horizon && s < self.mu_s);
        self.horizon * self.step_block() + (k * self.mu_s + s) * self.n_u
    }
}

/// A built robust NLP plus the layout needed to interpret its solution.
pub struct OcpNlp {
    pub problem: NlpProblem,
    pub layout: Layout,
    pub partition: PartitionSpec,
    pub uses_feedback: bool,
}

/// Shifted previous solution used to start the next solve.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub z: Vec<f64>,
    pub residual: f64,
}

/// Per-step symbol handles inside one builder.
struct StepSyms {
    theta_x0: Vec<NodeId>,
    theta_uprev: Vec<NodeId>,
    cut_axis: Vec<usize>,
}

fn step_syms(b: &mut ExprBuilder, lay: &Layout, part: &PartitionSpec) -> StepSyms {
    let theta_x0 = (0..lay.n_x).map(|d| b.sym(1, d)).collect();
    let theta_uprev = (0..lay.n_u).map(|d| b.sym(1, lay.n_x + d)).collect();
    let mut cut_axis = vec![0; part.n_cuts()];
    for cb in part.cut_bounds() {
        cut_axis[cb.cut] = cb.axis;
    }
    StepSyms {
        theta_x0,
        theta_uprev,
        cut_axis,
    }
}

/// Resolves one leaf-corner coordinate vector at step `k` into symbol nodes;
/// step 0 is the collapsed box `{x0}`.
fn corner_nodes(
    b: &mut ExprBuilder,
    lay: &Layout,
    sy: &StepSyms,
    k: usize,
    refs: &[CoordRef],
) -> Vec<NodeId> {
    refs.iter()
        .enumerate()
        .map(|(axis, r)| {
            if k == 0 {
                let a = match *r {
                    CoordRef::BoundLo(d) | CoordRef::BoundHi(d) => d,
                    CoordRef::Cut(i) => sy.cut_axis[i],
                };
                debug_assert_eq!(a, axis);
                sy.theta_x0[a]
            } else {
                match *r {
                    CoordRef::BoundLo(d) => b.sym(0, lay.xlo(k) + d),
                    CoordRef::BoundHi(d) => b.sym(0, lay.xhi(k) + d),
                    CoordRef::Cut(i) => b.sym(0, lay.cuts(k) + i),
                }
            }
        })
        .collect()
}

fn u_nodes(b: &mut ExprBuilder, lay: &Layout, k: usize, s: usize) -> Vec<NodeId> {
    (0..lay.n_u).map(|j| b.sym(0, lay.u(k, s) + j)).collect()
}

/// `K x + v` nodes for one corner under the affine policy.
fn policy_nodes(
    b: &mut ExprBuilder,
    gain: &[Vec<f64>],
    corner: &[NodeId],
    v: &[NodeId],
) -> Vec<NodeId> {
    gain.iter()
        .zip(v)
        .map(|(row, &vi)| {
            let terms: Vec<(f64, NodeId)> = row
                .iter()
                .zip(corner)
                .filter(|(k, _)| **k != 0.0)
                .map(|(k, &x)| (*k, x))
                .collect();
            let kx = b.affine(0.0, &terms);
            b.add(kx, vi)
        })
        .collect()
}

fn build_robust(ocp: &RobustOcp, part: &PartitionSpec, x0: &[f64]) -> Result<OcpNlp, OcpError> {
    let m = &ocp.model;
    if !m.x_box.contains(x0, 1e-6) {
        return Err(OcpError::InfeasibleStart(format!(
            "x0 {:?} outside the state box",
            x0
        )));
    }
    let fb = ocp.feedback.as_ref();
    let decomp = match fb {
        Some(f) => &f.dyn_decomp,
        None => &ocp.decomp,
    };
    let input_box = match fb {
        Some(f) => &f.v_box,
        None => &m.u_box,
    };
    let n = ocp.horizon;
    let lay = Layout {
        n_x: m.n_x(),
        n_u: m.n_u(),
        n_cuts: part.n_cuts(),
        mu_s: part.mu_s(),
        horizon: n,
    };
    let sig = Signature::nlp(lay.n_z(), lay.n_x + lay.n_u);
    let refs = part.corner_refs();
    let cut_bounds = part.cut_bounds();

    // Objective: stage cost at both leaf corners of every subregion, plus
    // terminal cost at both corners of the final leaves.
    let objective = {
        let mut b = ExprBuilder::new(sig.clone());
        let sy = step_syms(&mut b, &lay, part);
        let mut terms = Vec::new();
        for k in 0..n {
            for (s, (lo_refs, hi_refs)) in refs.iter().enumerate() {
                let clo = corner_nodes(&mut b, &lay, &sy, k, lo_refs);
                let chi = corner_nodes(&mut b, &lay, &sy, k, hi_refs);
                let uv = u_nodes(&mut b, &lay, k, s);
                for corner in [&clo, &chi] {
                    let u_now = match fb {
                        Some(f) => policy_nodes(&mut b, &f.gain, corner, &uv),
                        None => uv.clone(),
                    };
                    let u_prev = if k == 0 {
                        sy.theta_uprev.clone()
                    } else {
                        let vp = u_nodes(&mut b, &lay, k - 1, s);
                        match fb {
                            Some(f) => {
                                // Previous-step policy anchored at the same
                                // corner side of the previous leaf.
                                let prev_refs = if std::ptr::eq(corner, &clo) {
                                    &refs[s].0
                                } else {
                                    &refs[s].1
                                };
                                let pc = corner_nodes(&mut b, &lay, &sy, k - 1, prev_refs);
                                policy_nodes(&mut b, &f.gain, &pc, &vp)
                            }
                            None => vp,
                        }
                    };
                    let out = b.inline(&m.stage_cost, &[corner.clone(), u_now, u_prev]);
                    terms.push(out[0]);
                }
            }
        }
        for (lo_refs, hi_refs) in &refs {
            for corner_refs in [lo_refs, hi_refs] {
                let c = corner_nodes(&mut b, &lay, &sy, n, corner_refs);
                let out = b.inline(&m.terminal_cost, &[c]);
                terms.push(out[0]);
            }
        }
        let total = b.sum(&terms);
        b.finish(vec![total])
    };

    // Equalities: tie all step-0 inputs (the initial state is a point).
    let mut eq_tags = Vec::new();
    let eq = if lay.mu_s > 1 {
        let mut b = ExprBuilder::new(sig.clone());
        let mut outs = Vec::new();
        for s in 1..lay.mu_s {
            for j in 0..lay.n_u {
                let a = b.sym(0, lay.u(0, s) + j);
                let r = b.sym(0, lay.u(0, 0) + j);
                outs.push(b.sub(a, r));
                eq_tags.push(format!("u0_tie[s{s}][{j}]"));
            }
        }
        Some(b.finish(outs))
    } else {
        None
    };

    // Inequalities, all in `row <= 0` form.
    let mut ineq_tags = Vec::new();
    let ineq = {
        let mut b = ExprBuilder::new(sig.clone());
        let sy = step_syms(&mut b, &lay, part);
        let p_lo: Vec<NodeId> = m.p_box.lo().iter().map(|&c| b.constant(c)).collect();
        let p_hi: Vec<NodeId> = m.p_box.hi().iter().map(|&c| b.constant(c)).collect();
        let mut rows = Vec::new();
        // Propagation: next bounding box encloses every subregion image.
        for k in 0..n {
            for (s, (lo_refs, hi_refs)) in refs.iter().enumerate() {
                let clo = corner_nodes(&mut b, &lay, &sy, k, lo_refs);
                let chi = corner_nodes(&mut b, &lay, &sy, k, hi_refs);
                let uv = u_nodes(&mut b, &lay, k, s);
                let d_lo = b.inline(
                    decomp.graph(),
                    &[clo.clone(), p_lo.clone(), uv.clone(), chi.clone(), p_hi.clone()],
                );
                let d_hi = b.inline(
                    decomp.graph(),
                    &[chi.clone(), p_hi.clone(), uv.clone(), clo.clone(), p_lo.clone()],
                );
                for d in 0..lay.n_x {
                    let v = b.sym(0, lay.xlo(k + 1) + d);
                    rows.push(b.sub(v, d_lo[d]));
                    ineq_tags.push(format!("bound_lo[k{}][s{s}][{d}]", k + 1));
                }
                for d in 0..lay.n_x {
                    let v = b.sym(0, lay.xhi(k + 1) + d);
                    rows.push(b.sub(d_hi[d], v));
                    ineq_tags.push(format!("bound_hi[k{}][s{s}][{d}]", k + 1));
                }
            }
        }
        // Corner ordering.
        for k in 1..=n {
            for d in 0..lay.n_x {
                let lo = b.sym(0, lay.xlo(k) + d);
                let hi = b.sym(0, lay.xhi(k) + d);
                rows.push(b.sub(lo, hi));
                ineq_tags.push(format!("order[k{k}][{d}]"));
            }
        }
        // Cuts inside their inherited intervals.
        for k in 1..=n {
            for cb in &cut_bounds {
                let c = b.sym(0, lay.cuts(k) + cb.cut);
                let lo = corner_coord(&mut b, &lay, &sy, k, cb.lo, cb.axis);
                let hi = corner_coord(&mut b, &lay, &sy, k, cb.hi, cb.axis);
                rows.push(b.sub(lo, c));
                ineq_tags.push(format!("cut_lo[k{k}][{}]", cb.cut));
                rows.push(b.sub(c, hi));
                ineq_tags.push(format!("cut_hi[k{k}][{}]", cb.cut));
            }
        }
        // Terminal condition.
        match &ocp.terminal {
            TerminalMode::Relaxed => {
                for (s, (lo_refs, hi_refs)) in refs.iter().enumerate() {
                    let leaf_lo = corner_nodes(&mut b, &lay, &sy, n, lo_refs);
                    let leaf_hi = corner_nodes(&mut b, &lay, &sy, n, hi_refs);
                    for d in 0..lay.n_x {
                        let host = if n >= 2 {
                            b.sym(0, lay.xlo(n - 1) + d)
                        } else {
                            sy.theta_x0[d]
                        };
                        rows.push(b.sub(host, leaf_lo[d]));
                        ineq_tags.push(format!("term_lo[s{s}][{d}]"));
                    }
                    for d in 0..lay.n_x {
                        let host = if n >= 2 {
                            b.sym(0, lay.xhi(n - 1) + d)
                        } else {
                            sy.theta_x0[d]
                        };
                        rows.push(b.sub(leaf_hi[d], host));
                        ineq_tags.push(format!("term_hi[s{s}][{d}]"));
                    }
                }
            }
            TerminalMode::Fixed(xf) => {
                for d in 0..lay.n_x {
                    let lo = b.sym(0, lay.xlo(n) + d);
                    let c = b.constant(xf.lo()[d]);
                    rows.push(b.sub(c, lo));
                    ineq_tags.push(format!("term_lo[{d}]"));
                }
                for d in 0..lay.n_x {
                    let hi = b.sym(0, lay.xhi(n) + d);
                    let c = b.constant(xf.hi()[d]);
                    rows.push(b.sub(hi, c));
                    ineq_tags.push(format!("term_hi[{d}]"));
                }
            }
        }
        // Extra input polytope rows.
        if !m.u_polytope.is_empty() && fb.is_some() {
            return Err(OcpError::Config(
                "input polytope rows are not supported under a feedback policy".into(),
            ));
        }
        for k in 0..n {
            for s in 0..lay.mu_s {
                for (ri, (a, rhs)) in m.u_polytope.iter().enumerate() {
                    let uv = u_nodes(&mut b, &lay, k, s);
                    let terms: Vec<(f64, NodeId)> = a
                        .iter()
                        .zip(&uv)
                        .filter(|(c, _)| **c != 0.0)
                        .map(|(c, &h)| (*c, h))
                        .collect();
                    rows.push(b.affine(-rhs, &terms));
                    ineq_tags.push(format!("upoly[k{k}][s{s}][{ri}]"));
                }
            }
        }
        // Policy keeps the applied input in U at both corners.
        if let Some(f) = fb {
            for k in 0..n {
                for (s, (lo_refs, hi_refs)) in refs.iter().enumerate() {
                    let clo = corner_nodes(&mut b, &lay, &sy, k, lo_refs);
                    let chi = corner_nodes(&mut b, &lay, &sy, k, hi_refs);
                    let vv = u_nodes(&mut b, &lay, k, s);
                    for i in 0..lay.n_u {
                        // Split the gain row by sign for the box extremes.
                        let mut terms_hi = Vec::new();
                        let mut terms_lo = Vec::new();
                        for (j, kij) in f.gain[i].iter().enumerate() {
                            if *kij > 0.0 {
                                terms_hi.push((*kij, chi[j]));
                                terms_lo.push((*kij, clo[j]));
                            } else if *kij < 0.0 {
                                terms_hi.push((*kij, clo[j]));
                                terms_lo.push((*kij, chi[j]));
                            }
                        }
                        let kx_hi = b.affine(-m.u_box.hi()[i], &terms_hi);
                        let r_hi = b.add(kx_hi, vv[i]);
                        rows.push(r_hi);
                        ineq_tags.push(format!("policy_hi[k{k}][s{s}][{i}]"));
                        let kx_lo = b.affine(-m.u_box.lo()[i], &terms_lo);
                        let sum = b.add(kx_lo, vv[i]);
                        rows.push(b.neg(sum));
                        ineq_tags.push(format!("policy_lo[k{k}][s{s}][{i}]"));
                    }
                }
            }
        }
        Some(b.finish(rows))
    };

    // Variable bounds and names.
    let mut z_lo = vec![0.0; lay.n_z()];
    let mut z_hi = vec![0.0; lay.n_z()];
    let mut names = vec![String::new(); lay.n_z()];
    let mut cut_axis = vec![0; part.n_cuts()];
    for cb in &cut_bounds {
        cut_axis[cb.cut] = cb.axis;
    }
    for k in 1..=n {
        for d in 0..lay.n_x {
            z_lo[lay.xlo(k) + d] = m.x_box.lo()[d];
            z_hi[lay.xlo(k) + d] = m.x_box.hi()[d];
            names[lay.xlo(k) + d] = format!("xlo[k{k}][{d}]");
            z_lo[lay.xhi(k) + d] = m.x_box.lo()[d];
            z_hi[lay.xhi(k) + d] = m.x_box.hi()[d];
            names[lay.xhi(k) + d] = format!("xhi[k{k}][{d}]");
        }
        for (i, &axis) in cut_axis.iter().enumerate() {
            z_lo[lay.cuts(k) + i] = m.x_box.lo()[axis];
            z_hi[lay.cuts(k) + i] = m.x_box.hi()[axis];
            names[lay.cuts(k) + i] = format!("cut[k{k}][{i}]");
        }
    }
    for k in 0..n {
        for s in 0..lay.mu_s {
            for j in 0..lay.n_u {
                z_lo[lay.u(k, s) + j] = input_box.lo()[j];
                z_hi[lay.u(k, s) + j] = input_box.hi()[j];
                names[lay.u(k, s) + j] = format!("u[k{k}][s{s}][{j}]");
            }
        }
    }

    let mut theta = x0.to_vec();
    theta.extend_from_slice(&m.u_prev0);
    let mut problem = NlpProblem::new(objective, eq, ineq, z_lo, z_hi, theta)?;
    problem.var_names = names;
    problem.eq_tags = eq_tags;
    problem.ineq_tags = ineq_tags;
    Ok(OcpNlp {
        problem,
        layout: lay,
        partition: part.clone(),
        uses_feedback: fb.is_some(),
    })
}

/// A single corner coordinate (used by the cut-interval rows).
fn corner_coord(
    b: &mut ExprBuilder,
    lay: &Layout,
    sy: &StepSyms,
    k: usize,
    r: CoordRef,
    axis: usize,
) -> NodeId {
    if k == 0 {
        return sy.theta_x0[axis];
    }
    match r {
        CoordRef::BoundLo(d) => b.sym(0, lay.xlo(k) + d),
        CoordRef::BoundHi(d) => b.sym(0, lay.xhi(k) + d),
        CoordRef::Cut(i) => b.sym(0, lay.cuts(k) + i),
    }
}

/// Closed-loop problem with the configured partition.
pub fn build_cl_nlp(ocp: &RobustOcp, x0: &[f64]) -> Result<OcpNlp, OcpError> {
    if ocp.feedback.is_some() {
        return Err(OcpError::Config(
            "use build_cl_feedback_nlp when a policy is configured".into(),
        ));
    }
    build_robust(ocp, &ocp.partition.clone(), x0)
}

/// Open-loop problem: the same construction with the trivial partition.
pub fn build_ol_nlp(ocp: &RobustOcp, x0: &[f64]) -> Result<OcpNlp, OcpError> {
    if ocp.feedback.is_some() {
        return Err(OcpError::Config(
            "use build_cl_feedback_nlp when a policy is configured".into(),
        ));
    }
    build_robust(ocp, &PartitionSpec::single(ocp.model.n_x()), x0)
}

/// Closed-loop problem under the affine policy: decision variables are the
/// policy offsets `v_k^s`.
pub fn build_cl_feedback_nlp(ocp: &RobustOcp, x0: &[f64]) -> Result<OcpNlp, OcpError> {
    if ocp.feedback.is_none() {
        return Err(OcpError::Config("no feedback policy configured".into()));
    }
    build_robust(ocp, &ocp.partition.clone(), x0)
}

impl OcpNlp {
    /// Rebinds the problem to a new measured state and previous input.
    pub fn set_initial(&mut self, x0: &[f64], u_prev: &[f64]) {
        let mut theta = x0.to_vec();
        theta.extend_from_slice(u_prev);
        self.problem.set_theta(theta);
    }

    pub fn x0(&self) -> Vec<f64> {
        self.problem.theta()[..self.layout.n_x].to_vec()
    }

    pub fn first_input(&self, z: &[f64]) -> Vec<f64> {
        let o = self.layout.u(0, 0);
        z[o..o + self.layout.n_u].to_vec()
    }

    /// Bounding boxes of steps `1..=N` (corners reordered if crossed).
    pub fn boxes(&self, z: &[f64]) -> Vec<Hyperrect> {
        (1..=self.layout.horizon)
            .map(|k| {
                let lo: Vec<f64> = (0..self.layout.n_x)
                    .map(|d| z[self.layout.xlo(k) + d])
                    .collect();
                let hi: Vec<f64> = (0..self.layout.n_x)
                    .map(|d| z[self.layout.xhi(k) + d].max(lo[d]))
                    .collect();
                Hyperrect::new(lo, hi).expect("reordered corners")
            })
            .collect()
    }

    pub fn cuts(&self, z: &[f64], k: usize) -> Vec<f64> {
        let o = self.layout.cuts(k);
        z[o..o + self.layout.n_cuts].to_vec()
    }

    pub fn input(&self, z: &[f64], k: usize, s: usize) -> Vec<f64> {
        let o = self.layout.u(k, s);
        z[o..o + self.layout.n_u].to_vec()
    }

    /// Feasible-leaning cold start: propagate the collapsed initial box
    /// forward under a constant input guess, clamped into the state box.
    pub fn cold_start(&self, ocp: &RobustOcp) -> Vec<f64> {
        let lay = &self.layout;
        let m = &ocp.model;
        let x0 = self.x0();
        let decomp = match &ocp.feedback {
            Some(f) => &f.dyn_decomp,
            None => &ocp.decomp,
        };
        let input_box = match &ocp.feedback {
            Some(f) => f.v_box(),
            None => &m.u_box,
        };
        let u_guess: Vec<f64> = input_box.center();
        let mut z = vec![0.0; lay.n_z()];
        let mut cur = Hyperrect::point(&x0);
        let mut cuts = vec![0.0; 0];
        for k in 0..lay.horizon {
            let leaves = if k == 0 {
                vec![cur.clone(); lay.mu_s]
            } else {
                self.partition.leaf_boxes(&cur, &cuts)
            };
            let mut lo = vec![f64::INFINITY; lay.n_x];
            let mut hi = vec![f64::NEG_INFINITY; lay.n_x];
            for leaf in &leaves {
                let d_lo = decomp
                    .eval(leaf.lo(), m.p_box.lo(), &u_guess, leaf.hi(), m.p_box.hi())
                    .unwrap_or_else(|_| leaf.lo().to_vec());
                let d_hi = decomp
                    .eval(leaf.hi(), m.p_box.hi(), &u_guess, leaf.lo(), m.p_box.lo())
                    .unwrap_or_else(|_| leaf.hi().to_vec());
                for d in 0..lay.n_x {
                    lo[d] = lo[d].min(d_lo[d]);
                    hi[d] = hi[d].max(d_hi[d]);
                }
            }
            for d in 0..lay.n_x {
                lo[d] = lo[d].clamp(m.x_box.lo()[d], m.x_box.hi()[d]);
                hi[d] = hi[d].clamp(lo[d], m.x_box.hi()[d]);
            }
            cur = Hyperrect::new(lo, hi).expect("ordered by clamping");
            cuts = self.partition.default_cuts(&cur);
            for d in 0..lay.n_x {
                z[lay.xlo(k + 1) + d] = cur.lo()[d];
                z[lay.xhi(k + 1) + d] = cur.hi()[d];
            }
            for (i, c) in cuts.iter().enumerate() {
                z[lay.cuts(k + 1) + i] = *c;
            }
            for s in 0..lay.mu_s {
                for j in 0..lay.n_u {
                    z[lay.u(k, s) + j] = u_guess[j];
                }
            }
        }
        z
    }

    /// Shifted candidate for the next measured state; `set_initial` must
    /// already have been called.
    ///
    /// Relaxed terminal: the final two blocks stay in place, so every
    /// shifted propagation row is implied by the previous solution and the
    /// residual is (numerically) zero whenever the previous solution was
    /// feasible. Fixed terminal: everything shifts and a fresh final block
    /// is produced by numerically propagating the shifted final box under
    /// the repeated inputs. The step-0 input comes from the subregion the
    /// realized state landed in.
    pub fn warm_start_shift(&self, prev_z: &[f64], ocp: &RobustOcp) -> Result<WarmStart, OcpError> {
        let lay = &self.layout;
        let n = lay.horizon;
        let mut z = prev_z.to_vec();
        let new_x0 = self.x0();
        let box_at = |zv: &[f64], k: usize| {
            let lo: Vec<f64> = (0..lay.n_x).map(|d| zv[lay.xlo(k) + d]).collect();
            let hi: Vec<f64> = (0..lay.n_x)
                .map(|d| zv[lay.xhi(k) + d].max(lo[d]))
                .collect();
            Hyperrect::new(lo, hi).expect("ordered")
        };
        // Subregion of the previous step-1 partition holding the new state.
        let prev_box1 = box_at(prev_z, 1);
        let prev_cuts1 = self.cuts(prev_z, 1);
        let clamped = self.partition.clamp_cuts(&prev_cuts1, &prev_box1);
        let s_star = self.partition.locate(&prev_box1, &clamped, &new_x0);
        let relaxed = matches!(ocp.terminal, TerminalMode::Relaxed);
        // Boxes and cuts shift down by one; the relaxed construction keeps
        // the final two blocks in place.
        let last_shifted = if relaxed { n.saturating_sub(1) } else { n };
        for k in 1..last_shifted {
            for d in 0..lay.n_x {
                z[lay.xlo(k) + d] = prev_z[lay.xlo(k + 1) + d];
                z[lay.xhi(k) + d] = prev_z[lay.xhi(k + 1) + d];
            }
            for i in 0..lay.n_cuts {
                z[lay.cuts(k) + i] = prev_z[lay.cuts(k + 1) + i];
            }
        }
        // Inputs: shift, repeat the last block, tie step 0 to the realized
        // subregion's branch.
        for k in 0..n {
            let src = (k + 1).min(n - 1);
            for s in 0..lay.mu_s {
                let from = if k == 0 { s_star } else { s };
                for j in 0..lay.n_u {
                    z[lay.u(k, s) + j] = prev_z[lay.u(src, from) + j];
                }
            }
        }
        if !relaxed && n >= 2 {
            // Fresh final block: propagate the shifted step N-1 leaves under
            // the repeated inputs and enclose the images.
            let m = &ocp.model;
            let decomp = match &ocp.feedback {
                Some(f) => &f.dyn_decomp,
                None => &ocp.decomp,
            };
            let prev_box = box_at(&z, n - 1);
            let cuts = self.cuts(&z, n - 1);
            let cuts = self.partition.clamp_cuts(&cuts, &prev_box);
            let leaves = self.partition.leaf_boxes(&prev_box, &cuts);
            let mut lo = vec![f64::INFINITY; lay.n_x];
            let mut hi = vec![f64::NEG_INFINITY; lay.n_x];
            for (s, leaf) in leaves.iter().enumerate() {
                let u = self.input(&z, n - 1, s);
                let d_lo = decomp
                    .eval(leaf.lo(), m.p_box.lo(), &u, leaf.hi(), m.p_box.hi())
                    .map_err(OcpError::Graph)?;
                let d_hi = decomp
                    .eval(leaf.hi(), m.p_box.hi(), &u, leaf.lo(), m.p_box.lo())
                    .map_err(OcpError::Graph)?;
                for d in 0..lay.n_x {
                    lo[d] = lo[d].min(d_lo[d]);
                    hi[d] = hi[d].max(d_hi[d]);
                }
            }
            for d in 0..lay.n_x {
                z[lay.xlo(n) + d] = lo[d];
                z[lay.xhi(n) + d] = hi[d].max(lo[d]);
            }
            let new_box = box_at(&z, n);
            for (i, c) in self.partition.default_cuts(&new_box).iter().enumerate() {
                z[lay.cuts(n) + i] = *c;
            }
        }
        let residual = self.problem.violation(&z).map_err(OcpError::Graph)?;
        Ok(WarmStart { z, residual })
    }

    /// Structured description of the decision vector and constraint rows.
    pub fn layout_audit(&self) -> String {
        let mut s = String::new();
        let lay = &self.layout;
        let _ = writeln!(
            s,
            "variables: {} (horizon {}, mu_s {}, cuts/step {})",
            lay.n_z(),
            lay.horizon,
            lay.mu_s,
            lay.n_cuts
        );
        for (i, name) in self.problem.var_names.iter().enumerate() {
            let _ = writeln!(
                s,
                "  z[{i}] {name} in [{:?}, {:?}]",
                self.problem.z_lo[i], self.problem.z_hi[i]
            );
        }
        let _ = writeln!(s, "equalities: {}", self.problem.eq_tags.len());
        for t in &self.problem.eq_tags {
            let _ = writeln!(s, "  {t}");
        }
        let _ = writeln!(s, "inequalities: {}", self.problem.ineq_tags.len());
        for t in &self.problem.ineq_tags {
            let _ = writeln!(s, "  {t}");
        }
        s
    }
}

/// Nominal MPC over exact dynamics at a fixed parameter value. Used both as
/// the baseline controller (nominal parameter) and as the full-knowledge
/// oracle (true parameter).
pub struct NominalNlp {
    pub problem: NlpProblem,
    pub n_x: usize,
    pub n_u: usize,
    pub horizon: usize,
}

impl NominalNlp {
    fn x_off(&self, k: usize) -> usize {
        debug_assert!((1..=self.horizon).contains(&k));
        (k - 1) * self.n_x
    }

    fn u_off(&self, k: usize) -> usize {
        self.horizon * self.n_x + k * self.n_u
    }

    pub fn set_initial(&mut self, x0: &[f64], u_prev: &[f64]) {
        let mut theta = x0.to_vec();
        theta.extend_from_slice(u_prev);
        self.problem.set_theta(theta);
    }

    pub fn first_input(&self, z: &[f64]) -> Vec<f64> {
        z[self.u_off(0)..self.u_off(0) + self.n_u].to_vec()
    }

    /// Forward simulation under a constant input guess.
    pub fn cold_start(&self, model: &Model, p: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.horizon * (self.n_x + self.n_u)];
        let u_guess = model.u_box.center();
        let mut x = self.problem.theta()[..self.n_x].to_vec();
        for k in 0..self.horizon {
            x = model
                .dynamics
                .eval(&[&x, &u_guess, p])
                .unwrap_or_else(|_| x.clone());
            for d in 0..self.n_x {
                x[d] = x[d].clamp(model.x_box.lo()[d], model.x_box.hi()[d]);
                z[self.x_off(k + 1) + d] = x[d];
            }
            for j in 0..self.n_u {
                z[self.u_off(k) + j] = u_guess[j];
            }
        }
        z
    }

    /// Shifted candidate: trajectory moves down one step, the final block
    /// repeats the previous final state and input.
    pub fn warm_start_shift(&self, prev_z: &[f64]) -> Result<WarmStart, OcpError> {
        let mut z = prev_z.to_vec();
        for k in 1..self.horizon {
            for d in 0..self.n_x {
                z[self.x_off(k) + d] = prev_z[self.x_off(k + 1) + d];
            }
        }
        for k in 0..self.horizon.saturating_sub(1) {
            for j in 0..self.n_u {
                z[self.u_off(k) + j] = prev_z[self.u_off(k + 1) + j];
            }
        }
        let residual = self.problem.violation(&z).map_err(OcpError::Graph)?;
        Ok(WarmStart { z, residual })
    }
}

pub fn build_nominal_nlp(
    model: &Model,
    p: &[f64],
    horizon: usize,
    x0: &[f64],
) -> Result<NominalNlp, OcpError> {
    if !model.x_box.contains(x0, 1e-6) {
        return Err(OcpError::InfeasibleStart(format!(
            "x0 {:?} outside the state box",
            x0
        )));
    }
    let (n_x, n_u) = (model.n_x(), model.n_u());
    let n_z = horizon * (n_x + n_u);
    let x_off = |k: usize| (k - 1) * n_x;
    let u_off = |k: usize| horizon * n_x + k * n_u;
    let sig = Signature::nlp(n_z, n_x + n_u);
    let p_vec = p.to_vec();

    let state_nodes = |b: &mut ExprBuilder, k: usize| -> Vec<NodeId> {
        if k == 0 {
            (0..n_x).map(|d| b.sym(1, d)).collect()
        } else {
            (0..n_x).map(|d| b.sym(0, x_off(k) + d)).collect()
        }
    };
    let input_nodes =
        |b: &mut ExprBuilder, k: usize| -> Vec<NodeId> {
            (0..n_u).map(|j| b.sym(0, u_off(k) + j)).collect()
        };

    let objective = {
        let mut b = ExprBuilder::new(sig.clone());
        let mut terms = Vec::new();
        for k in 0..horizon {
            let x = state_nodes(&mut b, k);
            let u = input_nodes(&mut b, k);
            let up = if k == 0 {
                (0..n_u).map(|j| b.sym(1, n_x + j)).collect()
            } else {
                input_nodes(&mut b, k - 1)
            };
            let out = b.inline(&model.stage_cost, &[x, u, up]);
            terms.push(out[0]);
        }
        let xn = state_nodes(&mut b, horizon);
        let out = b.inline(&model.terminal_cost, &[xn]);
        terms.push(out[0]);
        let total = b.sum(&terms);
        b.finish(vec![total])
    };

    let mut eq_tags = Vec::new();
    let eq = {
        let mut b = ExprBuilder::new(sig.clone());
        let ps: Vec<NodeId> = p_vec.iter().map(|&c| b.constant(c)).collect();
        let mut outs = Vec::new();
        for k in 0..horizon {
            let x = state_nodes(&mut b, k);
            let u = input_nodes(&mut b, k);
            let f = b.inline(&model.dynamics, &[x, u, ps.clone()]);
            for d in 0..n_x {
                let nx = b.sym(0, x_off(k + 1) + d);
                outs.push(b.sub(nx, f[d]));
                eq_tags.push(format!("dyn[k{}][{d}]", k + 1));
            }
        }
        Some(b.finish(outs))
    };

    let mut ineq_tags = Vec::new();
    let ineq = if model.u_polytope.is_empty() {
        None
    } else {
        let mut b = ExprBuilder::new(sig.clone());
        let mut rows = Vec::new();
        for k in 0..horizon {
            for (ri, (a, rhs)) in model.u_polytope.iter().enumerate() {
                let u = input_nodes(&mut b, k);
                let terms: Vec<(f64, NodeId)> = a
                    .iter()
                    .zip(&u)
                    .filter(|(c, _)| **c != 0.0)
                    .map(|(c, &h)| (*c, h))
                    .collect();
                rows.push(b.affine(-rhs, &terms));
                ineq_tags.push(format!("upoly[k{k}][{ri}]"));
            }
        }
        Some(b.finish(rows))
    };

    let mut z_lo = vec![0.0; n_z];
    let mut z_hi = vec![0.0; n_z];
    let mut names = vec![String::new(); n_z];
    for k in 1..=horizon {
        for d in 0..n_x {
            z_lo[x_off(k) + d] = model.x_box.lo()[d];
            z_hi[x_off(k) + d] = model.x_box.hi()[d];
            names[x_off(k) + d] = format!("x[k{k}][{d}]");
        }
    }
    for k in 0..horizon {
        for j in 0..n_u {
            z_lo[u_off(k) + j] = model.u_box.lo()[j];
            z_hi[u_off(k) + j] = model.u_box.hi()[j];
            names[u_off(k) + j] = format!("u[k{k}][{j}]");
        }
    }

    let mut theta = x0.to_vec();
    theta.extend_from_slice(&model.u_prev0);
    let mut problem = NlpProblem::new(objective, eq, ineq, z_lo, z_hi, theta)?;
    problem.var_names = names;
    problem.eq_tags = eq_tags;
    problem.ineq_tags = ineq_tags;
    Ok(NominalNlp {
        problem,
        n_x,
        n_u,
        horizon,
    })
}

/// Outcome of the invariance check for a candidate terminal box.
#[derive(Debug, Clone)]
pub enum RcisVerdict {
    Verified {
        cuts: Vec<f64>,
        inputs: Vec<Vec<f64>>,
    },
    Unverified {
        reason: String,
    },
}

/// Checks Assumption-3-style robust control invariance of `candidate` by
/// solving a small feasibility NLP over the partition cuts and one input per
/// subregion: every subregion image must land back inside the candidate.
pub fn verify_rcis(
    candidate: &Hyperrect,
    partition: &PartitionSpec,
    ocp: &RobustOcp,
) -> Result<RcisVerdict, OcpError> {
    let m = &ocp.model;
    if !m.x_box.contains_box(candidate, 1e-9) {
        return Err(OcpError::Config("candidate must lie inside X".into()));
    }
    let (n_x, n_u) = (m.n_x(), m.n_u());
    let mu = partition.mu_s();
    let n_cuts = partition.n_cuts();
    let n_z = n_cuts + mu * n_u;
    let sig = Signature::nlp(n_z, 0);
    let refs = partition.corner_refs();
    let cut_bounds = partition.cut_bounds();
    let mut cut_axis = vec![0; n_cuts];
    for cb in &cut_bounds {
        cut_axis[cb.cut] = cb.axis;
    }
    let resolve = |b: &mut ExprBuilder, r: CoordRef| -> NodeId {
        match r {
            CoordRef::BoundLo(d) => b.constant(candidate.lo()[d]),
            CoordRef::BoundHi(d) => b.constant(candidate.hi()[d]),
            CoordRef::Cut(i) => b.sym(0, i),
        }
    };

    let mut tags = Vec::new();
    let ineq = {
        let mut b = ExprBuilder::new(sig.clone());
        let p_lo: Vec<NodeId> = m.p_box.lo().iter().map(|&c| b.constant(c)).collect();
        let p_hi: Vec<NodeId> = m.p_box.hi().iter().map(|&c| b.constant(c)).collect();
        let mut rows = Vec::new();
        for (s, (lo_refs, hi_refs)) in refs.iter().enumerate() {
            let clo: Vec<NodeId> = lo_refs.iter().map(|&r| resolve(&mut b, r)).collect();
            let chi: Vec<NodeId> = hi_refs.iter().map(|&r| resolve(&mut b, r)).collect();
            let uv: Vec<NodeId> = (0..n_u).map(|j| b.sym(0, n_cuts + s * n_u + j)).collect();
            let d_lo = b.inline(
                ocp.decomp.graph(),
                &[clo.clone(), p_lo.clone(), uv.clone(), chi.clone(), p_hi.clone()],
            );
            let d_hi = b.inline(
                ocp.decomp.graph(),
                &[chi, p_hi.clone(), uv.clone(), clo, p_lo.clone()],
            );
            for d in 0..n_x {
                let c = b.constant(candidate.lo()[d]);
                rows.push(b.sub(c, d_lo[d]));
                tags.push(format!("inv_lo[s{s}][{d}]"));
                let c = b.constant(candidate.hi()[d]);
                rows.push(b.sub(d_hi[d], c));
                tags.push(format!("inv_hi[s{s}][{d}]"));
            }
            for (ri, (a, rhs)) in m.u_polytope.iter().enumerate() {
                let terms: Vec<(f64, NodeId)> = a
                    .iter()
                    .zip(&uv)
                    .filter(|(c, _)| **c != 0.0)
                    .map(|(c, &h)| (*c, h))
                    .collect();
                rows.push(b.affine(-rhs, &terms));
                tags.push(format!("upoly[s{s}][{ri}]"));
            }
        }
        for cb in &cut_bounds {
            let c = b.sym(0, cb.cut);
            let lo = resolve(&mut b, cb.lo);
            let hi = resolve(&mut b, cb.hi);
            rows.push(b.sub(lo, c));
            tags.push(format!("cut_lo[{}]", cb.cut));
            rows.push(b.sub(c, hi));
            tags.push(format!("cut_hi[{}]", cb.cut));
        }
        Some(b.finish(rows))
    };

    // Mild centering objective; feasibility is what matters.
    let objective = {
        let mut b = ExprBuilder::new(sig.clone());
        let mut terms = Vec::new();
        for i in 0..n_cuts {
            let c = b.sym(0, i);
            let mid = 0.5 * (candidate.lo()[cut_axis[i]] + candidate.hi()[cut_axis[i]]);
            let d = b.affine(-mid, &[(1.0, c)]);
            let sq = b.mul(d, d);
            terms.push((1e-2, sq));
        }
        for s in 0..mu {
            for j in 0..n_u {
                let u = b.sym(0, n_cuts + s * n_u + j);
                let d = b.affine(-m.u_box.center()[j], &[(1.0, u)]);
                let sq = b.mul(d, d);
                terms.push((1e-2, sq));
            }
        }
        let out = b.affine(0.0, &terms);
        b.finish(vec![out])
    };

    let mut z_lo = vec![0.0; n_z];
    let mut z_hi = vec![0.0; n_z];
    for (i, &axis) in cut_axis.iter().enumerate() {
        z_lo[i] = candidate.lo()[axis];
        z_hi[i] = candidate.hi()[axis];
    }
    for s in 0..mu {
        for j in 0..n_u {
            z_lo[n_cuts + s * n_u + j] = m.u_box.lo()[j];
            z_hi[n_cuts + s * n_u + j] = m.u_box.hi()[j];
        }
    }
    let mut problem = NlpProblem::new(objective, None, ineq, z_lo, z_hi, Vec::new())?;
    problem.ineq_tags = tags;

    let mut start = partition.default_cuts(candidate);
    for _ in 0..mu {
        start.extend_from_slice(&m.u_box.center());
    }
    let opts = crate::nlp::SolverOptions::default();
    let sol = crate::nlp::solve(&problem, &start, &opts);
    let feas = problem.violation(&sol.z).unwrap_or(f64::INFINITY);
    if feas <= 1e-7 {
        let cuts = sol.z[..n_cuts].to_vec();
        let inputs = (0..mu)
            .map(|s| sol.z[n_cuts + s * n_u..n_cuts + (s + 1) * n_u].to_vec())
            .collect();
        Ok(RcisVerdict::Verified { cuts, inputs })
    } else {
        Ok(RcisVerdict::Unverified {
            reason: format!("solver status {:?}, violation {feas:.3e}", sol.status),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_double_integrator, build_scalar_monotone};
    use crate::nlp::{solve, SolverOptions, Status};
    use crate::partition::PartitionSpec;

    #[test]
    fn layout_counts_match_formulas() {
        let model = build_double_integrator();
        let part = PartitionSpec::chain(2, 0, 2);
        let ocp = RobustOcp::new(model, 3, part).unwrap();
        let nlp = build_cl_nlp(&ocp, &[2.0, 0.0]).unwrap();
        // N (2 n_x + n_cuts) + N mu_s n_u = 3 (4 + 1) + 3 * 2 * 1.
        assert_eq!(nlp.layout.n_z(), 21);
        assert_eq!(nlp.problem.eq_tags.len(), 1);
        let term_rows = nlp
            .problem
            .ineq_tags
            .iter()
            .filter(|t| t.starts_with("term_"))
            .count();
        assert_eq!(term_rows, 2 * 2 * 2);
    }

    #[test]
    fn ol_equals_cl_with_trivial_partition() {
        // The contraction model admits a relaxed-terminal solution without
        // partitioning: the last box can widen to the invariant width.
        let model = build_scalar_monotone();
        let ocp = RobustOcp::new(model, 3, PartitionSpec::single(1)).unwrap();
        let x0 = [1.5];
        let cl = build_cl_nlp(&ocp, &x0).unwrap();
        let ol = build_ol_nlp(&ocp, &x0).unwrap();
        assert_eq!(cl.layout.n_z(), ol.layout.n_z());
        assert_eq!(cl.problem.ineq_tags, ol.problem.ineq_tags);
        let opts = SolverOptions::default();
        let s1 = solve(&cl.problem, &cl.cold_start(&ocp), &opts);
        let s2 = solve(&ol.problem, &ol.cold_start(&ocp), &opts);
        assert_eq!(s1.status, Status::Optimal);
        assert_eq!(s2.status, Status::Optimal);
        assert!((s1.objective - s2.objective).abs() <= 1e-8);
    }

    #[test]
    fn one_step_matches_closed_form() {
        // Degenerate uncertainty, N = 1, fixed terminal X_f = X (inactive).
        // The corner variables relax toward the cost minimum subject to the
        // one-sided bounding rows: with x1 = (2, 1+u) componentwise positive
        // at the optimum, the lower corner rests at the origin and only the
        // upper corner carries terminal cost. Minimize
        // 2 (r + r_d) u^2 + 10 (q0 x1_0^2 + q1 x1_1^2):
        // 0.44 u + 20 (1 + u) = 0.
        let mut model = build_double_integrator();
        model.p_box = Hyperrect::point(&[0.0, 0.0]);
        model.p_nominal = vec![0.0, 0.0];
        model.worst_case_corner = vec![0.0, 0.0];
        let xf = model.x_box.clone();
        let ocp = RobustOcp::new(model, 1, PartitionSpec::single(2))
            .unwrap()
            .with_terminal(TerminalMode::Fixed(xf));
        let nlp = build_ol_nlp(&ocp, &[1.0, 1.0]).unwrap();
        let mut nlp = nlp;
        nlp.set_initial(&[1.0, 1.0], &[0.0]);
        let sol = solve(&nlp.problem, &nlp.cold_start(&ocp), &SolverOptions::default());
        assert_eq!(sol.status, Status::Optimal);
        let u_star = -20.0 / 20.44;
        let u = nlp.first_input(&sol.z);
        assert!((u[0] - u_star).abs() <= 1e-6, "{} vs {u_star}", u[0]);
        // Plus the constant state part of the stage cost at x0, 2 |x0|^2.
        let expected =
            2.0 * 2.0 + 2.0 * 0.11 * u_star * u_star + 10.0 * (4.0 + (1.0 + u_star).powi(2));
        assert!(
            (sol.objective - expected).abs() <= 1e-6,
            "{} vs {expected}",
            sol.objective
        );
    }

    #[test]
    fn infeasible_x0_rejected() {
        let model = build_double_integrator();
        let ocp = RobustOcp::new(model, 2, PartitionSpec::single(2)).unwrap();
        assert!(matches!(
            build_ol_nlp(&ocp, &[100.0, 0.0]),
            Err(OcpError::InfeasibleStart(_))
        ));
    }

    #[test]
    fn partitioning_never_costs_more() {
        // The objective sums corner costs over all subregions, so comparable
        // scale is cost per subregion. Embedding the single-region solution
        // with midpoint cuts is feasible for the partitioned problem and, by
        // convexity of the quadratic stage cost, costs at most mu_s times
        // the single-region objective.
        let model = build_scalar_monotone();
        let x0 = [2.0];
        let ocp1 = RobustOcp::new(model.clone(), 3, PartitionSpec::single(1)).unwrap();
        let ocp2 = RobustOcp::new(model, 3, PartitionSpec::chain(1, 0, 2)).unwrap();
        let opts = SolverOptions::default();
        let ol = build_ol_nlp(&ocp1, &x0).unwrap();
        let s_ol = solve(&ol.problem, &ol.cold_start(&ocp1), &opts);
        let cl = build_cl_nlp(&ocp2, &x0).unwrap();
        let s_cl = solve(&cl.problem, &cl.cold_start(&ocp2), &opts);
        assert_eq!(s_ol.status, Status::Optimal);
        assert_eq!(s_cl.status, Status::Optimal);
        assert!(
            s_cl.objective <= 2.0 * s_ol.objective + 1e-6,
            "cl {} vs 2*ol {}",
            s_cl.objective,
            2.0 * s_ol.objective
        );
    }

    #[test]
    fn warm_start_candidate_is_nearly_feasible() {
        // The double integrator admits no nested box sequence (its position
        // width grows every step), so the terminal box is the full state
        // box; the shift then rebuilds the final block by propagation.
        let model = build_double_integrator();
        let xf = model.x_box.clone();
        let ocp = RobustOcp::new(model.clone(), 4, PartitionSpec::from_levels(2, &[0, 1]))
            .unwrap()
            .with_terminal(TerminalMode::Fixed(xf));
        let x0 = [2.0, 0.0];
        let mut nlp = build_cl_nlp(&ocp, &x0).unwrap();
        let opts = SolverOptions::default();
        let sol = solve(&nlp.problem, &nlp.cold_start(&ocp), &opts);
        assert_eq!(sol.status, Status::Optimal);
        // Apply the first input, realize some disturbance inside P.
        let u = nlp.first_input(&sol.z);
        let p = [0.05, -0.03];
        let x1 = model.dynamics.eval(&[&x0, &u, &p]).unwrap();
        nlp.set_initial(&x1, &u);
        let ws = nlp.warm_start_shift(&sol.z, &ocp).unwrap();
        assert!(ws.residual <= 1e-6, "residual {}", ws.residual);
    }

    #[test]
    fn rcis_verifies_wide_box_rejects_narrow_box() {
        let model = build_scalar_monotone();
        let ocp = RobustOcp::new(model, 1, PartitionSpec::single(1)).unwrap();
        // x+ = 0.8 x + u + p, |p| <= 0.1: [-1, 1] maps to [-0.8-u, 0.8+u]
        // plus p; u = 0 keeps it inside.
        let wide = Hyperrect::new(vec![-1.0], vec![1.0]).unwrap();
        match verify_rcis(&wide, &PartitionSpec::single(1), &ocp).unwrap() {
            RcisVerdict::Verified { inputs, .. } => {
                assert!(inputs[0][0].abs() <= 0.5);
            }
            RcisVerdict::Unverified { reason } => panic!("should verify: {reason}"),
        }
        // Too narrow: image width 0.8 * 0.2 + 0.2 = 0.36 > 0.2.
        let narrow = Hyperrect::new(vec![-0.1], vec![0.1]).unwrap();
        assert!(matches!(
            verify_rcis(&narrow, &PartitionSpec::single(1), &ocp).unwrap(),
            RcisVerdict::Unverified { .. }
        ));
    }

    #[test]
    fn zero_gain_feedback_matches_plain_closed_loop() {
        let model = build_double_integrator();
        let x0 = [1.0, 0.5];
        let xf = model.x_box.clone();
        let plain = RobustOcp::new(model.clone(), 3, PartitionSpec::from_levels(2, &[0, 1]))
            .unwrap()
            .with_terminal(TerminalMode::Fixed(xf.clone()));
        let with_k0 = RobustOcp::new(model, 3, PartitionSpec::from_levels(2, &[0, 1]))
            .unwrap()
            .with_terminal(TerminalMode::Fixed(xf))
            .with_feedback(vec![vec![0.0, 0.0]])
            .unwrap();
        let opts = SolverOptions::default();
        let a = build_cl_nlp(&plain, &x0).unwrap();
        let sa = solve(&a.problem, &a.cold_start(&plain), &opts);
        let b = build_cl_feedback_nlp(&with_k0, &x0).unwrap();
        let sb = solve(&b.problem, &b.cold_start(&with_k0), &opts);
        assert_eq!(sa.status, Status::Optimal);
        assert_eq!(sb.status, Status::Optimal);
        assert!(
            (sa.objective - sb.objective).abs() <= 1e-6,
            "{} vs {}",
            sa.objective,
            sb.objective
        );
        let ua = a.first_input(&sa.z);
        let ub = b.first_input(&sb.z);
        assert!((ua[0] - ub[0]).abs() <= 1e-4);
    }

    #[test]
    fn nominal_mpc_one_step_regulates() {
        let model = build_scalar_monotone();
        let mut nlp = build_nominal_nlp(&model, &[0.0], 3, &[2.0]).unwrap();
        nlp.set_initial(&[2.0], &[0.0]);
        let sol = solve(
            &nlp.problem,
            &nlp.cold_start(&model, &[0.0]),
            &SolverOptions::default(),
        );
        assert_eq!(sol.status, Status::Optimal);
        let u = nlp.first_input(&sol.z);
        // Regulation toward the origin pushes the input negative.
        assert!(u[0] < -0.5, "{}", u[0]);
    }
}
