//! Benchmark model library: systems as expression graphs together with
//! constraint boxes, uncertainty boxes, and cost definitions.
//!
//! The CSTR cascade is the main case study. Its prediction map is a
//! sub-stepped Heun discretization written in a factored form: every
//! concentration value that later appears as a factor in a reaction rate is
//! built as `c * gain + offset` with interval-nonnegative `gain` and
//! `offset`, so decomposition synthesis can certify the sign of every
//! product factor over the operating box. A naive Runge-Kutta composition
//! loses that property the moment a stage state mixes a box touching zero
//! with a sign-indefinite derivative enclosure.

use serde::{Deserialize, Serialize};

use crate::exprgraph::{ExprBuilder, ExprGraph, NodeId, Signature};
use crate::reach::Hyperrect;

/// A discrete-time uncertain system plus everything a controller needs:
/// constraint sets, uncertainty description, initial condition, and cost.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    /// Discrete prediction map over `(x, u, p)`.
    pub dynamics: ExprGraph,
    /// Continuous right-hand side for plant integration; `None` for systems
    /// that are discrete-time by definition.
    pub ode: Option<ExprGraph>,
    /// Duration of one prediction step.
    pub dt: f64,
    /// Sub-steps the prediction map integrates per step.
    pub prediction_substeps: usize,
    pub x_box: Hyperrect,
    pub u_box: Hyperrect,
    pub p_box: Hyperrect,
    pub p_nominal: Vec<f64>,
    /// Corner of `p_box` used by the worst-case-constant scenario.
    pub worst_case_corner: Vec<f64>,
    /// Extra linear input constraints `a . u <= b` tightening `u_box`.
    pub u_polytope: Vec<(Vec<f64>, f64)>,
    pub x0: Vec<f64>,
    pub u_prev0: Vec<f64>,
    /// Stage cost over groups `(x, u, uprev)`, one scalar output.
    pub stage_cost: ExprGraph,
    /// Terminal cost over group `(x)`, one scalar output.
    pub terminal_cost: ExprGraph,
}

impl Model {
    pub fn n_x(&self) -> usize {
        self.x_box.dim()
    }

    pub fn n_u(&self) -> usize {
        self.u_box.dim()
    }

    pub fn n_p(&self) -> usize {
        self.p_box.dim()
    }
}

/// Physical and numerical parameters of the CSTR cascade. The paper's own
/// values live in unpublished supplementary code; these defaults are
/// repo-chosen so the qualitative closed-loop phenomena occur (see the
/// parameter search example).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CstrParams {
    /// Rate constant of A + B -> R, [m^3/(mol h)].
    pub k1: f64,
    /// Rate constant of 2A -> S, [m^3/(mol h)].
    pub k2: f64,
    /// Activation energies, [J/mol].
    pub e_a1: f64,
    pub e_a2: f64,
    /// Reaction enthalpies entering as `-r dH / (rho c_p)`, [kJ/mol].
    /// Positive values mean the reactions cool the reactor.
    pub dh1: f64,
    pub dh2: f64,
    /// Gas constant, [J/(mol K)].
    pub r_gas: f64,
    /// Volumetric heat capacity, [kJ/(m^3 K)].
    pub rho_cp: f64,
    /// Heat transfer coefficient times area, [kJ/(h K)].
    pub ka: f64,
    /// Total cascade volume, [m^3]; each reactor holds `v_r / n_r`.
    pub v_r: f64,
    /// Flow through the cascade, [m^3/h].
    pub v_dot: f64,
    /// Inlet temperature, [deg C].
    pub t_in: f64,
    pub jacket_lo: f64,
    pub jacket_hi: f64,
    /// Whether the jacket temperatures are manipulated inputs.
    pub jacket_as_input: bool,
    /// Jacket temperature used when it is not an input.
    pub t_jacket_fixed: f64,
    /// Prediction step duration, [h].
    pub dt: f64,
    /// Heun sub-steps per prediction step.
    pub substeps: usize,
    /// Relative half-width of the parameter boxes.
    pub uncertainty: f64,
    /// State box: educt concentration cap, [mol/m^3].
    pub c_ab_max: f64,
    /// State box: product concentration cap, [mol/m^3].
    pub c_r_max: f64,
    /// Side product bound, [mol/m^3].
    pub c_s_max: f64,
    /// Reactor temperature band, [deg C].
    pub t_lo: f64,
    pub t_hi: f64,
    /// Per-reactor feed cap, [mol/h].
    pub feed_max: f64,
    /// Cascade-wide feed budget per educt, [mol/h].
    pub feed_budget: f64,
}

impl Default for CstrParams {
    fn default() -> Self {
        CstrParams {
            k1: 2.0e3,
            k2: 10.0,
            e_a1: 25_000.0,
            e_a2: 12_000.0,
            dh1: 500.0,
            dh2: 800.0,
            r_gas: 8.314,
            rho_cp: 1_000.0,
            ka: 125.0,
            v_r: 1.0,
            v_dot: 0.2,
            t_in: 60.0,
            jacket_lo: 20.0,
            jacket_hi: 80.0,
            jacket_as_input: true,
            t_jacket_fixed: 60.0,
            dt: 1.0,
            substeps: 16,
            uncertainty: 0.3,
            c_ab_max: 2.0,
            c_r_max: 8.0,
            c_s_max: 0.12,
            t_lo: 40.0,
            t_hi: 65.0,
            feed_max: 1.0,
            feed_budget: 1.5,
        }
    }
}

impl CstrParams {
    pub fn n_u_per_reactor(&self) -> usize {
        if self.jacket_as_input {
            3
        } else {
            2
        }
    }
}

/// Diagonal cost weights and setpoints for the CSTR stage cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostParams {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub r_d: Vec<f64>,
    pub x_set: Vec<f64>,
    pub u_set: Vec<f64>,
    pub feed_budget: f64,
}

impl CostParams {
    /// Default weights: track the stoichiometric ceiling of the value
    /// product in every tank (feed budget over flow, reachable only at full
    /// conversion), with the last tank weighted highest; penalize the side
    /// product; keep input moves small.
    pub fn defaults(n_r: usize, pr: &CstrParams) -> Self {
        let n_u = pr.n_u_per_reactor();
        let c_r_target = pr.feed_budget / pr.v_dot;
        let mut q = Vec::new();
        let mut x_set = Vec::new();
        for i in 0..n_r {
            let w = 0.2 * (i + 1) as f64 / n_r as f64;
            q.extend_from_slice(&[0.0, 0.0, w, 0.5, 0.0]);
            x_set.extend_from_slice(&[0.0, 0.0, c_r_target, 0.0, pr.t_in]);
        }
        let mut r = Vec::new();
        let mut r_d = Vec::new();
        let mut u_set = Vec::new();
        for _ in 0..n_r {
            r.extend_from_slice(&[0.01, 0.01]);
            r_d.extend_from_slice(&[0.05, 0.05]);
            u_set.extend_from_slice(&[0.0, 0.0]);
            if n_u == 3 {
                r.push(1e-3);
                r_d.push(1e-3);
                u_set.push(pr.t_jacket_fixed);
            }
        }
        CostParams {
            q,
            r,
            r_d,
            x_set,
            u_set,
            feed_budget: pr.feed_budget,
        }
    }
}

/// Per-reactor view into the flat state node vector.
#[derive(Clone, Copy)]
struct ReactorState {
    ca: NodeId,
    cb: NodeId,
    cr: NodeId,
    cs: NodeId,
    t: NodeId,
}

fn split_state(x: &[NodeId]) -> Vec<ReactorState> {
    x.chunks(5)
        .map(|c| ReactorState {
            ca: c[0],
            cb: c[1],
            cr: c[2],
            cs: c[3],
            t: c[4],
        })
        .collect()
}

/// Stage quantities of the CSTR right-hand side, written so the educt
/// derivatives take the decay form `dc/dt = -sigma * c + s` with
/// interval-nonnegative `sigma` and `s`.
struct CstrStage {
    sigma_a: Vec<NodeId>,
    s_a: Vec<NodeId>,
    sigma_b: Vec<NodeId>,
    s_b: Vec<NodeId>,
    k_r: Vec<NodeId>,
    k_s: Vec<NodeId>,
    k_t: Vec<NodeId>,
}

struct CstrCtx<'a> {
    pr: &'a CstrParams,
    n_r: usize,
    /// Flow over reactor volume, [1/h].
    dil: f64,
    /// Inverse reactor volume, [1/m^3].
    inv_v: f64,
    /// Jacket coupling `kA / (rho c_p V_i)`, [1/h].
    heat: f64,
}

impl<'a> CstrCtx<'a> {
    fn new(n_r: usize, pr: &'a CstrParams) -> Self {
        let vi = pr.v_r / n_r as f64;
        CstrCtx {
            pr,
            n_r,
            dil: pr.v_dot / vi,
            inv_v: 1.0 / vi,
            heat: pr.ka / (pr.rho_cp * vi),
        }
    }

    fn u_a(&self, u: &[NodeId], i: usize) -> NodeId {
        u[i * self.pr.n_u_per_reactor()]
    }

    fn u_b(&self, u: &[NodeId], i: usize) -> NodeId {
        u[i * self.pr.n_u_per_reactor() + 1]
    }

    fn jacket(&self, b: &mut ExprBuilder, u: &[NodeId], i: usize) -> NodeId {
        if self.pr.jacket_as_input {
            u[i * 3 + 2]
        } else {
            b.constant(self.pr.t_jacket_fixed)
        }
    }

    fn stage(&self, b: &mut ExprBuilder, xs: &[ReactorState], u: &[NodeId], p: &[NodeId]) -> CstrStage {
        let pr = self.pr;
        let mut st = CstrStage {
            sigma_a: Vec::new(),
            s_a: Vec::new(),
            sigma_b: Vec::new(),
            s_b: Vec::new(),
            k_r: Vec::new(),
            k_s: Vec::new(),
            k_t: Vec::new(),
        };
        for i in 0..self.n_r {
            let r = xs[i];
            let (k1, k2, dh1, dh2) = (p[4 * i], p[4 * i + 1], p[4 * i + 2], p[4 * i + 3]);
            // Arrhenius factors; the denominator is positive over any
            // temperature band above -273.15 degC.
            let denom = b.affine(pr.r_gas * 273.15, &[(pr.r_gas, r.t)]);
            let neg_e1 = b.constant(-pr.e_a1);
            let neg_e2 = b.constant(-pr.e_a2);
            let a1 = b.div(neg_e1, denom);
            let a2 = b.div(neg_e2, denom);
            let e1 = b.exp(a1);
            let e2 = b.exp(a2);
            let ra1 = b.mul(k1, e1);
            let ra2 = b.mul(k2, e2);
            let r1a = b.mul(ra1, r.ca);
            let r1 = b.mul(r1a, r.cb);
            let r2a = b.mul(ra2, r.ca);
            let r2 = b.mul(r2a, r.ca);
            // Educt A: dc/dt = -(dil + ra1 cb + 2 ra2 ca) c + dil c_prev + u/V.
            let ra1_cb = b.mul(ra1, r.cb);
            let sigma_a = b.affine(self.dil, &[(1.0, ra1_cb), (2.0, r2a)]);
            let ua = self.u_a(u, i);
            let mut sa_terms = vec![(self.inv_v, ua)];
            if i > 0 {
                sa_terms.push((self.dil, xs[i - 1].ca));
            }
            let s_a = b.affine(0.0, &sa_terms);
            // Educt B: dc/dt = -(dil + ra1 ca) c + dil c_prev + u/V.
            let sigma_b = b.affine(self.dil, &[(1.0, r1a)]);
            let ub = self.u_b(u, i);
            let mut sb_terms = vec![(self.inv_v, ub)];
            if i > 0 {
                sb_terms.push((self.dil, xs[i - 1].cb));
            }
            let s_b = b.affine(0.0, &sb_terms);
            // Products R and S only ever appear additively; plain form.
            let mut kr_terms = vec![(-self.dil, r.cr), (1.0, r1)];
            if i > 0 {
                kr_terms.push((self.dil, xs[i - 1].cr));
            }
            let k_r = b.affine(0.0, &kr_terms);
            let mut ks_terms = vec![(-self.dil, r.cs), (1.0, r2)];
            if i > 0 {
                ks_terms.push((self.dil, xs[i - 1].cs));
            }
            let k_s = b.affine(0.0, &ks_terms);
            // Temperature: inflow, reaction heat, jacket coupling.
            let tj = self.jacket(b, u, i);
            let q1 = b.mul(r1, dh1);
            let q2 = b.mul(r2, dh2);
            let mut kt_terms = vec![
                (-(self.dil + self.heat), r.t),
                (self.heat, tj),
                (-1.0 / pr.rho_cp, q1),
                (-1.0 / pr.rho_cp, q2),
            ];
            let base = if i == 0 {
                self.dil * pr.t_in
            } else {
                kt_terms.push((self.dil, xs[i - 1].t));
                0.0
            };
            let k_t = b.affine(base, &kt_terms);
            st.sigma_a.push(sigma_a);
            st.s_a.push(s_a);
            st.sigma_b.push(sigma_b);
            st.s_b.push(s_b);
            st.k_r.push(k_r);
            st.k_s.push(k_s);
            st.k_t.push(k_t);
        }
        st
    }

    /// One Heun sub-step of length `h`, algebraically identical to the
    /// textbook predictor-corrector but with educt updates factored as
    /// `c * gain + offset` so the gains and offsets stay interval-nonnegative
    /// whenever `h * sigma <= 1` over the operating box.
    fn heun_substep(
        &self,
        b: &mut ExprBuilder,
        x: &[NodeId],
        u: &[NodeId],
        p: &[NodeId],
        h: f64,
    ) -> Vec<NodeId> {
        let xs = split_state(x);
        let s1 = self.stage(b, &xs, u, p);
        // Euler predictor.
        let mut x2 = Vec::with_capacity(x.len());
        let mut gains_a = Vec::with_capacity(self.n_r);
        for i in 0..self.n_r {
            let r = xs[i];
            let g_a = b.affine(1.0, &[(-h, s1.sigma_a[i])]);
            let g_b = b.affine(1.0, &[(-h, s1.sigma_b[i])]);
            let ca_g = b.mul(r.ca, g_a);
            let cb_g = b.mul(r.cb, g_b);
            let ca2 = b.affine(0.0, &[(1.0, ca_g), (h, s1.s_a[i])]);
            let cb2 = b.affine(0.0, &[(1.0, cb_g), (h, s1.s_b[i])]);
            let cr2 = b.affine(0.0, &[(1.0, r.cr), (h, s1.k_r[i])]);
            let cs2 = b.affine(0.0, &[(1.0, r.cs), (h, s1.k_s[i])]);
            let t2 = b.affine(0.0, &[(1.0, r.t), (h, s1.k_t[i])]);
            x2.extend_from_slice(&[ca2, cb2, cr2, cs2, t2]);
            gains_a.push((g_a, g_b));
        }
        let xs2 = split_state(&x2);
        let s2 = self.stage(b, &xs2, u, p);
        // Corrector: c+ = c (1 - h/2 (sig1 + sig2 g1)) + h/2 s1 (1 - h sig2)
        //                + h/2 s2, which equals c + h/2 (k1 + k2).
        let mut out = Vec::with_capacity(x.len());
        for i in 0..self.n_r {
            let r = xs[i];
            let (g_a, g_b) = gains_a[i];
            let sg_a = b.mul(s2.sigma_a[i], g_a);
            let inner_a = b.affine(0.0, &[(1.0, s1.sigma_a[i]), (1.0, sg_a)]);
            let big_g_a = b.affine(1.0, &[(-0.5 * h, inner_a)]);
            let ca_g = b.mul(r.ca, big_g_a);
            let damp_a = b.affine(1.0, &[(-h, s2.sigma_a[i])]);
            let s1_damped_a = b.mul(s1.s_a[i], damp_a);
            let ca_new = b.affine(
                0.0,
                &[(1.0, ca_g), (0.5 * h, s1_damped_a), (0.5 * h, s2.s_a[i])],
            );
            let sg_b = b.mul(s2.sigma_b[i], g_b);
            let inner_b = b.affine(0.0, &[(1.0, s1.sigma_b[i]), (1.0, sg_b)]);
            let big_g_b = b.affine(1.0, &[(-0.5 * h, inner_b)]);
            let cb_g = b.mul(r.cb, big_g_b);
            let damp_b = b.affine(1.0, &[(-h, s2.sigma_b[i])]);
            let s1_damped_b = b.mul(s1.s_b[i], damp_b);
            let cb_new = b.affine(
                0.0,
                &[(1.0, cb_g), (0.5 * h, s1_damped_b), (0.5 * h, s2.s_b[i])],
            );
            let cr_new = b.affine(0.0, &[(1.0, r.cr), (0.5 * h, s1.k_r[i]), (0.5 * h, s2.k_r[i])]);
            let cs_new = b.affine(0.0, &[(1.0, r.cs), (0.5 * h, s1.k_s[i]), (0.5 * h, s2.k_s[i])]);
            let t_new = b.affine(0.0, &[(1.0, r.t), (0.5 * h, s1.k_t[i]), (0.5 * h, s2.k_t[i])]);
            out.extend_from_slice(&[ca_new, cb_new, cr_new, cs_new, t_new]);
        }
        out
    }
}

/// Builds the CSTR cascade model of Eq.-style rate kinetics: states
/// `(c_A, c_B, c_R, c_S, T_R)` per reactor, inputs `(u_A, u_B[, T_J])` per
/// reactor, uncertain `(k_1, k_2, dH_1, dH_2)` per reactor with exact
/// `0.7/1.3` relative boxes.
pub fn build_cstr(n_r: usize, pr: &CstrParams) -> Model {
    assert!(n_r >= 1);
    let n_x = 5 * n_r;
    let n_u = pr.n_u_per_reactor() * n_r;
    let n_p = 4 * n_r;
    let ctx = CstrCtx::new(n_r, pr);

    // Continuous right-hand side, used by the plant integrator.
    let ode = {
        let mut b = ExprBuilder::new(Signature::xup(n_x, n_u, n_p));
        let x: Vec<NodeId> = (0..n_x).map(|i| b.sym(0, i)).collect();
        let u: Vec<NodeId> = (0..n_u).map(|i| b.sym(1, i)).collect();
        let p: Vec<NodeId> = (0..n_p).map(|i| b.sym(2, i)).collect();
        let xs = split_state(&x);
        let st = ctx.stage(&mut b, &xs, &u, &p);
        let mut outs = Vec::with_capacity(n_x);
        for i in 0..n_r {
            let sc_a = b.mul(st.sigma_a[i], xs[i].ca);
            let k_a = b.affine(0.0, &[(-1.0, sc_a), (1.0, st.s_a[i])]);
            let sc_b = b.mul(st.sigma_b[i], xs[i].cb);
            let k_b = b.affine(0.0, &[(-1.0, sc_b), (1.0, st.s_b[i])]);
            outs.extend_from_slice(&[k_a, k_b, st.k_r[i], st.k_s[i], st.k_t[i]]);
        }
        b.finish(outs)
    };

    // Discrete prediction map: factored Heun sub-steps.
    let dynamics = {
        let mut b = ExprBuilder::new(Signature::xup(n_x, n_u, n_p));
        let mut x: Vec<NodeId> = (0..n_x).map(|i| b.sym(0, i)).collect();
        let u: Vec<NodeId> = (0..n_u).map(|i| b.sym(1, i)).collect();
        let p: Vec<NodeId> = (0..n_p).map(|i| b.sym(2, i)).collect();
        let h = pr.dt / pr.substeps as f64;
        for _ in 0..pr.substeps {
            x = ctx.heun_substep(&mut b, &x, &u, &p, h);
        }
        b.finish(x)
    };

    let mut x_lo = Vec::new();
    let mut x_hi = Vec::new();
    let mut x0 = Vec::new();
    for _ in 0..n_r {
        x_lo.extend_from_slice(&[0.0, 0.0, 0.0, 0.0, pr.t_lo]);
        x_hi.extend_from_slice(&[pr.c_ab_max, pr.c_ab_max, pr.c_r_max, pr.c_s_max, pr.t_hi]);
        x0.extend_from_slice(&[0.0, 0.0, 0.0, 0.0, pr.t_in]);
    }
    let mut u_lo = Vec::new();
    let mut u_hi = Vec::new();
    let mut u_prev0 = Vec::new();
    for _ in 0..n_r {
        u_lo.extend_from_slice(&[0.0, 0.0]);
        u_hi.extend_from_slice(&[pr.feed_max, pr.feed_max]);
        u_prev0.extend_from_slice(&[0.0, 0.0]);
        if pr.jacket_as_input {
            u_lo.push(pr.jacket_lo);
            u_hi.push(pr.jacket_hi);
            u_prev0.push(pr.t_jacket_fixed);
        }
    }
    let mut p_nominal = Vec::new();
    for _ in 0..n_r {
        p_nominal.extend_from_slice(&[pr.k1, pr.k2, pr.dh1, pr.dh2]);
    }
    let p_lo: Vec<f64> = p_nominal.iter().map(|v| (1.0 - pr.uncertainty) * v).collect();
    let p_hi: Vec<f64> = p_nominal.iter().map(|v| (1.0 + pr.uncertainty) * v).collect();
    // Feed budget rows over the whole cascade, one per educt.
    let mut u_polytope = Vec::new();
    for educt in 0..2 {
        let mut row = vec![0.0; n_u];
        for i in 0..n_r {
            row[i * pr.n_u_per_reactor() + educt] = 1.0;
        }
        u_polytope.push((row, pr.feed_budget));
    }
    let cost = CostParams::defaults(n_r, pr);
    let (stage_cost, terminal_cost) = build_cstr_cost(n_r, pr, &cost);
    Model {
        name: format!("cstr{n_r}"),
        dynamics,
        ode: Some(ode),
        dt: pr.dt,
        prediction_substeps: pr.substeps,
        x_box: Hyperrect::new(x_lo, x_hi).unwrap(),
        u_box: Hyperrect::new(u_lo, u_hi).unwrap(),
        p_box: Hyperrect::new(p_lo.clone(), p_hi).unwrap(),
        p_nominal,
        // Reduced rates and enthalpies remove reactive cooling, so the
        // plant runs hotter than the nominal prediction.
        worst_case_corner: p_lo,
        u_polytope,
        x0,
        u_prev0,
        stage_cost,
        terminal_cost,
    }
}

/// Quadratic stage cost over `(x, u, uprev)` plus the feed budget pulls,
/// and the terminal cost (ten times the state tracking part).
pub fn build_cstr_cost(n_r: usize, pr: &CstrParams, cost: &CostParams) -> (ExprGraph, ExprGraph) {
    let n_x = 5 * n_r;
    let n_u = pr.n_u_per_reactor() * n_r;
    assert_eq!(cost.q.len(), n_x);
    assert_eq!(cost.r.len(), n_u);
    let stage = {
        let mut b = ExprBuilder::new(Signature::new(&[("x", n_x), ("u", n_u), ("uprev", n_u)]));
        let mut terms = Vec::new();
        for j in 0..n_x {
            if cost.q[j] == 0.0 {
                continue;
            }
            let x = b.sym(0, j);
            let d = b.affine(-cost.x_set[j], &[(1.0, x)]);
            let sq = b.mul(d, d);
            terms.push((cost.q[j], sq));
        }
        for j in 0..n_u {
            let u = b.sym(1, j);
            if cost.r[j] != 0.0 {
                let d = b.affine(-cost.u_set[j], &[(1.0, u)]);
                let sq = b.mul(d, d);
                terms.push((cost.r[j], sq));
            }
            if cost.r_d[j] != 0.0 {
                let up = b.sym(2, j);
                let d = b.affine(0.0, &[(1.0, u), (-1.0, up)]);
                let sq = b.mul(d, d);
                terms.push((cost.r_d[j], sq));
            }
        }
        for educt in 0..2 {
            let feeds: Vec<(f64, NodeId)> = (0..n_r)
                .map(|i| (1.0, b.sym(1, i * pr.n_u_per_reactor() + educt)))
                .collect();
            let d = b.affine(-cost.feed_budget, &feeds);
            let sq = b.mul(d, d);
            terms.push((1.0, sq));
        }
        let out = b.affine(0.0, &terms);
        b.finish(vec![out])
    };
    let terminal = {
        let mut b = ExprBuilder::new(Signature::new(&[("x", n_x)]));
        let mut terms = Vec::new();
        for j in 0..n_x {
            if cost.q[j] == 0.0 {
                continue;
            }
            let x = b.sym(0, j);
            let d = b.affine(-cost.x_set[j], &[(1.0, x)]);
            let sq = b.mul(d, d);
            terms.push((10.0 * cost.q[j], sq));
        }
        let out = b.affine(0.0, &terms);
        b.finish(vec![out])
    };
    (stage, terminal)
}

/// Double integrator with additive disturbance: x+ = A x + B u + p with
/// A = [[1, 1], [0, 1]], B = (0, 1)'. A is nonnegative, so the system is
/// monotone and its decomposition is the dynamics itself.
pub fn build_double_integrator() -> Model {
    let dynamics = {
        let mut b = ExprBuilder::new(Signature::xup(2, 1, 2));
        let x0 = b.sym(0, 0);
        let x1 = b.sym(0, 1);
        let u = b.sym(1, 0);
        let p0 = b.sym(2, 0);
        let p1 = b.sym(2, 1);
        let o0 = b.affine(0.0, &[(1.0, x0), (1.0, x1), (1.0, p0)]);
        let o1 = b.affine(0.0, &[(1.0, x1), (1.0, u), (1.0, p1)]);
        b.finish(vec![o0, o1])
    };
    let (stage_cost, terminal_cost) = quadratic_cost(&[1.0, 1.0], &[0.1], &[0.01]);
    Model {
        name: "double_integrator".into(),
        dynamics,
        ode: None,
        dt: 1.0,
        prediction_substeps: 1,
        x_box: Hyperrect::new(vec![-10.0, -10.0], vec![10.0, 10.0]).unwrap(),
        u_box: Hyperrect::new(vec![-2.0], vec![2.0]).unwrap(),
        p_box: Hyperrect::new(vec![-0.1, -0.1], vec![0.1, 0.1]).unwrap(),
        p_nominal: vec![0.0, 0.0],
        worst_case_corner: vec![0.1, 0.1],
        u_polytope: Vec::new(),
        x0: vec![2.0, 0.0],
        u_prev0: vec![0.0],
        stage_cost,
        terminal_cost,
    }
}

/// Scalar monotone system x+ = 0.8 x + u + p.
pub fn build_scalar_monotone() -> Model {
    let dynamics = {
        let mut b = ExprBuilder::new(Signature::xup(1, 1, 1));
        let x = b.sym(0, 0);
        let u = b.sym(1, 0);
        let p = b.sym(2, 0);
        let o = b.affine(0.0, &[(0.8, x), (1.0, u), (1.0, p)]);
        b.finish(vec![o])
    };
    let (stage_cost, terminal_cost) = quadratic_cost(&[1.0], &[0.1], &[0.01]);
    Model {
        name: "scalar_monotone".into(),
        dynamics,
        ode: None,
        dt: 1.0,
        prediction_substeps: 1,
        x_box: Hyperrect::new(vec![-5.0], vec![5.0]).unwrap(),
        u_box: Hyperrect::new(vec![-1.0], vec![1.0]).unwrap(),
        p_box: Hyperrect::new(vec![-0.1], vec![0.1]).unwrap(),
        p_nominal: vec![0.0],
        worst_case_corner: vec![0.1],
        u_polytope: Vec::new(),
        x0: vec![2.0],
        u_prev0: vec![0.0],
        stage_cost,
        terminal_cost,
    }
}

/// Plain origin-tracking quadratic cost with input-rate damping.
fn quadratic_cost(q: &[f64], r: &[f64], r_d: &[f64]) -> (ExprGraph, ExprGraph) {
    let (n_x, n_u) = (q.len(), r.len());
    let stage = {
        let mut b = ExprBuilder::new(Signature::new(&[("x", n_x), ("u", n_u), ("uprev", n_u)]));
        let mut terms = Vec::new();
        for j in 0..n_x {
            let x = b.sym(0, j);
            let sq = b.mul(x, x);
            terms.push((q[j], sq));
        }
        for j in 0..n_u {
            let u = b.sym(1, j);
            let sq = b.mul(u, u);
            terms.push((r[j], sq));
            let up = b.sym(2, j);
            let d = b.affine(0.0, &[(1.0, u), (-1.0, up)]);
            let dsq = b.mul(d, d);
            terms.push((r_d[j], dsq));
        }
        let out = b.affine(0.0, &terms);
        b.finish(vec![out])
    };
    let terminal = {
        let mut b = ExprBuilder::new(Signature::new(&[("x", n_x)]));
        let mut terms = Vec::new();
        for j in 0..n_x {
            let x = b.sym(0, j);
            let sq = b.mul(x, x);
            terms.push((10.0 * q[j], sq));
        }
        let out = b.affine(0.0, &terms);
        b.finish(vec![out])
    };
    (stage, terminal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cstr_dimensions_match_reference() {
        let pr = CstrParams {
            substeps: 2,
            ..CstrParams::default()
        };
        let m5 = build_cstr(5, &pr);
        assert_eq!(m5.n_x(), 25);
        assert_eq!(m5.n_p(), 20);
        let m1 = build_cstr(1, &pr);
        assert_eq!(m1.n_x(), 5);
        assert_eq!(m1.n_p(), 4);
    }

    #[test]
    fn prediction_map_matches_numeric_heun() {
        // The factored graph must equal a plainly coded Heun integration of
        // the ODE graph, up to rounding.
        let pr = CstrParams {
            substeps: 4,
            ..CstrParams::default()
        };
        let m = build_cstr(2, &pr);
        let ode = m.ode.as_ref().unwrap();
        let x0 = vec![0.5, 0.8, 0.2, 0.02, 55.0, 0.3, 0.6, 0.4, 0.03, 58.0];
        let u = vec![1.0, 0.7, 65.0, 0.5, 0.8, 70.0];
        let p = m.p_nominal.clone();
        let pred = m.dynamics.eval(&[&x0, &u, &p]).unwrap();
        let mut x = x0.clone();
        let h = pr.dt / pr.substeps as f64;
        for _ in 0..pr.substeps {
            let k1 = ode.eval(&[&x, &u, &p]).unwrap();
            let x2: Vec<f64> = x.iter().zip(&k1).map(|(xi, k)| xi + h * k).collect();
            let k2 = ode.eval(&[&x2, &u, &p]).unwrap();
            x = x
                .iter()
                .zip(k1.iter().zip(&k2))
                .map(|(xi, (a, b))| xi + 0.5 * h * (a + b))
                .collect();
        }
        for (a, b) in pred.iter().zip(&x) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn cstr_synthesis_succeeds_on_operating_box() {
        for n_r in [1, 2] {
            let m = build_cstr(n_r, &CstrParams::default());
            let d = m
                .dynamics
                .synth_decomposition(&m.x_box.intervals(), &m.u_box.intervals(), &m.p_box.intervals())
                .unwrap();
            // Diagonal identity at an interior point.
            let x: Vec<f64> = m.x_box.center();
            let u: Vec<f64> = m.u_box.center();
            let p: Vec<f64> = m.p_box.center();
            let f = m.dynamics.eval(&[&x, &u, &p]).unwrap();
            let dv = d.eval(&x, &p, &u, &x, &p).unwrap();
            for (a, b) in f.iter().zip(&dv) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn scalar_model_is_monotone() {
        let m = build_scalar_monotone();
        let rep = m
            .dynamics
            .check_monotone(
                &m.x_box.intervals(),
                &m.u_box.intervals(),
                &m.p_box.intervals(),
            )
            .unwrap();
        assert!(rep.is_monotone());
    }

    #[test]
    fn cost_residual_vanishes_at_setpoint_with_full_feed() {
        // One reactor: feeds at the budget kill the budget terms; state at
        // x_set and u at u_set kill the tracking terms, leaving only the
        // pulls that u_set themselves violate.
        let pr = CstrParams::default();
        let cost = CostParams::defaults(1, &pr);
        let (stage, terminal) = build_cstr_cost(1, &pr, &cost);
        let x = cost.x_set.clone();
        let u = vec![1.5, 1.5, 60.0];
        let v = stage.eval(&[&x, &u, &u]).unwrap()[0];
        // Remaining terms: R pull of the feeds toward u_set = 0.
        let expected = 0.01 * 1.5f64.powi(2) * 2.0;
        assert!((v - expected).abs() <= 1e-12, "{v} vs {expected}");
        let t = terminal.eval(&[&x]).unwrap()[0];
        assert_eq!(t, 0.0);
    }

    #[test]
    fn cost_gradient_matches_finite_differences() {
        let pr = CstrParams::default();
        let cost = CostParams::defaults(2, &pr);
        let (stage, _) = build_cstr_cost(2, &pr, &cost);
        let x = vec![0.4, 0.6, 3.0, 0.05, 62.0, 0.2, 0.5, 4.0, 0.06, 64.0];
        let u = vec![0.9, 0.4, 66.0, 0.3, 0.7, 58.0];
        let up = vec![0.8, 0.5, 60.0, 0.2, 0.6, 61.0];
        let grad = stage.differentiate(1).unwrap();
        let g = grad.eval(&[&x, &u, &up]).unwrap();
        let eps = 1e-6;
        for j in 0..u.len() {
            let mut up_ = u.clone();
            up_[j] += eps;
            let mut dn = u.clone();
            dn[j] -= eps;
            let fd = (stage.eval(&[&x, &up_, &up]).unwrap()[0]
                - stage.eval(&[&x, &dn, &up]).unwrap()[0])
                / (2.0 * eps);
            assert!((g[j] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "{} vs {fd}", g[j]);
        }
    }
}
