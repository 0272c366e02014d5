//! Automatic synthesis of decomposition functions.
//!
//! A decomposition function `d(x1, p1, u, x2, p2)` reproduces the dynamics on
//! the diagonal, increases in the first state/parameter copy and decreases in
//! the second. Evaluating it at swapped box corners bounds the one-step
//! reachable set. Synthesis rewrites the dynamics graph term by term: sums
//! split elementwise, products and quotients split by the certified sign of
//! each factor, monotone elementary functions pass through. A sign-indefinite
//! factor aborts synthesis instead of inserting nonsmooth min/max nodes, so
//! every NLP-facing graph stays C^1; callers may shrink the box or supply a
//! manual decomposition instead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ExprBuilder, ExprGraph, GraphError, Interval, NodeId, Op, Sign, Signature};

/// Which rewrite produced an output of a [`DecompGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewriteRule {
    /// The system is monotone; the decomposition is the dynamics itself.
    MonotoneIdentity,
    /// Term-wise sum/product relaxation with interval sign certification.
    TermwiseRelaxation,
    /// Supplied by the caller.
    Manual,
}

/// Decomposition function stored as one graph over doubled symbol groups
/// `(x1, p1, u, x2, p2)`. The lower reachable-set corner is the evaluation at
/// `(x-, p-, u, x+, p+)`; the upper corner swaps the copies.
#[derive(Debug, Clone)]
pub struct DecompGraph {
    graph: ExprGraph,
    rules: Vec<RewriteRule>,
}

impl DecompGraph {
    /// Wraps a hand-written decomposition graph. The signature must follow
    /// the `(x1, p1, u, x2, p2)` convention with matching copy sizes and one
    /// output per state.
    pub fn from_graph(graph: ExprGraph) -> Result<Self, GraphError> {
        let sig = graph.signature();
        let names: Vec<&str> = (0..sig.n_groups()).map(|g| sig.group_name(g)).collect();
        if names != ["x1", "p1", "u", "x2", "p2"] {
            return Err(GraphError::ShapeMismatch(format!(
                "decomposition signature must be (x1, p1, u, x2, p2), got ({})",
                sig
            )));
        }
        if sig.group_size(0) != sig.group_size(3) || sig.group_size(1) != sig.group_size(4) {
            return Err(GraphError::ShapeMismatch(
                "state/parameter copies must have equal sizes".into(),
            ));
        }
        if graph.n_outputs() != sig.group_size(0) {
            return Err(GraphError::ShapeMismatch(format!(
                "decomposition must have {} outputs, got {}",
                sig.group_size(0),
                graph.n_outputs()
            )));
        }
        let rules = vec![RewriteRule::Manual; graph.n_outputs()];
        Ok(DecompGraph { graph, rules })
    }

    pub fn graph(&self) -> &ExprGraph {
        &self.graph
    }

    pub fn rules(&self) -> &[RewriteRule] {
        &self.rules
    }

    pub fn n_x(&self) -> usize {
        self.graph.signature().group_size(0)
    }

    pub fn n_u(&self) -> usize {
        self.graph.signature().group_size(2)
    }

    pub fn n_p(&self) -> usize {
        self.graph.signature().group_size(1)
    }

    pub fn eval(
        &self,
        x1: &[f64],
        p1: &[f64],
        u: &[f64],
        x2: &[f64],
        p2: &[f64],
    ) -> Result<Vec<f64>, GraphError> {
        self.graph.eval(&[x1, p1, u, x2, p2])
    }

    /// Samples the three defining conditions of a decomposition function over
    /// the given boxes. Deterministic for a fixed seed.
    pub fn validate_by_sampling(
        &self,
        f: &ExprGraph,
        box_x: &[Interval],
        box_u: &[Interval],
        box_p: &[Interval],
        n_samples: usize,
        seed: u64,
        tol: f64,
    ) -> Result<DecompValidation, GraphError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rep = DecompValidation {
            samples: n_samples,
            ..Default::default()
        };
        let sample = |rng: &mut ChaCha8Rng, b: &[Interval]| -> Vec<f64> {
            b.iter()
                .map(|iv| {
                    if iv.hi > iv.lo {
                        rng.gen_range(iv.lo..=iv.hi)
                    } else {
                        iv.lo
                    }
                })
                .collect()
        };
        for _ in 0..n_samples {
            let x = sample(&mut rng, box_x);
            let u = sample(&mut rng, box_u);
            let p = sample(&mut rng, box_p);

            // Condition 1: identity on the diagonal.
            let fv = f.eval(&[&x, &u, &p])?;
            let dv = self.eval(&x, &p, &u, &x, &p)?;
            for (a, b) in fv.iter().zip(dv.iter()) {
                let err = (a - b).abs() / a.abs().max(1.0);
                rep.max_identity_err = rep.max_identity_err.max(err);
                if err > tol {
                    rep.identity_violations += 1;
                }
            }

            // Condition 2: monotone increasing in the first copy.
            let xa = sample(&mut rng, box_x);
            let xb = sample(&mut rng, box_x);
            let pa = sample(&mut rng, box_p);
            let pb = sample(&mut rng, box_p);
            let x_lo: Vec<f64> = xa.iter().zip(&xb).map(|(a, b)| a.min(*b)).collect();
            let x_hi: Vec<f64> = xa.iter().zip(&xb).map(|(a, b)| a.max(*b)).collect();
            let p_lo: Vec<f64> = pa.iter().zip(&pb).map(|(a, b)| a.min(*b)).collect();
            let p_hi: Vec<f64> = pa.iter().zip(&pb).map(|(a, b)| a.max(*b)).collect();
            let d_lo = self.eval(&x_lo, &p_lo, &u, &x, &p)?;
            let d_hi = self.eval(&x_hi, &p_hi, &u, &x, &p)?;
            if d_lo.iter().zip(&d_hi).any(|(l, h)| *l > h + tol) {
                rep.increasing_violations += 1;
            }

            // Condition 3: monotone decreasing in the second copy.
            let d_fst = self.eval(&x, &p, &u, &x_lo, &p_lo)?;
            let d_snd = self.eval(&x, &p, &u, &x_hi, &p_hi)?;
            if d_snd.iter().zip(&d_fst).any(|(s, f)| *s > f + tol) {
                rep.decreasing_violations += 1;
            }
        }
        Ok(rep)
    }
}

/// Result of sampling-based validation of the decomposition conditions.
#[derive(Debug, Clone, Default)]
pub struct DecompValidation {
    pub samples: usize,
    pub identity_violations: usize,
    pub increasing_violations: usize,
    pub decreasing_violations: usize,
    pub max_identity_err: f64,
}

impl DecompValidation {
    pub fn passed(&self) -> bool {
        self.identity_violations == 0
            && self.increasing_violations == 0
            && self.decreasing_violations == 0
    }
}

impl ExprGraph {
    /// Synthesizes a decomposition function for a dynamics graph `(x, u, p)`
    /// over the given boxes.
    ///
    /// If the Jacobian sign test certifies full monotonicity, the result is
    /// the dynamics itself evaluated on the first copy only. Otherwise the
    /// graph is rewritten recursively; a product or quotient factor whose
    /// sign over the box cannot be certified aborts with a synthesis-failure
    /// error naming the node.
    pub fn synth_decomposition(
        &self,
        box_x: &[Interval],
        box_u: &[Interval],
        box_p: &[Interval],
    ) -> Result<DecompGraph, GraphError> {
        let n_x = self.signature().group_size(0);
        let n_u = self.signature().group_size(1);
        let n_p = self.signature().group_size(2);
        if self.n_outputs() != n_x {
            return Err(GraphError::ShapeMismatch(format!(
                "dynamics must have {} outputs, got {}",
                n_x,
                self.n_outputs()
            )));
        }

        if let Ok(report) = self.check_monotone(box_x, box_u, box_p) {
            if report.is_monotone() {
                let mut b = ExprBuilder::new(Signature::decomp(n_x, n_u, n_p));
                let x1: Vec<NodeId> = (0..n_x).map(|i| b.sym(0, i)).collect();
                let p1: Vec<NodeId> = (0..n_p).map(|i| b.sym(1, i)).collect();
                let u: Vec<NodeId> = (0..n_u).map(|i| b.sym(2, i)).collect();
                let outs = b.inline(self, &[x1, u, p1]);
                let graph = b.finish(outs);
                return Ok(DecompGraph {
                    graph,
                    rules: vec![RewriteRule::MonotoneIdentity; n_x],
                });
            }
        }

        let enclosures = self.interval_values(&[box_x, box_u, box_p])?;
        let mut b = ExprBuilder::new(Signature::decomp(n_x, n_u, n_p));
        // Per original node: (lower-slot expression, upper-slot expression).
        let mut pairs: Vec<(NodeId, NodeId)> = Vec::with_capacity(self.n_nodes());
        for (i, op) in self.nodes().iter().enumerate() {
            let pair = match *op {
                Op::Const(c) => {
                    let n = b.constant(c);
                    (n, n)
                }
                Op::Sym(0, j) => (b.sym(0, j), b.sym(3, j)), // x -> (x1, x2)
                Op::Sym(1, j) => {
                    let n = b.sym(2, j); // u is shared
                    (n, n)
                }
                Op::Sym(2, j) => (b.sym(1, j), b.sym(4, j)), // p -> (p1, p2)
                Op::Sym(_, _) => unreachable!("dynamics signature has three groups"),
                Op::Add(x, y) => {
                    let lo = b.add(pairs[x].0, pairs[y].0);
                    let hi = b.add(pairs[x].1, pairs[y].1);
                    (lo, hi)
                }
                Op::Sub(x, y) => {
                    let lo = b.sub(pairs[x].0, pairs[y].1);
                    let hi = b.sub(pairs[x].1, pairs[y].0);
                    (lo, hi)
                }
                Op::Neg(x) => {
                    let lo = b.neg(pairs[x].1);
                    let hi = b.neg(pairs[x].0);
                    (lo, hi)
                }
                Op::Mul(x, y) => {
                    rewrite_mul(&mut b, i, pairs[x], pairs[y], enclosures[x], enclosures[y])?
                }
                Op::Div(x, y) => {
                    rewrite_div(&mut b, i, pairs[x], pairs[y], enclosures[x], enclosures[y])?
                }
                Op::Exp(x) => {
                    let lo = b.exp(pairs[x].0);
                    let hi = b.exp(pairs[x].1);
                    (lo, hi)
                }
                Op::Pow(x, n) => rewrite_pow(&mut b, i, pairs[x], enclosures[x], n)?,
                Op::Min2(_, _) | Op::Max2(_, _) => {
                    return Err(GraphError::SynthesisFailure {
                        node: i,
                        op: op.name().into(),
                        detail: "nonsmooth nodes are not allowed in decompositions".into(),
                    })
                }
            };
            pairs.push(pair);
        }
        let outs: Vec<NodeId> = self.outputs().iter().map(|&o| pairs[o].0).collect();
        let graph = b.finish(outs);
        Ok(DecompGraph {
            graph,
            rules: vec![RewriteRule::TermwiseRelaxation; n_x],
        })
    }
}

/// A pair with identical lower/upper expressions carries no copied symbols,
/// so it behaves as a constant factor for the rewrite.
fn copy_free(p: (NodeId, NodeId)) -> bool {
    p.0 == p.1
}

fn sign_failure(node: NodeId, op: &str, which: &str, enc: Interval) -> GraphError {
    GraphError::SynthesisFailure {
        node,
        op: op.into(),
        detail: format!(
            "{which} factor is sign-indefinite over the box (enclosure [{}, {}]); \
             shrink the box or supply a manual decomposition",
            enc.lo, enc.hi
        ),
    }
}

fn rewrite_mul(
    b: &mut ExprBuilder,
    node: NodeId,
    a: (NodeId, NodeId),
    c: (NodeId, NodeId),
    ia: Interval,
    ic: Interval,
) -> Result<(NodeId, NodeId), GraphError> {
    if copy_free(a) && copy_free(c) {
        let m = b.mul(a.0, c.0);
        return Ok((m, m));
    }
    if copy_free(a) {
        return match ia.sign() {
            Sign::NonNeg => Ok((b.mul(a.0, c.0), b.mul(a.0, c.1))),
            Sign::NonPos => Ok((b.mul(a.0, c.1), b.mul(a.0, c.0))),
            Sign::Mixed => Err(sign_failure(node, "mul", "left", ia)),
        };
    }
    if copy_free(c) {
        return match ic.sign() {
            Sign::NonNeg => Ok((b.mul(a.0, c.0), b.mul(a.1, c.0))),
            Sign::NonPos => Ok((b.mul(a.1, c.0), b.mul(a.0, c.0))),
            Sign::Mixed => Err(sign_failure(node, "mul", "right", ic)),
        };
    }
    match (ia.sign(), ic.sign()) {
        (Sign::NonNeg, Sign::NonNeg) => Ok((b.mul(a.0, c.0), b.mul(a.1, c.1))),
        (Sign::NonNeg, Sign::NonPos) => Ok((b.mul(a.1, c.0), b.mul(a.0, c.1))),
        (Sign::NonPos, Sign::NonNeg) => Ok((b.mul(a.0, c.1), b.mul(a.1, c.0))),
        (Sign::NonPos, Sign::NonPos) => Ok((b.mul(a.1, c.1), b.mul(a.0, c.0))),
        (Sign::Mixed, _) => Err(sign_failure(node, "mul", "left", ia)),
        (_, Sign::Mixed) => Err(sign_failure(node, "mul", "right", ic)),
    }
}

fn rewrite_div(
    b: &mut ExprBuilder,
    node: NodeId,
    a: (NodeId, NodeId),
    c: (NodeId, NodeId),
    ia: Interval,
    ic: Interval,
) -> Result<(NodeId, NodeId), GraphError> {
    if ic.contains_zero() {
        return Err(GraphError::DomainViolation {
            node,
            op: "div".into(),
            detail: format!(
                "denominator enclosure [{}, {}] contains zero",
                ic.lo, ic.hi
            ),
        });
    }
    if copy_free(a) && copy_free(c) {
        let d = b.div(a.0, c.0);
        return Ok((d, d));
    }
    if copy_free(c) {
        // Constant-like denominator: only its sign decides the swap.
        return match ic.sign() {
            Sign::NonNeg => Ok((b.div(a.0, c.0), b.div(a.1, c.0))),
            _ => Ok((b.div(a.1, c.0), b.div(a.0, c.0))),
        };
    }
    let pos = ic.sign() == Sign::NonNeg;
    if copy_free(a) {
        // Constant-like numerator over a copied denominator.
        return match (ia.sign(), pos) {
            (Sign::NonNeg, true) => Ok((b.div(a.0, c.1), b.div(a.0, c.0))),
            (Sign::NonPos, true) => Ok((b.div(a.0, c.0), b.div(a.0, c.1))),
            (Sign::NonNeg, false) => Ok((b.div(a.0, c.1), b.div(a.0, c.0))),
            (Sign::NonPos, false) => Ok((b.div(a.0, c.0), b.div(a.0, c.1))),
            (Sign::Mixed, _) => Err(sign_failure(node, "div", "numerator", ia)),
        };
    }
    match (ia.sign(), pos) {
        (Sign::NonNeg, true) => Ok((b.div(a.0, c.1), b.div(a.1, c.0))),
        (Sign::NonPos, true) => Ok((b.div(a.0, c.0), b.div(a.1, c.1))),
        (Sign::NonNeg, false) => Ok((b.div(a.1, c.1), b.div(a.0, c.0))),
        (Sign::NonPos, false) => Ok((b.div(a.1, c.0), b.div(a.0, c.1))),
        (Sign::Mixed, _) => Err(sign_failure(node, "div", "numerator", ia)),
    }
}

fn rewrite_pow(
    b: &mut ExprBuilder,
    node: NodeId,
    a: (NodeId, NodeId),
    ia: Interval,
    n: u32,
) -> Result<(NodeId, NodeId), GraphError> {
    if copy_free(a) {
        let p = b.powi(a.0, n);
        return Ok((p, p));
    }
    if n % 2 == 1 {
        return Ok((b.powi(a.0, n), b.powi(a.1, n)));
    }
    match ia.sign() {
        Sign::NonNeg => Ok((b.powi(a.0, n), b.powi(a.1, n))),
        Sign::NonPos => Ok((b.powi(a.1, n), b.powi(a.0, n))),
        Sign::Mixed => Err(sign_failure(node, "pow", "base", ia)),
    }
}

/// Brute-force grid extremum of the dynamics over the box spanned by two
/// `(x, p)` argument tuples; the tightest-decomposition reference. The grid
/// optimum is an inner approximation of the exact extremum; this is a test
/// oracle, never part of any controller path.
pub fn tight_decomposition_oracle(
    f: &ExprGraph,
    u: &[f64],
    x1: &[f64],
    p1: &[f64],
    x2: &[f64],
    p2: &[f64],
    grid_pts: usize,
) -> Result<Vec<f64>, GraphError> {
    let leq = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x <= y);
    let first_leq = leq(x1, x2) && leq(p1, p2);
    let second_leq = leq(x2, x1) && leq(p2, p1);
    let minimize = if first_leq {
        true
    } else if second_leq {
        false
    } else {
        return Err(GraphError::ShapeMismatch(
            "argument tuples are not elementwise ordered in either direction".into(),
        ));
    };
    if grid_pts < 2 {
        return Err(GraphError::ShapeMismatch(
            "grid requires at least 2 points per dimension".into(),
        ));
    }
    let dims = x1.len() + p1.len();
    // Dimensions with zero width need a single grid point.
    let mut lows = Vec::with_capacity(dims);
    let mut steps = Vec::with_capacity(dims);
    let mut counts = Vec::with_capacity(dims);
    let mut total: usize = 1;
    for (a, b) in x1.iter().zip(x2).chain(p1.iter().zip(p2)) {
        let (lo, hi) = (a.min(*b), a.max(*b));
        let n = if hi > lo { grid_pts } else { 1 };
        lows.push(lo);
        steps.push(if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 });
        counts.push(n);
        total = total.saturating_mul(n);
        if total > 1_000_000 {
            return Err(GraphError::ShapeMismatch(format!(
                "grid size exceeds the 1e6-point cap ({dims} dimensions at {grid_pts} points)"
            )));
        }
    }

    let n_x = x1.len();
    let mut best = vec![if minimize { f64::INFINITY } else { f64::NEG_INFINITY }; f.n_outputs()];
    let mut idx = vec![0usize; dims];
    let mut x = vec![0.0; n_x];
    let mut p = vec![0.0; p1.len()];
    loop {
        for d in 0..dims {
            let v = lows[d] + steps[d] * idx[d] as f64;
            if d < n_x {
                x[d] = v;
            } else {
                p[d - n_x] = v;
            }
        }
        let fv = f.eval(&[&x, u, &p])?;
        for (bst, v) in best.iter_mut().zip(fv) {
            *bst = if minimize { bst.min(v) } else { bst.max(v) };
        }
        // Odometer increment over the multi-index.
        let mut d = 0;
        loop {
            if d == dims {
                return Ok(best);
            }
            idx[d] += 1;
            if idx[d] < counts[d] {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprgraph::{ExprBuilder, Signature};

    fn ivl(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi)
    }

    /// f(x,p) = x - p over unit boxes.
    fn sub_model() -> ExprGraph {
        let mut b = ExprBuilder::new(Signature::xup(1, 0, 1));
        let x = b.sym(0, 0);
        let p = b.sym(2, 0);
        let out = b.sub(x, p);
        b.finish(vec![out])
    }

    #[test]
    fn sign_split_of_difference() {
        let f = sub_model();
        let d = f
            .synth_decomposition(&[ivl(0.0, 1.0)], &[], &[ivl(0.0, 1.0)])
            .unwrap();
        // d = x1 - p2; on the diagonal it is exactly f.
        let v = d.eval(&[0.7], &[0.2], &[], &[0.7], &[0.2]).unwrap();
        assert_eq!(v[0], 0.7 - 0.2);
        let lo = d.eval(&[0.0], &[0.0], &[], &[1.0], &[1.0]).unwrap();
        assert_eq!(lo[0], -1.0);
    }

    #[test]
    fn monotone_system_keeps_its_own_dynamics() {
        // f(x,p) = x + p is monotone: second-copy arguments must be unused.
        let mut b = ExprBuilder::new(Signature::xup(1, 0, 1));
        let x = b.sym(0, 0);
        let p = b.sym(2, 0);
        let out = b.add(x, p);
        let f = b.finish(vec![out]);
        let d = f
            .synth_decomposition(&[ivl(0.0, 1.0)], &[], &[ivl(0.0, 1.0)])
            .unwrap();
        assert_eq!(d.rules()[0], RewriteRule::MonotoneIdentity);
        let a = d.eval(&[0.4], &[0.1], &[], &[0.0], &[0.0]).unwrap();
        let b2 = d.eval(&[0.4], &[0.1], &[], &[9.0], &[9.0]).unwrap();
        assert_eq!(a, b2);
    }

    #[test]
    fn product_lower_bound_matches_grid_oracle() {
        // f(x1,x2) = (x1*x2, x2) on [1,2]^2: first lower corner equals 1.
        let mut b = ExprBuilder::new(Signature::xup(2, 0, 0));
        let x0 = b.sym(0, 0);
        let x1 = b.sym(0, 1);
        let out = b.mul(x0, x1);
        let f = b.finish(vec![out, x1]);
        let d = f
            .synth_decomposition(&[ivl(1.0, 2.0), ivl(1.0, 2.0)], &[], &[])
            .unwrap();
        let lo = d.eval(&[1.0, 1.0], &[], &[], &[2.0, 2.0], &[]).unwrap();
        let oracle =
            tight_decomposition_oracle(&f, &[], &[1.0, 1.0], &[], &[2.0, 2.0], &[], 100).unwrap();
        assert_eq!(lo[0], 1.0);
        assert!((lo[0] - oracle[0]).abs() <= 1e-12);
    }

    #[test]
    fn mixed_sign_factor_fails_with_node() {
        // f(x1,x2) = (x1*x2, x2) over a box straddling zero.
        let mut b = ExprBuilder::new(Signature::xup(2, 0, 0));
        let x0 = b.sym(0, 0);
        let x1 = b.sym(0, 1);
        let out = b.mul(x0, x1);
        let f = b.finish(vec![out, x1]);
        let err = f
            .synth_decomposition(&[ivl(-1.0, 1.0), ivl(-1.0, 1.0)], &[], &[])
            .unwrap_err();
        assert!(matches!(err, GraphError::SynthesisFailure { .. }));
    }

    #[test]
    fn oracle_analytic_extrema_of_square() {
        // f(x) = x^2 over [-1, 2]: lower 0 attained interior, upper 4.
        let mut b = ExprBuilder::new(Signature::xup(1, 0, 0));
        let x = b.sym(0, 0);
        let out = b.powi(x, 2);
        let f = b.finish(vec![out]);
        let lo = tight_decomposition_oracle(&f, &[], &[-1.0], &[], &[2.0], &[], 301).unwrap();
        let hi = tight_decomposition_oracle(&f, &[], &[2.0], &[], &[-1.0], &[], 301).unwrap();
        assert!(lo[0].abs() <= 1e-4);
        assert!((hi[0] - 4.0).abs() <= 1e-12);
    }

    #[test]
    fn oracle_monotone_corner() {
        let f = {
            let mut b = ExprBuilder::new(Signature::xup(1, 0, 1));
            let x = b.sym(0, 0);
            let p = b.sym(2, 0);
            let out = b.add(x, p);
            b.finish(vec![out])
        };
        let lo = tight_decomposition_oracle(&f, &[], &[0.2], &[0.1], &[0.9], &[0.8], 10).unwrap();
        assert_eq!(lo[0], 0.2 + 0.1);
    }

    #[test]
    fn oracle_rejects_unordered_arguments() {
        let f = sub_model();
        let err = tight_decomposition_oracle(&f, &[], &[0.0], &[1.0], &[1.0], &[0.0], 10);
        assert!(err.is_err());
    }

    #[test]
    fn validation_flags_a_corrupted_decomposition() {
        // d = x2 - p1 violates both slope conditions for f = x - p.
        let f = sub_model();
        let mut b = ExprBuilder::new(Signature::decomp(1, 0, 1));
        let x2 = b.sym(3, 0);
        let p1 = b.sym(1, 0);
        let out = b.sub(x2, p1);
        let bad = DecompGraph::from_graph(b.finish(vec![out])).unwrap();
        let rep = bad
            .validate_by_sampling(&f, &[ivl(0.0, 1.0)], &[], &[ivl(0.0, 1.0)], 500, 7, 1e-10)
            .unwrap();
        assert!(!rep.passed());
        assert!(rep.increasing_violations > 0);
    }
}
