//! Interval evaluation and Jacobian sign certification.
//!
//! The natural interval extension is used both to certify the sign of
//! product/quotient factors during decomposition synthesis and to check
//! monotonicity over a box via the symbolic Jacobian. No outward rounding is
//! performed; verdicts feed `mixed`-is-safe logic, so enclosure slack only
//! makes the analysis more conservative.

use super::{ExprGraph, GraphError, Op};

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval bounds out of order: [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn contains_zero(&self) -> bool {
        self.lo <= 0.0 && self.hi >= 0.0
    }

    fn add(self, o: Self) -> Self {
        Interval::new(self.lo + o.lo, self.hi + o.hi)
    }

    fn sub(self, o: Self) -> Self {
        Interval::new(self.lo - o.hi, self.hi - o.lo)
    }

    fn neg(self) -> Self {
        Interval::new(-self.hi, -self.lo)
    }

    fn mul(self, o: Self) -> Self {
        let c = [
            self.lo * o.lo,
            self.lo * o.hi,
            self.hi * o.lo,
            self.hi * o.hi,
        ];
        let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Interval::new(lo, hi)
    }

    /// Division; caller must ensure `o` excludes zero.
    fn div(self, o: Self) -> Self {
        let r = Interval::new((1.0 / o.hi).min(1.0 / o.lo), (1.0 / o.hi).max(1.0 / o.lo));
        self.mul(r)
    }

    fn exp(self) -> Self {
        Interval::new(self.lo.exp(), self.hi.exp())
    }

    fn powi(self, n: u32) -> Self {
        if n % 2 == 1 {
            Interval::new(self.lo.powi(n as i32), self.hi.powi(n as i32))
        } else if self.lo >= 0.0 {
            Interval::new(self.lo.powi(n as i32), self.hi.powi(n as i32))
        } else if self.hi <= 0.0 {
            Interval::new(self.hi.powi(n as i32), self.lo.powi(n as i32))
        } else {
            Interval::new(0.0, self.lo.powi(n as i32).max(self.hi.powi(n as i32)))
        }
    }

    fn min2(self, o: Self) -> Self {
        Interval::new(self.lo.min(o.lo), self.hi.min(o.hi))
    }

    fn max2(self, o: Self) -> Self {
        Interval::new(self.lo.max(o.lo), self.hi.max(o.hi))
    }

    pub fn sign(&self) -> Sign {
        if self.lo >= 0.0 {
            Sign::NonNeg
        } else if self.hi <= 0.0 {
            Sign::NonPos
        } else {
            Sign::Mixed
        }
    }
}

/// Certified sign of a quantity over a box. `Mixed` means the interval
/// enclosure does not exclude either sign, which is always a safe verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    NonNeg,
    NonPos,
    Mixed,
}

/// Per-(output, symbol) sensitivity signs over a given box.
#[derive(Debug, Clone)]
pub struct SignReport {
    pub n_outputs: usize,
    pub n_x: usize,
    pub n_p: usize,
    /// Row-major `n_outputs x n_x`.
    pub wrt_x: Vec<Sign>,
    /// Row-major `n_outputs x n_p`.
    pub wrt_p: Vec<Sign>,
}

impl SignReport {
    pub fn x_sign(&self, out: usize, j: usize) -> Sign {
        self.wrt_x[out * self.n_x + j]
    }

    pub fn p_sign(&self, out: usize, j: usize) -> Sign {
        self.wrt_p[out * self.n_p + j]
    }

    /// A system is monotone iff every state and parameter sensitivity is
    /// certified nonnegative.
    pub fn is_monotone(&self) -> bool {
        self.wrt_x.iter().chain(self.wrt_p.iter()).all(|&s| s == Sign::NonNeg)
    }
}

impl ExprGraph {
    /// Interval values of every node over per-group boxes.
    pub(crate) fn interval_values(
        &self,
        boxes: &[&[Interval]],
    ) -> Result<Vec<Interval>, GraphError> {
        if boxes.len() != self.signature().n_groups() {
            return Err(GraphError::ShapeMismatch(format!(
                "got {} box groups, signature is {}",
                boxes.len(),
                self.signature()
            )));
        }
        let mut vals: Vec<Interval> = Vec::with_capacity(self.nodes().len());
        for (i, op) in self.nodes().iter().enumerate() {
            let v = match *op {
                Op::Const(c) => Interval::point(c),
                Op::Sym(g, j) => boxes[g][j],
                Op::Add(a, b) => vals[a].add(vals[b]),
                Op::Sub(a, b) => vals[a].sub(vals[b]),
                Op::Neg(a) => vals[a].neg(),
                Op::Mul(a, b) => vals[a].mul(vals[b]),
                Op::Div(a, b) => {
                    if vals[b].contains_zero() {
                        return Err(GraphError::DomainViolation {
                            node: i,
                            op: "div".into(),
                            detail: format!(
                                "denominator enclosure [{}, {}] contains zero",
                                vals[b].lo, vals[b].hi
                            ),
                        });
                    }
                    vals[a].div(vals[b])
                }
                Op::Exp(a) => vals[a].exp(),
                Op::Pow(a, n) => vals[a].powi(n),
                Op::Min2(a, b) => vals[a].min2(vals[b]),
                Op::Max2(a, b) => vals[a].max2(vals[b]),
            };
            vals.push(v);
        }
        Ok(vals)
    }

    /// Interval enclosure of the outputs over per-group boxes.
    pub fn eval_interval(&self, boxes: &[&[Interval]]) -> Result<Vec<Interval>, GraphError> {
        let vals = self.interval_values(boxes)?;
        Ok(self.outputs().iter().map(|&o| vals[o]).collect())
    }

    /// Certifies Jacobian signs of a dynamics graph `(x, u, p)` over the
    /// given boxes by interval-evaluating the symbolic Jacobian.
    pub fn check_monotone(
        &self,
        box_x: &[Interval],
        box_u: &[Interval],
        box_p: &[Interval],
    ) -> Result<SignReport, GraphError> {
        let n_out = self.n_outputs();
        let n_x = self.signature().group_size(0);
        let n_p = self.signature().group_size(2);
        let jx = self.differentiate(0)?;
        let jp = self.differentiate(2)?;
        let boxes: &[&[Interval]] = &[box_x, box_u, box_p];
        let wrt_x = jx
            .eval_interval(boxes)?
            .iter()
            .map(|iv| iv.sign())
            .collect();
        let wrt_p = jp
            .eval_interval(boxes)?
            .iter()
            .map(|iv| iv.sign())
            .collect();
        Ok(SignReport {
            n_outputs: n_out,
            n_x,
            n_p,
            wrt_x,
            wrt_p,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprgraph::{ExprBuilder, Signature};

    fn ivl(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi)
    }

    #[test]
    fn sum_is_monotone() {
        // f(x,p) = x + p
        let mut b = ExprBuilder::new(Signature::xup(1, 0, 1));
        let x = b.sym(0, 0);
        let p = b.sym(2, 0);
        let out = b.add(x, p);
        let g = b.finish(vec![out]);
        let r = g
            .check_monotone(&[ivl(-5.0, 5.0)], &[], &[ivl(-1.0, 1.0)])
            .unwrap();
        assert!(r.is_monotone());
        assert_eq!(r.x_sign(0, 0), Sign::NonNeg);
        assert_eq!(r.p_sign(0, 0), Sign::NonNeg);
    }

    #[test]
    fn difference_is_not_monotone() {
        // f(x,p) = x - p
        let mut b = ExprBuilder::new(Signature::xup(1, 0, 1));
        let x = b.sym(0, 0);
        let p = b.sym(2, 0);
        let out = b.sub(x, p);
        let g = b.finish(vec![out]);
        let r = g
            .check_monotone(&[ivl(0.0, 1.0)], &[], &[ivl(0.0, 1.0)])
            .unwrap();
        assert!(!r.is_monotone());
        assert_eq!(r.x_sign(0, 0), Sign::NonNeg);
        assert_eq!(r.p_sign(0, 0), Sign::NonPos);
    }

    #[test]
    fn even_power_over_mixed_box() {
        let mut b = ExprBuilder::new(Signature::xup(1, 0, 0));
        let x = b.sym(0, 0);
        let out = b.powi(x, 2);
        let g = b.finish(vec![out]);
        let iv = g.eval_interval(&[&[ivl(-1.0, 2.0)], &[], &[]]).unwrap();
        assert_eq!(iv[0], ivl(0.0, 4.0));
    }

    #[test]
    fn division_through_zero_fails() {
        let mut b = ExprBuilder::new(Signature::xup(1, 0, 0));
        let x = b.sym(0, 0);
        let one = b.constant(1.0);
        let out = b.div(one, x);
        let g = b.finish(vec![out]);
        assert!(g.eval_interval(&[&[ivl(-1.0, 1.0)], &[], &[]]).is_err());
    }
}
