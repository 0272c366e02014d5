//! Symbolic differentiation of expression graphs.

use super::{ExprBuilder, ExprGraph, GraphError, GroupId, NodeId, Op, Substitution};

/// Union of two sorted index lists.
fn merge_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

impl ExprGraph {
    /// Builds the graph of the Jacobian block `d outputs / d group`,
    /// laid out row-major (`n_outputs x group_size`). Entries are symbolically
    /// exact; zeros fold to constants.
    pub fn differentiate(&self, wrt: GroupId) -> Result<ExprGraph, GraphError> {
        let n_wrt = self.signature().group_size(wrt);
        let mut b = ExprBuilder::new(self.signature().clone());
        let prim = b.absorb(self, &Substitution::identity());
        let n = self.nodes().len();

        // Dependence sets (sorted symbol indices) so each forward sweep only
        // visits nodes actually influenced by its symbol; most large graphs
        // are block sparse and this keeps the cost near the Jacobian's
        // nonzero count instead of n_wrt * n_nodes.
        let mut deps: Vec<Vec<u32>> = Vec::with_capacity(n);
        for (i, op) in self.nodes().iter().enumerate() {
            let d = match *op {
                Op::Const(_) => Vec::new(),
                Op::Sym(g, k) => {
                    if g == wrt {
                        vec![k as u32]
                    } else {
                        Vec::new()
                    }
                }
                Op::Add(x, y)
                | Op::Sub(x, y)
                | Op::Mul(x, y)
                | Op::Div(x, y)
                | Op::Min2(x, y)
                | Op::Max2(x, y) => merge_sorted(&deps[x], &deps[y]),
                Op::Neg(x) | Op::Exp(x) | Op::Pow(x, _) => deps[x].clone(),
            };
            if matches!(op, Op::Min2(_, _) | Op::Max2(_, _)) && !d.is_empty() {
                return Err(GraphError::NonSmooth {
                    node: i,
                    op: op.name().into(),
                });
            }
            deps.push(d);
        }
        let mut occ: Vec<Vec<usize>> = vec![Vec::new(); n_wrt];
        for (i, d) in deps.iter().enumerate() {
            for &j in d {
                occ[j as usize].push(i);
            }
        }

        let zero = b.constant(0.0);
        let mut deriv: Vec<NodeId> = vec![zero; n];
        let mut jac: Vec<NodeId> = Vec::with_capacity(self.n_outputs() * n_wrt);
        let mut rows: Vec<Vec<NodeId>> = vec![vec![zero; n_wrt]; self.n_outputs()];
        for j in 0..n_wrt {
            // Occurrence lists are in topological (id) order by construction.
            for &i in &occ[j] {
                let d = match self.nodes()[i] {
                    Op::Const(_) => zero,
                    Op::Sym(g, k) => {
                        if g == wrt && k == j {
                            b.constant(1.0)
                        } else {
                            zero
                        }
                    }
                    Op::Add(x, y) => b.add(deriv[x], deriv[y]),
                    Op::Sub(x, y) => b.sub(deriv[x], deriv[y]),
                    Op::Neg(x) => b.neg(deriv[x]),
                    Op::Mul(x, y) => {
                        let t1 = b.mul(deriv[x], prim[y]);
                        let t2 = b.mul(prim[x], deriv[y]);
                        b.add(t1, t2)
                    }
                    Op::Div(x, y) => {
                        // (x' y - x y') / y^2
                        let t1 = b.mul(deriv[x], prim[y]);
                        let t2 = b.mul(prim[x], deriv[y]);
                        let num = b.sub(t1, t2);
                        let den = b.mul(prim[y], prim[y]);
                        b.div(num, den)
                    }
                    Op::Exp(x) => {
                        let e = b.exp(prim[x]);
                        b.mul(e, deriv[x])
                    }
                    Op::Pow(x, n) => {
                        let c = b.constant(n as f64);
                        let pw = if n >= 2 {
                            b.powi(prim[x], n - 1)
                        } else {
                            b.constant(1.0)
                        };
                        let t = b.mul(c, pw);
                        b.mul(t, deriv[x])
                    }
                    Op::Min2(_, _) | Op::Max2(_, _) => unreachable!("rejected above"),
                };
                deriv[i] = d;
            }
            for (k, &o) in self.outputs().iter().enumerate() {
                rows[k][j] = deriv[o];
            }
            for &i in &occ[j] {
                deriv[i] = zero;
            }
        }
        for row in rows {
            jac.extend(row);
        }
        Ok(b.finish(jac))
    }
}

#[cfg(test)]
mod tests {
    use crate::exprgraph::{ExprBuilder, Signature};

    #[test]
    fn square_derivative() {
        // f(x) = x^2, derivative at x=3 is 6
        let mut b = ExprBuilder::new(Signature::xup(1, 0, 0));
        let x = b.sym(0, 0);
        let out = b.powi(x, 2);
        let g = b.finish(vec![out]);
        let dg = g.differentiate(0).unwrap();
        assert_eq!(dg.eval(&[&[3.0], &[], &[]]).unwrap()[0], 6.0);
    }

    #[test]
    fn product_partial() {
        // f(x,p) = x*p, df/dx at (2,5) is 5
        let mut b = ExprBuilder::new(Signature::xup(1, 0, 1));
        let x = b.sym(0, 0);
        let p = b.sym(2, 0);
        let out = b.mul(x, p);
        let g = b.finish(vec![out]);
        let dg = g.differentiate(0).unwrap();
        assert_eq!(dg.eval(&[&[2.0], &[], &[5.0]]).unwrap()[0], 5.0);
    }

    #[test]
    fn jacobian_layout_row_major() {
        // f = (x0 + 2 x1, x0 * x1); J = [[1, 2], [x1, x0]]
        let mut b = ExprBuilder::new(Signature::xup(2, 0, 0));
        let x0 = b.sym(0, 0);
        let x1 = b.sym(0, 1);
        let two = b.constant(2.0);
        let t = b.mul(two, x1);
        let f0 = b.add(x0, t);
        let f1 = b.mul(x0, x1);
        let g = b.finish(vec![f0, f1]);
        let dg = g.differentiate(0).unwrap();
        let v = dg.eval(&[&[3.0, 4.0], &[], &[]]).unwrap();
        assert_eq!(v, vec![1.0, 2.0, 4.0, 3.0]);
    }

    #[test]
    fn quotient_and_exp_vs_finite_differences() {
        // f(x) = exp(x0 / (1 + x1^2)) checked against central differences
        let mut b = ExprBuilder::new(Signature::xup(2, 0, 0));
        let x0 = b.sym(0, 0);
        let x1 = b.sym(0, 1);
        let one = b.constant(1.0);
        let sq = b.powi(x1, 2);
        let den = b.add(one, sq);
        let q = b.div(x0, den);
        let out = b.exp(q);
        let g = b.finish(vec![out]);
        let dg = g.differentiate(0).unwrap();

        let x = [0.7, -0.3];
        let jac = dg.eval(&[&x, &[], &[]]).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fp = g.eval(&[&xp, &[], &[]]).unwrap()[0];
            let fm = g.eval(&[&xm, &[], &[]]).unwrap()[0];
            let fd = (fp - fm) / (2.0 * h);
            assert!((jac[j] - fd).abs() <= 1e-5 * fd.abs().max(1.0));
        }
    }
}
