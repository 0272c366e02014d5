//! Point evaluation of expression graphs.

use super::{ExprGraph, GraphError, Op};

/// Reusable per-caller scratch space for repeated evaluations.
#[derive(Default, Clone)]
pub struct EvalWorkspace {
    vals: Vec<f64>,
}

impl ExprGraph {
    /// Evaluates all outputs at the given symbol-group values.
    pub fn eval(&self, inputs: &[&[f64]]) -> Result<Vec<f64>, GraphError> {
        let mut ws = EvalWorkspace::default();
        let mut out = vec![0.0; self.n_outputs()];
        self.eval_into(inputs, &mut ws, &mut out)?;
        Ok(out)
    }

    /// Evaluation into a caller-owned output slice, reusing scratch space.
    pub fn eval_into(
        &self,
        inputs: &[&[f64]],
        ws: &mut EvalWorkspace,
        out: &mut [f64],
    ) -> Result<(), GraphError> {
        self.check_inputs(inputs)?;
        if out.len() != self.n_outputs() {
            return Err(GraphError::ShapeMismatch(format!(
                "output slice has {} entries, graph has {} outputs",
                out.len(),
                self.n_outputs()
            )));
        }
        let vals = &mut ws.vals;
        vals.resize(self.nodes().len(), 0.0);
        for (i, op) in self.nodes().iter().enumerate() {
            vals[i] = match *op {
                Op::Const(c) => c,
                Op::Sym(g, j) => inputs[g][j],
                Op::Add(a, b) => vals[a] + vals[b],
                Op::Sub(a, b) => vals[a] - vals[b],
                Op::Neg(a) => -vals[a],
                Op::Mul(a, b) => vals[a] * vals[b],
                Op::Div(a, b) => {
                    if vals[b] == 0.0 {
                        return Err(GraphError::DomainViolation {
                            node: i,
                            op: "div".into(),
                            detail: "division by zero".into(),
                        });
                    }
                    vals[a] / vals[b]
                }
                Op::Exp(a) => vals[a].exp(),
                Op::Pow(a, n) => vals[a].powi(n as i32),
                Op::Min2(a, b) => vals[a].min(vals[b]),
                Op::Max2(a, b) => vals[a].max(vals[b]),
            };
        }
        for (k, &o) in self.outputs().iter().enumerate() {
            out[k] = vals[o];
        }
        Ok(())
    }

    pub(crate) fn check_inputs(&self, inputs: &[&[f64]]) -> Result<(), GraphError> {
        if inputs.len() != self.signature().n_groups() {
            return Err(GraphError::ShapeMismatch(format!(
                "got {} input groups, signature is {}",
                inputs.len(),
                self.signature()
            )));
        }
        for (g, vals) in inputs.iter().enumerate() {
            if vals.len() != self.signature().group_size(g) {
                return Err(GraphError::ShapeMismatch(format!(
                    "group {} has {} values, expected {}",
                    self.signature().group_name(g),
                    vals.len(),
                    self.signature().group_size(g)
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use crate::exprgraph::{ExprBuilder, Signature};

    #[test]
    fn add_of_state_and_parameter() {
        // f(x,p) = x + p at x=0.3, p=0.2
        let mut b = ExprBuilder::new(Signature::xup(1, 0, 1));
        let x = b.sym(0, 0);
        let p = b.sym(2, 0);
        let out = b.add(x, p);
        let g = b.finish(vec![out]);
        let v = g.eval(&[&[0.3], &[], &[0.2]]).unwrap();
        assert_eq!(v[0], 0.5);
    }

    #[test]
    fn exp_at_zero() {
        let mut b = ExprBuilder::new(Signature::xup(1, 0, 0));
        let x = b.sym(0, 0);
        let out = b.exp(x);
        let g = b.finish(vec![out]);
        assert_eq!(g.eval(&[&[0.0], &[], &[]]).unwrap()[0], 1.0);
    }

    #[test]
    fn division_by_zero_names_node() {
        let mut b = ExprBuilder::new(Signature::xup(1, 0, 0));
        let x = b.sym(0, 0);
        let one = b.constant(1.0);
        let out = b.div(one, x);
        let g = b.finish(vec![out]);
        let err = g.eval(&[&[0.0], &[], &[]]).unwrap_err();
        assert!(err.to_string().contains("div"));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut b = ExprBuilder::new(Signature::xup(2, 0, 0));
        let x = b.sym(0, 0);
        let g = b.finish(vec![x]);
        assert!(g.eval(&[&[1.0], &[], &[]]).is_err());
    }
}
