//! Expression-graph core: evaluation, symbolic differentiation, interval
//! sign certification and automatic synthesis of decomposition functions.
//!
//! A graph is a flat, topologically ordered node list over a small operator
//! set (constants, symbols, `+ - neg * / exp pow min max`). Symbols are
//! grouped (e.g. `x`, `u`, `p` for dynamics) and every evaluation takes one
//! value slice per group. Graphs are immutable after construction and safe
//! to share across threads; evaluation workspaces live with the caller.

mod decomp;
mod diff;
mod eval;
mod interval;
mod serialize;

pub use decomp::{tight_decomposition_oracle, DecompGraph, DecompValidation, RewriteRule};
pub use eval::EvalWorkspace;
pub use interval::{Interval, Sign, SignReport};

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Index of a node inside its graph.
pub type NodeId = usize;

/// Index of a symbol group inside a [`Signature`].
pub type GroupId = usize;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("domain violation at node {node} ({op}): {detail}")]
    DomainViolation {
        node: NodeId,
        op: String,
        detail: String,
    },
    #[error("decomposition synthesis failed at node {node} ({op}): {detail}")]
    SynthesisFailure {
        node: NodeId,
        op: String,
        detail: String,
    },
    #[error("node {node} ({op}) is not differentiable")]
    NonSmooth { node: NodeId, op: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

/// Operator kinds. Child fields are node indices which always precede the
/// parent in the node list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Const(f64),
    Sym(GroupId, usize),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Neg(NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Exp(NodeId),
    /// Power with a constant integer exponent >= 1.
    Pow(NodeId, u32),
    /// Pointwise minimum; used by test oracles only, never inside NLP graphs.
    Min2(NodeId, NodeId),
    /// Pointwise maximum; used by test oracles only, never inside NLP graphs.
    Max2(NodeId, NodeId),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Const(_) => "const",
            Op::Sym(_, _) => "sym",
            Op::Add(_, _) => "add",
            Op::Sub(_, _) => "sub",
            Op::Neg(_) => "neg",
            Op::Mul(_, _) => "mul",
            Op::Div(_, _) => "div",
            Op::Exp(_) => "exp",
            Op::Pow(_, _) => "pow",
            Op::Min2(_, _) => "min2",
            Op::Max2(_, _) => "max2",
        }
    }

    fn children(&self) -> [Option<NodeId>; 2] {
        match *self {
            Op::Const(_) | Op::Sym(_, _) => [None, None],
            Op::Neg(a) | Op::Exp(a) | Op::Pow(a, _) => [Some(a), None],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Min2(a, b)
            | Op::Max2(a, b) => [Some(a), Some(b)],
        }
    }
}

/// Ordered symbol groups of a graph, e.g. `x:5 u:3 p:4`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    groups: Vec<(String, usize)>,
}

impl Signature {
    pub fn new(groups: &[(&str, usize)]) -> Self {
        Signature {
            groups: groups.iter().map(|(n, s)| (n.to_string(), *s)).collect(),
        }
    }

    /// Dynamics convention: `(x, u, p)`.
    pub fn xup(n_x: usize, n_u: usize, n_p: usize) -> Self {
        Signature::new(&[("x", n_x), ("u", n_u), ("p", n_p)])
    }

    /// Decomposition convention: doubled state/parameter copies.
    pub fn decomp(n_x: usize, n_u: usize, n_p: usize) -> Self {
        Signature::new(&[("x1", n_x), ("p1", n_p), ("u", n_u), ("x2", n_x), ("p2", n_p)])
    }

    /// Flattened NLP convention: decision vector plus bound parameters.
    pub fn nlp(n_z: usize, n_theta: usize) -> Self {
        Signature::new(&[("z", n_z), ("theta", n_theta)])
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_size(&self, g: GroupId) -> usize {
        self.groups[g].1
    }

    pub fn group_name(&self, g: GroupId) -> &str {
        &self.groups[g].0
    }

    pub fn group_by_name(&self, name: &str) -> Option<GroupId> {
        self.groups.iter().position(|(n, _)| n == name)
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .groups
            .iter()
            .map(|(n, s)| format!("{n}:{s}"))
            .collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// Immutable expression DAG with declared outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprGraph {
    sig: Signature,
    nodes: Vec<Op>,
    outputs: Vec<NodeId>,
}

impl ExprGraph {
    pub fn signature(&self) -> &Signature {
        &self.sig
    }

    pub fn nodes(&self) -> &[Op] {
        &self.nodes
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Reconstructs a builder preloaded with this graph's nodes. Returns the
    /// builder and the output ids, so callers can extend the graph.
    pub fn into_builder(&self) -> (ExprBuilder, Vec<NodeId>) {
        let mut b = ExprBuilder::new(self.sig.clone());
        let map = b.absorb(self, &Substitution::identity());
        let outs = self.outputs.iter().map(|&o| map[o]).collect();
        (b, outs)
    }
}

/// How symbols of an absorbed graph map into a host builder.
pub enum Substitution<'a> {
    /// Keep symbols as-is (signatures must match).
    Identity,
    /// Replace group `g`, symbol `i` with `handles[g][i]` in the host graph.
    Handles(&'a [Vec<NodeId>]),
}

impl<'a> Substitution<'a> {
    pub fn identity() -> Self {
        Substitution::Identity
    }
}

/// Incremental graph constructor with hash-consing and constant folding.
pub struct ExprBuilder {
    sig: Signature,
    nodes: Vec<Op>,
    cache: HashMap<NodeKey, NodeId>,
}

#[derive(Hash, PartialEq, Eq)]
enum NodeKey {
    Const(u64),
    Sym(GroupId, usize),
    Unary(u8, NodeId, u32),
    Binary(u8, NodeId, NodeId),
}

fn op_key(op: &Op) -> NodeKey {
    match *op {
        Op::Const(c) => NodeKey::Const(c.to_bits()),
        Op::Sym(g, i) => NodeKey::Sym(g, i),
        Op::Neg(a) => NodeKey::Unary(0, a, 0),
        Op::Exp(a) => NodeKey::Unary(1, a, 0),
        Op::Pow(a, n) => NodeKey::Unary(2, a, n),
        Op::Add(a, b) => NodeKey::Binary(0, a, b),
        Op::Sub(a, b) => NodeKey::Binary(1, a, b),
        Op::Mul(a, b) => NodeKey::Binary(2, a, b),
        Op::Div(a, b) => NodeKey::Binary(3, a, b),
        Op::Min2(a, b) => NodeKey::Binary(4, a, b),
        Op::Max2(a, b) => NodeKey::Binary(5, a, b),
    }
}

impl ExprBuilder {
    pub fn new(sig: Signature) -> Self {
        ExprBuilder {
            sig,
            nodes: Vec::new(),
            cache: HashMap::new(),
        }
    }

    pub fn signature(&self) -> &Signature {
        &self.sig
    }

    fn intern(&mut self, op: Op) -> NodeId {
        let key = op_key(&op);
        if let Some(&id) = self.cache.get(&key) {
            return id;
        }
        let id = self.nodes.len();
        self.nodes.push(op);
        self.cache.insert(key, id);
        id
    }

    fn as_const(&self, id: NodeId) -> Option<f64> {
        match self.nodes[id] {
            Op::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn constant(&mut self, c: f64) -> NodeId {
        self.intern(Op::Const(c))
    }

    pub fn sym(&mut self, g: GroupId, i: usize) -> NodeId {
        assert!(
            i < self.sig.group_size(g),
            "symbol index {i} out of range for group {}",
            self.sig.group_name(g)
        );
        self.intern(Op::Sym(g, i))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => self.constant(x + y),
            (Some(x), None) if x == 0.0 => b,
            (None, Some(y)) if y == 0.0 => a,
            _ => self.intern(Op::Add(a, b)),
        }
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        if a == b {
            return self.constant(0.0);
        }
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => self.constant(x - y),
            (None, Some(y)) if y == 0.0 => a,
            (Some(x), None) if x == 0.0 => self.neg(b),
            _ => self.intern(Op::Sub(a, b)),
        }
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        match self.nodes[a] {
            Op::Const(c) => self.constant(-c),
            Op::Neg(inner) => inner,
            _ => self.intern(Op::Neg(a)),
        }
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => self.constant(x * y),
            (Some(x), None) if x == 0.0 => self.constant(0.0),
            (None, Some(y)) if y == 0.0 => self.constant(0.0),
            (Some(x), None) if x == 1.0 => b,
            (None, Some(y)) if y == 1.0 => a,
            _ => self.intern(Op::Mul(a, b)),
        }
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) if y != 0.0 => self.constant(x / y),
            (None, Some(y)) if y == 1.0 => a,
            _ => self.intern(Op::Div(a, b)),
        }
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        match self.as_const(a) {
            Some(c) => self.constant(c.exp()),
            None => self.intern(Op::Exp(a)),
        }
    }

    pub fn powi(&mut self, a: NodeId, n: u32) -> NodeId {
        assert!(n >= 1, "power nodes require a constant integer exponent >= 1");
        if n == 1 {
            return a;
        }
        match self.as_const(a) {
            Some(c) => self.constant(c.powi(n as i32)),
            None => self.intern(Op::Pow(a, n)),
        }
    }

    pub fn min2(&mut self, a: NodeId, b: NodeId) -> NodeId {
        if a == b {
            return a;
        }
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => self.constant(x.min(y)),
            _ => self.intern(Op::Min2(a, b)),
        }
    }

    pub fn max2(&mut self, a: NodeId, b: NodeId) -> NodeId {
        if a == b {
            return a;
        }
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => self.constant(x.max(y)),
            _ => self.intern(Op::Max2(a, b)),
        }
    }

    /// Sum of a slice of handles (0 for empty).
    pub fn sum(&mut self, terms: &[NodeId]) -> NodeId {
        let mut acc = self.constant(0.0);
        for &t in terms {
            acc = self.add(acc, t);
        }
        acc
    }

    /// Affine combination `c0 + sum_i coeff_i * h_i`, skipping zero terms.
    pub fn affine(&mut self, c0: f64, terms: &[(f64, NodeId)]) -> NodeId {
        let mut acc = self.constant(c0);
        for &(c, h) in terms {
            if c == 0.0 {
                continue;
            }
            let cn = self.constant(c);
            let t = self.mul(cn, h);
            acc = self.add(acc, t);
        }
        acc
    }

    /// Copies another graph's nodes into this builder, mapping its symbols
    /// per `subst`. Returns old-id -> new-id.
    pub fn absorb(&mut self, g: &ExprGraph, subst: &Substitution) -> Vec<NodeId> {
        let mut map = Vec::with_capacity(g.nodes.len());
        for op in &g.nodes {
            let id = match *op {
                Op::Const(c) => self.constant(c),
                Op::Sym(grp, i) => match subst {
                    Substitution::Identity => {
                        debug_assert_eq!(self.sig.group_size(grp), g.sig.group_size(grp));
                        self.sym(grp, i)
                    }
                    Substitution::Handles(h) => h[grp][i],
                },
                Op::Add(a, b) => self.add(map[a], map[b]),
                Op::Sub(a, b) => self.sub(map[a], map[b]),
                Op::Neg(a) => self.neg(map[a]),
                Op::Mul(a, b) => self.mul(map[a], map[b]),
                Op::Div(a, b) => self.div(map[a], map[b]),
                Op::Exp(a) => self.exp(map[a]),
                Op::Pow(a, n) => self.powi(map[a], n),
                Op::Min2(a, b) => self.min2(map[a], map[b]),
                Op::Max2(a, b) => self.max2(map[a], map[b]),
            };
            map.push(id);
        }
        map
    }

    /// Inlines another graph and returns handles to its outputs.
    pub fn inline(&mut self, g: &ExprGraph, groups: &[Vec<NodeId>]) -> Vec<NodeId> {
        assert_eq!(groups.len(), g.sig.n_groups(), "substitution group count");
        for (gid, h) in groups.iter().enumerate() {
            assert_eq!(
                h.len(),
                g.sig.group_size(gid),
                "substitution size for group {}",
                g.sig.group_name(gid)
            );
        }
        let map = self.absorb(g, &Substitution::Handles(groups));
        g.outputs.iter().map(|&o| map[o]).collect()
    }

    pub fn finish(self, outputs: Vec<NodeId>) -> ExprGraph {
        for &o in &outputs {
            assert!(o < self.nodes.len(), "output id out of range");
        }
        ExprGraph {
            sig: self.sig,
            nodes: self.nodes,
            outputs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_consing_dedups() {
        let mut b = ExprBuilder::new(Signature::xup(1, 0, 1));
        let x = b.sym(0, 0);
        let p = b.sym(2, 0);
        let s1 = b.add(x, p);
        let s2 = b.add(x, p);
        assert_eq!(s1, s2);
    }

    #[test]
    fn constant_folding() {
        let mut b = ExprBuilder::new(Signature::xup(1, 0, 0));
        let x = b.sym(0, 0);
        let zero = b.constant(0.0);
        assert_eq!(b.add(x, zero), x);
        assert_eq!(b.mul(zero, x), zero);
        let two = b.constant(2.0);
        let three = b.constant(3.0);
        let six = b.mul(two, three);
        assert_eq!(b.as_const(six), Some(6.0));
    }

    #[test]
    fn children_precede_parents() {
        let mut b = ExprBuilder::new(Signature::xup(2, 1, 0));
        let x0 = b.sym(0, 0);
        let x1 = b.sym(0, 1);
        let u = b.sym(1, 0);
        let m = b.mul(x0, x1);
        let e = b.exp(m);
        let out = b.add(e, u);
        let g = b.finish(vec![out]);
        for (i, op) in g.nodes().iter().enumerate() {
            for c in op.children().into_iter().flatten() {
                assert!(c < i);
            }
        }
    }
}
