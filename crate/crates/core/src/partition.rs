//! Binary cut-tree partitioning of a bounding hyperrectangle into subregions.
//!
//! Each internal node cuts its inherited box along one state axis at a cut
//! coordinate; the left child inherits `[lo, c]`, the right `[c, hi]`. Every
//! leaf corner coordinate is therefore a plain selection from the bounding
//! corners and the cut values, which keeps the tiling constraints linear. Cut
//! positions are left to the optimizer; only the tree topology (which axes to
//! cut) is configuration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::reach::Hyperrect;

/// Tree topology: which axis each internal node cuts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionTree {
    Leaf,
    Cut {
        axis: usize,
        left: Box<PartitionTree>,
        right: Box<PartitionTree>,
    },
}

impl PartitionTree {
    fn leaves(&self) -> usize {
        match self {
            PartitionTree::Leaf => 1,
            PartitionTree::Cut { left, right, .. } => left.leaves() + right.leaves(),
        }
    }

    fn internal(&self) -> usize {
        match self {
            PartitionTree::Leaf => 0,
            PartitionTree::Cut { left, right, .. } => 1 + left.internal() + right.internal(),
        }
    }

    fn max_axis(&self) -> Option<usize> {
        match self {
            PartitionTree::Leaf => None,
            PartitionTree::Cut { axis, left, right } => {
                Some((*axis).max(left.max_axis().unwrap_or(0)).max(right.max_axis().unwrap_or(0)))
            }
        }
    }
}

/// Where a leaf corner coordinate comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordRef {
    BoundLo(usize),
    BoundHi(usize),
    Cut(usize),
}

impl CoordRef {
    pub fn resolve(&self, bounding: &Hyperrect, cuts: &[f64]) -> f64 {
        match *self {
            CoordRef::BoundLo(d) => bounding.lo()[d],
            CoordRef::BoundHi(d) => bounding.hi()[d],
            CoordRef::Cut(i) => cuts[i],
        }
    }
}

/// One `lo <= c <= hi` pair for an internal node's cut coordinate; the
/// endpoints are the node's inherited interval on its axis.
#[derive(Debug, Clone, Copy)]
pub struct CutBound {
    pub cut: usize,
    pub axis: usize,
    pub lo: CoordRef,
    pub hi: CoordRef,
}

/// A cut tree over an `n_dim`-dimensional bounding box, with leaf identifiers
/// assigned left to right: leaf 0 holds the global lower corner, the last
/// leaf the global upper corner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    n_dim: usize,
    tree: PartitionTree,
}

impl PartitionSpec {
    pub fn new(n_dim: usize, tree: PartitionTree) -> Self {
        if let Some(a) = tree.max_axis() {
            assert!(a < n_dim, "cut axis {a} out of range for {n_dim} dimensions");
        }
        PartitionSpec { n_dim, tree }
    }

    /// The trivial partition: the bounding box itself.
    pub fn single(n_dim: usize) -> Self {
        PartitionSpec {
            n_dim,
            tree: PartitionTree::Leaf,
        }
    }

    /// Balanced tree cutting one axis per level (grid-like partitions).
    pub fn from_levels(n_dim: usize, levels: &[usize]) -> Self {
        fn build(levels: &[usize]) -> PartitionTree {
            match levels.split_first() {
                None => PartitionTree::Leaf,
                Some((&axis, rest)) => PartitionTree::Cut {
                    axis,
                    left: Box::new(build(rest)),
                    right: Box::new(build(rest)),
                },
            }
        }
        PartitionSpec::new(n_dim, build(levels))
    }

    /// Chain of cuts along one axis producing `pieces` slices.
    pub fn chain(n_dim: usize, axis: usize, pieces: usize) -> Self {
        assert!(pieces >= 1);
        let mut tree = PartitionTree::Leaf;
        for _ in 1..pieces {
            tree = PartitionTree::Cut {
                axis,
                left: Box::new(PartitionTree::Leaf),
                right: Box::new(tree),
            };
        }
        PartitionSpec::new(n_dim, tree)
    }

    pub fn n_dim(&self) -> usize {
        self.n_dim
    }

    pub fn mu_s(&self) -> usize {
        self.tree.leaves()
    }

    pub fn n_cuts(&self) -> usize {
        self.tree.internal()
    }

    pub fn tree(&self) -> &PartitionTree {
        &self.tree
    }

    /// Per-leaf `(lo, hi)` corner references, in leaf-identifier order. Cut
    /// indices are assigned in pre-order.
    pub fn corner_refs(&self) -> Vec<(Vec<CoordRef>, Vec<CoordRef>)> {
        let mut leaves = Vec::with_capacity(self.mu_s());
        let lo: Vec<CoordRef> = (0..self.n_dim).map(CoordRef::BoundLo).collect();
        let hi: Vec<CoordRef> = (0..self.n_dim).map(CoordRef::BoundHi).collect();
        let mut next_cut = 0;
        walk(&self.tree, lo, hi, &mut next_cut, &mut leaves, &mut Vec::new());
        leaves
    }

    /// Inherited-interval bounds for every cut variable, pre-order.
    pub fn cut_bounds(&self) -> Vec<CutBound> {
        let mut leaves = Vec::new();
        let mut bounds = Vec::new();
        let lo: Vec<CoordRef> = (0..self.n_dim).map(CoordRef::BoundLo).collect();
        let hi: Vec<CoordRef> = (0..self.n_dim).map(CoordRef::BoundHi).collect();
        let mut next_cut = 0;
        walk(&self.tree, lo, hi, &mut next_cut, &mut leaves, &mut bounds);
        bounds
    }

    /// Numeric leaf boxes for given cut values, in identifier order.
    pub fn leaf_boxes(&self, bounding: &Hyperrect, cuts: &[f64]) -> Vec<Hyperrect> {
        assert_eq!(cuts.len(), self.n_cuts());
        self.corner_refs()
            .iter()
            .map(|(lo, hi)| {
                let l: Vec<f64> = lo.iter().map(|r| r.resolve(bounding, cuts)).collect();
                let h: Vec<f64> = hi.iter().map(|r| r.resolve(bounding, cuts)).collect();
                // Out-of-order cuts are the optimizer's concern, not ours;
                // clamp only for numeric instantiation.
                let h = h.iter().zip(&l).map(|(h, l)| h.max(*l)).collect();
                Hyperrect::new(l, h).expect("clamped corners are ordered")
            })
            .collect()
    }

    /// Midpoint cut values, recursively halving inherited intervals.
    pub fn default_cuts(&self, bounding: &Hyperrect) -> Vec<f64> {
        let mut cuts = vec![0.0; self.n_cuts()];
        // Pre-order bounds only reference earlier cuts, so one pass resolves.
        for cb in self.cut_bounds() {
            let lo = cb.lo.resolve(bounding, &cuts);
            let hi = cb.hi.resolve(bounding, &cuts);
            cuts[cb.cut] = 0.5 * (lo + hi);
        }
        cuts
    }

    /// Clamps cut values into their inherited intervals for a (possibly
    /// smaller) bounding box. Used by the warm-start shift: every clamped
    /// leaf ends up inside some leaf of the original partition, so inputs
    /// can be carried over via [`PartitionSpec::locate`].
    pub fn clamp_cuts(&self, cuts: &[f64], bounding: &Hyperrect) -> Vec<f64> {
        let mut out = cuts.to_vec();
        for cb in self.cut_bounds() {
            let lo = cb.lo.resolve(bounding, &out);
            let hi = cb.hi.resolve(bounding, &out);
            out[cb.cut] = out[cb.cut].clamp(lo, hi);
        }
        out
    }

    /// Identifier of the leaf containing `x` (ties resolve to the left).
    pub fn locate(&self, bounding: &Hyperrect, cuts: &[f64], x: &[f64]) -> usize {
        fn descend(
            tree: &PartitionTree,
            next_cut: &mut usize,
            leaf_base: &mut usize,
            cuts: &[f64],
            x: &[f64],
        ) -> Option<usize> {
            match tree {
                PartitionTree::Leaf => {
                    let id = *leaf_base;
                    *leaf_base += 1;
                    Some(id)
                }
                PartitionTree::Cut { axis, left, right } => {
                    let c = cuts[*next_cut];
                    *next_cut += 1;
                    if x[*axis] <= c {
                        let r = descend(left, next_cut, leaf_base, cuts, x);
                        // Still advance counters through the right subtree.
                        skip(right, next_cut, leaf_base);
                        r
                    } else {
                        skip(left, next_cut, leaf_base);
                        descend(right, next_cut, leaf_base, cuts, x)
                    }
                }
            }
        }
        fn skip(tree: &PartitionTree, next_cut: &mut usize, leaf_base: &mut usize) {
            match tree {
                PartitionTree::Leaf => *leaf_base += 1,
                PartitionTree::Cut { left, right, .. } => {
                    *next_cut += 1;
                    skip(left, next_cut, leaf_base);
                    skip(right, next_cut, leaf_base);
                }
            }
        }
        debug_assert!(bounding.contains(x, 1e-9));
        let mut next_cut = 0;
        let mut leaf_base = 0;
        descend(&self.tree, &mut next_cut, &mut leaf_base, cuts, x).unwrap()
    }
}

fn walk(
    tree: &PartitionTree,
    lo: Vec<CoordRef>,
    hi: Vec<CoordRef>,
    next_cut: &mut usize,
    leaves: &mut Vec<(Vec<CoordRef>, Vec<CoordRef>)>,
    bounds: &mut Vec<CutBound>,
) {
    match tree {
        PartitionTree::Leaf => leaves.push((lo, hi)),
        PartitionTree::Cut { axis, left, right } => {
            let cut = *next_cut;
            *next_cut += 1;
            bounds.push(CutBound {
                cut,
                axis: *axis,
                lo: lo[*axis],
                hi: hi[*axis],
            });
            let mut l_hi = hi.clone();
            l_hi[*axis] = CoordRef::Cut(cut);
            let mut r_lo = lo.clone();
            r_lo[*axis] = CoordRef::Cut(cut);
            walk(left, lo, l_hi, next_cut, leaves, bounds);
            walk(right, r_lo, hi, next_cut, leaves, bounds);
        }
    }
}

/// Result of sampling-based tiling validation.
#[derive(Debug, Clone)]
pub struct TilingReport {
    pub samples: usize,
    /// Interior samples covered by zero or by more than one box.
    pub multiplicity_violations: usize,
    pub volume_rel_err: f64,
}

impl TilingReport {
    pub fn passed(&self) -> bool {
        self.multiplicity_violations == 0 && self.volume_rel_err <= 1e-10
    }
}

/// Checks that `boxes` tile `bounding`: every interior sample lies in exactly
/// one box (up to a boundary tolerance) and volumes sum to the bounding
/// volume.
pub fn validate_tiling(
    boxes: &[Hyperrect],
    bounding: &Hyperrect,
    n_samples: usize,
    seed: u64,
) -> TilingReport {
    const BOUNDARY_TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut tested = 0;
    for _ in 0..n_samples {
        let x = bounding.sample(&mut rng);
        // Skip samples too close to any box face: multiplicity is ambiguous
        // there by construction.
        let near_boundary = boxes.iter().any(|b| {
            x.iter().enumerate().any(|(d, v)| {
                (v - b.lo()[d]).abs() <= BOUNDARY_TOL || (v - b.hi()[d]).abs() <= BOUNDARY_TOL
            })
        });
        if near_boundary {
            continue;
        }
        tested += 1;
        let hits = boxes.iter().filter(|b| b.contains(&x, 0.0)).count();
        if hits != 1 {
            violations += 1;
        }
    }
    let vol_sum: f64 = boxes.iter().map(|b| b.volume()).sum();
    let vol = bounding.volume();
    let volume_rel_err = if vol > 0.0 {
        (vol_sum - vol).abs() / vol
    } else {
        (vol_sum - vol).abs()
    };
    TilingReport {
        samples: tested,
        multiplicity_violations: violations,
        volume_rel_err,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn unit_square() -> Hyperrect {
        Hyperrect::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn single_leaf_is_the_bounding_box() {
        let spec = PartitionSpec::single(2);
        assert_eq!(spec.mu_s(), 1);
        assert_eq!(spec.n_cuts(), 0);
        let boxes = spec.leaf_boxes(&unit_square(), &[]);
        assert_eq!(boxes, vec![unit_square()]);
    }

    #[test]
    fn one_cut_splits_on_axis_zero() {
        let spec = PartitionSpec::from_levels(2, &[0]);
        let boxes = spec.leaf_boxes(&unit_square(), &[0.5]);
        assert_eq!(boxes[0], Hyperrect::new(vec![0.0, 0.0], vec![0.5, 1.0]).unwrap());
        assert_eq!(boxes[1], Hyperrect::new(vec![0.5, 0.0], vec![1.0, 1.0]).unwrap());
    }

    #[test]
    fn tree_with_three_leaves_tiles() {
        // Root cuts axis 0; left child cuts axis 1.
        let tree = PartitionTree::Cut {
            axis: 0,
            left: Box::new(PartitionTree::Cut {
                axis: 1,
                left: Box::new(PartitionTree::Leaf),
                right: Box::new(PartitionTree::Leaf),
            }),
            right: Box::new(PartitionTree::Leaf),
        };
        let spec = PartitionSpec::new(2, tree);
        assert_eq!(spec.mu_s(), 3);
        let boxes = spec.leaf_boxes(&unit_square(), &[0.7, 0.4]);
        let vol: f64 = boxes.iter().map(|b| b.volume()).sum();
        assert!((vol - 1.0).abs() < 1e-15);
        let rep = validate_tiling(&boxes, &unit_square(), 2000, 1);
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn leaf_ordering_convention() {
        let spec = PartitionSpec::from_levels(2, &[0, 1]);
        let refs = spec.corner_refs();
        assert_eq!(refs[0].0, vec![CoordRef::BoundLo(0), CoordRef::BoundLo(1)]);
        assert_eq!(
            refs[spec.mu_s() - 1].1,
            vec![CoordRef::BoundHi(0), CoordRef::BoundHi(1)]
        );
    }

    #[test]
    fn grid_tree_constraint_count() {
        // Balanced 2x2 grid: 3 internal nodes, 6 inequality rows.
        let spec = PartitionSpec::from_levels(2, &[0, 1]);
        assert_eq!(spec.n_cuts(), 3);
        assert_eq!(spec.cut_bounds().len() * 2, 6);
    }

    #[test]
    fn overlapping_boxes_flagged() {
        let boxes = vec![
            Hyperrect::new(vec![0.0, 0.0], vec![0.6, 1.0]).unwrap(),
            Hyperrect::new(vec![0.4, 0.0], vec![1.0, 1.0]).unwrap(),
        ];
        let rep = validate_tiling(&boxes, &unit_square(), 2000, 2);
        assert!(rep.multiplicity_violations > 0);
    }

    #[test]
    fn randomized_trees_tile_for_random_cuts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..100 {
            let levels: Vec<usize> = (0..(1 + trial % 3)).map(|_| rng.gen_range(0..2)).collect();
            let spec = PartitionSpec::from_levels(2, &levels);
            let bounding = unit_square();
            // Random in-range cuts, resolved in pre-order.
            let mut cuts = vec![0.0; spec.n_cuts()];
            for cb in spec.cut_bounds() {
                let lo = cb.lo.resolve(&bounding, &cuts);
                let hi = cb.hi.resolve(&bounding, &cuts);
                cuts[cb.cut] = rng.gen_range(lo..=hi);
            }
            let boxes = spec.leaf_boxes(&bounding, &cuts);
            let rep = validate_tiling(&boxes, &bounding, 500, trial as u64);
            assert!(rep.passed(), "trial {trial}: {rep:?}");
        }
    }

    #[test]
    fn locate_matches_containment() {
        let spec = PartitionSpec::from_levels(2, &[0, 1]);
        let bounding = unit_square();
        let cuts = spec.default_cuts(&bounding);
        let boxes = spec.leaf_boxes(&bounding, &cuts);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = bounding.sample(&mut rng);
            let s = spec.locate(&bounding, &cuts, &x);
            assert!(boxes[s].contains(&x, 1e-12));
        }
    }

    #[test]
    fn clamped_cuts_nest_leaves() {
        let spec = PartitionSpec::chain(1, 0, 4);
        let big = Hyperrect::new(vec![0.0], vec![1.0]).unwrap();
        let small = Hyperrect::new(vec![0.3], vec![0.6]).unwrap();
        let cuts = vec![0.2, 0.5, 0.9];
        let clamped = spec.clamp_cuts(&cuts, &small);
        let big_boxes = spec.leaf_boxes(&big, &cuts);
        let small_boxes = spec.leaf_boxes(&small, &clamped);
        // Index alignment can break (a big leaf may miss the small box
        // entirely); containment in some big leaf is what the warm start uses.
        for inner in &small_boxes {
            let host = spec.locate(&big, &cuts, &inner.center());
            assert!(
                big_boxes[host].contains_box(inner, 1e-12),
                "{inner:?} vs {:?}",
                big_boxes[host]
            );
        }
    }
}
