//! Hyperrectangle arithmetic and interval reachability via decomposition
//! functions, with Monte-Carlo containment validation.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exprgraph::{DecompGraph, ExprGraph, GraphError, Interval};

/// Floating-point slack separating rounding noise from genuine containment
/// violations; sized for double precision with graph depths up to ~1e3.
pub const CONTAINMENT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ReachError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("hyperrectangle bounds out of order in dimension {dim}: [{lo}, {hi}]")]
    BoundsOutOfOrder { dim: usize, lo: f64, hi: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Axis-aligned box `[lo, hi]` in `n` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperrect {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Hyperrect {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ReachError> {
        if lo.len() != hi.len() {
            return Err(ReachError::DimMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        for (dim, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if l > h {
                return Err(ReachError::BoundsOutOfOrder {
                    dim,
                    lo: *l,
                    hi: *h,
                });
            }
        }
        Ok(Hyperrect { lo, hi })
    }

    /// Degenerate box holding a single point.
    pub fn point(v: &[f64]) -> Self {
        Hyperrect {
            lo: v.to_vec(),
            hi: v.to_vec(),
        }
    }

    /// Box `[center*(1-rel), center*(1+rel)]` per dimension; `center` must be
    /// nonnegative for the bounds to stay ordered.
    pub fn relative(center: &[f64], rel: f64) -> Self {
        let lo = center.iter().map(|c| c * (1.0 - rel)).collect();
        let hi = center.iter().map(|c| c * (1.0 + rel)).collect();
        Hyperrect { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    pub fn volume(&self) -> f64 {
        self.widths().iter().product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
    }

    pub fn contains_box(&self, inner: &Hyperrect, tol: f64) -> bool {
        inner
            .lo
            .iter()
            .zip(&self.lo)
            .all(|(il, ol)| *il >= ol - tol)
            && inner.hi.iter().zip(&self.hi).all(|(ih, oh)| *ih <= oh + tol)
    }

    /// Per-dimension excess of `x` over this box (0 when inside).
    pub fn excess(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| (l - v).max(0.0).max(v - h))
            .collect()
    }

    pub fn intervals(&self) -> Vec<Interval> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| Interval::new(*l, *h))
            .collect()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| if h > l { rng.gen_range(*l..=*h) } else { *l })
            .collect()
    }

    /// Shrinks the box toward its center by the given fraction of each width.
    pub fn shrink(&self, fraction: f64) -> Hyperrect {
        let lo = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l + 0.5 * fraction * (h - l))
            .collect();
        let hi = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| h - 0.5 * fraction * (h - l))
            .collect();
        Hyperrect { lo, hi }
    }
}

/// Predicted per-step boxes over a horizon, step 0 first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachTube {
    pub boxes: Vec<Hyperrect>,
}

impl ReachTube {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// CSV export with columns `step,dim,lo,hi`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), ReachError> {
        writeln!(w, "step,dim,lo,hi")?;
        for (k, b) in self.boxes.iter().enumerate() {
            for d in 0..b.dim() {
                writeln!(w, "{k},{d},{:?},{:?}", b.lo[d], b.hi[d])?;
            }
        }
        Ok(())
    }
}

/// One-step reachable-set over-approximation: evaluates the decomposition at
/// swapped corners. For monotone systems this degenerates to evaluating the
/// dynamics at the two corners, which is tight.
pub fn propagate_interval(
    d: &DecompGraph,
    box_x: &Hyperrect,
    u: &[f64],
    box_p: &Hyperrect,
) -> Result<Hyperrect, ReachError> {
    let lo = d.eval(box_x.lo(), box_p.lo(), u, box_x.hi(), box_p.hi())?;
    let hi = d.eval(box_x.hi(), box_p.hi(), u, box_x.lo(), box_p.lo())?;
    // Ordered by the decomposition's slot monotonicity; allow rounding noise.
    for (dim, (l, h)) in lo.iter().zip(&hi).enumerate() {
        if *l > h + CONTAINMENT_TOL {
            return Err(ReachError::BoundsOutOfOrder {
                dim,
                lo: *l,
                hi: *h,
            });
        }
    }
    let hi = hi
        .iter()
        .zip(&lo)
        .map(|(h, l)| h.max(*l))
        .collect::<Vec<_>>();
    Ok(Hyperrect { lo, hi })
}

/// Multi-step tube under a fixed input sequence.
pub fn propagate_tube(
    d: &DecompGraph,
    box_x0: &Hyperrect,
    inputs: &[Vec<f64>],
    box_p: &Hyperrect,
) -> Result<ReachTube, ReachError> {
    let mut boxes = vec![box_x0.clone()];
    for u in inputs {
        let next = propagate_interval(d, boxes.last().unwrap(), u, box_p)?;
        boxes.push(next);
    }
    Ok(ReachTube { boxes })
}

/// Monte-Carlo containment report.
#[derive(Debug, Clone)]
pub struct ContainmentReport {
    pub samples: usize,
    pub violations: usize,
    /// Per-dimension maximum distance outside the predicted box.
    pub max_excess: Vec<f64>,
}

/// Samples `(x, p)` uniformly, pushes each sample through the dynamics and
/// counts successors that escape `predicted` beyond [`CONTAINMENT_TOL`].
pub fn mc_containment(
    f: &ExprGraph,
    box_x: &Hyperrect,
    u: &[f64],
    box_p: &Hyperrect,
    predicted: &Hyperrect,
    n_samples: usize,
    seed: u64,
) -> Result<ContainmentReport, ReachError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut max_excess = vec![0.0; predicted.dim()];
    for _ in 0..n_samples {
        let x = box_x.sample(&mut rng);
        let p = box_p.sample(&mut rng);
        let next = f.eval(&[&x, u, &p])?;
        let exc = predicted.excess(&next);
        if exc.iter().any(|e| *e > CONTAINMENT_TOL) {
            violations += 1;
        }
        for (m, e) in max_excess.iter_mut().zip(exc) {
            *m = f64::max(*m, e);
        }
    }
    Ok(ContainmentReport {
        samples: n_samples,
        violations,
        max_excess,
    })
}

/// Exhaustive corner check, usable when `n_x + n_p <= 12`.
pub fn corner_containment(
    f: &ExprGraph,
    box_x: &Hyperrect,
    u: &[f64],
    box_p: &Hyperrect,
    predicted: &Hyperrect,
) -> Result<ContainmentReport, ReachError> {
    let dims = box_x.dim() + box_p.dim();
    assert!(dims <= 12, "corner enumeration is capped at 12 dimensions");
    let mut violations = 0;
    let mut max_excess = vec![0.0; predicted.dim()];
    let n_x = box_x.dim();
    for mask in 0u32..(1 << dims) {
        let mut x = Vec::with_capacity(n_x);
        let mut p = Vec::with_capacity(box_p.dim());
        for d in 0..dims {
            let high = mask & (1 << d) != 0;
            if d < n_x {
                x.push(if high { box_x.hi[d] } else { box_x.lo[d] });
            } else {
                let j = d - n_x;
                p.push(if high { box_p.hi[j] } else { box_p.lo[j] });
            }
        }
        let next = f.eval(&[&x, u, &p])?;
        let exc = predicted.excess(&next);
        if exc.iter().any(|e| *e > CONTAINMENT_TOL) {
            violations += 1;
        }
        for (m, e) in max_excess.iter_mut().zip(exc) {
            *m = f64::max(*m, e);
        }
    }
    Ok(ContainmentReport {
        samples: 1 << dims,
        violations,
        max_excess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprgraph::{ExprBuilder, Signature};

    /// f(x,u,p) = x + u + p.
    fn sum_model() -> ExprGraph {
        let mut b = ExprBuilder::new(Signature::xup(1, 1, 1));
        let x = b.sym(0, 0);
        let u = b.sym(1, 0);
        let p = b.sym(2, 0);
        let s = b.add(x, u);
        let out = b.add(s, p);
        b.finish(vec![out])
    }

    #[test]
    fn endpoint_propagation_of_monotone_sum() {
        let f = sum_model();
        let bx = Hyperrect::new(vec![0.0], vec![1.0]).unwrap();
        let bp = Hyperrect::new(vec![-0.1], vec![0.1]).unwrap();
        let d = f
            .synth_decomposition(&bx.intervals(), &[Interval::new(0.0, 1.0)], &bp.intervals())
            .unwrap();
        let r = propagate_interval(&d, &bx, &[0.5], &bp).unwrap();
        assert!((r.lo()[0] - 0.4).abs() < 1e-15);
        assert!((r.hi()[0] - 1.6).abs() < 1e-15);
    }

    #[test]
    fn degenerate_boxes_give_the_point_image() {
        let f = sum_model();
        let bx = Hyperrect::point(&[0.3]);
        let bp = Hyperrect::point(&[0.1]);
        let d = f
            .synth_decomposition(&bx.intervals(), &[Interval::new(0.0, 1.0)], &bp.intervals())
            .unwrap();
        let r = propagate_interval(&d, &bx, &[0.2], &bp).unwrap();
        assert_eq!(r.lo()[0], 0.6);
        assert_eq!(r.hi()[0], 0.6);
    }

    #[test]
    fn containment_holds_and_shrunk_box_fails() {
        let f = sum_model();
        let bx = Hyperrect::new(vec![0.0], vec![1.0]).unwrap();
        let bp = Hyperrect::new(vec![-0.1], vec![0.1]).unwrap();
        let d = f
            .synth_decomposition(&bx.intervals(), &[Interval::new(0.0, 1.0)], &bp.intervals())
            .unwrap();
        let pred = propagate_interval(&d, &bx, &[0.5], &bp).unwrap();
        let rep = mc_containment(&f, &bx, &[0.5], &bp, &pred, 2000, 42).unwrap();
        assert_eq!(rep.violations, 0);

        let rep = mc_containment(&f, &bx, &[0.5], &bp, &pred.shrink(0.1), 2000, 42).unwrap();
        assert!(rep.violations > 0);
        assert!(rep.max_excess[0] > 0.0);
    }

    #[test]
    fn monotone_corner_sample_attains_upper_bound() {
        let f = sum_model();
        let bx = Hyperrect::new(vec![0.0], vec![1.0]).unwrap();
        let bp = Hyperrect::new(vec![-0.1], vec![0.1]).unwrap();
        let d = f
            .synth_decomposition(&bx.intervals(), &[Interval::new(0.0, 1.0)], &bp.intervals())
            .unwrap();
        let pred = propagate_interval(&d, &bx, &[0.5], &bp).unwrap();
        let at_corner = f.eval(&[&[1.0], &[0.5], &[0.1]]).unwrap();
        assert_eq!(at_corner[0], pred.hi()[0]);
    }

    #[test]
    fn tube_csv_layout() {
        let tube = ReachTube {
            boxes: vec![
                Hyperrect::new(vec![0.0, 1.0], vec![0.5, 2.0]).unwrap(),
                Hyperrect::new(vec![0.1, 1.1], vec![0.6, 2.1]).unwrap(),
            ],
        };
        let mut buf = Vec::new();
        tube.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,dim,lo,hi");
        assert_eq!(lines.next().unwrap(), "0,0,0.0,0.5");
        assert_eq!(text.lines().count(), 5);
    }
}
