//! Robust model predictive control for uncertain nonlinear discrete-time
//! systems, built on monotone and mixed-monotone interval reachability.
//!
//! Hyperrectangular reachable sets are propagated by evaluating a
//! decomposition function at swapped box corners, at a cost independent of
//! the number of uncertainties. Recourse enters by partitioning each
//! predicted set into subregions with independent inputs; cut positions are
//! decision variables of the resulting NLP, which a dense SQP solver handles.

pub mod exprgraph;
pub mod models;
pub mod nlp;
pub mod ocp;
pub mod partition;
pub mod reach;
pub mod sim;
