//! Singular sets of control-affine systems and control-transverse design.
//!
//! The singular set of `x' = f(x) + G(x) u` is the set of states where the
//! drift lies in the span of the control fields, i.e. the states that some
//! constant control turns into equilibria. This crate computes it (closed
//! form for linear systems, forward substitution for strict-feedback
//! systems, Gauss-Newton and pseudo-arclength continuation in general),
//! builds manifolds transverse to the control distribution together with the
//! dynamics they induce, and uses both to synthesize invariance feedback and
//! track bifurcations of the induced dynamics as the manifold deforms.
//!
//! | module | contents |
//! |---|---|
//! | [`expr`] | expression parser, evaluator, symbolic derivatives |
//! | [`sysmodel`] | system models, control matrix, rank stratification |
//! | [`sigma`] | singular set routes and dimension certificates |
//! | [`transverse`] | transverse manifolds, induced dynamics, equilibria |
//! | [`design`] | invariance feedback, simulation, bifurcation tracking |
//! | [`cli`] | config-file driven command-line front end |

// `!(a < b)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod design;
pub mod error;
pub mod expr;
pub mod linalg;
pub mod ode;
pub mod sigma;
pub mod sysmodel;
pub mod transverse;

pub use error::{Error, Result};
