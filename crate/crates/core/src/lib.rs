//! k-contraction analysis for generalized Lurie systems.
//!
//! The crate builds k-th multiplicative and additive compound matrices,
//! evaluates contraction certificates for feedback interconnections
//! `ẋ = f(x,u)`, `y = g(x)`, `u = -Φ(y)` in a (possibly state-dependent)
//! metric, and integrates trajectories together with the variational
//! equation to observe how k-dimensional volumes evolve.

// `!(x > y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod compound;
pub mod config;
pub mod expr;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod sim;
pub mod spectral;

pub use compound::{add_compound, mult_compound, CompoundError};
pub use expr::{Expr, VectorFunction};
pub use matrix::Matrix;
pub use model::{BoxDomain, GlsModel, MetricSpec, NetworkedModel};
