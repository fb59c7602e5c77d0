//! Dual-network surrogate optimization for parametric differential-algebraic
//! equations.
//!
//! The crate is split along the two phases of the method:
//!
//! * **Offline.** A constraint network `(t, p) ↦ x̂` is trained once against
//!   the parametric DAE, using initial-condition records, collocation
//!   residuals and exact solutions. Exact solutions are added adaptively by a
//!   genetic sampler that concentrates new parameter draws where the network
//!   is worst ([`surrogate`]). The trained network carries a relaxation
//!   vector `γ` estimated from held-out residual statistics, and the
//!   [`bounds`] module turns those statistics into a global error bound.
//! * **Online.** For each new objective a small generator `z ↦ p` is trained
//!   against the frozen network, then the best candidates are polished with
//!   Newton or a random walk against the true dynamics ([`optimize`]).
//!
//! Everything here is pure computation over `alloc`; file formats, config and
//! the command-line driver live in the `daeopt` crate.

#![no_std]
#![allow(
    clippy::too_many_arguments,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop
)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bounds;
pub mod error;
pub mod integrate;
pub mod linalg;
pub mod neural;
pub mod optimize;
pub mod problems;
pub mod quadrature;
pub mod rng;
pub mod surrogate;

pub use error::{Error, Result};
pub use integrate::{SolverConfig, Trajectory};
pub use neural::Mlp;
pub use problems::{ObjectiveSpec, ParametricDaeProblem};
pub use quadrature::GaussLegendre;
pub use surrogate::ConstraintSurrogate;
