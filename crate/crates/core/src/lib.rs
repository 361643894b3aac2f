//! Regional linear MPC.
//!
//! Solves the condensed MPC quadratic program online, extracts from each
//! solution the optimal affine feedback law and the polytopes on which that
//! law stays optimal, and measures how many QP solves this avoids in closed
//! loop.
//!
//! Module map:
//! - [`model`]: plant, weights, constraint sets and the JSON config format.
//! - [`lqr`]: Riccati terminal weight and the invariant terminal set.
//! - [`condense`]: the condensed QP with stage-ordered constraint rows.
//! - [`qp`], [`polytope`]: the QP solver and LP-backed polytope queries.
//! - [`regional`]: affine law and validity polytope of one active set.
//! - [`common_law`]: the stage-subset criterion and the candidate family.
//! - [`atlas`]: offline gridded enumeration of active sets for comparisons.
//! - [`closed_loop`]: simulation, reuse strategies and batch statistics.

pub mod active_set;
pub mod atlas;
pub mod closed_loop;
pub mod common_law;
pub mod condense;
pub mod linalg;
pub mod lqr;
pub mod model;
pub mod polytope;
pub mod problem;
pub mod qp;
pub mod regional;

pub use active_set::ActiveSet;
pub use condense::CondensedQp;
pub use model::{load_config, OcpSpec};
pub use polytope::HPolytope;
pub use problem::MpcProblem;
