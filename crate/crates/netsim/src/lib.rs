//! Networked variant of regional MPC: a central node solves QPs on request
//! and ships active sets as bit tuples; a lean local node rebuilds the affine
//! laws and polytopes from static problem data and only asks again when the
//! state leaves every polytope it holds.

pub mod central;
pub mod experiment;
pub mod local;
pub mod wire;

pub use central::{CentralConfig, CentralNode};
pub use experiment::{
    reduction_sweep, run_sessions, LoopbackServer, NetsimReport, SessionOptions, Transport,
};
pub use local::{LocalError, LocalNode, SessionStats};
pub use wire::{Frame, WireError};
