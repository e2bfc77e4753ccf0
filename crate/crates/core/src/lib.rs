//! Simulation and limit-law engine for two-opinion consensus protocols on the
//! complete graph, driven by majority-type update functions.
//!
//! The crate is organised bottom-up:
//!
//! * [`update_fn`] – update rules `f`, their parameters `(m, β, γ)` and
//!   cancellation-free iteration helpers.
//! * [`theory`] – limit-law predictions: Gaussian race, CLT moments, the
//!   periodic correction `g`, the predicted runtime law and the Koenigs
//!   function used to cross-check `g`.
//! * [`sim`] – seeded Monte Carlo simulation with optional adversary.
//! * [`oracle`] – exact runtime/winner distributions for small `n`.
//! * [`stats`] – empirical distributions and comparison reports.
//! * [`cli`] – the `consensus-lab` command line.

pub mod cli;
pub mod numeric;
pub mod oracle;
pub mod sim;
pub mod stats;
pub mod theory;
pub mod update_fn;

pub use update_fn::{MajorityTypeFunction, Params, ProtocolSpec};
