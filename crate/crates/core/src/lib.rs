//! Finite Markov mixture laboratory.
//!
//! * [`dgp`] samples chain sets and sequences.
//! * [`predictors`] holds the reference next-token predictors.
//! * [`evaluation`] builds empirical transition matrices and the KL,
//!   bigram-utilization and retrieval-proximity metrics.
//! * [`lia`] fits convex mixtures of predictors to a target.
//! * [`experiments`] runs sweeps, the nearest-neighbour distance study and
//!   LIA studies on externally supplied prediction tables.

pub mod dgp;
pub mod evaluation;
pub mod experiments;
pub mod lia;
pub mod predictors;
pub mod seed;
