//! Independent oracles used by the test suites.
//!
//! Everything here re-implements the math it checks from first
//! principles and shares no code with the main crate; duplication is
//! the point. Oracles favor obviousness over speed (factorial
//! enumeration, quadrature, plain double loops).

pub mod assign;
pub mod fd;
pub mod gaussian;
pub mod hist;
pub mod jacobian;
pub mod mc;
pub mod nn;
pub mod ply;
pub mod rng;
