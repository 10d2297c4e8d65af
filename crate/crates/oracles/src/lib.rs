//! Reference computations for the test suites.
//!
//! Everything here is written directly from the model definitions, without
//! recursions: joint Gaussian conditioning, least squares on explicit design
//! matrices, and Mack's closed-form error terms. Slow, but easy to audit.

pub mod dense;
pub mod gen;
pub mod gls;
pub mod suites;
pub mod mack;
