//! State space model based stochastic claims reserving.
//!
//! The pipeline: parse a runoff [`triangle`], build one of the reserving
//! [`models`], fit its variance parameters by marginal maximum likelihood
//! ([`estimation`]), predict the unobserved cells with the exact-diffuse
//! [`kalman`] smoother, and draw the sampling distribution of the reserve
//! with the simulation smoother ([`simsmooth`]). [`chainladder`] provides the
//! Chain-Ladder/Mack benchmark.

pub mod chainladder;
pub mod estimation;
pub mod kalman;
pub mod models;
pub mod simsmooth;
pub mod ssm;
pub mod stats;
pub mod triangle;
