//! Artificial Retina track finding on a simplified VELO detector model.
//!
//! The retina response of a track hypothesis is a Gaussian-weighted soft
//! count of compatible hits. Tracks are found either by evaluating the
//! response over a parameter grid and picking activated local maxima
//! (`grid`), or by multi-start Truncated Newton ascent on the response
//! surface with a per-step bandwidth schedule (`multistart`), which
//! reaches the same maxima at a fraction of the grid's evaluation budget.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod fixtures;
pub mod geometry;
pub mod grid;
pub mod multistart;
pub mod response;
pub mod simulator;

pub use error::{Result, RetinaError};
