//! Steered-response-power acoustic maps with exact multiplication-count
//! accounting.
//!
//! Five backends compute the same map `z` over a candidate grid:
//!
//! * conventional SRP, `z = 2 Re[H psi]` ([`srp_exact`]),
//! * low-rank SRP from a truncated SVD of `H` ([`lr_baseline`]),
//! * sampling + sinc interpolation, `z = Lambda xi` ([`sampler`], [`interpolator`]),
//! * sampling + optimal low-rank interpolation and
//! * sampling + sparse interpolation ([`interpolator`]).
//!
//! [`evaluator`] holds the cost model and error metrics, [`simkit`] renders
//! synthetic scenes and [`runner`] ties everything to configuration files,
//! operator caches and sweeps.

pub mod audio;
pub mod error;
pub mod evaluator;
pub mod frontend;
pub mod interpolator;
pub mod lr_baseline;
pub mod runner;
pub mod sampler;
pub mod scene;
pub mod simkit;
pub mod srp_exact;

pub use error::{Result, SrpError};
