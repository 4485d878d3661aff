//! Configuration, operator caches, sweeps and the command implementations.

pub mod cache;
pub mod commands;
pub mod config;
pub mod pipeline;
pub mod sweep;

pub use cache::{OperatorCache, StoredOperator};
pub use commands::{map, precompute, simulate, sweep, MapInput};
pub use config::{Budget, RunConfig};
pub use pipeline::{Context, MapEngine, Operator, OperatorFactory};
pub use sweep::with_workers;
