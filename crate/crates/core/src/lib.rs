pub mod baselines;
pub mod cluster;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
mod nn;
pub mod seed;
pub mod synthgen;
pub mod text;
pub mod train;

pub use error::{FitbError, Result};
