// NaN-rejecting checks are written as `!(x >= 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arc;
pub mod causal;
pub mod cluster;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod io;
pub mod prompts;
mod net;
pub mod score;
pub mod segment;
pub mod stats;
pub mod stub;
pub mod synth;

pub use error::{Error, Result};
pub use net::RetryPolicy;
