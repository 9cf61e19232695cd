//! Frequency-aware multi-view interest modeling.
//!
//! The pipeline embeds a user's behavior sequence, retrieves the Top-K
//! behaviors relevant to a target item under several attribute views and
//! pools them with target attention, splits the same sequence into low, band
//! and high frequency components whose band and high parts are scaled by
//! learned gates, and feeds a blend of both summaries into a multi-gate
//! mixture of experts.

pub mod config;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod fpem;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod mss;
pub mod numerics;
pub mod prediction;
pub mod train;

pub use error::{FimError, Result};
pub use numerics::{ParamStore, Tensor};
